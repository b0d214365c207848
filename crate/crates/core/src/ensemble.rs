//! Union ensembles over detector/model combinations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::detectors::{DetectorKind, Flag};
use crate::nn::Regime;
use crate::{Error, Result};

/// One of the four trained model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelTag {
    pub regime: Regime,
    pub center_loss: bool,
}

impl ModelTag {
    pub const ALL: [ModelTag; 4] = [
        ModelTag { regime: Regime::Multiclass, center_loss: true },
        ModelTag { regime: Regime::Multiclass, center_loss: false },
        ModelTag { regime: Regime::Binary, center_loss: true },
        ModelTag { regime: Regime::Binary, center_loss: false },
    ];

    pub fn new(regime: Regime, center_loss: bool) -> Self {
        Self { regime, center_loss }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regime = match self.regime {
            Regime::Multiclass => "multiclass",
            Regime::Binary => "binary",
        };
        let loss = if self.center_loss { "cl" } else { "ce" };
        write!(f, "{regime}-{loss}")
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelTag::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model tag {s:?} (expected e.g. multiclass-cl)")))
    }
}

/// A detector applied to one model variant, written `KIND@model-tag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemberTag {
    pub kind: DetectorKind,
    pub model: ModelTag,
}

impl fmt::Display for MemberTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.model)
    }
}

impl FromStr for MemberTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, model) = s
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("member tag {s:?} must look like KIND@model-tag")))?;
        Ok(Self { kind: kind.trim().parse()?, model: model.parse()? })
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(ModelTag);
string_serde!(MemberTag);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// OOD if at least one member says OOD.
    #[default]
    AnyOod,
    /// OOD if at least this many members say OOD. Not used by the named ensembles.
    AtLeast(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub name: String,
    pub members: Vec<MemberTag>,
    #[serde(default)]
    pub policy: Policy,
}

impl EnsembleConfig {
    /// Checks membership against the available calibrated profiles.
    pub fn new(name: &str, members: Vec<MemberTag>, policy: Policy, available: &BTreeSet<MemberTag>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Ensemble(format!("{name}: no members")));
        }
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(*m) {
                return Err(Error::Ensemble(format!("{name}: duplicate member {m}")));
            }
            if !available.contains(m) {
                return Err(Error::Ensemble(format!("{name}: no calibrated profile for {m}")));
            }
        }
        if let Policy::AtLeast(k) = policy {
            if k == 0 || k > members.len() {
                return Err(Error::Ensemble(format!("{name}: vote threshold {k} out of range")));
            }
        }
        Ok(Self { name: name.to_string(), members, policy })
    }

    pub fn flag(&self, member_flags: &[Flag]) -> Result<Flag> {
        ensemble_flag(self, member_flags)
    }
}

/// All six detectors on the Center-Loss and Cross-Entropy models of one regime.
pub fn ens1_members(regime: Regime) -> Vec<MemberTag> {
    [true, false]
        .into_iter()
        .flat_map(|cl| {
            DetectorKind::ALL.into_iter().map(move |kind| MemberTag { kind, model: ModelTag::new(regime, cl) })
        })
        .collect()
}

/// CONF on the Center-Loss model with KNN and ODIN on the Cross-Entropy model.
pub fn ens2_members(regime: Regime) -> Vec<MemberTag> {
    vec![
        MemberTag { kind: DetectorKind::Conf, model: ModelTag::new(regime, true) },
        MemberTag { kind: DetectorKind::Knn, model: ModelTag::new(regime, false) },
        MemberTag { kind: DetectorKind::Odin, model: ModelTag::new(regime, false) },
    ]
}

pub fn build_ens1(available: &BTreeSet<MemberTag>, regime: Regime) -> Result<EnsembleConfig> {
    EnsembleConfig::new("ENS1", ens1_members(regime), Policy::AnyOod, available)
}

pub fn build_ens2(available: &BTreeSet<MemberTag>, regime: Regime) -> Result<EnsembleConfig> {
    EnsembleConfig::new("ENS2", ens2_members(regime), Policy::AnyOod, available)
}

/// Accepts a member list only if it is exactly the ENS2 trio for some regime.
pub fn check_ens2(members: &[MemberTag]) -> Result<()> {
    let given: BTreeSet<MemberTag> = members.iter().copied().collect();
    let ok = members.len() == 3
        && [Regime::Multiclass, Regime::Binary]
            .into_iter()
            .any(|r| ens2_members(r).into_iter().collect::<BTreeSet<_>>() == given);
    if ok {
        Ok(())
    } else {
        Err(Error::Ensemble("members are not {CONF@*-cl, KNN@*-ce, ODIN@*-ce}".into()))
    }
}

pub fn ensemble_flag(config: &EnsembleConfig, member_flags: &[Flag]) -> Result<Flag> {
    if member_flags.len() != config.members.len() {
        return Err(Error::Dimension { expected: config.members.len(), got: member_flags.len() });
    }
    let ood_votes = member_flags.iter().filter(|f| f.is_ood()).count();
    let ood = match config.policy {
        Policy::AnyOod => ood_votes > 0,
        Policy::AtLeast(k) => ood_votes >= k,
    };
    Ok(if ood { Flag::Ood } else { Flag::Id })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn everything() -> BTreeSet<MemberTag> {
        ModelTag::ALL
            .into_iter()
            .flat_map(|m| DetectorKind::ALL.into_iter().map(move |kind| MemberTag { kind, model: m }))
            .collect()
    }

    #[test]
    fn tags_round_trip_through_strings() {
        for m in everything() {
            assert_eq!(m.to_string().parse::<MemberTag>().unwrap(), m);
        }
        assert_eq!("ODIN@multiclass-ce".parse::<MemberTag>().unwrap().kind, DetectorKind::Odin);
        assert!("ODIN".parse::<MemberTag>().is_err());
    }

    #[test]
    fn ens1_has_twelve_members() {
        let ens = build_ens1(&everything(), Regime::Multiclass).unwrap();
        assert_eq!(ens.members.len(), 12);
        assert_eq!(ens.policy, Policy::AnyOod);
    }

    #[test]
    fn missing_profile_fails() {
        let mut available = everything();
        available.remove(&"MD@multiclass-cl".parse().unwrap());
        assert!(matches!(build_ens1(&available, Regime::Multiclass), Err(Error::Ensemble(_))));
        assert!(build_ens2(&available, Regime::Multiclass).is_ok());
    }

    #[test]
    fn duplicates_rejected() {
        let m: MemberTag = "CONF@binary-cl".parse().unwrap();
        assert!(EnsembleConfig::new("x", vec![m, m], Policy::AnyOod, &everything()).is_err());
    }

    #[test]
    fn ens2_membership() {
        let ens = build_ens2(&everything(), Regime::Multiclass).unwrap();
        let names: Vec<String> = ens.members.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["CONF@multiclass-cl", "KNN@multiclass-ce", "ODIN@multiclass-ce"]);
        check_ens2(&ens.members).unwrap();
        let other: Vec<MemberTag> = ["CONF@multiclass-ce", "KNN@multiclass-ce", "ODIN@multiclass-ce"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert!(check_ens2(&other).is_err());
        // the generic constructor accepts any trio
        assert!(EnsembleConfig::new("custom", other, Policy::AnyOod, &everything()).is_ok());
    }

    #[test]
    fn any_ood_examples() {
        let ens = build_ens2(&everything(), Regime::Multiclass).unwrap();
        use Flag::*;
        assert_eq!(ens.flag(&[Id, Id, Id]).unwrap(), Id);
        assert_eq!(ens.flag(&[Id, Ood, Id]).unwrap(), Ood);
        assert!(ens.flag(&[Id]).is_err());
    }

    #[test]
    fn vote_policy_hook() {
        let members = ens2_members(Regime::Binary);
        let ens = EnsembleConfig::new("vote", members, Policy::AtLeast(2), &everything()).unwrap();
        assert_eq!(ens.flag(&[Flag::Ood, Flag::Id, Flag::Id]).unwrap(), Flag::Id);
        assert_eq!(ens.flag(&[Flag::Ood, Flag::Ood, Flag::Id]).unwrap(), Flag::Ood);
    }
}
