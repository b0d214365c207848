//! The six out-of-distribution detectors, threshold calibration, and the
//! ε/threshold tuning grid for the gradient-perturbation detectors.

mod calibration;
mod scores;

pub use calibration::{calibrate_threshold, rejected_count, tune_epsilon, TuningPoint, TuningResult};
pub use scores::{
    conf_score, knn_fit, knn_fit_embeddings, knn_score, mcd_pass_scores, mcd_score, md_fit,
    md_fit_embeddings, md_perturb, md_score, odin_perturb, odin_score, sim_fit, sim_fit_embeddings,
    sim_score, ClassGaussianStats, KnnStores, KNN_K, MD_DELTA,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Embedding;
use crate::nn::FnnModel;
use crate::training::LabeledSet;
use crate::{Error, Result};

pub const ODIN_TEMPERATURE: f64 = 20.0;
pub const EPSILON_GRID: [f64; 7] = [0.0001, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5];
pub const MCD_PASSES: usize = 30;
pub const MCD_DROPOUT: f64 = 0.4;
pub const RETENTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DetectorKind {
    Conf,
    Mcd,
    Odin,
    Md,
    Sim,
    Knn,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::Conf,
        DetectorKind::Mcd,
        DetectorKind::Odin,
        DetectorKind::Md,
        DetectorKind::Sim,
        DetectorKind::Knn,
    ];

    pub fn direction(self) -> Direction {
        match self {
            DetectorKind::Conf | DetectorKind::Odin | DetectorKind::Sim => Direction::RejectBelow,
            DetectorKind::Mcd | DetectorKind::Md | DetectorKind::Knn => Direction::RejectAbove,
        }
    }

    /// Whether the detector needs OOD tuning data.
    pub fn needs_tuning(self) -> bool {
        matches!(self, DetectorKind::Odin | DetectorKind::Md)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Conf => "CONF",
            DetectorKind::Mcd => "MCD",
            DetectorKind::Odin => "ODIN",
            DetectorKind::Md => "MD",
            DetectorKind::Sim => "SIM",
            DetectorKind::Knn => "KNN",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown detector {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// OOD when the score falls below the threshold.
    RejectBelow,
    /// OOD when the score exceeds the threshold.
    RejectAbove,
}

impl Direction {
    pub fn flag(self, score: f64, threshold: f64) -> Flag {
        let ood = match self {
            Direction::RejectBelow => score < threshold,
            Direction::RejectAbove => score > threshold,
        };
        if ood {
            Flag::Ood
        } else {
            Flag::Id
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Flag {
    Id,
    Ood,
}

impl Flag {
    pub fn is_ood(self) -> bool {
        self == Flag::Ood
    }
}

/// Fitted, kind-specific detector state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum DetectorState {
    Conf,
    Mcd { passes: usize, dropout_p: f64, seed: u64 },
    Odin { temperature: f64, epsilon: f64, tuning: Option<TuningResult> },
    Md { epsilon: f64, stats: ClassGaussianStats, tuning: Option<TuningResult> },
    Sim { centers: Vec<Embedding> },
    Knn { k: usize, stores: KnnStores },
}

impl DetectorState {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorState::Conf => DetectorKind::Conf,
            DetectorState::Mcd { .. } => DetectorKind::Mcd,
            DetectorState::Odin { .. } => DetectorKind::Odin,
            DetectorState::Md { .. } => DetectorKind::Md,
            DetectorState::Sim { .. } => DetectorKind::Sim,
            DetectorState::Knn { .. } => DetectorKind::Knn,
        }
    }

    /// Raw score of one preprocessed record.
    pub fn score(&self, model: &FnnModel, x: &[f64]) -> Result<f64> {
        match self {
            DetectorState::Conf => conf_score(model, x),
            DetectorState::Mcd { passes, dropout_p, seed } => mcd_score(model, x, *passes, *dropout_p, *seed),
            DetectorState::Odin { temperature, epsilon, .. } => odin_score(model, x, *temperature, *epsilon),
            DetectorState::Md { epsilon, stats, .. } => md_score(model, x, stats, *epsilon),
            DetectorState::Sim { centers } => sim_score(centers, model.embed(x)?),
            DetectorState::Knn { k, stores } => {
                let trace = model.forward_deterministic(x)?;
                knn_score(stores, trace.predicted_class(), trace.embedding, *k)
            }
        }
    }
}

/// A fitted and calibrated detector bound to one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub kind: DetectorKind,
    pub threshold: f64,
    pub direction: Direction,
    pub state: DetectorState,
    pub model_fingerprint: String,
}

impl DetectorProfile {
    pub fn score(&self, model: &FnnModel, x: &[f64]) -> Result<f64> {
        self.state.score(model, x)
    }

    pub fn flag(&self, score: f64) -> Flag {
        self.direction.flag(score, self.threshold)
    }

    pub fn detect(&self, model: &FnnModel, x: &[f64]) -> Result<(f64, Flag)> {
        let s = self.score(model, x)?;
        Ok((s, self.flag(s)))
    }

    pub fn check_model(&self, model: &FnnModel) -> Result<()> {
        let fp = model.fingerprint();
        if fp != self.model_fingerprint {
            return Err(Error::Compatibility(format!(
                "{} profile was calibrated for model {}, got model {fp}",
                self.kind, self.model_fingerprint
            )));
        }
        Ok(())
    }

    pub fn score_all(&self, model: &FnnModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.par_iter().map(|x| self.score(model, x)).collect()
    }
}

/// Detector hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub retention: f64,
    pub mcd_passes: usize,
    pub mcd_dropout: f64,
    pub odin_temperature: f64,
    pub epsilon_grid: Vec<f64>,
    pub knn_k: usize,
    pub md_delta: f64,
    pub seed: u64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            retention: RETENTION,
            mcd_passes: MCD_PASSES,
            mcd_dropout: MCD_DROPOUT,
            odin_temperature: ODIN_TEMPERATURE,
            epsilon_grid: EPSILON_GRID.to_vec(),
            knn_k: KNN_K,
            md_delta: MD_DELTA,
            seed: 0,
        }
    }
}

/// Data a detector is fitted and calibrated on.
#[derive(Debug, Clone, Copy)]
pub struct FitInputs<'a> {
    pub model: &'a FnnModel,
    /// Training split: source of centers, Gaussian stats and KNN stores.
    pub train: &'a LabeledSet,
    /// ID validation split: source of thresholds.
    pub validation: &'a LabeledSet,
    /// OOD tuning records, required by ODIN and MD.
    pub tuning_ood: Option<&'a [Vec<f64>]>,
}

/// Fits the detector's state and calibrates its threshold at the configured
/// ID retention (ODIN/MD additionally tune ε on the OOD tuning records).
pub fn fit_detector(kind: DetectorKind, inputs: FitInputs<'_>, settings: &DetectorSettings) -> Result<DetectorProfile> {
    let model = inputs.model;
    let direction = kind.direction();
    let validation = &inputs.validation.features;
    let tuning = || {
        inputs
            .tuning_ood
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::Tuning(format!("{kind} needs a non-empty OOD tuning set")))
    };
    let (state, threshold) = match kind {
        DetectorKind::Odin => {
            let t = settings.odin_temperature;
            let result = tune_epsilon(&settings.epsilon_grid, validation, tuning()?, direction, settings.retention, |x, eps| {
                odin_score(model, x, t, eps)
            })?;
            let threshold = result.threshold;
            (DetectorState::Odin { temperature: t, epsilon: result.epsilon, tuning: Some(result) }, threshold)
        }
        DetectorKind::Md => {
            let stats = md_fit(model, inputs.train, settings.md_delta)?;
            let result = tune_epsilon(&settings.epsilon_grid, validation, tuning()?, direction, settings.retention, |x, eps| {
                md_score(model, x, &stats, eps)
            })?;
            let threshold = result.threshold;
            (DetectorState::Md { epsilon: result.epsilon, stats, tuning: Some(result) }, threshold)
        }
        _ => {
            let state = match kind {
                DetectorKind::Conf => DetectorState::Conf,
                DetectorKind::Mcd => DetectorState::Mcd {
                    passes: settings.mcd_passes,
                    dropout_p: settings.mcd_dropout,
                    seed: settings.seed,
                },
                DetectorKind::Sim => DetectorState::Sim { centers: sim_fit(model, inputs.train)? },
                DetectorKind::Knn => DetectorState::Knn {
                    k: settings.knn_k,
                    stores: knn_fit(model, inputs.train, settings.knn_k)?,
                },
                DetectorKind::Odin | DetectorKind::Md => unreachable!(),
            };
            let scores: Vec<f64> = validation.par_iter().map(|x| state.score(model, x)).collect::<Result<_>>()?;
            let threshold = calibrate_threshold(&scores, direction, settings.retention)?;
            (state, threshold)
        }
    };
    Ok(DetectorProfile { kind, threshold, direction, state, model_fingerprint: model.fingerprint() })
}

/// Per-record output of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutcome {
    /// Member tag, e.g. `KNN@multiclass-ce`.
    pub member: String,
    pub predicted_class: usize,
    pub score: f64,
    pub threshold: f64,
    pub flag: Flag,
}

/// Per-record verdict across detectors and ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record_id: u64,
    /// Prediction of the first scored model.
    pub predicted_class: usize,
    pub outcomes: Vec<DetectorOutcome>,
    /// `(ensemble name, flag)` pairs.
    pub ensemble_flags: Vec<(String, Flag)>,
}

impl Verdict {
    pub fn outcome(&self, member: &str) -> Option<&DetectorOutcome> {
        self.outcomes.iter().find(|o| o.member == member)
    }

    pub fn ensemble_flag(&self, name: &str) -> Option<Flag> {
        self.ensemble_flags.iter().find(|(n, _)| n == name).map(|(_, f)| *f)
    }
}
