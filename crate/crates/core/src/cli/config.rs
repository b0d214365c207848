//! Declarative run configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ColumnMap;
use crate::detectors::{DetectorKind, DetectorSettings};
use crate::ensemble::{MemberTag, ModelTag, Policy};
use crate::eval::GridSpec;
use crate::features::SelectionConfig;
use crate::nn::Regime;
use crate::training::{Scenario, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default = "all_models")]
    pub models: Vec<ModelTag>,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub detectors: DetectorsConfig,
    /// Custom ensembles; when absent, ENS1 and ENS2 are built per regime.
    #[serde(default)]
    pub ensembles: Option<Vec<EnsembleSpec>>,
    #[serde(default)]
    pub select_features: Option<SelectFeaturesConfig>,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub detect: DetectConfig,
}

fn all_models() -> Vec<ModelTag> {
    ModelTag::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled flow CSV of the home dataset.
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
    /// Benign traffic of another dataset, reported on its own row.
    #[serde(default)]
    pub foreign_benign: Option<PathBuf>,
    #[serde(default)]
    pub foreign_columns: Option<ColumnMap>,
    /// Share of the training pool held out as ID test traffic.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub benign_class: String,
    pub training_attacks: Vec<String>,
    /// Held-out attacks used only to tune ODIN/MD ε.
    #[serde(default)]
    pub tuning_attacks: Vec<String>,
}

impl ScenarioConfig {
    pub fn scenario(&self, regime: Regime) -> Scenario {
        Scenario {
            benign_class: self.benign_class.clone(),
            training_attacks: self.training_attacks.clone(),
            regime,
        }
    }
}

/// Training hyperparameters shared by every model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_centers: f64,
    pub lambda: f64,
    pub split_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_model: d.lr_model,
            lr_centers: d.lr_centers,
            lambda: d.lambda,
            split_fraction: d.split_fraction,
        }
    }
}

impl TrainParams {
    pub fn for_model(&self, tag: ModelTag, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_model: self.lr_model,
            lr_centers: self.lr_centers,
            lambda: self.lambda,
            regime: tag.regime,
            cl_enabled: tag.center_loss,
            seed,
            split_fraction: self.split_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorsConfig {
    pub kinds: Vec<DetectorKind>,
    /// Hyperparameters; the MC-dropout seed is taken from the run seed.
    pub settings: DetectorSettings,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        Self { kinds: DetectorKind::ALL.to_vec(), settings: DetectorSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub name: String,
    pub members: Vec<MemberTag>,
    #[serde(default)]
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectFeaturesConfig {
    /// One or two raw CSVs.
    pub datasets: Vec<SelectInput>,
    #[serde(default)]
    pub forest: SelectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectInput {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_label")]
    pub label: String,
    /// Identifier columns to ignore (addresses, timestamps, flow ids).
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub port_columns: Vec<String>,
}

fn default_label() -> String {
    "Label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub model: ModelTag,
    pub grid: GridSpec,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { model: ModelTag::new(Regime::Multiclass, true), grid: GridSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub input: Option<PathBuf>,
    pub columns: Option<ColumnMap>,
}

/// Which inputs a command needs; used to validate before any work starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Selection,
    Pipeline,
    Detection,
}

impl RunConfig {
    /// Parses a TOML document, resolving relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(o) = self.out_dir.as_mut() {
            fix(o);
        }
        if let Some(d) = self.data.as_mut() {
            fix(&mut d.path);
            if let Some(f) = d.foreign_benign.as_mut() {
                fix(f);
            }
        }
        if let Some(s) = self.select_features.as_mut() {
            for d in &mut s.datasets {
                fix(&mut d.path);
            }
        }
        if let Some(i) = self.detect.input.as_mut() {
            fix(i);
        }
    }

    /// Hex digest of the configuration (output directory excluded), recorded in reports.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).unwrap_or_default();
        hex::encode(&Sha256::digest(json.as_bytes())[..16])
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data.as_ref().ok_or_else(|| Error::Config("missing [data] section".into()))
    }

    pub fn scenario(&self) -> Result<&ScenarioConfig> {
        self.scenario.as_ref().ok_or_else(|| Error::Config("missing [scenario] section".into()))
    }

    pub fn regimes(&self) -> Vec<Regime> {
        let mut r: Vec<Regime> = Vec::new();
        for t in &self.models {
            if !r.contains(&t.regime) {
                r.push(t.regime);
            }
        }
        r
    }

    pub fn validate(&self, needs: Needs) -> Result<()> {
        let exists = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        match needs {
            Needs::Selection => {
                let s = self
                    .select_features
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [select_features] section".into()))?;
                if !(1..=2).contains(&s.datasets.len()) {
                    return Err(Error::Config("select_features takes one or two datasets".into()));
                }
                for d in &s.datasets {
                    exists(&d.path, "feature-selection dataset")?;
                }
                return Ok(());
            }
            Needs::Pipeline | Needs::Detection => {}
        }
        let data = self.data()?;
        exists(&data.path, "dataset")?;
        if let Some(f) = &data.foreign_benign {
            exists(f, "foreign benign dataset")?;
        }
        data.columns.validate()?;
        if !(data.test_fraction > 0.0 && data.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", data.test_fraction)));
        }
        let scenario = self.scenario()?;
        scenario.scenario(Regime::Multiclass).validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models requested".into()));
        }
        let unique: BTreeSet<ModelTag> = self.models.iter().copied().collect();
        if unique.len() != self.models.len() {
            return Err(Error::Config("model list has duplicates".into()));
        }
        self.train.for_model(self.models[0], self.seed).validate()?;
        if self.detectors.kinds.iter().any(|k| k.needs_tuning()) && scenario.tuning_attacks.is_empty() {
            return Err(Error::Config("ODIN and MD need scenario.tuning_attacks (OOD tuning records)".into()));
        }
        if let Some(ens) = &self.ensembles {
            for e in ens {
                let regimes: BTreeSet<Regime> = e.members.iter().map(|m| m.model.regime).collect();
                if regimes.len() > 1 {
                    return Err(Error::Config(format!("ensemble {} mixes regimes", e.name)));
                }
            }
        }
        if needs == Needs::Detection {
            let input = self
                .detect
                .input
                .as_ref()
                .ok_or_else(|| Error::Config("detect needs an input CSV (--input or detect.input)".into()))?;
            exists(input, "detection input")?;
        }
        Ok(())
    }
}
