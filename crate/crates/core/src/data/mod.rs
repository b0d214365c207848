//! Datasets, scenario assembly, synthetic data and artifact persistence.

pub mod csv;
pub mod persist;
pub mod synthetic;

pub use self::csv::{
    load_csv, load_csv_from_reader, load_feature_matrix, write_encoded_csv, ColumnLayout, ColumnMap, LoadReport,
    MatrixLoad,
};
pub use persist::{load_json, save_json, write_atomic, SCHEMA_VERSION};
pub use synthetic::{generate_synthetic, BlobSpec, SyntheticSpec};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::features::FeatureSchema;
use crate::training::{LabeledSet, Scenario};
use crate::{Error, Result};

/// One preprocessed flow and its label metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFlowRecord {
    pub id: u64,
    pub features: Vec<f64>,
    pub class_name: String,
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Provenance tag, e.g. the source file or corpus name.
    pub name: String,
    pub schema: FeatureSchema,
    pub records: Vec<NetFlowRecord>,
    /// Class names in order of first appearance.
    pub classes: Vec<String>,
    pub benign_class: String,
}

impl Dataset {
    pub fn new(name: &str, schema: FeatureSchema, records: Vec<NetFlowRecord>, benign_class: &str) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        for r in &records {
            if r.features.len() != schema.len() {
                return Err(Error::Dimension { expected: schema.len(), got: r.features.len() });
            }
            if !classes.contains(&r.class_name) {
                classes.push(r.class_name.clone());
            }
        }
        Ok(Self { name: name.to_string(), schema, records, classes, benign_class: benign_class.to_string() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attack_classes(&self) -> Vec<String> {
        self.classes.iter().filter(|c| **c != self.benign_class).cloned().collect()
    }

    pub fn class_count(&self, class: &str) -> usize {
        self.records.iter().filter(|r| r.class_name == class).count()
    }
}

/// Records split by their role in one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPools {
    /// Benign plus training attacks, relabeled for the scenario's regime.
    pub train_pool: LabeledSet,
    /// Attacks held out from training (and from tuning), with original names.
    pub unknown: Vec<NetFlowRecord>,
    /// Held-out attacks reserved for ODIN/MD tuning.
    pub tuning: Vec<NetFlowRecord>,
}

/// Splits a dataset into the scenario's training pool and unknown-attack pools.
pub fn assemble_scenario(dataset: &Dataset, scenario: &Scenario, tuning_attacks: &[String]) -> Result<ScenarioPools> {
    scenario.validate()?;
    let present: BTreeSet<&String> = dataset.classes.iter().collect();
    if !present.contains(&scenario.benign_class) {
        return Err(Error::Assembly(format!("benign class {:?} not in dataset {}", scenario.benign_class, dataset.name)));
    }
    for attack in scenario.training_attacks.iter().chain(tuning_attacks) {
        if !present.contains(attack) {
            return Err(Error::Assembly(format!("attack {attack:?} not in dataset {}", dataset.name)));
        }
    }
    if let Some(overlap) = tuning_attacks.iter().find(|t| scenario.label_of(t).is_some()) {
        return Err(Error::Assembly(format!("tuning attack {overlap:?} is also a training class")));
    }
    let mut train_pool = LabeledSet { class_names: scenario.class_names(), ..Default::default() };
    let mut unknown = Vec::new();
    let mut tuning = Vec::new();
    for r in &dataset.records {
        if let Some(label) = scenario.label_of(&r.class_name) {
            train_pool.ids.push(r.id);
            train_pool.features.push(r.features.clone());
            train_pool.labels.push(label);
        } else if tuning_attacks.contains(&r.class_name) {
            tuning.push(r.clone());
        } else {
            unknown.push(r.clone());
        }
    }
    if unknown.is_empty() {
        log::info!("scenario covers every attack of {}; unknown pool is empty", dataset.name);
    }
    Ok(ScenarioPools { train_pool, unknown, tuning })
}
