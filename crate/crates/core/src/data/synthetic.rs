//! Gaussian-blob datasets for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, NetFlowRecord};
use crate::features::FeatureSchema;
use crate::nn::INPUT_DIM;
use crate::{Error, Result};

/// One axis-aligned Gaussian cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub name: String,
    pub mean: Vec<f64>,
    /// Per-dimension standard deviation.
    pub std: Vec<f64>,
    pub count: usize,
    #[serde(default)]
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// In-distribution classes.
    pub blobs: Vec<BlobSpec>,
    /// OOD clusters, labeled with names disjoint from the ID classes.
    #[serde(default)]
    pub ood: Vec<BlobSpec>,
    pub benign_class: String,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Blobs with means drawn uniformly from `[-spread, spread]^dim` and a shared
    /// isotropic std. The first name is the benign class.
    pub fn random_blobs(names: &[&str], dim: usize, count: usize, spread: f64, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10b);
        let blobs = names
            .iter()
            .enumerate()
            .map(|(i, n)| BlobSpec {
                name: n.to_string(),
                mean: (0..dim).map(|_| rng.random_range(-spread..=spread)).collect(),
                std: vec![std; dim],
                count,
                malicious: i > 0,
            })
            .collect();
        Self { dim, blobs, ood: Vec::new(), benign_class: names.first().map(|s| s.to_string()).unwrap_or_default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blobs.is_empty() {
            return Err(Error::Config("synthetic spec has no blobs".into()));
        }
        for b in &self.ood {
            if self.blobs.iter().any(|id| id.name == b.name) {
                return Err(Error::Config(format!("OOD cluster {} reuses an ID class name", b.name)));
            }
        }
        for b in self.blobs.iter().chain(&self.ood) {
            if b.count == 0 {
                return Err(Error::Config(format!("blob {} has zero records", b.name)));
            }
            if b.mean.len() != self.dim || b.std.len() != self.dim {
                return Err(Error::Dimension { expected: self.dim, got: b.mean.len().min(b.std.len()) });
            }
            if b.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || b.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config(format!("blob {} has invalid parameters", b.name)));
            }
        }
        Ok(())
    }
}

fn sample_blobs(blobs: &[BlobSpec], first_id: u64, rng: &mut ChaCha8Rng) -> Vec<NetFlowRecord> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::new();
    for b in blobs {
        for _ in 0..b.count {
            let features = b.mean.iter().zip(&b.std).map(|(m, s)| m + s * unit.sample(rng)).collect();
            records.push(NetFlowRecord {
                id: first_id + records.len() as u64,
                features,
                class_name: b.name.clone(),
                malicious: b.malicious,
            });
        }
    }
    records
}

/// Samples the ID blobs, then the OOD clusters. Record ids are consecutive
/// from 0 across both datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let id_records = sample_blobs(&spec.blobs, 0, &mut rng);
    let ood_records = sample_blobs(&spec.ood, id_records.len() as u64, &mut rng);
    let schema = if spec.dim == INPUT_DIM { FeatureSchema::netflow20() } else { FeatureSchema::anonymous(spec.dim) };
    Ok((
        Dataset::new("synthetic", schema.clone(), id_records, &spec.benign_class)?,
        Dataset::new("synthetic-ood", schema, ood_records, &spec.benign_class)?,
    ))
}
