//! NetFlow feature schema, preprocessing, and Random-Forest feature selection.

pub mod forest;
pub mod selection;

pub use forest::{DecisionTree, ForestConfig, RandomForest};
pub use selection::{
    correlation_dedup, cross_dataset_select, importance, select_features, variance_filter,
    FeatureMatrix, ImportanceRanking, RankedFeature, SelectionConfig, SelectionReport,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Log-scaled with `ln(1 + x)`.
    Continuous,
    /// Passed through unchanged.
    Integer,
    /// Destination-port interval indicator.
    PortFlag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered feature list of the encoded vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDescriptor>,
}

/// Raw input fields, in the order [`RawRecord`] stores them. The destination
/// port expands into the two port flags; every other field maps to one feature.
pub const RAW_FIELDS: [&str; 19] = [
    "dst_port",
    "num_fwd_pkts",
    "num_bwd_pkts",
    "max_fwd_pkt",
    "max_bwd_pkt",
    "ack_cnt",
    "syn_cnt",
    "rst_cnt",
    "duration",
    "pkts_per_s",
    "fwd_pkts_per_s",
    "bwd_pkts_per_s",
    "avg_iat",
    "std_iat",
    "sflow_fwd_byts",
    "sflow_bwd_byts",
    "avg_idle",
    "avg_active",
    "fwd_seg_min",
];

const CANONICAL: [(&str, FeatureKind); 20] = [
    ("Dst wk", FeatureKind::PortFlag),
    ("Dst reg", FeatureKind::PortFlag),
    ("Num fwd pkts", FeatureKind::Integer),
    ("Num bwd pkts", FeatureKind::Integer),
    ("Max fwd pkt", FeatureKind::Integer),
    ("Max bwd pkt", FeatureKind::Integer),
    ("Ack cnt", FeatureKind::Integer),
    ("Syn cnt", FeatureKind::Integer),
    ("Rst cnt", FeatureKind::Integer),
    ("Duration", FeatureKind::Continuous),
    ("Pkts/s", FeatureKind::Continuous),
    ("Fwd pkts/s", FeatureKind::Continuous),
    ("Bwd pkts/s", FeatureKind::Continuous),
    ("Avg IAT", FeatureKind::Continuous),
    ("Std IAT", FeatureKind::Continuous),
    ("Sflow fwd byts", FeatureKind::Continuous),
    ("Sflow bwd byts", FeatureKind::Continuous),
    ("Avg idle", FeatureKind::Continuous),
    ("Avg active", FeatureKind::Continuous),
    ("Fwd Seg min", FeatureKind::Integer),
];

impl FeatureSchema {
    /// The built-in 20-feature NetFlow schema.
    pub fn netflow20() -> Self {
        Self {
            features: CANONICAL
                .iter()
                .map(|(name, kind)| FeatureDescriptor { name: name.to_string(), kind: *kind })
                .collect(),
        }
    }

    /// Generic schema of unnamed continuous features, for synthetic data.
    pub fn anonymous(dim: usize) -> Self {
        Self {
            features: (0..dim)
                .map(|i| FeatureDescriptor { name: format!("f{i}"), kind: FeatureKind::Continuous })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }
}

/// Unprocessed field values in [`RAW_FIELDS`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord(pub [f64; 19]);

impl RawRecord {
    /// Parses string cells given in [`RAW_FIELDS`] order.
    pub fn parse(cells: &[&str]) -> Result<Self> {
        if cells.len() != RAW_FIELDS.len() {
            return Err(Error::Dimension { expected: RAW_FIELDS.len(), got: cells.len() });
        }
        let mut values = [0.0; 19];
        for (i, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!("field {} is not numeric: {cell:?}", RAW_FIELDS[i]))
            })?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("field {} is not finite: {cell:?}", RAW_FIELDS[i])));
            }
            values[i] = v;
        }
        Ok(Self(values))
    }
}

/// A preprocessed feature vector; only produced by [`Preprocessor::encode`],
/// so raw values are encoded exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures(Vec<f64>);

impl EncodedFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Port interval flags `(well-known, registered)`; ephemeral ports give `(0, 0)`.
pub fn port_flags(port: f64) -> Result<(f64, f64)> {
    if !(0.0..=65535.0).contains(&port) || port.fract() != 0.0 {
        return Err(Error::Parse(format!("invalid port number {port}")));
    }
    Ok(match port as u32 {
        0..=1023 => (1.0, 0.0),
        1024..=49151 => (0.0, 1.0),
        _ => (0.0, 0.0),
    })
}

/// `ln(1 + x)` with negative inputs clamped to 0; returns whether a clamp occurred.
pub fn log_scale(x: f64) -> (f64, bool) {
    if x < 0.0 {
        (0.0, true)
    } else {
        (x.ln_1p(), false)
    }
}

/// Encodes raw records into the built-in schema, counting clamped negatives.
#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    pub clamped_negatives: usize,
}

impl Preprocessor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode(&mut self, raw: &RawRecord) -> Result<EncodedFeatures> {
        let schema = &CANONICAL;
        let (wk, reg) = port_flags(raw.0[0])?;
        let mut out = Vec::with_capacity(20);
        out.push(wk);
        out.push(reg);
        for (value, (_, kind)) in raw.0[1..].iter().zip(&schema[2..]) {
            out.push(match kind {
                FeatureKind::Continuous => {
                    let (v, clamped) = log_scale(*value);
                    if clamped {
                        self.clamped_negatives += 1;
                    }
                    v
                }
                FeatureKind::Integer => *value,
                FeatureKind::PortFlag => unreachable!("port flags come from dst_port"),
            });
        }
        Ok(EncodedFeatures(out))
    }
}
