//! Four-step feature ranking: variance filter, correlation de-duplication,
//! random-forest Gini + permutation importance, and the cross-dataset merge.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{ForestConfig, RandomForest};
use crate::training::{stratified_split, LabeledSet};
use crate::{Error, Result};

pub const VARIANCE_THRESHOLD: f64 = 0.05;
pub const CORRELATION_THRESHOLD: f64 = 0.8;

/// Named numeric columns with class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl FeatureMatrix {
    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    fn project(rows: &[Vec<f64>], keep: &[usize]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect()
    }
}

fn mean_and_variance(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Indices of columns whose population variance is at least 0.05.
pub fn variance_filter(data: &FeatureMatrix) -> Result<Vec<usize>> {
    if data.rows.len() < 2 {
        return Err(Error::Argument("variance filter needs at least 2 records".into()));
    }
    Ok((0..data.names.len())
        .filter(|&j| mean_and_variance(data.column(j)).1 >= VARIANCE_THRESHOLD)
        .collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Greedy pass in schema order: a column is dropped when `|ρ| > 0.8` with an
/// already-kept column. Zero-variance columns are passed through uncompared.
pub fn correlation_dedup(data: &FeatureMatrix, retained: &[usize]) -> Vec<usize> {
    let columns: Vec<Vec<f64>> = retained.iter().map(|&j| data.column(j).collect()).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_cols: Vec<&Vec<f64>> = Vec::new();
    for (col, &j) in columns.iter().zip(retained) {
        if mean_and_variance(col.iter().copied()).1 == 0.0 {
            kept.push(j);
            continue;
        }
        if kept_cols.iter().any(|k| pearson(k, col).abs() > CORRELATION_THRESHOLD) {
            continue;
        }
        kept.push(j);
        kept_cols.push(col);
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// Position in the input column order.
    pub schema_index: usize,
    pub gini: f64,
    pub permutation: f64,
    /// Raw mean accuracy drop before flooring and normalization.
    pub permutation_raw: f64,
    pub combined: f64,
    /// 1-based.
    pub rank: usize,
}

/// Features sorted by descending combined score; ties keep schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<RankedFeature>,
}

impl ImportanceRanking {
    pub fn top(&self, k: usize) -> Vec<String> {
        self.entries.iter().take(k).map(|e| e.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&RankedFeature> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(7).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:>4}  {:<width$}  {:>10}  {:>11}  {:>10}", "rank", "feature", "gini", "permutation", "combined");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:>4}  {:<width$}  {:>10.6}  {:>11.6}  {:>10.6}",
                e.rank, e.name, e.gini, e.permutation, e.combined
            );
        }
        out
    }
}

fn normalize(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
}

/// Ranks the forest's input columns by normalized Gini plus normalized
/// permutation importance (mean accuracy drop over `permutations` shuffles on
/// held-out rows, floored at 0).
pub fn importance(
    forest: &RandomForest,
    names: &[String],
    schema_indices: &[usize],
    validation_rows: &[Vec<f64>],
    validation_labels: &[usize],
    permutations: usize,
    seed: u64,
) -> ImportanceRanking {
    let gini = forest.gini_importance();
    let baseline = forest.accuracy(validation_rows, validation_labels);
    let raw: Vec<f64> = (0..names.len())
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64 + 1);
            let mut column: Vec<f64> = validation_rows.iter().map(|r| r[j]).collect();
            let mut rows = validation_rows.to_vec();
            let mut drop = 0.0;
            for _ in 0..permutations {
                column.shuffle(&mut rng);
                for (r, v) in rows.iter_mut().zip(&column) {
                    r[j] = *v;
                }
                drop += baseline - forest.accuracy(&rows, validation_labels);
            }
            drop / permutations.max(1) as f64
        })
        .collect();
    let mut perm: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    normalize(&mut perm);
    let mut entries: Vec<RankedFeature> = (0..names.len())
        .map(|j| RankedFeature {
            name: names[j].clone(),
            schema_index: schema_indices[j],
            gini: gini[j],
            permutation: perm[j],
            permutation_raw: raw[j],
            combined: gini[j] + perm[j],
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| b.combined.total_cmp(&a.combined).then(a.schema_index.cmp(&b.schema_index)));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    ImportanceRanking { entries }
}

/// `(top-20 A ∩ top-20 B) ∪ top-7 A ∪ top-7 B`, returned in `universe` order.
pub fn cross_dataset_select(a: &ImportanceRanking, b: &ImportanceRanking, universe: &[String]) -> Vec<String> {
    let a20: BTreeSet<String> = a.top(20).into_iter().collect();
    let b20: BTreeSet<String> = b.top(20).into_iter().collect();
    let mut chosen: BTreeSet<String> = a20.intersection(&b20).cloned().collect();
    chosen.extend(a.top(7));
    chosen.extend(b.top(7));
    universe.iter().filter(|n| chosen.contains(*n)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub permutations: usize,
    pub split_fraction: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { trees: 200, max_depth: 20, permutations: 10, split_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dataset: String,
    pub after_variance: Vec<String>,
    pub after_correlation: Vec<String>,
    pub ranking: ImportanceRanking,
}

/// Runs the per-dataset procedure end to end: stratified split, variance and
/// correlation filters on the training part, forest fit, importance on the
/// held-out part.
pub fn select_features(name: &str, data: &FeatureMatrix, config: &SelectionConfig, seed: u64) -> Result<SelectionReport> {
    let set = LabeledSet {
        ids: (0..data.rows.len() as u64).collect(),
        features: data.rows.clone(),
        labels: data.labels.clone(),
        class_names: data.class_names.clone(),
    };
    let (train, validation) = stratified_split(&set, config.split_fraction, seed)?;
    let train_matrix = FeatureMatrix {
        names: data.names.clone(),
        rows: train.features,
        labels: train.labels,
        class_names: data.class_names.clone(),
    };
    let after_variance = variance_filter(&train_matrix)?;
    if after_variance.is_empty() {
        return Err(Error::Fit(format!("{name}: every feature is quasi-constant")));
    }
    let after_correlation = correlation_dedup(&train_matrix, &after_variance);
    let rows = FeatureMatrix::project(&train_matrix.rows, &after_correlation);
    let forest_config = ForestConfig { trees: config.trees, max_depth: config.max_depth, seed };
    let forest = RandomForest::fit(&rows, &train_matrix.labels, data.class_names.len(), &forest_config)?;
    let val_rows = FeatureMatrix::project(&validation.features, &after_correlation);
    let names: Vec<String> = after_correlation.iter().map(|&j| data.names[j].clone()).collect();
    let ranking = importance(
        &forest,
        &names,
        &after_correlation,
        &val_rows,
        &validation.labels,
        config.permutations,
        seed,
    );
    let to_names = |idx: &[usize]| idx.iter().map(|&j| data.names[j].clone()).collect();
    Ok(SelectionReport {
        dataset: name.to_string(),
        after_variance: to_names(&after_variance),
        after_correlation: to_names(&after_correlation),
        ranking,
    })
}
