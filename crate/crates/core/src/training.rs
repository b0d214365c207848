//! Training regimes: stratified split, class-balanced batches, Center-Loss with
//! correct-prediction masking, and best-validation-F1 model selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Embedding;
use crate::nn::{param_gradients, AdamState, FnnModel, ForwardMode, Loss, Regime};
use crate::{Error, Result};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_centers: f64,
    /// Weight of the Center-Loss term.
    pub lambda: f64,
    pub regime: Regime,
    pub cl_enabled: bool,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 512,
            lr_model: 0.0005,
            lr_centers: 0.0001,
            lambda: 1.0,
            regime: Regime::Multiclass,
            cl_enabled: false,
            seed: 0,
            split_fraction: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr_model > 0.0) || !(self.lr_centers > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// Feature vectors with integer labels over a named class catalogue.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Training classes of a scenario and how they are labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub benign_class: String,
    pub training_attacks: Vec<String>,
    pub regime: Regime,
}

impl Scenario {
    /// Class catalogue of the training pool: benign first, then attacks
    /// (multi-class) or a single malicious class (binary).
    pub fn class_names(&self) -> Vec<String> {
        match self.regime {
            Regime::Multiclass => std::iter::once(self.benign_class.clone())
                .chain(self.training_attacks.iter().cloned())
                .collect(),
            Regime::Binary => vec![self.benign_class.clone(), "malicious".to_string()],
        }
    }

    /// Label of a record with the given class name, if it belongs to the scenario.
    pub fn label_of(&self, class_name: &str) -> Option<usize> {
        if class_name == self.benign_class {
            return Some(0);
        }
        let pos = self.training_attacks.iter().position(|a| a == class_name)?;
        Some(match self.regime {
            Regime::Multiclass => pos + 1,
            Regime::Binary => 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for name in std::iter::once(&self.benign_class).chain(&self.training_attacks) {
            if !seen.insert(name) {
                return Err(Error::Config(format!("class {name:?} listed twice in scenario")));
            }
        }
        if self.training_attacks.is_empty() {
            return Err(Error::Config("scenario has no training attacks".into()));
        }
        Ok(())
    }
}

/// Per-class 70/30-style split; each class keeps `round(fraction · n)` records
/// in the training side, clamped so both sides are non-empty.
pub fn stratified_split(data: &LabeledSet, fraction: f64, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {:?} has {} record(s); at least 2 needed",
                data.class_names[class],
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&members[..n_train]);
        val_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

/// Sampling with replacement where a record's probability is inversely
/// proportional to its class frequency: every class is equally likely per draw.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    total: usize,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], num_classes: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < num_classes {
            return Err(Error::Sampler(format!(
                "batch size {batch_size} smaller than class count {num_classes}"
            )));
        }
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Sampler(format!("label {y} outside {num_classes} classes")));
            }
            by_class[y].push(i);
        }
        if let Some(empty) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Sampler(format!("class {empty} has no records")));
        }
        Ok(Self {
            by_class,
            batch_size,
            total: labels.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.total.div_ceil(self.batch_size)
    }

    pub fn draw(&mut self) -> usize {
        let class = self.rng.random_range(0..self.by_class.len());
        let members = &self.by_class[class];
        members[self.rng.random_range(0..members.len())]
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size).map(|_| self.draw()).collect()
    }

    /// One epoch: `⌈N / batch_size⌉` batches.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        (0..self.batches_per_epoch()).map(|_| self.next_batch()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterLossOutput {
    /// `½ Σ_{masked i} ‖e_i − c_{y_i}‖²`
    pub loss: f64,
    pub embedding_grads: Vec<Embedding>,
    pub center_grads: Vec<Embedding>,
}

/// Center-Loss restricted to masked (correctly classified) samples.
pub fn center_loss(
    embeddings: &[Embedding],
    labels: &[usize],
    centers: &[Embedding],
    mask: &[bool],
) -> CenterLossOutput {
    let mut loss = 0.0;
    let mut embedding_grads = vec![[0.0; 2]; embeddings.len()];
    let mut center_grads = vec![[0.0; 2]; centers.len()];
    for (i, ((e, &y), &keep)) in embeddings.iter().zip(labels).zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let c = centers[y];
        let d = [e[0] - c[0], e[1] - c[1]];
        loss += 0.5 * (d[0] * d[0] + d[1] * d[1]);
        embedding_grads[i] = d;
        center_grads[y][0] -= d[0];
        center_grads[y][1] -= d[1];
    }
    CenterLossOutput { loss, embedding_grads, center_grads }
}

/// Learnable class centers and their optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub centers: Vec<Embedding>,
    pub adam: AdamState,
}

impl ClassCenters {
    pub fn zeros(num_classes: usize) -> Self {
        Self { centers: vec![[0.0; 2]; num_classes], adam: AdamState::default() }
    }

    pub fn step(&mut self, grads: &[Embedding], lr: f64) {
        let mut flat: Vec<f64> = self.centers.iter().flatten().copied().collect();
        let g: Vec<f64> = grads.iter().flatten().copied().collect();
        self.adam.step(&mut [flat.as_mut_slice()], &[g.as_slice()], lr);
        for (c, chunk) in self.centers.iter_mut().zip(flat.chunks_exact(2)) {
            *c = [chunk[0], chunk[1]];
        }
    }
}

/// Confusion counts: `matrix[truth][predicted]`.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

fn class_f1(matrix: &[Vec<u64>], class: usize) -> f64 {
    let tp = matrix[class][class] as f64;
    let fp: f64 = (0..matrix.len()).filter(|&t| t != class).map(|t| matrix[t][class] as f64).sum();
    let fn_: f64 = (0..matrix.len()).filter(|&p| p != class).map(|p| matrix[class][p] as f64).sum();
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// Unweighted mean of per-class F1 scores.
pub fn macro_f1(truth: &[usize], predicted: &[usize], num_classes: usize) -> f64 {
    let m = confusion_matrix(truth, predicted, num_classes);
    (0..num_classes).map(|c| class_f1(&m, c)).sum::<f64>() / num_classes as f64
}

/// Model-selection F1: macro F1 for multi-class models, malicious-class F1 for binary ones.
pub fn validation_f1(model: &FnnModel, validation: &LabeledSet) -> Result<f64> {
    let predicted: Vec<usize> = validation
        .features
        .par_iter()
        .map(|x| model.predict(x))
        .collect::<Result<_>>()?;
    let n = model.num_classes();
    Ok(match model.regime {
        Regime::Multiclass => macro_f1(&validation.labels, &predicted, n),
        Regime::Binary => class_f1(&confusion_matrix(&validation.labels, &predicted, n), 1),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce_loss: f64,
    pub cl_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FnnModel,
    pub centers: Option<ClassCenters>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// Training log as line-delimited JSON.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }
}

const SAMPLER_STREAM: u64 = 0x5eed_0001;
const DROPOUT_STREAM: u64 = 0x5eed_0002;

/// Trains one model and returns the epoch snapshot with the best validation F1.
pub fn train(config: &TrainConfig, train_set: &LabeledSet, validation: &LabeledSet) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let n_classes = train_set.num_classes();
    let mut model = FnnModel::with_input_dim(train_set.dim(), n_classes, config.regime, config.seed)?;
    model.cl_trained = config.cl_enabled;
    let mut sampler =
        BalancedSampler::new(&train_set.labels, n_classes, config.batch_size, config.seed ^ SAMPLER_STREAM)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    let mut model_adam = AdamState::default();
    let mut centers = config.cl_enabled.then(|| ClassCenters::zeros(n_classes));

    let mut best: Option<(FnnModel, Option<ClassCenters>, usize, f64)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (mut ce_sum, mut cl_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for (b, indices) in sampler.epoch().into_iter().enumerate() {
            let batch: Vec<(&[f64], usize)> = indices
                .iter()
                .map(|&i| (train_set.features[i].as_slice(), train_set.labels[i]))
                .collect();
            let mode = ForwardMode::Stochastic { rng: &mut dropout_rng, dropout_p: model.dropout_p };
            let grads = match &centers {
                None => param_gradients(&model, &batch, &Loss::CrossEntropy, mode)?,
                Some(c) => {
                    let mask: Vec<bool> = batch
                        .iter()
                        .map(|(x, y)| model.predict(x).map(|p| p == *y))
                        .collect::<Result<_>>()?;
                    let loss = Loss::CrossEntropyWithCenterLoss {
                        centers: &c.centers,
                        mask: &mask,
                        lambda: config.lambda,
                    };
                    param_gradients(&model, &batch, &loss, mode)?
                }
            };
            if !grads.total_loss.is_finite() || !grads.params.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ce_loss: grads.ce_loss,
                    cl_loss: grads.cl_loss,
                });
            }
            model_adam.step(&mut model.param_blocks_mut(), &grads.params.blocks(), config.lr_model);
            if let (Some(c), Some(g)) = (centers.as_mut(), grads.centers.as_ref()) {
                c.step(g, config.lr_centers);
            }
            ce_sum += grads.ce_loss;
            cl_sum += grads.cl_loss;
            n_batches += 1;
        }
        let val_f1 = validation_f1(&model, validation)?;
        log::debug!("epoch {epoch}: ce={:.5} cl={:.5} val_f1={val_f1:.5}", ce_sum / n_batches as f64, cl_sum / n_batches as f64);
        log.push(EpochLog {
            epoch,
            ce_loss: ce_sum / n_batches as f64,
            cl_loss: cl_sum / n_batches as f64,
            val_f1,
        });
        if best.as_ref().is_none_or(|(_, _, _, f)| val_f1 > *f) {
            best = Some((model.clone(), centers.clone(), epoch, val_f1));
        }
    }
    let (model, centers, best_epoch, best_f1) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, centers, best_epoch, best_f1, log })
}

/// Mean Euclidean distance of each embedding to its class's mean embedding.
pub fn mean_intra_class_distance(model: &FnnModel, data: &LabeledSet) -> Result<f64> {
    let embeddings: Vec<Embedding> =
        data.features.par_iter().map(|x| model.embed(x)).collect::<Result<_>>()?;
    let mut sums: BTreeMap<usize, ([f64; 2], usize)> = BTreeMap::new();
    for (e, &y) in embeddings.iter().zip(&data.labels) {
        let entry = sums.entry(y).or_insert(([0.0; 2], 0));
        entry.0[0] += e[0];
        entry.0[1] += e[1];
        entry.1 += 1;
    }
    let total: f64 = embeddings
        .iter()
        .zip(&data.labels)
        .map(|(e, y)| {
            let (s, n) = sums[y];
            crate::linalg::euclidean(*e, [s[0] / n as f64, s[1] / n as f64])
        })
        .sum();
    Ok(total / embeddings.len().max(1) as f64)
}
