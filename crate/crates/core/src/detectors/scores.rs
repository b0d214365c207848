//! Per-detector scoring functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{euclidean, fnv1a_f64, Embedding, Mat2};
use crate::nn::{
    input_gradient_with_value, nearest_mahalanobis, softmax_unchecked, FnnModel, ForwardMode,
    InputObjective,
};
use crate::training::LabeledSet;
use crate::{Error, Result};

fn max_softmax(logits: &[f64], temperature: f64) -> f64 {
    softmax_unchecked(logits, temperature).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Maximum softmax probability (T = 1).
pub fn conf_score(model: &FnnModel, x: &[f64]) -> Result<f64> {
    let trace = model.forward_deterministic(x)?;
    Ok(max_softmax(&trace.logits, 1.0))
}

/// Max-softmax values of `passes` stochastic forwards at dropout probability `dropout_p`.
pub fn mcd_pass_scores(model: &FnnModel, x: &[f64], passes: usize, dropout_p: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a_f64(x));
    (0..passes)
        .map(|_| {
            let trace = model.forward(x, ForwardMode::Stochastic { rng: &mut rng, dropout_p })?;
            Ok(max_softmax(&trace.logits, 1.0))
        })
        .collect()
}

/// Sample standard deviation (n − 1) of the per-pass max-softmax values.
pub fn mcd_score(model: &FnnModel, x: &[f64], passes: usize, dropout_p: f64, seed: u64) -> Result<f64> {
    if passes < 2 {
        return Err(Error::Argument(format!("MCD needs at least 2 passes, got {passes}")));
    }
    let values = mcd_pass_scores(model, x, passes, dropout_p, seed)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Input moved by `ε` along the sign of the gradient of the temperature-scaled
/// max-softmax, in the direction that raises it.
pub fn odin_perturb(model: &FnnModel, x: &[f64], temperature: f64, epsilon: f64) -> Result<Vec<f64>> {
    if epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let (_, grad) = input_gradient_with_value(model, x, &InputObjective::MaxSoftmax { temperature })?;
    Ok(x.iter().zip(&grad).map(|(v, g)| v + epsilon * sign(*g)).collect())
}

/// Temperature-scaled max-softmax of the perturbed input.
pub fn odin_score(model: &FnnModel, x: &[f64], temperature: f64, epsilon: f64) -> Result<f64> {
    let perturbed = odin_perturb(model, x, temperature, epsilon)?;
    let trace = model.forward_deterministic(&perturbed)?;
    Ok(max_softmax(&trace.logits, temperature))
}

pub const MD_DELTA: f64 = 1e-6;

/// Class means and a pooled covariance with a diagonal ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussianStats {
    pub means: Vec<Embedding>,
    /// Pooled covariance before regularization.
    pub covariance: Mat2,
    pub delta: f64,
    /// `(Σ + δI)⁻¹`
    pub precision: Mat2,
}

impl ClassGaussianStats {
    pub fn new(means: Vec<Embedding>, covariance: Mat2, delta: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Fit("no class means".into()));
        }
        let regularized = covariance.add(&Mat2::scaled_identity(delta));
        let eig = regularized.symmetric_eigenvalues();
        let asymmetric = (regularized.0[0][1] - regularized.0[1][0]).abs()
            > 1e-12 * regularized.trace().abs().max(1.0);
        if !regularized.is_finite() || asymmetric || !(eig[0] > 0.0) || eig[1] / eig[0] > 1e15 {
            return Err(Error::Fit(format!(
                "regularized covariance is not safely positive definite (eigenvalues {eig:?})"
            )));
        }
        let precision = regularized
            .inverse()
            .ok_or_else(|| Error::Fit("singular covariance after regularization".into()))?;
        Ok(Self { means, covariance, delta, precision })
    }

    pub fn regularized_covariance(&self) -> Mat2 {
        self.covariance.add(&Mat2::scaled_identity(self.delta))
    }

    /// Nearest class and its squared Mahalanobis distance.
    pub fn distance(&self, e: Embedding) -> (usize, f64) {
        nearest_mahalanobis(e, &self.means, &self.precision)
    }
}

pub(crate) fn embed_all(model: &FnnModel, rows: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    rows.par_iter().map(|x| model.embed(x)).collect()
}

fn group_by_class(embeddings: &[Embedding], labels: &[usize], n_classes: usize) -> Vec<Vec<Embedding>> {
    let mut groups = vec![Vec::new(); n_classes];
    for (e, &y) in embeddings.iter().zip(labels) {
        groups[y].push(*e);
    }
    groups
}

fn mean(points: &[Embedding]) -> Embedding {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    [sx / n, sy / n]
}

/// Class means and pooled covariance estimated from grouped embeddings.
pub fn md_fit_embeddings(groups: &[Vec<Embedding>], delta: f64) -> Result<ClassGaussianStats> {
    let mut means = Vec::with_capacity(groups.len());
    let mut scatter = Mat2::zeros();
    let mut total = 0usize;
    for (class, points) in groups.iter().enumerate() {
        if points.len() < 3 {
            return Err(Error::Fit(format!("class {class} has {} embeddings; MD needs 3", points.len())));
        }
        let mu = mean(points);
        for p in points {
            let d = [p[0] - mu[0], p[1] - mu[1]];
            scatter = scatter.add(&Mat2([[d[0] * d[0], d[0] * d[1]], [d[1] * d[0], d[1] * d[1]]]));
        }
        total += points.len();
        means.push(mu);
    }
    ClassGaussianStats::new(means, scatter.scale(1.0 / total as f64), delta)
}

pub fn md_fit(model: &FnnModel, train: &LabeledSet, delta: f64) -> Result<ClassGaussianStats> {
    let embeddings = embed_all(model, &train.features)?;
    md_fit_embeddings(&group_by_class(&embeddings, &train.labels, model.num_classes()), delta)
}

/// Input moved by `ε` against the sign of the distance gradient.
pub fn md_perturb(model: &FnnModel, x: &[f64], stats: &ClassGaussianStats, epsilon: f64) -> Result<Vec<f64>> {
    if epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let objective = InputObjective::Mahalanobis { means: &stats.means, precision: &stats.precision };
    let (_, grad) = input_gradient_with_value(model, x, &objective)?;
    Ok(x.iter().zip(&grad).map(|(v, g)| v - epsilon * sign(*g)).collect())
}

/// Squared Mahalanobis distance of the perturbed input's embedding to the nearest class.
pub fn md_score(model: &FnnModel, x: &[f64], stats: &ClassGaussianStats, epsilon: f64) -> Result<f64> {
    let perturbed = md_perturb(model, x, stats, epsilon)?;
    Ok(stats.distance(model.embed(&perturbed)?).1)
}

/// Per-class mean embeddings.
pub fn sim_fit(model: &FnnModel, train: &LabeledSet) -> Result<Vec<Embedding>> {
    let embeddings = embed_all(model, &train.features)?;
    sim_fit_embeddings(&group_by_class(&embeddings, &train.labels, model.num_classes()))
}

pub fn sim_fit_embeddings(groups: &[Vec<Embedding>]) -> Result<Vec<Embedding>> {
    groups
        .iter()
        .enumerate()
        .map(|(c, g)| {
            if g.is_empty() {
                Err(Error::Fit(format!("class {c} has no training embeddings")))
            } else {
                Ok(mean(g))
            }
        })
        .collect()
}

/// Simplified silhouette against class centers: `(b − a) / max(a, b)` with `a`
/// the nearest and `b` the second-nearest center distance.
pub fn sim_score(centers: &[Embedding], e: Embedding) -> Result<f64> {
    if centers.len() < 2 {
        return Err(Error::Argument("SIM needs at least 2 centers".into()));
    }
    let (mut a, mut b) = (f64::INFINITY, f64::INFINITY);
    for c in centers {
        let d = euclidean(e, *c);
        if d < a {
            b = a;
            a = d;
        } else if d < b {
            b = d;
        }
    }
    let denom = a.max(b);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((b - a) / denom)
}

pub const KNN_K: usize = 25;

/// Training embeddings grouped by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnStores {
    pub stores: Vec<Vec<Embedding>>,
}

pub fn knn_fit_embeddings(groups: Vec<Vec<Embedding>>, k: usize) -> Result<KnnStores> {
    for (c, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::Fit(format!("class {c} has no training embeddings")));
        }
        if g.len() < k {
            log::warn!("KNN: class {c} has {} embeddings; k clamped from {k} to {}", g.len(), g.len());
        }
    }
    Ok(KnnStores { stores: groups })
}

pub fn knn_fit(model: &FnnModel, train: &LabeledSet, k: usize) -> Result<KnnStores> {
    let embeddings = embed_all(model, &train.features)?;
    knn_fit_embeddings(group_by_class(&embeddings, &train.labels, model.num_classes()), k)
}

impl KnnStores {
    pub fn effective_k(&self, class: usize, k: usize) -> usize {
        k.min(self.stores[class].len())
    }
}

/// Distance to the k-th nearest stored embedding of the predicted class.
pub fn knn_score(stores: &KnnStores, predicted: usize, e: Embedding, k: usize) -> Result<f64> {
    let store = stores
        .stores
        .get(predicted)
        .ok_or_else(|| Error::Argument(format!("no KNN store for class {predicted}")))?;
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let k = stores.effective_k(predicted, k);
    let mut dists: Vec<f64> = store.iter().map(|p| euclidean(e, *p)).collect();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}
