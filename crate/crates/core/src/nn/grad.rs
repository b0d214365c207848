use super::{FnnModel, ForwardMode, Gradients};
use crate::linalg::{Embedding, Mat2};
use crate::training::center_loss;
use crate::{Error, Result};

/// Temperature-scaled softmax, computed as `exp((z - max z) / T)` normalized.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Argument("softmax needs non-empty finite logits".into()));
    }
    Ok(softmax_unchecked(logits, temperature))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Training objective for [`param_gradients`].
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    CrossEntropy,
    /// Cross-entropy plus `lambda` times the masked Center-Loss.
    CrossEntropyWithCenterLoss {
        centers: &'a [Embedding],
        mask: &'a [bool],
        lambda: f64,
    },
}

/// Batch-mean gradients of the combined loss.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub params: Gradients,
    /// Gradient of the combined loss with respect to the class centers, when Center-Loss is on.
    pub centers: Option<Vec<Embedding>>,
    /// Mean cross-entropy over the batch.
    pub ce_loss: f64,
    /// Center-Loss sum divided by the batch size.
    pub cl_loss: f64,
    /// `ce_loss + lambda * cl_loss`
    pub total_loss: f64,
    /// Deterministic or stochastic traces' embeddings, in batch order.
    pub embeddings: Vec<Embedding>,
}

/// Gradients of the batch-mean loss for every parameter.
pub fn param_gradients(
    model: &FnnModel,
    batch: &[(&[f64], usize)],
    loss: &Loss<'_>,
    mut mode: ForwardMode<'_>,
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n_classes = model.num_classes();
    let scale = 1.0 / batch.len() as f64;
    let mut traces = Vec::with_capacity(batch.len());
    for (x, label) in batch {
        if *label >= n_classes {
            return Err(Error::Argument(format!("label {label} out of range for {n_classes} classes")));
        }
        traces.push(model.forward(x, mode.reborrow())?);
    }
    let embeddings: Vec<Embedding> = traces.iter().map(|t| t.embedding).collect();
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();

    let (embedding_grads, center_grads, cl_loss, lambda) = match loss {
        Loss::CrossEntropy => (None, None, 0.0, 0.0),
        Loss::CrossEntropyWithCenterLoss { centers, mask, lambda } => {
            if centers.len() != n_classes {
                return Err(Error::Dimension { expected: n_classes, got: centers.len() });
            }
            if mask.len() != batch.len() {
                return Err(Error::Dimension { expected: batch.len(), got: mask.len() });
            }
            let out = center_loss(&embeddings, &labels, centers, mask);
            let factor = lambda * scale;
            let e_grads: Vec<Embedding> =
                out.embedding_grads.iter().map(|g| [g[0] * factor, g[1] * factor]).collect();
            let c_grads: Vec<Embedding> =
                out.center_grads.iter().map(|g| [g[0] * factor, g[1] * factor]).collect();
            let e_grads = if *lambda == 0.0 { None } else { Some(e_grads) };
            (e_grads, Some(c_grads), out.loss * scale, *lambda)
        }
    };

    let mut grads = Gradients::zeros_like(model);
    let mut ce_sum = 0.0;
    for (i, trace) in traces.iter().enumerate() {
        let z = &trace.logits;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce_sum += lse - z[labels[i]];
        let mut d_logits: Vec<f64> = z.iter().map(|v| (v - lse).exp() * scale).collect();
        d_logits[labels[i]] -= scale;
        let d_e = embedding_grads.as_ref().map_or([0.0, 0.0], |g| g[i]);
        model.backward_into(trace, &d_logits, d_e, &mut grads);
    }
    let ce_loss = ce_sum * scale;
    Ok(BatchGradients {
        params: grads,
        centers: center_grads,
        ce_loss,
        cl_loss,
        total_loss: ce_loss + lambda * cl_loss,
        embeddings,
    })
}

/// Scalar objective whose input gradient drives the ODIN and Mahalanobis perturbations.
#[derive(Debug, Clone, Copy)]
pub enum InputObjective<'a> {
    /// Maximum softmax probability at the given temperature.
    MaxSoftmax { temperature: f64 },
    /// `min_j (e - μ_j)ᵀ P (e - μ_j)` with `P` the regularized inverse covariance.
    Mahalanobis { means: &'a [Embedding], precision: &'a Mat2 },
}

impl InputObjective<'_> {
    fn validate(&self) -> Result<()> {
        match self {
            InputObjective::MaxSoftmax { temperature } if !(*temperature > 0.0) => Err(
                Error::Argument(format!("temperature must be > 0, got {temperature}")),
            ),
            InputObjective::Mahalanobis { means, precision } => {
                if means.is_empty() {
                    return Err(Error::Argument("no class means".into()));
                }
                if !precision.is_finite() {
                    return Err(Error::Fit("non-finite precision matrix".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Closest class mean and its squared Mahalanobis distance.
pub(crate) fn nearest_mahalanobis(e: Embedding, means: &[Embedding], precision: &Mat2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, mu) in means.iter().enumerate() {
        let d = precision.quadratic_form(crate::linalg::sub(e, *mu));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Objective value and its gradient with respect to the raw input vector
/// (deterministic forward, no dropout).
pub fn input_gradient_with_value(
    model: &FnnModel,
    x: &[f64],
    objective: &InputObjective<'_>,
) -> Result<(f64, Vec<f64>)> {
    objective.validate()?;
    let trace = model.forward(x, ForwardMode::Deterministic)?;
    let mut scratch = super::Gradients::zeros_like(model);
    match objective {
        InputObjective::MaxSoftmax { temperature } => {
            let p = softmax_unchecked(&trace.logits, *temperature);
            let top = super::argmax(&p);
            let p_top = p[top];
            // d p_top / d z_k = p_top (δ_{top,k} - p_k) / T
            let d_logits: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let delta = if k == top { 1.0 } else { 0.0 };
                    p_top * (delta - pk) / temperature
                })
                .collect();
            let dx = model.backward_into(&trace, &d_logits, [0.0, 0.0], &mut scratch);
            Ok((p_top, dx))
        }
        InputObjective::Mahalanobis { means, precision } => {
            let (j, value) = nearest_mahalanobis(trace.embedding, means, precision);
            let diff = crate::linalg::sub(trace.embedding, means[j]);
            let sym = precision.add(&precision.transpose());
            let d_e = sym.mul_vec(diff);
            let zeros = vec![0.0; model.num_classes()];
            let dx = model.backward_into(&trace, &zeros, d_e, &mut scratch);
            Ok((value, dx))
        }
    }
}

pub fn input_gradient(model: &FnnModel, x: &[f64], objective: &InputObjective<'_>) -> Result<Vec<f64>> {
    Ok(input_gradient_with_value(model, x, objective)?.1)
}
