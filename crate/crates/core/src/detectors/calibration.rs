use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Direction, Flag};
use crate::{Error, Result};

pub const MIN_CALIBRATION_SCORES: usize = 20;

/// Nearest-rank threshold keeping at least `retention` of the ID scores.
///
/// With `r = ⌈(1 − retention) · n⌉` (at least 1), reject-below detectors use the
/// r-th smallest score and reject-above detectors the r-th largest; since the
/// comparison is strict, at most `r − 1` scores are rejected.
pub fn calibrate_threshold(scores: &[f64], direction: Direction, retention: f64) -> Result<f64> {
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::Calibration(format!(
            "{} scores given, at least {MIN_CALIBRATION_SCORES} needed",
            scores.len()
        )));
    }
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::Calibration(format!("retention must lie in (0, 1], got {retention}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("non-finite calibration score".into()));
    }
    let n = scores.len();
    let rank = (((1.0 - retention) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(match direction {
        Direction::RejectBelow => sorted[rank - 1],
        Direction::RejectAbove => sorted[n - rank],
    })
}

pub fn rejected_count(scores: &[f64], direction: Direction, threshold: f64) -> usize {
    scores.iter().filter(|&&s| direction.flag(s, threshold) == Flag::Ood).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub epsilon: f64,
    pub threshold: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub epsilon: f64,
    pub threshold: f64,
    pub tpr: f64,
    pub grid: Vec<TuningPoint>,
}

/// For each ε, calibrate on ID validation scores and measure the rejected
/// fraction of the OOD tuning records; keep the best, smallest ε on ties.
pub fn tune_epsilon<F>(
    grid: &[f64],
    id_validation: &[Vec<f64>],
    ood_tuning: &[Vec<f64>],
    direction: Direction,
    retention: f64,
    score: F,
) -> Result<TuningResult>
where
    F: Fn(&[f64], f64) -> Result<f64> + Sync,
{
    if ood_tuning.is_empty() {
        return Err(Error::Tuning("empty OOD tuning set".into()));
    }
    if grid.is_empty() {
        return Err(Error::Tuning("empty ε grid".into()));
    }
    let mut eps_sorted = grid.to_vec();
    eps_sorted.sort_by(f64::total_cmp);
    let mut points = Vec::with_capacity(grid.len());
    for &epsilon in &eps_sorted {
        let id_scores: Vec<f64> =
            id_validation.par_iter().map(|x| score(x, epsilon)).collect::<Result<_>>()?;
        let threshold = calibrate_threshold(&id_scores, direction, retention)?;
        let ood_scores: Vec<f64> = ood_tuning.par_iter().map(|x| score(x, epsilon)).collect::<Result<_>>()?;
        let tpr = rejected_count(&ood_scores, direction, threshold) as f64 / ood_scores.len() as f64;
        points.push(TuningPoint { epsilon, threshold, tpr });
    }
    let mut best = &points[0];
    for p in &points[1..] {
        if p.tpr > best.tpr {
            best = p;
        }
    }
    Ok(TuningResult { epsilon: best.epsilon, threshold: best.threshold, tpr: best.tpr, grid: points.clone() })
}
