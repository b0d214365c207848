//! Scoring records with a detector bank, OOD metrics, and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NetFlowRecord;
use crate::detectors::{DetectorOutcome, DetectorProfile, Flag, Verdict};
use crate::ensemble::{EnsembleConfig, MemberTag, ModelTag};
use crate::linalg::Embedding;
use crate::nn::{softmax, FnnModel, EMBED_DIM};
use crate::training::LabeledSet;
use crate::{Error, Result};

/// Models, calibrated profiles and ensembles used together for scoring.
#[derive(Debug, Clone)]
pub struct DetectorBank {
    pub models: BTreeMap<ModelTag, FnnModel>,
    pub profiles: BTreeMap<MemberTag, DetectorProfile>,
    pub ensembles: Vec<EnsembleConfig>,
}

impl DetectorBank {
    /// Checks every profile against its model's fingerprint and every
    /// ensemble member against the profiles.
    pub fn new(
        models: BTreeMap<ModelTag, FnnModel>,
        profiles: BTreeMap<MemberTag, DetectorProfile>,
        ensembles: Vec<EnsembleConfig>,
    ) -> Result<Self> {
        for (tag, profile) in &profiles {
            let model = models
                .get(&tag.model)
                .ok_or_else(|| Error::Compatibility(format!("profile {tag} has no {} model", tag.model)))?;
            if profile.kind != tag.kind {
                return Err(Error::Compatibility(format!("profile {tag} holds a {} detector", profile.kind)));
            }
            profile.check_model(model)?;
        }
        for ens in &ensembles {
            if let Some(m) = ens.members.iter().find(|m| !profiles.contains_key(m)) {
                return Err(Error::Ensemble(format!("{}: no calibrated profile for {m}", ens.name)));
            }
        }
        Ok(Self { models, profiles, ensembles })
    }
}

fn score_record(bank: &DetectorBank, record: &NetFlowRecord) -> Result<Verdict> {
    let mut predictions = BTreeMap::new();
    for (tag, model) in &bank.models {
        predictions.insert(*tag, model.predict(&record.features)?);
    }
    let mut outcomes = Vec::with_capacity(bank.profiles.len());
    let mut flags = BTreeMap::new();
    for (tag, profile) in &bank.profiles {
        let (score, flag) = profile.detect(&bank.models[&tag.model], &record.features)?;
        flags.insert(*tag, flag);
        outcomes.push(DetectorOutcome {
            member: tag.to_string(),
            predicted_class: predictions[&tag.model],
            score,
            threshold: profile.threshold,
            flag,
        });
    }
    let ensemble_flags = bank
        .ensembles
        .iter()
        .map(|ens| {
            let member_flags: Vec<Flag> = ens.members.iter().map(|m| flags[m]).collect();
            Ok((ens.name.clone(), ens.flag(&member_flags)?))
        })
        .collect::<Result<_>>()?;
    Ok(Verdict {
        record_id: record.id,
        predicted_class: predictions.values().next().copied().unwrap_or(0),
        outcomes,
        ensemble_flags,
    })
}

/// One verdict per record, in input order.
pub fn score_dataset(bank: &DetectorBank, records: &[NetFlowRecord]) -> Result<Vec<Verdict>> {
    records.par_iter().map(|r| score_record(bank, r)).collect()
}

/// Ground-truth role of a test record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordRole {
    /// Benign traffic of the home dataset; counted in FPR.
    Benign,
    /// Attack seen during training; reported but not counted.
    KnownAttack,
    /// Attack absent from training; counted in TPR.
    UnknownAttack,
    /// Benign traffic of another dataset; reported on its own row.
    ForeignBenign,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub record_id: u64,
    pub role: RecordRole,
    /// Original class name, used for per-attack rows.
    pub class_name: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub name: String,
    pub role: RecordRole,
    pub total: u64,
    pub flagged_ood: u64,
    /// Fraction flagged OOD; `None` for an empty group.
    pub ood_rate: Option<f64>,
}

/// OOD metrics of one decision source (a detector member or an ensemble).
/// Undefined ratios (zero denominators) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub counts: Counts,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    /// Per original class name, ordered by role then name.
    pub groups: Vec<GroupRow>,
    pub config_fingerprint: String,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics of one decision source. `flags` pairs each record id with the decision.
pub fn compute_metrics(
    source: &str,
    flags: &[(u64, Flag)],
    truth: &[GroundTruth],
    config_fingerprint: &str,
) -> Result<EvalReport> {
    let by_id: BTreeMap<u64, &GroundTruth> = truth.iter().map(|t| (t.record_id, t)).collect();
    let mut counts = Counts::default();
    let mut groups: BTreeMap<(u8, String), (RecordRole, u64, u64)> = BTreeMap::new();
    for (id, flag) in flags {
        let t = by_id.get(id).ok_or_else(|| Error::Argument(format!("record {id} has no ground truth")))?;
        let ood = flag.is_ood();
        match (t.role, ood) {
            (RecordRole::UnknownAttack, true) => counts.tp += 1,
            (RecordRole::UnknownAttack, false) => counts.fn_ += 1,
            (RecordRole::Benign, true) => counts.fp += 1,
            (RecordRole::Benign, false) => counts.tn += 1,
            _ => {}
        }
        let order = match t.role {
            RecordRole::UnknownAttack => 0,
            RecordRole::KnownAttack => 1,
            RecordRole::Benign => 2,
            RecordRole::ForeignBenign => 3,
        };
        let g = groups.entry((order, t.class_name.clone())).or_insert((t.role, 0, 0));
        g.1 += 1;
        g.2 += u64::from(ood);
    }
    let tpr = ratio(counts.tp, counts.tp + counts.fn_);
    let fpr = ratio(counts.fp, counts.fp + counts.tn);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let f1 = match (precision, tpr) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let groups = groups
        .into_iter()
        .map(|((_, name), (role, total, flagged))| GroupRow { name, role, total, flagged_ood: flagged, ood_rate: ratio(flagged, total) })
        .collect();
    Ok(EvalReport {
        source: source.to_string(),
        counts,
        tpr,
        fpr,
        precision,
        f1,
        groups,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// Reports for every member and every ensemble present in the verdicts.
pub fn evaluate_verdicts(verdicts: &[Verdict], truth: &[GroundTruth], config_fingerprint: &str) -> Result<Vec<EvalReport>> {
    let Some(first) = verdicts.first() else { return Ok(Vec::new()) };
    let mut reports = Vec::new();
    for (i, o) in first.outcomes.iter().enumerate() {
        let flags: Vec<(u64, Flag)> = verdicts.iter().map(|v| (v.record_id, v.outcomes[i].flag)).collect();
        reports.push(compute_metrics(&o.member, &flags, truth, config_fingerprint)?);
    }
    for (i, (name, _)) in first.ensemble_flags.iter().enumerate() {
        let flags: Vec<(u64, Flag)> = verdicts.iter().map(|v| (v.record_id, v.ensemble_flags[i].1)).collect();
        reports.push(compute_metrics(name, &flags, truth, config_fingerprint)?);
    }
    Ok(reports)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Aligned text table: one line per source, then per-group OOD rates.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.source.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>7}  {:>7}  {:>7}  {:>7}",
        "source", "TPR", "FPR", "precision", "F1", "TP", "FP", "TN", "FN"
    );
    for r in reports {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>7}  {:>7}  {:>7}  {:>7}",
            r.source,
            fmt_rate(r.tpr),
            fmt_rate(r.fpr),
            fmt_rate(r.precision),
            fmt_rate(r.f1),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        );
    }
    if let Some(first) = reports.first() {
        let gw = first.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out);
        let _ = write!(out, "{:<gw$}  {:<14}  {:>7}", "class", "role", "n");
        for r in reports {
            let _ = write!(out, "  {:>w$}", r.source, w = r.source.len().max(6));
        }
        let _ = writeln!(out);
        for (gi, g) in first.groups.iter().enumerate() {
            let role = serde_json::to_value(g.role).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = write!(out, "{:<gw$}  {:<14}  {:>7}", g.name, role, g.total);
            for r in reports {
                let _ = write!(out, "  {:>w$}", fmt_rate(r.groups[gi].ood_rate), w = r.source.len().max(6));
            }
            let _ = writeln!(out);
        }
    }
    out
}

/// Rectangular grid over embedding space; bounds default to the data range
/// padded by `margin` of its extent on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// `[x_min, x_max, y_min, y_max]`.
    pub bounds: Option<[f64; 4]>,
    pub margin: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 200, ny: 200, bounds: None, margin: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub record_id: u64,
    pub embedding: Embedding,
    pub true_label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub point: Embedding,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExport {
    pub records: Vec<EmbeddingRow>,
    pub grid: Vec<GridRow>,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Per-record embeddings plus classifier-layer softmax over a grid.
pub fn export_embeddings(model: &FnnModel, data: &LabeledSet, grid: &GridSpec) -> Result<EmbeddingExport> {
    let embed_dim = model.encoder.last().map(|l| l.out_dim).unwrap_or(0);
    if embed_dim != EMBED_DIM {
        return Err(Error::Argument(format!("embedding export needs a 2-D embedding, model has {embed_dim}")));
    }
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::Argument("grid resolution must be positive".into()));
    }
    let records: Vec<EmbeddingRow> = data
        .features
        .par_iter()
        .zip(&data.labels)
        .zip(&data.ids)
        .map(|((x, &y), &id)| {
            let trace = model.forward_deterministic(x)?;
            Ok(EmbeddingRow { record_id: id, embedding: trace.embedding, true_label: y, predicted: trace.predicted_class() })
        })
        .collect::<Result<_>>()?;
    let [x0, x1, y0, y1] = match grid.bounds {
        Some(b) => b,
        None => {
            let (mut b, mut any) = ([f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY], false);
            for r in &records {
                any = true;
                b[0] = b[0].min(r.embedding[0]);
                b[1] = b[1].max(r.embedding[0]);
                b[2] = b[2].min(r.embedding[1]);
                b[3] = b[3].max(r.embedding[1]);
            }
            if !any {
                b = [-1.0, 1.0, -1.0, 1.0];
            }
            let pad = |lo: f64, hi: f64| {
                let p = ((hi - lo) * grid.margin).max(1e-6);
                (lo - p, hi + p)
            };
            let (a, bb) = pad(b[0], b[1]);
            let (c, d) = pad(b[2], b[3]);
            [a, bb, c, d]
        }
    };
    let xs = axis(x0, x1, grid.nx);
    let ys = axis(y0, y1, grid.ny);
    let grid_rows = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .map(|point| Ok(GridRow { point, probabilities: softmax(&model.classify_embedding(point), 1.0)? }))
        .collect::<Result<_>>()?;
    Ok(EmbeddingExport { records, grid: grid_rows })
}

impl EmbeddingExport {
    pub fn write_records_csv<W: Write>(&self, writer: W, class_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "x", "y", "true", "predicted"])?;
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        for r in &self.records {
            w.write_record([
                r.record_id.to_string(),
                r.embedding[0].to_string(),
                r.embedding[1].to_string(),
                name(r.true_label),
                name(r.predicted),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_grid_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let classes = self.grid.first().map_or(0, |g| g.probabilities.len());
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..classes).map(|c| format!("p_{c}")));
        w.write_record(&header)?;
        for g in &self.grid {
            let mut row = vec![g.point[0].to_string(), g.point[1].to_string()];
            row.extend(g.probabilities.iter().map(|p| p.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
