use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Needs, RunConfig};
use crate::data::{
    assemble_scenario, generate_synthetic, load_csv, load_feature_matrix, load_json, save_json, write_atomic,
    write_encoded_csv, ColumnMap, Dataset, NetFlowRecord, SyntheticSpec,
};
use crate::detectors::{fit_detector, rejected_count, DetectorProfile, DetectorState, FitInputs, Verdict};
use crate::ensemble::{build_ens1, build_ens2, EnsembleConfig, MemberTag, ModelTag};
use crate::eval::{
    evaluate_verdicts, export_embeddings, reports_table, score_dataset, DetectorBank, EvalReport, GroundTruth,
    RecordRole,
};
use crate::features::{cross_dataset_select, select_features, SelectionReport};
use crate::linalg::Embedding;
use crate::nn::{FnnModel, Regime};
use crate::training::{stratified_split, train, LabeledSet, TrainConfig};
use crate::{Error, Result};

const TEST_STREAM: u64 = 0x7e57_0001;
const VALIDATION_STREAM: u64 = 0x7e57_0002;
const DETECTOR_STREAM: u64 = 0x7e57_0003;
/// Offset added to foreign-dataset record ids so they never collide with home ids.
pub const FOREIGN_ID_OFFSET: u64 = 1 << 48;

pub const KIND_MODEL: &str = "model";
pub const KIND_PROFILE: &str = "profile";
pub const KIND_ENSEMBLE: &str = "ensemble";
pub const KIND_REPORT: &str = "report";
pub const KIND_FEATURES: &str = "feature-report";

/// A trained model with what is needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub tag: ModelTag,
    pub class_names: Vec<String>,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub centers: Option<Vec<Embedding>>,
    pub model: FnnModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub member: MemberTag,
    /// Fraction of ID validation records kept, recounted after calibration.
    pub validation_retention: f64,
    pub profile: DetectorProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureArtifact {
    pub reports: Vec<SelectionReport>,
    pub selected: Vec<String>,
}

pub fn model_path(out: &Path, tag: ModelTag) -> PathBuf {
    out.join("models").join(format!("{tag}.json"))
}

pub fn profile_path(out: &Path, member: MemberTag) -> PathBuf {
    out.join("profiles").join(format!("{}_{}.json", member.kind.as_str().to_lowercase(), member.model))
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Multiclass => "multiclass",
        Regime::Binary => "binary",
    }
}

/// Data splits shared by every model of one regime.
pub struct RegimeSplits {
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
}

pub struct Prepared {
    pub dataset: Dataset,
    pub unknown: Vec<NetFlowRecord>,
    pub tuning: Vec<Vec<f64>>,
    pub foreign: Vec<NetFlowRecord>,
    pub splits: BTreeMap<Regime, RegimeSplits>,
}

fn load_dataset(path: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let report = load_csv(path, columns)?;
    log::info!(
        "{}: {} records, {} dropped of {}",
        report.dataset.name,
        report.dataset.len(),
        report.dropped_rows,
        report.total_rows
    );
    Ok(report.dataset)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = cfg.data()?;
    let scenario = cfg.scenario()?;
    let dataset = load_dataset(&data.path, &data.columns)?;
    let mut splits = BTreeMap::new();
    let mut unknown = Vec::new();
    let mut tuning = Vec::new();
    for regime in cfg.regimes() {
        let pools = assemble_scenario(&dataset, &scenario.scenario(regime), &scenario.tuning_attacks)?;
        let (fit, test) = stratified_split(&pools.train_pool, 1.0 - data.test_fraction, cfg.seed ^ TEST_STREAM)?;
        let (train, validation) = stratified_split(&fit, cfg.train.split_fraction, cfg.seed ^ VALIDATION_STREAM)?;
        splits.insert(regime, RegimeSplits { train, validation, test });
        unknown = pools.unknown;
        tuning = pools.tuning.into_iter().map(|r| r.features).collect();
    }
    let foreign = match &data.foreign_benign {
        Some(path) => {
            let columns = data.foreign_columns.as_ref().unwrap_or(&data.columns);
            let ds = load_dataset(path, columns)?;
            ds.records
                .into_iter()
                .filter(|r| !r.malicious)
                .map(|mut r| {
                    r.id += FOREIGN_ID_OFFSET;
                    r.class_name = format!("{} ({})", r.class_name, ds.name);
                    r
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(Prepared { dataset, unknown, tuning, foreign, splits })
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<ModelArtifact>> {
    cfg.validate(Needs::Pipeline)?;
    let prep = prepare(cfg)?;
    let artifacts: Vec<(ModelArtifact, String)> = cfg
        .models
        .par_iter()
        .map(|&tag| {
            let splits = &prep.splits[&tag.regime];
            let tc = cfg.train.for_model(tag, cfg.seed);
            let outcome = train(&tc, &splits.train, &splits.validation)?;
            log::info!("{tag}: best epoch {} with validation F1 {:.4}", outcome.best_epoch, outcome.best_f1);
            let log = outcome.log_jsonl()?;
            Ok((
                ModelArtifact {
                    tag,
                    class_names: splits.train.class_names.clone(),
                    train_config: tc,
                    best_epoch: outcome.best_epoch,
                    best_f1: outcome.best_f1,
                    centers: outcome.centers.map(|c| c.centers),
                    model: outcome.model,
                },
                log,
            ))
        })
        .collect::<Result<_>>()?;
    for (a, log) in &artifacts {
        save_json(&model_path(out, a.tag), KIND_MODEL, a)?;
        write_atomic(&out.join("models").join(format!("{}.train.jsonl", a.tag)), log.as_bytes())?;
    }
    Ok(artifacts.into_iter().map(|(a, _)| a).collect())
}

fn load_model(out: &Path, tag: ModelTag) -> Result<ModelArtifact> {
    let path = model_path(out, tag);
    if !path.is_file() {
        return Err(Error::Config(format!("model {tag} not found at {}; run train first", path.display())));
    }
    let a: ModelArtifact = load_json(&path, KIND_MODEL)?;
    if a.tag != tag {
        return Err(Error::Compatibility(format!("{} holds model {}", path.display(), a.tag)));
    }
    a.model.validate()?;
    Ok(a)
}

/// Default ensembles: ENS1 and ENS2 for every regime whose members are all present.
pub fn ensembles_for(cfg: &RunConfig, available: &BTreeSet<MemberTag>) -> Result<Vec<EnsembleConfig>> {
    match &cfg.ensembles {
        Some(specs) => specs
            .iter()
            .map(|s| EnsembleConfig::new(&s.name, s.members.clone(), s.policy, available))
            .collect(),
        None => {
            let mut out = Vec::new();
            for regime in cfg.regimes() {
                for (name, built) in [("ENS1", build_ens1(available, regime)), ("ENS2", build_ens2(available, regime))] {
                    match built {
                        Ok(mut e) => {
                            e.name = format!("{name}-{}", regime_name(regime));
                            out.push(e);
                        }
                        Err(err) => log::info!("skipping {name} for {}: {err}", regime_name(regime)),
                    }
                }
            }
            Ok(out)
        }
    }
}

fn ensemble_path(out: &Path, name: &str) -> PathBuf {
    out.join("ensembles").join(format!("{name}.json"))
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &Path) -> Result<Vec<ProfileArtifact>> {
    cfg.validate(Needs::Pipeline)?;
    let prep = prepare(cfg)?;
    let models: BTreeMap<ModelTag, ModelArtifact> =
        cfg.models.iter().map(|&t| Ok((t, load_model(out, t)?))).collect::<Result<_>>()?;
    let mut settings = cfg.detectors.settings.clone();
    settings.seed = cfg.seed ^ DETECTOR_STREAM;
    let jobs: Vec<MemberTag> = cfg
        .models
        .iter()
        .flat_map(|&model| cfg.detectors.kinds.iter().map(move |&kind| MemberTag { kind, model }))
        .collect();
    let tuning = (!prep.tuning.is_empty()).then_some(prep.tuning.as_slice());
    let profiles: Vec<ProfileArtifact> = jobs
        .par_iter()
        .map(|&member| {
            let splits = &prep.splits[&member.model.regime];
            let model = &models[&member.model].model;
            let inputs = FitInputs { model, train: &splits.train, validation: &splits.validation, tuning_ood: tuning };
            let profile = fit_detector(member.kind, inputs, &settings)?;
            let scores = profile.score_all(model, &splits.validation.features)?;
            let kept = scores.len() - rejected_count(&scores, profile.direction, profile.threshold);
            Ok(ProfileArtifact { member, validation_retention: kept as f64 / scores.len() as f64, profile })
        })
        .collect::<Result<_>>()?;
    let mut summary = String::new();
    let _ = writeln!(summary, "{:<22}  {:>14}  {:>10}  {:>9}", "member", "threshold", "epsilon", "retained");
    for p in &profiles {
        save_json(&profile_path(out, p.member), KIND_PROFILE, p)?;
        let eps = match &p.profile.state {
            DetectorState::Odin { epsilon, .. } | DetectorState::Md { epsilon, .. } => {
                format!("{epsilon}")
            }
            _ => "-".into(),
        };
        let _ = writeln!(
            summary,
            "{:<22}  {:>14.6e}  {:>10}  {:>9.4}",
            p.member.to_string(),
            p.profile.threshold,
            eps,
            p.validation_retention
        );
    }
    let available: BTreeSet<MemberTag> = profiles.iter().map(|p| p.member).collect();
    for e in ensembles_for(cfg, &available)? {
        save_json(&ensemble_path(out, &e.name), KIND_ENSEMBLE, &e)?;
    }
    write_atomic(&out.join("profiles").join("summary.txt"), summary.as_bytes())?;
    Ok(profiles)
}

/// Loads the models, profiles and ensembles of one regime and checks compatibility.
pub fn load_bank(cfg: &RunConfig, out: &Path, regime: Regime) -> Result<DetectorBank> {
    let mut models = BTreeMap::new();
    let mut profiles = BTreeMap::new();
    for &tag in cfg.models.iter().filter(|t| t.regime == regime) {
        models.insert(tag, load_model(out, tag)?.model);
        for &kind in &cfg.detectors.kinds {
            let member = MemberTag { kind, model: tag };
            let path = profile_path(out, member);
            if !path.is_file() {
                return Err(Error::Config(format!("profile {member} not found; run calibrate first")));
            }
            let p: ProfileArtifact = load_json(&path, KIND_PROFILE)?;
            if p.member != member {
                return Err(Error::Compatibility(format!("{} holds profile {}", path.display(), p.member)));
            }
            profiles.insert(member, p.profile);
        }
    }
    let available: BTreeSet<MemberTag> = profiles.keys().copied().collect();
    let ensembles = ensembles_for(cfg, &available)?
        .into_iter()
        .filter(|e| e.members.iter().all(|m| m.model.regime == regime))
        .collect();
    DetectorBank::new(models, profiles, ensembles)
}

fn verdicts_csv(verdicts: &[Verdict], roles: &HashMap<u64, (RecordRole, String)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = verdicts.first() else {
        w.write_record(["record_id"])?;
        return w.into_inner().map_err(|e| Error::Io(e.into_error()));
    };
    let mut header = vec!["record_id".to_string(), "class".into(), "role".into(), "predicted".into()];
    for o in &first.outcomes {
        header.push(format!("{}:score", o.member));
        header.push(format!("{}:threshold", o.member));
        header.push(format!("{}:flag", o.member));
    }
    for (name, _) in &first.ensemble_flags {
        header.push(format!("{name}:flag"));
    }
    w.write_record(&header)?;
    for v in verdicts {
        let (role, class) = roles.get(&v.record_id).cloned().unwrap_or((RecordRole::Benign, String::new()));
        let role = serde_json::to_value(role)?.as_str().unwrap_or_default().to_string();
        let mut row = vec![v.record_id.to_string(), class, role, v.predicted_class.to_string()];
        for o in &v.outcomes {
            row.push(o.score.to_string());
            row.push(o.threshold.to_string());
            row.push(if o.flag.is_ood() { "OOD" } else { "ID" }.into());
        }
        for (_, f) in &v.ensemble_flags {
            row.push(if f.is_ood() { "OOD" } else { "ID" }.into());
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<BTreeMap<Regime, Vec<EvalReport>>> {
    cfg.validate(Needs::Pipeline)?;
    let prep = prepare(cfg)?;
    if prep.unknown.is_empty() {
        log::warn!("unknown-attack pool is empty; TPR is undefined for this scenario");
    }
    let benign = &cfg.scenario()?.benign_class;
    let by_id: HashMap<u64, &NetFlowRecord> = prep.dataset.records.iter().map(|r| (r.id, r)).collect();
    let mut all = BTreeMap::new();
    for regime in cfg.regimes() {
        let bank = load_bank(cfg, out, regime)?;
        let mut records: Vec<NetFlowRecord> = prep.splits[&regime].test.ids.iter().map(|id| by_id[id].clone()).collect();
        records.extend(prep.unknown.iter().cloned());
        records.extend(prep.foreign.iter().cloned());
        let truth: Vec<GroundTruth> = records
            .iter()
            .map(|r| {
                let role = if r.id >= FOREIGN_ID_OFFSET {
                    RecordRole::ForeignBenign
                } else if &r.class_name == benign {
                    RecordRole::Benign
                } else if cfg.scenario().is_ok_and(|s| s.training_attacks.contains(&r.class_name)) {
                    RecordRole::KnownAttack
                } else {
                    RecordRole::UnknownAttack
                };
                GroundTruth { record_id: r.id, role, class_name: r.class_name.clone() }
            })
            .collect();
        let verdicts = score_dataset(&bank, &records)?;
        let reports = evaluate_verdicts(&verdicts, &truth, &cfg.fingerprint())?;
        let dir = out.join("reports").join(regime_name(regime));
        save_json(&dir.join("report.json"), KIND_REPORT, &reports)?;
        write_atomic(&dir.join("report.txt"), reports_table(&reports).as_bytes())?;
        let roles: HashMap<u64, (RecordRole, String)> =
            truth.iter().map(|t| (t.record_id, (t.role, t.class_name.clone()))).collect();
        write_atomic(&dir.join("verdicts.csv"), &verdicts_csv(&verdicts, &roles)?)?;
        all.insert(regime, reports);
    }
    Ok(all)
}

pub fn cmd_detect(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate(Needs::Detection)?;
    let input = cfg.detect.input.clone().expect("validated");
    let columns = cfg.detect.columns.as_ref().unwrap_or(&cfg.data()?.columns);
    let ds = load_dataset(&input, columns)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    let roles: HashMap<u64, (RecordRole, String)> = ds
        .records
        .iter()
        .map(|r| (r.id, (if r.malicious { RecordRole::UnknownAttack } else { RecordRole::Benign }, r.class_name.clone())))
        .collect();
    let mut written = Vec::new();
    for regime in cfg.regimes() {
        let bank = load_bank(cfg, out, regime)?;
        let verdicts = score_dataset(&bank, &ds.records)?;
        let path = out.join("detections").join(format!("{stem}-{}.csv", regime_name(regime)));
        write_atomic(&path, &verdicts_csv(&verdicts, &roles)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_export_embeddings(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate(Needs::Pipeline)?;
    let tag = cfg.export.model;
    let artifact = load_model(out, tag)?;
    let prep = prepare(cfg)?;
    let splits = prep
        .splits
        .get(&tag.regime)
        .ok_or_else(|| Error::Config(format!("export model {tag} is not among the configured models")))?;
    let export = export_embeddings(&artifact.model, &splits.validation, &cfg.export.grid)?;
    let dir = out.join("embeddings");
    let records = dir.join(format!("{tag}-records.csv"));
    let grid = dir.join(format!("{tag}-grid.csv"));
    let mut buf = Vec::new();
    export.write_records_csv(&mut buf, &artifact.class_names)?;
    write_atomic(&records, &buf)?;
    buf.clear();
    export.write_grid_csv(&mut buf)?;
    write_atomic(&grid, &buf)?;
    Ok((records, grid))
}

pub fn cmd_select_features(cfg: &RunConfig, out: &Path) -> Result<FeatureArtifact> {
    cfg.validate(Needs::Selection)?;
    let sel = cfg.select_features.as_ref().expect("validated");
    let mut reports = Vec::new();
    for d in &sel.datasets {
        let file = std::fs::File::open(&d.path).map_err(|e| Error::Load(format!("{}: {e}", d.path.display())))?;
        let load = load_feature_matrix(file, &d.label, &d.drop_columns, &d.port_columns)?;
        log::info!("{}: {} rows kept, {} dropped", d.name, load.matrix.rows.len(), load.dropped_rows);
        if !load.skipped_columns.is_empty() {
            log::info!("{}: skipped non-numeric columns {:?}", d.name, load.skipped_columns);
        }
        reports.push(select_features(&d.name, &load.matrix, &sel.forest, cfg.seed)?);
    }
    let selected = match reports.as_slice() {
        [a] => a.ranking.top(20),
        [a, b] => {
            // dataset A's column order, then columns only B has
            let mut universe: Vec<(usize, String)> =
                a.ranking.entries.iter().map(|e| (e.schema_index, e.name.clone())).collect();
            universe.sort();
            let mut universe: Vec<String> = universe.into_iter().map(|(_, n)| n).collect();
            let mut b_only: Vec<(usize, String)> = b
                .ranking
                .entries
                .iter()
                .filter(|e| !universe.contains(&e.name))
                .map(|e| (e.schema_index, e.name.clone()))
                .collect();
            b_only.sort();
            universe.extend(b_only.into_iter().map(|(_, n)| n));
            cross_dataset_select(&a.ranking, &b.ranking, &universe)
        }
        _ => unreachable!("validated"),
    };
    let artifact = FeatureArtifact { reports, selected };
    let dir = out.join("features");
    save_json(&dir.join("selection.json"), KIND_FEATURES, &artifact)?;
    let mut text = String::new();
    for r in &artifact.reports {
        let _ = writeln!(text, "== {} ==", r.dataset);
        let _ = writeln!(text, "after variance filter: {}", r.after_variance.len());
        let _ = writeln!(text, "after correlation filter: {}", r.after_correlation.len());
        text.push_str(&r.ranking.to_table());
        text.push('\n');
    }
    let _ = writeln!(text, "selected ({}): {}", artifact.selected.len(), artifact.selected.join(", "));
    write_atomic(&dir.join("selection.txt"), text.as_bytes())?;
    Ok(artifact)
}

/// Writes `dataset.csv` (ID then OOD records) and `ood.csv` in the encoded layout.
pub fn cmd_generate_synthetic(spec_path: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", spec_path.display())))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let (id, ood) = generate_synthetic(&spec)?;
    let mut all = id.clone();
    all.records.extend(ood.records.iter().cloned());
    let write = |ds: &Dataset, name: &str| -> Result<PathBuf> {
        let mut buf = Vec::new();
        write_encoded_csv(&mut buf, ds)?;
        let p = out.join(name);
        write_atomic(&p, &buf)?;
        Ok(p)
    };
    Ok((write(&all, "dataset.csv")?, write(&ood, "ood.csv")?))
}
