use nids_ood::detectors::Flag;
use nids_ood::eval::{compute_metrics, export_embeddings, GridSpec, GroundTruth, RecordRole};
use nids_ood::nn::{FnnModel, Regime};
use nids_ood::training::LabeledSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROLES: [RecordRole; 4] =
    [RecordRole::Benign, RecordRole::KnownAttack, RecordRole::UnknownAttack, RecordRole::ForeignBenign];

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(u64, Flag)>, Vec<GroundTruth>) {
    let truth: Vec<GroundTruth> = (0..n as u64)
        .map(|id| {
            let role = ROLES[rng.random_range(0..4)];
            GroundTruth { record_id: id, role, class_name: format!("{role:?}") }
        })
        .collect();
    let flags = (0..n as u64).map(|id| (id, if rng.random_bool(0.4) { Flag::Ood } else { Flag::Id })).collect();
    (flags, truth)
}

#[test]
fn metrics_match_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(20..300);
        let (flags, truth) = random_case(&mut rng, n);
        let report = compute_metrics("src", &flags, &truth, "fp").unwrap();
        let count = |role: RecordRole, ood: bool| {
            flags.iter().zip(&truth).filter(|((_, f), t)| t.role == role && f.is_ood() == ood).count() as u64
        };
        let (tp, fn_) = (count(RecordRole::UnknownAttack, true), count(RecordRole::UnknownAttack, false));
        let (fp, tn) = (count(RecordRole::Benign, true), count(RecordRole::Benign, false));
        assert_eq!((report.counts.tp, report.counts.fn_, report.counts.fp, report.counts.tn), (tp, fn_, fp, tn));
        if tp + fn_ > 0 {
            assert_eq!(report.tpr, Some(tp as f64 / (tp + fn_) as f64));
        }
        if fp + tn > 0 {
            assert_eq!(report.fpr, Some(fp as f64 / (fp + tn) as f64));
        }
        let total: u64 = report.groups.iter().map(|g| g.total).sum();
        assert_eq!(total, n as u64);
    }
}

#[test]
fn metrics_ignore_record_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut flags, mut truth) = random_case(&mut rng, 200);
    let before = compute_metrics("src", &flags, &truth, "fp").unwrap();
    flags.shuffle(&mut rng);
    truth.shuffle(&mut rng);
    assert_eq!(compute_metrics("src", &flags, &truth, "fp").unwrap(), before);
}

fn tiny_set(model: &FnnModel) -> LabeledSet {
    let features: Vec<Vec<f64>> = (0..6).map(|i| (0..model.input_dim()).map(|j| ((i * 7 + j) % 5) as f64 - 2.0).collect()).collect();
    LabeledSet {
        ids: (0..6).collect(),
        labels: (0..6).map(|i| i % 3).collect(),
        features,
        class_names: vec!["a".into(), "b".into(), "c".into()],
    }
}

#[test]
fn grid_probabilities_follow_the_classifier_layer() {
    let model = FnnModel::new(3, Regime::Multiclass, 8).unwrap();
    let grid = GridSpec { nx: 2, ny: 2, bounds: Some([-1.0, 1.0, -2.0, 2.0]), margin: 0.0 };
    let export = export_embeddings(&model, &tiny_set(&model), &grid).unwrap();
    assert_eq!(export.grid.len(), 4);
    let corners: Vec<[f64; 2]> = export.grid.iter().map(|g| g.point).collect();
    assert_eq!(corners, vec![[-1.0, -2.0], [1.0, -2.0], [-1.0, 2.0], [1.0, 2.0]]);
    let w = &model.classifier;
    for g in &export.grid {
        let sum: f64 = g.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // classifier-only oracle: softmax(W e + b)
        let logits: Vec<f64> = (0..3).map(|c| w.weight(c, 0) * g.point[0] + w.weight(c, 1) * g.point[1] + w.bias[c]).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for (p, l) in g.probabilities.iter().zip(&logits) {
            assert!((p - l.exp() / z).abs() < 1e-12);
        }
    }
    for (row, x) in export.records.iter().zip(&tiny_set(&model).features) {
        assert_eq!(row.embedding, model.embed(x).unwrap());
        assert_eq!(row.predicted, model.predict(x).unwrap());
    }
    let mut buf = Vec::new();
    export.write_grid_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x,y,p_0,p_1,p_2\n"));
}

#[test]
fn export_rejects_models_without_planar_embedding() {
    let mut model = FnnModel::new(3, Regime::Multiclass, 8).unwrap();
    let data = tiny_set(&model);
    model.encoder.pop();
    assert!(export_embeddings(&model, &data, &GridSpec::default()).is_err());
}
