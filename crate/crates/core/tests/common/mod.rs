#![allow(dead_code)]

use nids_ood::data::{generate_synthetic, BlobSpec, Dataset, SyntheticSpec};
use nids_ood::nn::INPUT_DIM;
use nids_ood::training::LabeledSet;

/// Unit vector scaled by `scale` along axis `axis`.
pub fn axis_point(axis: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; INPUT_DIM];
    v[axis] = scale;
    v
}

pub fn blob(name: &str, mean: Vec<f64>, std: f64, count: usize, malicious: bool) -> BlobSpec {
    let dim = mean.len();
    BlobSpec { name: name.to_string(), mean, std: vec![std; dim], count, malicious }
}

/// `names.len()` isotropic blobs with means `separation · e_k`; the first is benign.
pub fn axis_blobs(names: &[&str], separation: f64, std: f64, count: usize, seed: u64) -> SyntheticSpec {
    let blobs = names
        .iter()
        .enumerate()
        .map(|(k, n)| blob(n, axis_point(k, separation), std, count, k > 0))
        .collect();
    SyntheticSpec { dim: INPUT_DIM, blobs, ood: Vec::new(), benign_class: names[0].to_string(), seed }
}

/// Labels records by the dataset's class order.
pub fn labeled(ds: &Dataset) -> LabeledSet {
    let mut set = LabeledSet { class_names: ds.classes.clone(), ..Default::default() };
    for r in &ds.records {
        set.ids.push(r.id);
        set.features.push(r.features.clone());
        set.labels.push(ds.classes.iter().position(|c| *c == r.class_name).unwrap());
    }
    set
}

pub fn synthetic(spec: &SyntheticSpec) -> (Dataset, Dataset) {
    generate_synthetic(spec).expect("valid synthetic spec")
}

pub fn rows(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.records.iter().map(|r| r.features.clone()).collect()
}
