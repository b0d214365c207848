//! Gini-criterion random forest used for feature ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 200, max_depth: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Sample-weighted impurity decrease, `n_node · (gini − weighted child gini)`.
        weighted_decrease: f64,
    },
    Leaf {
        histogram: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
    /// Samples seen at the root (bootstrap size).
    pub n_samples: usize,
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &i in idx {
            h[self.labels[i]] += 1;
        }
        h
    }

    fn best_split_on(&self, idx: &mut [usize], feature: usize, parent: &[u32]) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.rows[a][feature].total_cmp(&self.rows[b][feature]));
        let n = idx.len() as u32;
        let parent_gini = gini(parent, n);
        let mut left = vec![0u32; self.n_classes];
        let mut right = parent.to_vec();
        let mut best: Option<(f64, f64)> = None;
        for k in 0..idx.len() - 1 {
            let y = self.labels[idx[k]];
            left[y] += 1;
            right[y] -= 1;
            let v = self.rows[idx[k]][feature];
            let next = self.rows[idx[k + 1]][feature];
            if v == next {
                continue;
            }
            let nl = (k + 1) as u32;
            let nr = n - nl;
            let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            let decrease = parent_gini - child;
            if decrease > 1e-12 && best.is_none_or(|(_, d)| decrease > d) {
                let mut threshold = 0.5 * (v + next);
                if threshold == next {
                    threshold = v;
                }
                best = Some((threshold, decrease));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let hist = self.histogram(idx);
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf { histogram: hist.clone() });
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || idx.len() < 2 || pure {
            return node_id;
        }
        let n_features = self.rows[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for (inspected, &feature) in order.iter().enumerate() {
            if inspected >= self.max_features && best.is_some() {
                break;
            }
            if let Some((threshold, decrease)) = self.best_split_on(idx, feature, &hist) {
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    best = Some(BestSplit { feature, threshold, decrease });
                }
            }
        }
        let Some(split) = best else {
            return node_id;
        };
        let rows = self.rows;
        let mut mid = 0;
        for k in 0..idx.len() {
            if rows[idx[k]][split.feature] <= split.threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        let n = (left_idx.len() + right_idx.len()) as f64;
        self.nodes[node_id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            weighted_decrease: n * split.decrease,
        };
        node_id
    }
}

impl DecisionTree {
    /// CART tree on the given sample indices (duplicates allowed).
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        sample: &mut [usize],
        max_depth: usize,
        max_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut builder = Builder { rows, labels, n_classes, max_depth, max_features, nodes: Vec::new() };
        builder.grow(sample, 0, rng);
        DecisionTree {
            nodes: builder.nodes,
            n_features: rows[0].len(),
            n_classes,
            n_samples: sample.len(),
        }
    }

    pub fn leaf_for(&self, x: &[f64]) -> &[u32] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { histogram } => return histogram,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let h = self.leaf_for(x);
        let mut best = 0;
        for (c, &v) in h.iter().enumerate() {
            if v > h[best] {
                best = c;
            }
        }
        best
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Per-feature impurity decrease normalized to sum 1 (all zeros for a stump).
    pub fn gini_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split { feature, weighted_decrease, .. } = node {
                imp[*feature] += weighted_decrease / self.n_samples as f64;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
}

impl RandomForest {
    /// Bootstrap-aggregated trees, `√d` candidate features per split.
    pub fn fit(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, config: &ForestConfig) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::Fit("forest needs matching, non-empty rows and labels".into()));
        }
        let mut present = vec![false; n_classes];
        for &y in labels {
            present[y] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(Error::Fit("forest needs at least two classes in the data".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::Fit("no features to fit".into()));
        }
        let max_features = ((d as f64).sqrt() as usize).max(1);
        let trees = (0..config.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64 + 1);
                let mut sample: Vec<usize> =
                    (0..rows.len()).map(|_| rng.random_range(0..rows.len())).collect();
                DecisionTree::fit(rows, labels, n_classes, &mut sample, config.max_depth, max_features, &mut rng)
            })
            .collect();
        Ok(Self { trees, n_classes })
    }

    /// Majority vote over per-tree predictions; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict(x)] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let correct = rows
            .par_iter()
            .zip(labels)
            .filter(|(x, y)| self.predict(x) == **y)
            .count();
        correct as f64 / rows.len() as f64
    }

    /// Mean of per-tree normalized impurity importances, renormalized to sum 1.
    pub fn gini_importance(&self) -> Vec<f64> {
        let d = self.trees.first().map_or(0, |t| t.n_features);
        let mut imp = vec![0.0; d];
        for tree in &self.trees {
            for (acc, v) in imp.iter_mut().zip(tree.gini_importance()) {
                *acc += v;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}
