//! Gradient-boosted regression trees (squared error).
//!
//! Trees are grown level by level with exact greedy splits. Each feature is
//! sorted once per fit; a level is evaluated with a single pass over every
//! feature's sorted order, accumulating left-side statistics per frontier
//! node. Ties go to the lowest feature index, then the lowest threshold.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainingDiagnostics};
use crate::rng::{streams, SeededRng};

const UNSAMPLED: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    k = if x[(row, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

pub(super) struct BoostOptions {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: Option<f64>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct NodeStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

pub(super) fn fit_boosted(x: &DMatrix<f64>, y: &[f64], opts: &BoostOptions, seed: u64) -> (ModelParams, TrainingDiagnostics) {
    let n = x.nrows();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let sorted = presort(x);
    let mut pred = vec![base_score; n];
    let mut rng = SeededRng::new(seed, streams::LEARNER);
    let mut trees = Vec::with_capacity(opts.n_trees);

    for _ in 0..opts.n_trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let in_sample = match opts.subsample {
            Some(frac) if frac < 1.0 => {
                let k = ((frac * n as f64).round() as usize).clamp(1, n);
                let mut idx: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut idx);
                let mut mask = vec![false; n];
                idx[..k].iter().for_each(|&i| mask[i] = true);
                mask
            }
            _ => vec![true; n],
        };
        let tree = grow_tree(x, &resid, &in_sample, &sorted, opts);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += opts.learning_rate * tree.predict_row(x, i);
        }
        trees.push(tree);
    }

    let objective = y.iter().zip(&pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / n as f64;
    (
        ModelParams::Ensemble { base_score, learning_rate: opts.learning_rate, trees },
        TrainingDiagnostics { iterations: opts.n_trees, objective, converged: true, warnings: vec![] },
    )
}

/// Row indices sorted by each feature's value (stable, so equal values keep
/// row order).
fn presort(x: &DMatrix<f64>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            idx
        })
        .collect()
}

fn grow_tree(x: &DMatrix<f64>, resid: &[f64], in_sample: &[bool], sorted: &[Vec<usize>], opts: &BoostOptions) -> Tree {
    let n = x.nrows();
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut node_of: Vec<usize> = in_sample.iter().map(|&s| if s { 0 } else { UNSAMPLED }).collect();
    let mut frontier = vec![0usize];

    for _depth in 0..opts.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut stats = vec![NodeStats::default(); frontier.len()];
        for i in 0..n {
            if node_of[i] != UNSAMPLED && slot_of[node_of[i]] != usize::MAX {
                let st = &mut stats[slot_of[node_of[i]]];
                st.count += 1;
                st.sum += resid[i];
                st.sum_sq += resid[i] * resid[i];
            }
        }
        let splittable: Vec<bool> = stats.iter().map(|s| s.count >= 2 * opts.min_leaf).collect();
        if !splittable.iter().any(|&b| b) {
            break;
        }

        let per_feature: Vec<Vec<Option<Candidate>>> = (0..x.ncols())
            .into_par_iter()
            .map(|f| best_splits_for_feature(x, f, &sorted[f], resid, &node_of, &slot_of, &stats, &splittable, opts.min_leaf))
            .collect();

        let mut next = Vec::new();
        for (s, &node) in frontier.iter().enumerate() {
            let st = stats[s];
            let mut best: Option<Candidate> = None;
            for cands in &per_feature {
                if let Some(c) = cands[s] {
                    if best.is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            let centered_ss = st.sum_sq - st.sum * st.sum / st.count.max(1) as f64;
            let Some(best) = best.filter(|c| c.gain > 1e-12 * centered_ss.max(f64::MIN_POSITIVE)) else {
                continue;
            };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[node] = TreeNode::Split { feature: best.feature, threshold: best.threshold, left, right };
            next.push(left);
            next.push(right);
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            let k = node_of[i];
            if k == UNSAMPLED {
                continue;
            }
            if let TreeNode::Split { feature, threshold, left, right } = nodes[k] {
                node_of[i] = if x[(i, feature)] <= threshold { left } else { right };
            }
        }
        frontier = next;
    }

    // Leaf values: mean residual of the sampled rows that land there.
    let mut sums = vec![0.0; nodes.len()];
    let mut counts = vec![0usize; nodes.len()];
    for i in 0..n {
        if node_of[i] != UNSAMPLED {
            sums[node_of[i]] += resid[i];
            counts[node_of[i]] += 1;
        }
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            *value = if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
        }
    }
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn best_splits_for_feature(
    x: &DMatrix<f64>,
    feature: usize,
    order: &[usize],
    resid: &[f64],
    node_of: &[usize],
    slot_of: &[usize],
    stats: &[NodeStats],
    splittable: &[bool],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let slots = stats.len();
    let mut left_count = vec![0usize; slots];
    let mut left_sum = vec![0.0; slots];
    let mut last = vec![f64::NAN; slots];
    let mut best: Vec<Option<Candidate>> = vec![None; slots];
    let col = x.column(feature);

    for &i in order {
        let node = node_of[i];
        if node == UNSAMPLED {
            continue;
        }
        let s = slot_of[node];
        if s == usize::MAX || !splittable[s] {
            continue;
        }
        let v = col[i];
        let nl = left_count[s];
        if nl >= min_leaf && v > last[s] {
            let st = stats[s];
            let nr = st.count - nl;
            if nr >= min_leaf {
                let sl = left_sum[s];
                let sr = st.sum - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - st.sum * st.sum / st.count as f64;
                if best[s].is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (last[s] + v);
                    let threshold = if mid < v { mid } else { last[s] };
                    best[s] = Some(Candidate { gain, feature, threshold });
                }
            }
        }
        left_count[s] += 1;
        left_sum[s] += resid[i];
        last[s] = v;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::super::{fit, predict, LearnerSpec};
    use super::*;

    #[test]
    fn single_stump_matches_hand_computation() {
        // Step function: y = 1 for x < 0.5, y = 4 for x >= 0.5.
        let xs = [0.0, 0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 0.9, 1.0];
        let ys: Vec<f64> = xs.iter().map(|&v| if v < 0.5 { 1.0 } else { 4.0 }).collect();
        let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
        let lr = 0.3;
        let m = fit(&LearnerSpec::gbt(1, 1, lr, 1), &x, &ys, 0).unwrap();

        let base = ys.iter().sum::<f64>() / ys.len() as f64; // 24 / 9
        let left_resid = 1.0 - base;
        let right_resid = 4.0 - base;
        let expected_left = base + lr * left_resid;
        let expected_right = base + lr * right_resid;

        let pred = predict(&m, &x).unwrap();
        for (v, p) in xs.iter().zip(&pred) {
            let want = if *v < 0.5 { expected_left } else { expected_right };
            assert!((p - want).abs() < 1e-12, "x={v}: {p} vs {want}");
        }
        let tree = &m.trees().unwrap()[0];
        assert_eq!(tree.n_leaves(), 2);
        match tree.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!((threshold - 0.45).abs() < 1e-12);
            }
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let x = DMatrix::from_fn(4, 2, |i, _| xs[i]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let m = fit(&LearnerSpec::gbt(1, 1, 1.0, 1), &x, &y, 0).unwrap();
        match m.trees().unwrap()[0].nodes[0] {
            TreeNode::Split { feature, .. } => assert_eq!(feature, 0),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn training_loss_never_increases_across_stages() {
        let mut rng = crate::rng::SeededRng::new(5, 0);
        let n = 300;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.normal());
        let y: Vec<f64> = (0..n)
            .map(|i| (x[(i, 0)] * x[(i, 1)]) + if x[(i, 2)] > 0.0 { 1.0 } else { -1.0 } + 0.3 * rng.normal())
            .collect();
        let m = fit(&LearnerSpec::gbt(40, 3, 0.2, 5), &x, &y, 0).unwrap();
        let ModelParams::Ensemble { base_score, learning_rate, trees } = &m.params else { panic!() };
        assert_eq!(trees.len(), 40);
        let mut pred = vec![*base_score; n];
        let mut prev = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for tree in trees {
            for (i, p) in pred.iter_mut().enumerate() {
                *p += learning_rate * tree.predict_row(&x, i);
            }
            let loss = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            assert!(loss <= prev + 1e-9, "loss rose from {prev} to {loss}");
            prev = loss;
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = [0.0, 10.0, 10.0, 10.0, 10.0, 10.0];
        let m = fit(&LearnerSpec::gbt(1, 1, 1.0, 2), &x, &y, 0).unwrap();
        match m.trees().unwrap()[0].nodes[0] {
            TreeNode::Split { threshold, .. } => assert!(threshold > 1.0, "threshold {threshold}"),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut rng = crate::rng::SeededRng::new(9, 0);
        let x = DMatrix::from_fn(100, 3, |_, _| rng.normal());
        let y: Vec<f64> = (0..100).map(|i| x[(i, 0)].sin()).collect();
        let spec = LearnerSpec::GradientBoostedTrees {
            n_trees: 5,
            max_depth: 2,
            learning_rate: 0.5,
            min_leaf: 3,
            subsample: Some(0.5),
        };
        let a = fit(&spec, &x, &y, 1).unwrap();
        let b = fit(&spec, &x, &y, 1).unwrap();
        let c = fit(&spec, &x, &y, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
