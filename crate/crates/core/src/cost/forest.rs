//! Bagged CART regression forest.
//!
//! Trees split on variance reduction (equivalently, sum of squared errors).
//! Tree `t` draws its bootstrap from a ChaCha8 stream keyed by
//! `(seed, t)`, so trees are independent and can be grown in parallel
//! while producing the same forest as a serial build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            _ => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Structural check used after deserialization.
    pub fn check(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("regression tree has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split {
                    feature,
                    left,
                    right,
                    threshold,
                } => {
                    if *feature >= n_features
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                        || !threshold.is_finite()
                    {
                        return Err(Error::InvalidInput(format!("malformed split node {i}")));
                    }
                }
                Node::Leaf { value } => {
                    if !(value.is_finite() && *value > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "leaf {i} has non-positive value {value}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    /// Fits a forest on row-major `x` (`n` rows of `n_features`) against `y`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "forest fit: {} rows vs {} targets",
                x.len(),
                y.len()
            )));
        }
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::InvalidInput(
                "forest fit: n_trees and min_leaf must be >= 1".into(),
            ));
        }
        let n_features = x[0].len();
        if x.iter().any(|r| r.len() != n_features) {
            return Err(Error::InvalidInput("forest fit: ragged feature rows".into()));
        }
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let n = x.len();
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow(x, y, sample, params)
            })
            .collect();
        Ok(Self { n_features, trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn leaf_range(&self) -> (f64, f64) {
        self.trees
            .iter()
            .flat_map(|t| t.leaves())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..x[idx[0]].len() {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for pos in 0..n - 1 {
            left_sum += y[order[pos]];
            let n_left = pos + 1;
            let (lo, hi) = (x[order[pos]][f], x[order[pos + 1]][f]);
            if n_left < min_leaf || n - n_left < min_leaf || lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            // SSE reduction up to a constant: sum_l^2/n_l + sum_r^2/n_r - sum^2/n
            let gain = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / (n - n_left) as f64
                - parent;
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                // midpoint can round up to `hi` when the values are adjacent floats
                let threshold = if mid < hi { mid } else { lo };
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|s| s.gain > 1e-12 * parent.abs().max(f64::MIN_POSITIVE))
}

fn grow(x: &[Vec<f64>], y: &[f64], sample: Vec<usize>, params: &ForestParams) -> RegressionTree {
    let mut nodes = Vec::new();
    // (node slot, indices, depth)
    let mut stack = vec![(0usize, sample, 0usize)];
    nodes.push(Node::Leaf { value: 0.0 });
    while let Some((slot, idx, depth)) = stack.pop() {
        let split = if depth < params.max_depth && idx.len() >= 2 * params.min_leaf {
            best_split(x, y, &idx, params.min_leaf)
        } else {
            None
        };
        match split {
            None => nodes[slot] = Node::Leaf { value: mean(y, &idx) },
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[slot] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    RegressionTree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(f: impl Fn(f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 10.0]).collect();
        let y = x.iter().map(|r| f(r[0])).collect();
        (x, y)
    }

    #[test]
    fn constant_target_is_exact() {
        let (x, y) = grid(|_| 1.3);
        let forest = RandomForest::fit(&x, &y, &ForestParams::default()).unwrap();
        for r in &x {
            assert!((forest.predict(r) - 1.3).abs() < 1e-12);
        }
        assert!(forest.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn step_function_is_learned() {
        let (x, y) = grid(|v| if v < 7.0 { 1.0 } else { 3.0 });
        let forest = RandomForest::fit(&x, &y, &ForestParams::default()).unwrap();
        assert!((forest.predict(&[2.0]) - 1.0).abs() < 1e-9);
        assert!((forest.predict(&[15.0]) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn depth_and_leaf_limits() {
        let (x, y) = grid(|v| v.sin() + 2.0);
        let params = ForestParams {
            n_trees: 5,
            max_depth: 3,
            min_leaf: 7,
            seed: 1,
        };
        let forest = RandomForest::fit(&x, &y, &params).unwrap();
        for t in &forest.trees {
            assert!(t.depth() <= 3);
            t.check(1).unwrap();
        }
    }

    #[test]
    fn parallel_build_is_deterministic() {
        let (x, y) = grid(|v| (v * 0.7).cos() + 1.5);
        let p = ForestParams {
            seed: 42,
            ..Default::default()
        };
        let a = RandomForest::fit(&x, &y, &p).unwrap();
        let b = RandomForest::fit(&x, &y, &p).unwrap();
        assert_eq!(a, b);
        let c = RandomForest::fit(&x, &y, &ForestParams { seed: 43, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fit_rejects_bad_shapes() {
        assert!(RandomForest::fit(&[], &[], &ForestParams::default()).is_err());
        assert!(RandomForest::fit(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 1.0], &ForestParams::default()).is_err());
    }
}
