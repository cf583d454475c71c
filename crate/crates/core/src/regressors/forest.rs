use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_rows, Fitted, Hyper, ModelKind, RegressionModel, RegressorError, Result};
use crate::cohort::Dataset;

pub const DEFAULT_TREES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_node_size: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(mtry: usize, min_node_size: usize, seed: u64) -> Self {
        ForestConfig { n_trees: DEFAULT_TREES, mtry, min_node_size, bootstrap: true, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean of the tree outputs.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    min_node: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf(mean));
        self.nodes.len() - 1
    }

    /// Best split of `idx` over a random feature subset, minimizing the
    /// summed child squared error; `idx` is left sorted by the winning feature.
    fn best_split(&self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, usize)> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(f64, usize, f64, usize)> = None;
        let p = self.cols.len();
        for f in sample(rng, p, self.mtry).into_iter() {
            let col = &self.cols[f];
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.y[idx[k - 1]];
                if k < self.min_node || n - k < self.min_node {
                    continue;
                }
                let (a, b) = (col[idx[k - 1]], col[idx[k]]);
                if a >= b {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.is_none_or(|bst| score > bst.0) {
                    let mut thr = 0.5 * (a + b);
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((score, f, thr, k));
                }
            }
        }
        let (_, f, thr, k) = best?;
        let col = &self.cols[f];
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        Some((f, thr, k))
    }

    fn grow(&mut self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || idx.len() < 2 * self.min_node {
            return self.leaf(idx);
        }
        let Some((feature, threshold, k)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let (l, r) = idx.split_at_mut(k);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Random forest of CART regression trees on row-major data.
pub fn rf_fit_raw(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    if x.len() != y.len() {
        return Err(RegressorError::ShapeError(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(RegressorError::TooFewRows { needed: 1, got: 0 });
    }
    let p = x[0].len();
    if cfg.n_trees == 0 || cfg.min_node_size == 0 || cfg.mtry == 0 || cfg.mtry > p {
        return Err(RegressorError::InvalidConfig(format!(
            "n_trees {} mtry {} (of {p} features) min_node_size {}",
            cfg.n_trees, cfg.mtry, cfg.min_node_size
        )));
    }
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let mut idx: Vec<usize> =
                if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            let mut b = Builder { cols: &cols, y, mtry: cfg.mtry, min_node: cfg.min_node_size, nodes: Vec::new() };
            b.grow(&mut idx, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { trees })
}

pub fn rf_fit(ds: &Dataset, cfg: &ForestConfig) -> Result<RegressionModel> {
    check_rows(ds, 1)?;
    let forest = rf_fit_raw(&ds.x, &ds.y, cfg)?;
    Ok(RegressionModel {
        kind: ModelKind::Rf,
        task: ds.task,
        hyper: Hyper::Forest { n_trees: cfg.n_trees, mtry: cfg.mtry, min_node_size: cfg.min_node_size },
        params: ds.params.clone(),
        fitted: Fitted::Forest(forest),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand_distr::{Distribution, Normal};

    fn cfg(mtry: usize, min_node: usize, seed: u64) -> ForestConfig {
        ForestConfig { n_trees: 50, ..ForestConfig::new(mtry, min_node, seed) }
    }

    #[test]
    fn constant_target_predicts_the_constant() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let f = rf_fit_raw(&x, &[3.25; 20], &cfg(2, 1, 1)).unwrap();
        assert!(x.iter().all(|r| f.predict(r) == 3.25));
    }

    #[test]
    fn large_min_node_gives_single_leaves() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let c = ForestConfig { bootstrap: false, ..cfg(1, 12, 2) };
        let f = rf_fit_raw(&x, &y, &c).unwrap();
        let mean = y.iter().sum::<f64>() / 12.0;
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!((f.predict(&[3.0]) - mean).abs() < 1e-12);
        let boot = rf_fit_raw(&x, &y, &cfg(1, 12, 2)).unwrap();
        assert!(boot.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn recovers_step_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let truth = |r: &[f64]| if r[0] < 0.4 { -1.0 } else { 2.0 };
        let y: Vec<f64> = x.iter().map(|r| truth(r) + noise.sample(&mut rng)).collect();
        let f = rf_fit_raw(&x, &y, &ForestConfig::new(1, 5, 3)).unwrap();
        let mae = x.iter().map(|r| (f.predict(r) - truth(r)).abs()).sum::<f64>() / 200.0;
        assert!(mae < 0.3, "{mae}");
    }

    #[test]
    fn thresholds_are_midpoints() {
        let x = vec![vec![1.0], vec![2.0], vec![4.0], vec![8.0]];
        let y = vec![0.0, 0.0, 10.0, 10.0];
        let f = rf_fit_raw(&x, &y, &ForestConfig { bootstrap: false, ..cfg(1, 1, 0) }).unwrap();
        assert_eq!(f.trees[0].nodes[0], Node::Split { feature: 0, threshold: 3.0, left: 1, right: 2 });
    }

    #[test]
    fn invalid_configs() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(rf_fit_raw(&x, &[1.0, 2.0], &cfg(3, 1, 0)), Err(RegressorError::InvalidConfig(_))));
        assert!(matches!(rf_fit_raw(&x, &[1.0, 2.0], &cfg(0, 1, 0)), Err(RegressorError::InvalidConfig(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_bounded_and_reproducible(seed in 0u64..1000, n in 2usize..40, mtry in 1usize..4, min_node in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = cfg(mtry, min_node, seed);
            let f = rf_fit_raw(&x, &y, &c).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for _ in 0..20 {
                let q: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let v = f.predict(&q);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
            prop_assert_eq!(f, rf_fit_raw(&x, &y, &c).unwrap());
        }
    }
}
