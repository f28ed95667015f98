//! Isolation forest over flattened multivariate series.
//!
//! Each tree is grown on a subsample drawn without replacement, splitting on a
//! feature chosen uniformly among those with nonzero range in the node, at a
//! value drawn uniformly from the open interval between that feature's min and
//! max. The anomaly score is `2^(-E[h(x)] / c(psi))`.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvts::MvtsInstance;
use crate::seed;

/// Row-major flattening, parameter by parameter.
pub type FeatureVector = Vec<f64>;

pub fn flatten(instance: &MvtsInstance) -> FeatureVector {
    instance.values().to_vec()
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EXACT_HARMONIC_LIMIT: usize = 1_000_000;

fn harmonic(m: usize) -> f64 {
    if m <= EXACT_HARMONIC_LIMIT {
        (1..=m).map(|i| 1.0 / i as f64).sum()
    } else {
        let m = m as f64;
        m.ln() + EULER_GAMMA + 0.5 / m - 1.0 / (12.0 * m * m)
    }
}

/// Average path length of an unsuccessful BST search over `n` points:
/// `c(n) = 2 H(n-1) - 2 (n-1) / n`, with `c(0) = c(1) = 0`.
pub fn avg_path_c(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IForestConfig {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_subsample")]
    pub subsample_size: usize,
    #[serde(default)]
    pub contamination: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_trees() -> usize {
    100
}

fn default_subsample() -> usize {
    256
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: default_trees(),
            subsample_size: default_subsample(),
            contamination: 0.0,
            seed: 0,
        }
    }
}

impl IForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.subsample_size < 2 {
            return Err(Error::InvalidConfig("subsample_size must be at least 2".into()));
        }
        if !(0.0..=0.5).contains(&self.contamination) {
            return Err(Error::InvalidConfig(format!(
                "contamination {} outside [0, 0.5]",
                self.contamination
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

/// Arena-allocated tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
    pub height_limit: usize,
    pub n_features: usize,
}

impl IsolationTree {
    fn grow(points: &[&[f64]], n_features: usize, height_limit: usize, rng: &mut seed::StageRng) -> Self {
        let mut tree = IsolationTree {
            nodes: Vec::new(),
            height_limit,
            n_features,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.build(points, &mut idx, 0, rng);
        tree
    }

    fn build(&mut self, points: &[&[f64]], idx: &mut [usize], depth: usize, rng: &mut seed::StageRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::External { size: idx.len() });
        if depth >= self.height_limit || idx.len() <= 1 {
            return id;
        }
        let splittable: Vec<(usize, f64, f64)> = (0..self.n_features)
            .filter_map(|f| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][f]), hi.max(points[i][f]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if splittable.is_empty() {
            return id;
        }
        let (feature, lo, hi) = splittable[rng.random_range(0..splittable.len())];
        let split = loop {
            let v = rng.random_range(lo..hi);
            if v > lo && v < hi {
                break v;
            }
        };
        // partition in place: left gets x < split
        let mut mid = 0;
        for k in 0..idx.len() {
            if points[idx[k]][feature] < split {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(points, l, depth + 1, rng);
        let right = self.build(points, r, depth + 1, rng);
        self.nodes[id] = Node::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }

    /// Edges from the root to the external node reached by `x`, plus
    /// `c(size)` of that node.
    pub fn path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let mut node = 0;
        let mut edges = 0usize;
        loop {
            match self.nodes[node] {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    node = if x[feature] < split { left } else { right };
                    edges += 1;
                }
                Node::External { size } => return Ok(edges as f64 + avg_path_c(size)),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &IsolationTree, n: usize) -> usize {
            match t.nodes[n] {
                Node::Internal { left, right, .. } => 1 + go(t, left).max(go(t, right)),
                Node::External { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size, `min(subsample_size, n)`.
    pub psi: usize,
    pub c_psi: f64,
    pub config: IForestConfig,
}

impl IsolationForestModel {
    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.trees {
            total += t.path_length(x)?;
        }
        let mean = total / self.trees.len() as f64;
        Ok(2f64.powf(-mean / self.c_psi))
    }

    pub fn score_all(&self, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
        vectors.par_iter().map(|v| self.score(v)).collect()
    }
}

/// Grows `n_trees` trees. Tree `k` draws from its own generator seeded with
/// `seed ^ k`, so the result does not depend on thread scheduling.
pub fn fit(vectors: &[FeatureVector], cfg: &IForestConfig) -> Result<IsolationForestModel> {
    cfg.validate()?;
    if vectors.len() < 2 {
        return Err(Error::TooFewVectors {
            needed: 2,
            found: vectors.len(),
        });
    }
    let n_features = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != n_features) {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            found: bad.len(),
        });
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("isolation forest training vectors".into()));
    }
    let psi = cfg.subsample_size.min(vectors.len());
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(cfg.seed ^ k as u64);
            let mut sample = index::sample(&mut rng, vectors.len(), psi).into_vec();
            sample.sort_unstable();
            let points: Vec<&[f64]> = sample.iter().map(|&i| vectors[i].as_slice()).collect();
            IsolationTree::grow(&points, n_features, height_limit, &mut rng)
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        psi,
        c_psi: avg_path_c(psi),
        config: *cfg,
    })
}

/// Number of instances flagged at contamination `r` out of `n`: `floor(r n)`.
/// A relative slack of a few ulps keeps products like `0.29 * 100` at 29.
pub fn flag_count(r: f64, n: usize) -> usize {
    let x = r * n as f64;
    (x + x.abs() * 4.0 * f64::EPSILON).floor().max(0.0) as usize
}

/// The `floor(r n)` highest-scoring ids; ties at the cut go to the smaller id.
pub fn flag_outliers(scores: &[(String, f64)], r: f64) -> BTreeSet<String> {
    let k = flag_count(r, scores.len());
    rank_by_score(scores).into_iter().take(k).map(|(id, _)| id.to_string()).collect()
}

/// Scores sorted descending, ties by ascending id.
pub fn rank_by_score(scores: &[(String, f64)]) -> Vec<(&str, f64)> {
    let mut ranked: Vec<(&str, f64)> = scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}
