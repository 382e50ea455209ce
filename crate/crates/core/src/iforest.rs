//! Isolation forest over standardized scalar residuals.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SCHEMA: &str = "anomcast.iforest/v1";

/// Population mean and standard deviation of a fitting sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(values: &[T]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Data(format!(
                "standardizer needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("standardizer input must be finite".into()));
        }
        let n = T::of(values.len() as f64);
        let mean = values.iter().copied().sum::<T>() / n;
        let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let std = var.sqrt();
        if std <= T::zero() {
            return Err(Error::Degenerate("residuals have zero variance".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: T) -> T {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: T) -> T {
        z * self.std + self.mean
    }
}

/// Average unsuccessful-search path length of a binary search tree on `n`
/// points: `2·H(n−1) − 2(n−1)/n` with the exact harmonic sum, 0 for `n ≤ 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_trees: usize,
    /// Subsample size ψ, capped at the sample count.
    pub subsample: usize,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            contamination: 0.05,
            seed: 0,
        }
    }
}

/// One tree as flat node arrays in preorder. Node 0 is the root; a node
/// with `left == 0` is a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationTree<T> {
    pub split: Vec<T>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Training points that reached each node.
    pub size: Vec<usize>,
}

impl<T: Scalar> IsolationTree<T> {
    fn grow(points: &mut [T], max_depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = Self {
            split: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            size: Vec::new(),
        };
        tree.node(points, 0, max_depth, rng);
        tree
    }

    fn node(
        &mut self,
        points: &mut [T],
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.size.len();
        self.split.push(T::zero());
        self.left.push(0);
        self.right.push(0);
        self.size.push(points.len());
        if depth >= max_depth || points.len() <= 1 {
            return id;
        }
        let (lo, hi) = points.iter().fold((points[0], points[0]), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
        if lo >= hi {
            return id;
        }
        let split = T::of(rng.random_range(lo.as_f64()..hi.as_f64()));
        let mut cut = 0;
        for i in 0..points.len() {
            if points[i] < split {
                points.swap(i, cut);
                cut += 1;
            }
        }
        let (l, r) = points.split_at_mut(cut);
        self.split[id] = split;
        self.left[id] = self.node(l, depth + 1, max_depth, rng);
        self.right[id] = self.node(r, depth + 1, max_depth, rng);
        id
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(t: &IsolationTree<T>, id: usize) -> usize {
            if t.left[id] == 0 {
                0
            } else {
                1 + walk(t, t.left[id]).max(walk(t, t.right[id]))
            }
        }
        walk(self, 0)
    }

    /// Edges from the root to the leaf reached by `x`, plus the average
    /// path correction for the points sharing that leaf.
    pub fn path_length(&self, x: T) -> f64 {
        let (mut id, mut depth) = (0, 0usize);
        while self.left[id] != 0 {
            id = if x < self.split[id] {
                self.left[id]
            } else {
                self.right[id]
            };
            depth += 1;
        }
        depth as f64 + average_path_length(self.size[id])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IsolationForest<T> {
    pub config: IForestConfig,
    /// Effective subsample size.
    pub psi: usize,
    pub max_depth: usize,
    /// Scores above this (the `1 − c` training quantile) are flagged.
    pub threshold: f64,
    pub trees: Vec<IsolationTree<T>>,
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

impl<T: Scalar> IsolationForest<T> {
    /// Tree `i` uses its own ChaCha8 stream seeded with `seed + i`: first a
    /// subsample of ψ indices into the sorted data, then one split value per
    /// internal node in preorder. Sorting first makes the forest independent
    /// of the order of `data`.
    pub fn fit(data: &[T], config: IForestConfig) -> Result<Self> {
        let c = config.contamination;
        if !(c > 0.0 && c < 0.5) {
            return Err(Error::Config(format!(
                "contamination {c} must lie in (0, 0.5)"
            )));
        }
        if config.n_trees == 0 || config.subsample < 2 {
            return Err(Error::Config(
                "need at least one tree and a subsample of at least 2".into(),
            ));
        }
        if data.len() < 2 {
            return Err(Error::Data(format!(
                "isolation forest needs at least 2 samples, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("isolation forest input must be finite".into()));
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let psi = config.subsample.min(data.len());
        let max_depth = (psi as f64).log2().ceil() as usize;
        let trees = (0..config.n_trees)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
                let mut points: Vec<T> = index::sample(&mut rng, sorted.len(), psi)
                    .into_iter()
                    .map(|j| sorted[j])
                    .collect();
                IsolationTree::grow(&mut points, max_depth, &mut rng)
            })
            .collect();
        let mut forest = Self {
            config,
            psi,
            max_depth,
            threshold: 0.0,
            trees,
        };
        let scores = forest.score_batch(data)?;
        forest.threshold = quantile(&scores, 1.0 - c);
        Ok(forest)
    }

    pub fn mean_path_length(&self, x: T) -> Result<f64> {
        if self.trees.is_empty() {
            return Err(Error::State("isolation forest has not been fitted".into()));
        }
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(−E[h]/c(ψ))`; higher is more anomalous.
    pub fn score(&self, x: T) -> Result<f64> {
        let h = self.mean_path_length(x)?;
        Ok(2f64.powf(-h / average_path_length(self.psi)))
    }

    pub fn score_batch(&self, xs: &[T]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.score(x)).collect()
    }

    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.threshold
    }
}

/// Standardizer and forest fitted on the same residual sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResidualDetector<T> {
    pub schema: String,
    pub standardizer: Standardizer<T>,
    pub forest: IsolationForest<T>,
}

impl<T: Scalar> ResidualDetector<T> {
    pub fn fit(residuals: &[T], config: IForestConfig) -> Result<Self> {
        let standardizer = Standardizer::fit(residuals)?;
        let z: Vec<T> = residuals
            .iter()
            .map(|&r| standardizer.transform(r))
            .collect();
        Ok(Self {
            schema: SCHEMA.to_string(),
            standardizer,
            forest: IsolationForest::fit(&z, config)?,
        })
    }

    /// Isolation score of a raw (unstandardized) residual.
    pub fn score(&self, residual: T) -> Result<f64> {
        self.forest.score(self.standardizer.transform(residual))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc.schema != SCHEMA {
            return Err(Error::Data(format!(
                "unsupported isolation-forest schema `{}`",
                doc.schema
            )));
        }
        Ok(doc)
    }
}
