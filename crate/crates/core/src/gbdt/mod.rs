//! Gradient-boosted regression with oblivious decision trees.
//!
//! Every tree applies one `(feature, threshold)` test per level, shared by
//! all nodes of that level, so a tree of depth `d` is `d` tests and `2^d`
//! leaves and evaluation is a bit-indexed lookup: bit `l` of the leaf index
//! is set when `x[feature_l] > threshold_l`.
//!
//! Training minimizes squared error. Features are quantized once into
//! histogram bins from training-split quantiles; each level picks the split
//! that maximizes `Σ_leaves S²/(n + λ)` over all current nodes, which is the
//! regularized form of "minimize total squared error". Leaf values are
//! `learning_rate · S/(n + λ)`.

mod binning;
mod io;
mod train;

use serde::{Deserialize, Serialize};

pub use binning::{bin_index, compute_bin_edges};
pub use io::{decode_model, encode_model, load, save, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, TrainReport};

use crate::raster::psnr_from_mse;

#[derive(Debug, thiserror::Error)]
pub enum GbdtError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature at column {0}")]
    NonFinite(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad model magic")]
    BadMagic,
    #[error("unsupported model version {0}")]
    VersionMismatch(u16),
    #[error("truncated model payload")]
    Truncated,
}

pub type Result<T, E = GbdtError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: u32,
    pub depth: u32,
    pub learning_rate: f64,
    pub n_bins: u32,
    pub l2_leaf: f64,
    /// Stop after this many stages without validation improvement; `None`
    /// or 0 disables early stopping.
    pub early_stop_rounds: Option<u32>,
    /// Recorded with the model. Training itself draws no random numbers.
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 200,
            depth: 6,
            learning_rate: 0.1,
            n_bins: 64,
            l2_leaf: 1.0,
            early_stop_rounds: Some(20),
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn patience(&self) -> Option<u32> {
        self.early_stop_rounds.filter(|&p| p > 0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GbdtError::InvalidParams(m));
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if !(1..=16).contains(&self.depth) {
            return bad(format!("depth must be in 1..=16, got {}", self.depth));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if !(2..=65536).contains(&self.n_bins) {
            return bad(format!("n_bins must be in 2..=65536, got {}", self.n_bins));
        }
        if !(self.l2_leaf >= 0.0) || !self.l2_leaf.is_finite() {
            return bad(format!("l2_leaf must be >= 0, got {}", self.l2_leaf));
        }
        Ok(())
    }
}

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<f32>,
    pub targets: Vec<f32>,
    pub n_features: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, targets: Vec<f32>, n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(GbdtError::InvalidParams(
                "feature count must be >= 1".into(),
            ));
        }
        if features.len() != targets.len() * n_features {
            return Err(GbdtError::DimensionMismatch {
                expected: targets.len() * n_features,
                found: features.len(),
            });
        }
        Ok(Dataset {
            features,
            targets,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks_exact(self.n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: u32,
    /// Rows with `x > threshold` take the right branch.
    pub threshold: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub splits: Vec<Split>,
    pub leaves: Vec<f64>,
}

impl ObliviousTree {
    #[inline]
    pub fn leaf_index(&self, x: &[f32]) -> usize {
        self.splits
            .iter()
            .enumerate()
            .fold(0usize, |idx, (level, s)| {
                idx | (usize::from(x[s.feature as usize] > s.threshold) << level)
            })
    }

    #[inline]
    pub fn predict(&self, x: &[f32]) -> f64 {
        self.leaves[self.leaf_index(x)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub base_score: f64,
    pub feature_count: usize,
    pub bin_edges: Vec<Vec<f32>>,
    pub trees: Vec<ObliviousTree>,
}

impl GbdtModel {
    /// Assembles a model from parts, checking the structural invariants.
    pub fn from_parts(
        params: GbdtParams,
        base_score: f64,
        feature_count: usize,
        bin_edges: Vec<Vec<f32>>,
        trees: Vec<ObliviousTree>,
    ) -> Result<Self> {
        let m = GbdtModel {
            params,
            base_score,
            feature_count,
            bin_edges,
            trees,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks shapes, finiteness and split references.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let invalid = |m: String| Err(GbdtError::InvalidModel(m));
        if self.feature_count == 0 {
            return invalid("feature_count must be >= 1".into());
        }
        if !self.base_score.is_finite() {
            return invalid("base score is not finite".into());
        }
        if self.bin_edges.len() != self.feature_count {
            return invalid(format!(
                "{} bin edge lists for {} features",
                self.bin_edges.len(),
                self.feature_count
            ));
        }
        let depth = self.params.depth as usize;
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.splits.len() != depth || tree.leaves.len() != 1 << depth {
                return invalid(format!(
                    "tree {t} has {} splits and {} leaves, expected {depth} and {}",
                    tree.splits.len(),
                    tree.leaves.len(),
                    1usize << depth
                ));
            }
            if let Some(s) = tree
                .splits
                .iter()
                .find(|s| s.feature as usize >= self.feature_count)
            {
                return invalid(format!("tree {t} splits on feature {}", s.feature));
            }
            if tree.splits.iter().any(|s| s.threshold.is_nan())
                || tree.leaves.iter().any(|v| !v.is_finite())
            {
                return invalid(format!("tree {t} holds non-finite values"));
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(GbdtError::DimensionMismatch {
                expected: self.feature_count,
                found: x.len(),
            });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(GbdtError::NonFinite(col));
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f32]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(x))
    }

    /// Predicts every row of a row-major matrix.
    pub fn predict_batch(&self, features: &[f32]) -> Result<Vec<f64>> {
        if features.len() % self.feature_count != 0 {
            return Err(GbdtError::DimensionMismatch {
                expected: self.feature_count,
                found: features.len() % self.feature_count,
            });
        }
        features
            .chunks_exact(self.feature_count)
            .map(|row| self.predict(row))
            .collect()
    }

    pub fn evaluate(&self, data: &Dataset, peak: f64, cap_db: f64) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(GbdtError::EmptySplit("evaluation split"));
        }
        if data.n_features != self.feature_count {
            return Err(GbdtError::DimensionMismatch {
                expected: self.feature_count,
                found: data.n_features,
            });
        }
        let mut sum = 0.0;
        for (row, &y) in data.rows().zip(&data.targets) {
            let d = self.predict(row)? - f64::from(y);
            sum += d * d;
        }
        let mse = sum / data.len() as f64;
        Ok(Evaluation {
            mse,
            psnr_proxy: psnr_from_mse(mse, peak, cap_db),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    /// `10·log10(peak²/mse)`, capped when the fit is exact.
    pub psnr_proxy: f64,
}
