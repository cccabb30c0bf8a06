//! Deterministic gradient-boosted regression trees with squared loss.
//!
//! Hyperparameters follow the usual booster semantics: shrinkage by
//! `learning_rate`, per-tree row sampling (`subsample`) and feature sampling
//! (`colsample_bytree`), depth cap, and `min_child_weight` as the minimum row
//! count per child (the hessian of squared loss is 1 per row).

mod tree;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use tree::{Node, Tree};
use tree::{grow_tree, GrowParams, SortedColumns};

pub const MODEL_FORMAT: &str = "optshift-gbt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 750,
            max_depth: 7,
            learning_rate: 0.03,
            min_child_weight: 4.0,
            colsample_bytree: 0.7,
            subsample: 0.7,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        // zero shrinkage is allowed and yields a constant model
        if !(self.learning_rate >= 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("learning_rate must lie in [0, 1]".into()));
        }
        if !frac(self.subsample) || !frac(self.colsample_bytree) {
            return Err(Error::Config("subsample and colsample_bytree must lie in (0, 1]".into()));
        }
        if !(self.min_child_weight >= 0.0) {
            return Err(Error::Config("min_child_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::Dimension {
                expected: n_cols,
                got: data.len(),
            });
        }
        Ok(Self {
            n_rows: data.len() / n_cols,
            n_cols,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], n_cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::Dimension {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1))
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_cols)
            .map(|j| (0..self.n_rows).map(|i| self.data[i * self.n_cols + j]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub config: GbtConfig,
    pub base_score: f64,
    pub feature_count: usize,
    /// SHA-256 over the training matrix, targets and config.
    pub train_fingerprint: String,
    pub trees: Vec<Tree>,
}

/// Common surface for the price regressors; anything honouring these
/// contracts can replace the built-in booster.
pub trait Regressor: Sized {
    type Config;
    fn fit(features: &FeatureMatrix, targets: &[f64], cfg: &Self::Config) -> Result<Self>;
    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>>;
    fn save(&self, path: &Path) -> Result<()>;
    fn load(path: &Path) -> Result<Self>;
}

fn fingerprint(x: &FeatureMatrix, y: &[f64], cfg: &GbtConfig) -> String {
    let mut h = Sha256::new();
    h.update((x.n_rows as u64).to_le_bytes());
    h.update((x.n_cols as u64).to_le_bytes());
    for v in x.data.iter().chain(y) {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(serde_json::to_vec(cfg).unwrap_or_default());
    hex::encode(h.finalize())
}

/// Fits a boosted ensemble. The result depends only on `(features, targets,
/// cfg)`; it does not change with the size of the rayon thread pool.
pub fn fit(features: &FeatureMatrix, targets: &[f64], cfg: &GbtConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if targets.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: targets.len(),
        });
    }
    if let Some(bad) = features.data.iter().chain(targets).find(|v| !v.is_finite()) {
        return Err(Error::Model(format!("non-finite training value {bad}")));
    }

    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut model = TrainedModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        config: *cfg,
        base_score,
        feature_count: features.n_cols(),
        train_fingerprint: fingerprint(features, targets, cfg),
        trees: Vec::with_capacity(cfg.n_estimators),
    };
    if targets.iter().all(|&t| t == targets[0]) {
        model.base_score = targets[0];
        return Ok(model);
    }
    if cfg.learning_rate == 0.0 {
        return Ok(model);
    }

    let columns = features.columns();
    let sorted = SortedColumns::new(&columns);
    let n_feat = features.n_cols();
    let row_take = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
    let feat_take = ((n_feat as f64 * cfg.colsample_bytree).floor() as usize).clamp(1, n_feat);
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_child_weight: cfg.min_child_weight,
    };

    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut sampled = vec![false; n];
    for t in 0..cfg.n_estimators {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);

        sampled.iter_mut().for_each(|s| *s = row_take == n);
        if row_take < n {
            for i in sample(&mut rng, n, row_take) {
                sampled[i] = true;
            }
        }
        let mut feats: Vec<usize> = if feat_take < n_feat {
            sample(&mut rng, n_feat, feat_take).into_vec()
        } else {
            (0..n_feat).collect()
        };
        feats.sort_unstable();

        for i in 0..n {
            grad[i] = targets[i] - pred[i];
        }
        let tree = grow_tree(&columns, &sorted, &feats, &sampled, &grad, &params);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += cfg.learning_rate * tree.predict_row(features.row(i));
        }
        model.trees.push(tree);
    }
    Ok(model)
}

impl TrainedModel {
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_first(features, self.trees.len())
    }

    /// Prediction from the first `k` boosting rounds.
    pub fn predict_first(&self, features: &FeatureMatrix, k: usize) -> Result<Vec<f64>> {
        if features.n_rows() > 0 && features.n_cols() != self.feature_count {
            return Err(Error::Dimension {
                expected: self.feature_count,
                got: features.n_cols(),
            });
        }
        let trees = &self.trees[..k.min(self.trees.len())];
        Ok(features
            .rows()
            .take(features.n_rows())
            .map(|row| self.base_score + trees.iter().map(|t| self.config.learning_rate * t.predict_row(row)).sum::<f64>())
            .collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.config.learning_rate * t.predict_row(row)).sum::<f64>()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file: format {:?}", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let model: TrainedModel = serde_json::from_slice(bytes)?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        for (k, t) in self.trees.iter().enumerate() {
            if t.nodes.is_empty() {
                return Err(Error::Model(format!("tree {k} has no nodes")));
            }
            for n in &t.nodes {
                if let Node::Split {
                    feature, left, right, ..
                } = n
                {
                    if *feature >= self.feature_count || *left >= t.nodes.len() || *right >= t.nodes.len() {
                        return Err(Error::Model(format!("tree {k} has a dangling split")));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Regressor for TrainedModel {
    type Config = GbtConfig;

    fn fit(features: &FeatureMatrix, targets: &[f64], cfg: &GbtConfig) -> Result<Self> {
        fit(features, targets, cfg)
    }

    fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        TrainedModel::predict(self, features)
    }

    fn save(&self, path: &Path) -> Result<()> {
        TrainedModel::save(self, path)
    }

    fn load(path: &Path) -> Result<Self> {
        TrainedModel::load(path)
    }
}
