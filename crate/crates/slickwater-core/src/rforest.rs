//! Pixel-wise random forest classifier over spectral feature vectors.
//!
//! Trees are grown by CART with Gini impurity on bootstrap samples, with a
//! per-node random feature subset (sqrt rule by default). Determinism: every
//! tree derives its own seed from the forest seed and tree index, so training
//! trees in parallel and assembling them in index order is byte-identical to
//! serial training.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::{ProbabilityMap, TileRecord, TILE_PIXELS, TILE_SIZE};
use crate::rng::{derive_seed, Rng};

/// How many candidate features each node considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    /// ceil(sqrt(K)) features per node.
    Sqrt,
    /// All K features (degenerates to plain CART given no bootstrap).
    All,
    /// A fixed count, clamped to K.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    /// Skip padded pixels when flattening tiles into training samples.
    pub exclude_padded: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            seed: 42,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            exclude_padded: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(CoreError::InvalidInput("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(CoreError::InvalidInput("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// One decision tree node. Internal nodes route `x[feature] <= threshold`
/// to the left child.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        oil_fraction: f64,
        sample_count: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { oil_fraction, .. } => return *oil_fraction,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if (x[*feature] as f64) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal {
                feature,
                left,
                right,
                ..
            } => {
                let mut m = *feature;
                if let Some(l) = left.max_feature_index() {
                    m = m.max(l);
                }
                if let Some(r) = right.max_feature_index() {
                    m = m.max(r);
                }
                Some(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub feature_count: usize,
}

/// Borrowed training set: `n` rows of `k` features plus binary labels.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub features: &'a [f32],
    pub labels: &'a [u8],
    pub k: usize,
}

impl<'a> Dataset<'a> {
    pub fn new(features: &'a [f32], labels: &'a [u8], k: usize) -> Result<Self> {
        if k == 0 || features.len() != labels.len() * k {
            return Err(CoreError::DimensionMismatch(format!(
                "features length {} != {} samples x {} features",
                features.len(),
                labels.len(),
                k
            )));
        }
        Ok(Dataset { features, labels, k })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    fn value(&self, sample: usize, feature: usize) -> f32 {
        self.features[sample * self.k + feature]
    }
}

#[inline]
fn gini(oil: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = oil as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

/// Finds the best (feature, threshold) among the candidate features by Gini
/// impurity decrease. Thresholds are midpoints between consecutive distinct
/// sorted values. Ties break toward the lowest feature index, then the
/// lowest threshold; candidates must therefore be scanned in ascending
/// feature order with strict improvement.
fn best_split(
    data: &Dataset,
    indices: &[usize],
    candidates: &[usize],
    min_samples_leaf: usize,
    scratch: &mut Vec<(f32, u8)>,
) -> Option<SplitChoice> {
    let total = indices.len();
    let total_oil = indices.iter().filter(|&&i| data.labels[i] == 1).count();
    let parent = gini(total_oil, total);
    if parent == 0.0 {
        return None;
    }

    let mut best: Option<SplitChoice> = None;
    for &feature in candidates {
        scratch.clear();
        scratch.extend(indices.iter().map(|&i| (data.value(i, feature), data.labels[i])));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut left_n = 0usize;
        let mut left_oil = 0usize;
        let mut i = 0;
        while i < total {
            // Advance over a run of equal values.
            let v = scratch[i].0;
            while i < total && scratch[i].0 == v {
                left_n += 1;
                left_oil += scratch[i].1 as usize;
                i += 1;
            }
            if i == total {
                break;
            }
            if left_n < min_samples_leaf || total - left_n < min_samples_leaf {
                continue;
            }
            let threshold = (v as f64 + scratch[i].0 as f64) / 2.0;
            let right_n = total - left_n;
            let right_oil = total_oil - left_oil;
            let weighted = (left_n as f64 * gini(left_oil, left_n)
                + right_n as f64 * gini(right_oil, right_n))
                / total as f64;
            let decrease = parent - weighted;
            if decrease <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => decrease > b.decrease,
            };
            if better {
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

fn grow_node(
    data: &Dataset,
    indices: &mut Vec<usize>,
    depth: usize,
    params: &ForestParams,
    rng: &mut Rng,
    feat_buf: &mut Vec<usize>,
    scratch: &mut Vec<(f32, u8)>,
) -> TreeNode {
    let total = indices.len();
    let oil = indices.iter().filter(|&&i| data.labels[i] == 1).count();

    let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
    let pure = oil == 0 || oil == total;
    if pure || depth_capped || total < 2 * params.min_samples_leaf {
        return TreeNode::Leaf {
            oil_fraction: oil as f64 / total as f64,
            sample_count: total,
        };
    }

    let n_candidates = match params.max_features {
        MaxFeatures::All => data.k,
        MaxFeatures::Sqrt => {
            let mut m = libm::ceil(libm::sqrt(data.k as f64)) as usize;
            m = m.clamp(1, data.k);
            m
        }
        MaxFeatures::Fixed(f) => f.clamp(1, data.k),
    };
    let split = if n_candidates == data.k {
        feat_buf.clear();
        feat_buf.extend(0..data.k);
        best_split(data, indices, feat_buf, params.min_samples_leaf, scratch)
    } else {
        rng.sample_indices(data.k, n_candidates, feat_buf);
        best_split(data, indices, feat_buf, params.min_samples_leaf, scratch)
    };

    match split {
        None => TreeNode::Leaf {
            oil_fraction: oil as f64 / total as f64,
            sample_count: total,
        },
        Some(choice) => {
            let mut left_idx: Vec<usize> = Vec::with_capacity(total / 2);
            let mut right_idx: Vec<usize> = Vec::with_capacity(total / 2);
            for &i in indices.iter() {
                if (data.value(i, choice.feature) as f64) <= choice.threshold {
                    left_idx.push(i);
                } else {
                    right_idx.push(i);
                }
            }
            indices.clear();
            indices.shrink_to_fit();
            let left = grow_node(data, &mut left_idx, depth + 1, params, rng, feat_buf, scratch);
            let right = grow_node(data, &mut right_idx, depth + 1, params, rng, feat_buf, scratch);
            TreeNode::Internal {
                feature: choice.feature,
                threshold: choice.threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Grows one tree. The tree's RNG is seeded from the forest seed and tree
/// index, so trees can be built in any order (or in parallel) and still
/// reproduce serial training exactly.
pub fn train_tree(data: &Dataset, params: &ForestParams, tree_index: usize) -> TreeNode {
    let mut rng = Rng::from_seed(derive_seed(params.seed, tree_index as u64));
    let n = data.n();
    let mut indices: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.next_below(n as u64) as usize).collect()
    } else {
        (0..n).collect()
    };
    let mut feat_buf = Vec::new();
    let mut scratch = Vec::new();
    grow_node(data, &mut indices, 0, params, &mut rng, &mut feat_buf, &mut scratch)
}

/// Trains the full forest serially. Callers wanting parallelism can invoke
/// `train_tree` per index themselves and assemble with `assemble_forest`.
pub fn train_forest_from_dataset(data: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if data.n() == 0 {
        return Err(CoreError::InvalidInput("empty training set".into()));
    }
    let trees = (0..params.n_trees)
        .map(|i| train_tree(data, params, i))
        .collect();
    Ok(ForestModel {
        trees,
        params: params.clone(),
        feature_count: data.k,
    })
}

/// Builds a model from externally trained trees (e.g. trained in parallel).
/// Trees must be in index order.
pub fn assemble_forest(trees: Vec<TreeNode>, params: &ForestParams, k: usize) -> Result<ForestModel> {
    params.validate()?;
    if trees.len() != params.n_trees {
        return Err(CoreError::InvalidInput(format!(
            "{} trees supplied, params say {}",
            trees.len(),
            params.n_trees
        )));
    }
    for t in &trees {
        if let Some(m) = t.max_feature_index() {
            if m >= k {
                return Err(CoreError::DimensionMismatch(format!(
                    "tree references feature {m}, feature count is {k}"
                )));
            }
        }
    }
    Ok(ForestModel {
        trees,
        params: params.clone(),
        feature_count: k,
    })
}

/// Flattens training tiles into a pixel dataset, honoring `exclude_padded`.
pub fn train_forest(tiles: &[TileRecord], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if tiles.is_empty() {
        return Err(CoreError::InvalidInput("empty training set".into()));
    }
    let (features, labels) = crate::preprocess::tiles_to_pixels(tiles, params.exclude_padded);
    let k = tiles[0].channels;
    let data = Dataset::new(&features, &labels, k)?;
    train_forest_from_dataset(&data, params)
}

impl ForestModel {
    /// Mean of leaf oil fractions across trees.
    pub fn predict_proba(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(CoreError::DimensionMismatch(format!(
                "feature vector length {} != model feature count {}",
                x.len(),
                self.feature_count
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Dense 64x64 probability map over a tile; padded pixels are predicted
    /// like any other so downstream consumers always see full maps.
    pub fn predict_map(&self, tile: &TileRecord) -> Result<ProbabilityMap> {
        if tile.channels != self.feature_count {
            return Err(CoreError::DimensionMismatch(format!(
                "tile {} has {} channels, model expects {}",
                tile.tile_id, tile.channels, self.feature_count
            )));
        }
        let mut probs = vec![0.0f32; TILE_PIXELS];
        let mut px = vec![0.0f32; tile.channels];
        for r in 0..TILE_SIZE {
            for c in 0..TILE_SIZE {
                tile.pixel_into(r, c, &mut px);
                probs[r * TILE_SIZE + c] = self.predict_proba(&px)? as f32;
            }
        }
        ProbabilityMap::new(TILE_SIZE, TILE_SIZE, probs)
    }
}
