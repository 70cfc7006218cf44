//! Model files.
//!
//! Random forest: `<stem>.rf.json` holding a params echo plus an array of
//! trees, each a nested node object `{f, t, l, r}` (internal) or `{p, n}`
//! (leaf). CNN: `<stem>.cnn.json` manifest (arch, tensor shapes, seed) plus
//! `<stem>.cnn.raw`, the tensors concatenated in manifest order as f32le.
//! All round trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slickwater_core::cnn::{CnnArch, CnnModel};
use slickwater_core::rforest::{ForestModel, ForestParams, MaxFeatures, TreeNode};

use crate::error::{IoError, Result};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(ext);
    stem.with_file_name(name)
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeJson {
    Internal {
        f: usize,
        t: f64,
        l: Box<NodeJson>,
        r: Box<NodeJson>,
    },
    Leaf {
        p: f64,
        n: usize,
    },
}

impl NodeJson {
    fn of(node: &TreeNode) -> Self {
        match node {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => NodeJson::Internal {
                f: *feature,
                t: *threshold,
                l: Box::new(NodeJson::of(left)),
                r: Box::new(NodeJson::of(right)),
            },
            TreeNode::Leaf {
                oil_fraction,
                sample_count,
            } => NodeJson::Leaf {
                p: *oil_fraction,
                n: *sample_count,
            },
        }
    }

    fn into_node(self) -> TreeNode {
        match self {
            NodeJson::Internal { f, t, l, r } => TreeNode::Internal {
                feature: f,
                threshold: t,
                left: Box::new(l.into_node()),
                right: Box::new(r.into_node()),
            },
            NodeJson::Leaf { p, n } => TreeNode::Leaf {
                oil_fraction: p,
                sample_count: n,
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsJson {
    n_trees: usize,
    /// "sqrt", "all", or a fixed count rendered as a JSON number.
    max_features: serde_json::Value,
    seed: u64,
    min_samples_leaf: usize,
    max_depth: Option<usize>,
    bootstrap: bool,
    exclude_padded: bool,
}

impl ParamsJson {
    fn of(p: &ForestParams) -> Self {
        ParamsJson {
            n_trees: p.n_trees,
            max_features: match p.max_features {
                MaxFeatures::Sqrt => "sqrt".into(),
                MaxFeatures::All => "all".into(),
                MaxFeatures::Fixed(k) => k.into(),
            },
            seed: p.seed,
            min_samples_leaf: p.min_samples_leaf,
            max_depth: p.max_depth,
            bootstrap: p.bootstrap,
            exclude_padded: p.exclude_padded,
        }
    }

    fn into_params(self) -> Result<ForestParams> {
        let max_features = match &self.max_features {
            serde_json::Value::String(s) if s == "sqrt" => MaxFeatures::Sqrt,
            serde_json::Value::String(s) if s == "all" => MaxFeatures::All,
            serde_json::Value::Number(n) => MaxFeatures::Fixed(
                n.as_u64()
                    .ok_or_else(|| IoError::data("max_features count must be a nonnegative integer"))?
                    as usize,
            ),
            other => {
                return Err(IoError::data(format!(
                    "max_features must be \"sqrt\", \"all\", or a count, got {other}"
                )))
            }
        };
        Ok(ForestParams {
            n_trees: self.n_trees,
            max_features,
            seed: self.seed,
            min_samples_leaf: self.min_samples_leaf,
            max_depth: self.max_depth,
            bootstrap: self.bootstrap,
            exclude_padded: self.exclude_padded,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ForestJson {
    params: ParamsJson,
    feature_count: usize,
    trees: Vec<NodeJson>,
}

/// Writes `<stem>.rf.json`.
pub fn save_forest(model: &ForestModel, stem: &Path) -> Result<()> {
    let doc = ForestJson {
        params: ParamsJson::of(&model.params),
        feature_count: model.feature_count,
        trees: model.trees.iter().map(NodeJson::of).collect(),
    };
    fs::write(with_ext(stem, ".rf.json"), serde_json::to_vec(&doc)?)?;
    Ok(())
}

pub fn load_forest(stem: &Path) -> Result<ForestModel> {
    let path = with_ext(stem, ".rf.json");
    let doc: ForestJson = serde_json::from_slice(&fs::read(&path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", path.display())))?;
    let model = ForestModel {
        trees: doc.trees.into_iter().map(NodeJson::into_node).collect(),
        params: doc.params.into_params()?,
        feature_count: doc.feature_count,
    };
    for tree in &model.trees {
        if let Some(m) = tree.max_feature_index() {
            if m >= model.feature_count {
                return Err(IoError::data(format!(
                    "{}: tree references feature {m} but feature_count is {}",
                    path.display(),
                    model.feature_count
                )));
            }
        }
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// CNN
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TensorJson {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CnnJson {
    enc_channels: Vec<usize>,
    bottleneck_channels: usize,
    init_seed: u64,
    dtype: String,
    tensors: Vec<TensorJson>,
}

/// Writes `<stem>.cnn.json` + `<stem>.cnn.raw`.
pub fn save_cnn(model: &CnnModel, stem: &Path) -> Result<()> {
    model.check_finite()?;
    let specs = model.arch.param_specs();
    let doc = CnnJson {
        enc_channels: model.arch.enc_channels.clone(),
        bottleneck_channels: model.arch.bottleneck_channels,
        init_seed: model.init_seed,
        dtype: "f32le".into(),
        tensors: specs
            .iter()
            .map(|s| TensorJson {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
    };
    fs::write(with_ext(stem, ".cnn.json"), serde_json::to_vec_pretty(&doc)?)?;
    let mut blob = Vec::new();
    for tensor in &model.weights {
        for v in tensor {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(with_ext(stem, ".cnn.raw"), blob)?;
    Ok(())
}

pub fn load_cnn(stem: &Path) -> Result<CnnModel> {
    let path = with_ext(stem, ".cnn.json");
    let doc: CnnJson = serde_json::from_slice(&fs::read(&path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", path.display())))?;
    if doc.dtype != "f32le" {
        return Err(IoError::data(format!(
            "{}: unsupported dtype {}",
            path.display(),
            doc.dtype
        )));
    }
    let arch = CnnArch {
        enc_channels: doc.enc_channels,
        bottleneck_channels: doc.bottleneck_channels,
    };
    arch.validate()?;
    let specs = arch.param_specs();
    if specs.len() != doc.tensors.len()
        || specs
            .iter()
            .zip(&doc.tensors)
            .any(|(s, t)| s.name != t.name || s.shape != t.shape)
    {
        return Err(IoError::data(format!(
            "{}: tensor list does not match the declared architecture",
            path.display()
        )));
    }
    let raw_path = with_ext(stem, ".cnn.raw");
    let bytes = fs::read(&raw_path)?;
    let total: usize = specs.iter().map(|s| s.len()).sum();
    if bytes.len() != total * 4 {
        return Err(IoError::data(format!(
            "{}: blob is {} bytes, manifest declares {} weights ({} bytes)",
            raw_path.display(),
            bytes.len(),
            total,
            total * 4
        )));
    }
    let mut weights = Vec::with_capacity(specs.len());
    let mut offset = 0usize;
    for spec in &specs {
        let n = spec.len();
        let tensor = bytes[offset * 4..(offset + n) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        weights.push(tensor);
        offset += n;
    }
    let model = CnnModel {
        arch,
        weights,
        init_seed: doc.init_seed,
    };
    model.check_finite()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Fitted preprocessing parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocModel {
    pub removed_channels: Vec<usize>,
    pub scaler_means: Vec<f64>,
    pub scaler_stds: Vec<f64>,
    pub pca_k_in: usize,
    pub pca_k_out: usize,
    /// Row-major `k_out x k_in`.
    pub pca_components: Vec<f64>,
    pub pca_explained_variance: Vec<f64>,
    pub pca_explained_variance_ratio: Vec<f64>,
    pub pca_mean: Vec<f64>,
    pub leakage_free: bool,
}

impl PreprocModel {
    pub fn new(
        removed_channels: Vec<usize>,
        scaler: &slickwater_core::preprocess::ScalerParams,
        pca: &slickwater_core::preprocess::PcaModel,
        leakage_free: bool,
    ) -> Self {
        PreprocModel {
            removed_channels,
            scaler_means: scaler.means.clone(),
            scaler_stds: scaler.stds.clone(),
            pca_k_in: pca.k_in,
            pca_k_out: pca.k_out,
            pca_components: pca.components.clone(),
            pca_explained_variance: pca.explained_variance.clone(),
            pca_explained_variance_ratio: pca.explained_variance_ratio.clone(),
            pca_mean: pca.mean.clone(),
            leakage_free,
        }
    }
}

/// Writes `<path>` as JSON (no stem convention; callers pass the full path).
pub fn save_preproc(model: &PreprocModel, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(model)?)?;
    Ok(())
}

pub fn load_preproc(path: &Path) -> Result<PreprocModel> {
    let doc = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", path.display())))?;
    Ok(doc)
}
