//! Single pipeline config JSON shared by all subcommands; each reads its own
//! section. Every field has a default so a minimal `{}` config runs the
//! whole pipeline with paper-style settings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slickwater_core::cnn::{CnnArch, TrainConfig};
use slickwater_core::preprocess::{AugmentConfig, Flip, SplitConfig};
use slickwater_core::rforest::{ForestParams, MaxFeatures};
use slickwater_core::synth::SceneConfig;

use crate::error::{IoError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub rf: RfSection,
    pub predict: PredictSection,
    pub cnn: CnnSection,
    pub evaluate: EvaluateSection,
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let bytes =
        fs::read(path).map_err(|e| IoError::config(format!("{}: {e}", path.display())))?;
    let cfg: PipelineConfig = serde_json::from_slice(&bytes)
        .map_err(|e| IoError::config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let as_config_err = |e: slickwater_core::CoreError| IoError::config(e.to_string());
        if self.synth.scenes == 0 {
            return Err(IoError::config("synth.scenes must be >= 1"));
        }
        self.synth.scene_config(0).validate().map_err(as_config_err)?;
        if self.preprocess.tile_size != 64 {
            return Err(IoError::config("tile_size is fixed at 64"));
        }
        self.preprocess.split.to_core().validate().map_err(as_config_err)?;
        self.preprocess.augment.to_core()?.validate_rotations()?;
        self.rf.to_core()?.validate().map_err(as_config_err)?;
        for s in &self.predict.splits {
            slickwater_core::grid::Split::from_str(s).map_err(as_config_err)?;
        }
        self.cnn.arch().validate().map_err(as_config_err)?;
        self.cnn.train_config().validate().map_err(as_config_err)?;
        if !(0.0..=1.0).contains(&self.evaluate.threshold) {
            return Err(IoError::config("evaluate.threshold must be in [0,1]"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub scenes: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub oil_fraction_target: f64,
    pub n_blobs: usize,
    pub blob_scale: f64,
    pub noisy_channel_indices: Vec<usize>,
    pub sensor_noise_sigma: f64,
    pub field_amplitude: f64,
    pub speckle_sigma: f64,
    pub seed: u64,
    pub profile_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let base = SceneConfig::default();
        SynthSection {
            scenes: 3,
            rows: base.rows,
            cols: base.cols,
            channels: base.channels,
            oil_fraction_target: base.oil_fraction_target,
            n_blobs: base.n_blobs,
            blob_scale: base.blob_scale,
            noisy_channel_indices: vec![5, 17],
            sensor_noise_sigma: base.sensor_noise_sigma,
            field_amplitude: base.field_amplitude,
            speckle_sigma: base.speckle_sigma,
            seed: base.seed,
            profile_seed: 7,
        }
    }
}

impl SynthSection {
    /// Per-scene config; scene seeds are derived from the section seed so
    /// scenes differ but the set is reproducible.
    pub fn scene_config(&self, index: u64) -> SceneConfig {
        SceneConfig {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            oil_fraction_target: self.oil_fraction_target,
            n_blobs: self.n_blobs,
            blob_scale: self.blob_scale,
            noisy_channel_indices: self.noisy_channel_indices.clone(),
            sensor_noise_sigma: self.sensor_noise_sigma,
            field_amplitude: self.field_amplitude,
            speckle_sigma: self.speckle_sigma,
            seed: slickwater_core::rng::derive_seed(self.seed, index),
            name: format!("scene{index:03}"),
        }
    }
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub variance_floor: f64,
    pub flatness_threshold: f64,
    /// When set, skips detection and removes exactly these channels.
    pub fixed_noisy_channels: Option<Vec<usize>>,
    pub variance_target: f64,
    pub max_components: usize,
    pub tile_size: usize,
    pub split: SplitSection,
    pub augment: AugmentSection,
    /// Fit scaler/PCA on training tiles only instead of on all images.
    pub leakage_free: bool,
    /// Replace non-finite input values with 0 instead of rejecting them.
    pub allow_nonfinite: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            variance_floor: 1e-4,
            flatness_threshold: 0.1,
            fixed_noisy_channels: None,
            variance_target: 0.99,
            max_components: 32,
            tile_size: 64,
            split: SplitSection::default(),
            augment: AugmentSection::default(),
            leakage_free: false,
            allow_nonfinite: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let base = SplitConfig::default();
        SplitSection {
            train_frac: base.train_frac,
            val_frac: base.val_frac,
            test_frac: base.test_frac,
            seed: base.seed,
        }
    }
}

impl SplitSection {
    pub fn to_core(&self) -> SplitConfig {
        SplitConfig {
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            test_frac: self.test_frac,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub rotations: Vec<u16>,
    /// Subset of {"horizontal", "vertical"}.
    pub flips: Vec<String>,
    pub noise_sigma: f64,
    pub copies_per_oil_tile: usize,
    pub seed: u64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let base = AugmentConfig::default();
        AugmentSection {
            rotations: base.rotations,
            flips: vec!["horizontal".into(), "vertical".into()],
            noise_sigma: base.noise_sigma,
            copies_per_oil_tile: base.copies_per_oil_tile,
            seed: base.seed,
        }
    }
}

impl AugmentSection {
    pub fn to_core(&self) -> Result<AugmentConfig> {
        let flips = self
            .flips
            .iter()
            .map(|f| match f.as_str() {
                "horizontal" => Ok(Flip::Horizontal),
                "vertical" => Ok(Flip::Vertical),
                other => Err(IoError::config(format!(
                    "augment.flips entry '{other}' (expected horizontal|vertical)"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AugmentConfig {
            rotations: self.rotations.clone(),
            flips,
            noise_sigma: self.noise_sigma,
            copies_per_oil_tile: self.copies_per_oil_tile,
            seed: self.seed,
        })
    }
}

// ---------------------------------------------------------------------------
// rf / predict
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfSection {
    pub n_trees: usize,
    /// "sqrt", "all", or a fixed count.
    pub max_features: serde_json::Value,
    pub seed: u64,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub exclude_padded: bool,
}

impl Default for RfSection {
    fn default() -> Self {
        let base = ForestParams::default();
        RfSection {
            n_trees: base.n_trees,
            max_features: "sqrt".into(),
            seed: base.seed,
            min_samples_leaf: base.min_samples_leaf,
            max_depth: base.max_depth,
            bootstrap: base.bootstrap,
            exclude_padded: base.exclude_padded,
        }
    }
}

impl RfSection {
    pub fn to_core(&self) -> Result<ForestParams> {
        let max_features = match &self.max_features {
            serde_json::Value::String(s) if s == "sqrt" => MaxFeatures::Sqrt,
            serde_json::Value::String(s) if s == "all" => MaxFeatures::All,
            serde_json::Value::Number(n) => MaxFeatures::Fixed(
                n.as_u64()
                    .ok_or_else(|| IoError::config("rf.max_features count must be nonnegative"))?
                    as usize,
            ),
            other => {
                return Err(IoError::config(format!(
                    "rf.max_features must be \"sqrt\", \"all\", or a count, got {other}"
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

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub splits: Vec<String>,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            splits: vec!["val".into(), "test".into()],
        }
    }
}

// ---------------------------------------------------------------------------
// cnn / evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSection {
    pub enc_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub init_seed: u64,
    /// Seed of the 80/20 shuffle of validation maps into cnn train/val.
    pub split_seed: u64,
}

impl Default for CnnSection {
    fn default() -> Self {
        let arch = CnnArch::default();
        let train = TrainConfig::default();
        CnnSection {
            enc_channels: arch.enc_channels,
            bottleneck_channels: arch.bottleneck_channels,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            seed: train.seed,
            init_seed: 42,
            split_seed: 42,
        }
    }
}

impl CnnSection {
    pub fn arch(&self) -> CnnArch {
        CnnArch {
            enc_channels: self.enc_channels.clone(),
            bottleneck_channels: self.bottleneck_channels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { threshold: 0.5 }
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

trait ValidateRotations {
    fn validate_rotations(&self) -> Result<()>;
}

impl ValidateRotations for AugmentConfig {
    fn validate_rotations(&self) -> Result<()> {
        for &r in &self.rotations {
            if !matches!(r, 90 | 180 | 270) {
                return Err(IoError::config(format!(
                    "augment.rotations entry {r} (expected 90, 180, or 270)"
                )));
            }
        }
        Ok(())
    }
}
