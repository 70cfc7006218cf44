//! Raster data model: hyperspectral cubes, binary label masks, probability
//! maps, and 64x64 tiles.
//!
//! Cubes are stored band-sequential (each channel's full raster contiguous);
//! masks and probability maps are row-major.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Side length of the square tiles fed to splitting, augmentation, and the CNN.
pub const TILE_SIZE: usize = 64;
/// Pixels per tile.
pub const TILE_PIXELS: usize = TILE_SIZE * TILE_SIZE;

/// A hyperspectral cube: `rows x cols` pixels, `channels` spectral bands.
///
/// Layout is band-sequential: `data[c * rows * cols + r * cols + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub resolution_m: Option<f32>,
    pub name: String,
}

impl HsiCube {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<f32>,
        name: String,
    ) -> Result<Self> {
        let cube = HsiCube {
            rows,
            cols,
            channels,
            data,
            resolution_m: None,
            name,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.channels == 0 {
            return Err(CoreError::InvalidInput(format!(
                "cube '{}' has a zero dimension ({}x{}x{})",
                self.name, self.rows, self.cols, self.channels
            )));
        }
        if self.data.len() != self.rows * self.cols * self.channels {
            return Err(CoreError::DimensionMismatch(format!(
                "cube '{}': data length {} != {}x{}x{}",
                self.name,
                self.data.len(),
                self.rows,
                self.cols,
                self.channels
            )));
        }
        Ok(())
    }

    /// Errors if any value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let plane = self.rows * self.cols;
                return Err(CoreError::Numeric(format!(
                    "cube '{}': non-finite value at channel {}, pixel {}",
                    self.name,
                    i / plane,
                    i % plane
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, channel: usize) -> usize {
        channel * self.rows * self.cols + r * self.cols + c
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, channel: usize) -> f32 {
        self.data[self.index(r, c, channel)]
    }

    /// One channel's full raster, row-major.
    #[inline]
    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.rows * self.cols;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    /// Copies the spectral vector of pixel (r, c) into `out`.
    pub fn pixel_into(&self, r: usize, c: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.channels);
        let plane = self.rows * self.cols;
        let base = r * self.cols + c;
        for (ch, slot) in out.iter_mut().enumerate() {
            *slot = self.data[ch * plane + base];
        }
    }
}

/// Per-pixel binary ground truth aligned with a cube: 0 = water, 1 = oil.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(CoreError::DimensionMismatch(format!(
                "mask: label length {} != {}x{}",
                labels.len(),
                rows,
                cols
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > 1) {
            return Err(CoreError::InvalidInput(format!(
                "mask label {v} outside {{0,1}}"
            )));
        }
        Ok(LabelMask { rows, cols, labels })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.labels[r * self.cols + c]
    }

    pub fn oil_fraction(&self) -> f64 {
        let oil: usize = self.labels.iter().map(|&v| v as usize).sum();
        oil as f64 / self.labels.len() as f64
    }
}

/// Per-pixel oil likelihood raster, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(rows: usize, cols: usize, probs: Vec<f32>) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(CoreError::DimensionMismatch(format!(
                "probability map: length {} != {}x{}",
                probs.len(),
                rows,
                cols
            )));
        }
        if let Some(v) = probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::InvalidInput(format!(
                "probability {v} outside [0,1]"
            )));
        }
        Ok(ProbabilityMap { rows, cols, probs })
    }
}

/// Which partition a tile belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidInput(format!("unknown split '{other}'"))),
        }
    }
}

/// One 64x64 tile: features (channel-major), labels, and a pad mask marking
/// pixels synthesized by edge padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub tile_id: u64,
    pub source_image: String,
    pub origin_row: usize,
    pub origin_col: usize,
    pub channels: usize,
    /// `TILE_SIZE * TILE_SIZE * channels` values, channel-major:
    /// `features[ch * TILE_PIXELS + r * TILE_SIZE + c]`.
    pub features: Vec<f32>,
    /// `TILE_PIXELS` values in {0, 1}.
    pub labels: Vec<u8>,
    /// `TILE_PIXELS` values in {0, 1}; 1 marks a padded pixel.
    pub pad_mask: Vec<u8>,
    pub split: Split,
    pub augmented: bool,
}

impl TileRecord {
    #[inline]
    pub fn feature(&self, r: usize, c: usize, channel: usize) -> f32 {
        self.features[channel * TILE_PIXELS + r * TILE_SIZE + c]
    }

    pub fn pixel_into(&self, r: usize, c: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.channels);
        let base = r * TILE_SIZE + c;
        for (ch, slot) in out.iter_mut().enumerate() {
            *slot = self.features[ch * TILE_PIXELS + base];
        }
    }

    pub fn has_oil(&self) -> bool {
        self.labels.iter().any(|&l| l == 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != TILE_PIXELS * self.channels {
            return Err(CoreError::DimensionMismatch(format!(
                "tile {}: feature length {} != 64x64x{}",
                self.tile_id,
                self.features.len(),
                self.channels
            )));
        }
        if self.labels.len() != TILE_PIXELS || self.pad_mask.len() != TILE_PIXELS {
            return Err(CoreError::DimensionMismatch(format!(
                "tile {}: label/pad length != 4096",
                self.tile_id
            )));
        }
        for i in 0..TILE_PIXELS {
            if self.pad_mask[i] == 1 && self.labels[i] != 0 {
                return Err(CoreError::InvalidInput(format!(
                    "tile {}: padded pixel {} labeled oil",
                    self.tile_id, i
                )));
            }
        }
        if self.augmented && self.split != Split::Train {
            return Err(CoreError::InvalidInput(format!(
                "tile {}: augmented tile outside the train split",
                self.tile_id
            )));
        }
        Ok(())
    }
}

/// Builds an all-zero tile; used by tiling and tests.
pub fn blank_tile(tile_id: u64, source: String, channels: usize) -> TileRecord {
    TileRecord {
        tile_id,
        source_image: source,
        origin_row: 0,
        origin_col: 0,
        channels,
        features: vec![0.0; TILE_PIXELS * channels],
        labels: vec![0; TILE_PIXELS],
        pad_mask: vec![0; TILE_PIXELS],
        split: Split::Train,
        augmented: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn cube_rejects_bad_length() {
        let err = HsiCube::new(2, 2, 2, vec![0.0; 7], "t".to_string());
        assert!(matches!(err, Err(CoreError::DimensionMismatch(_))));
    }

    #[test]
    fn cube_bsq_indexing() {
        // 2x2x2 cube: channel 0 = [1,2,3,4], channel 1 = [5,6,7,8]
        let cube = HsiCube::new(
            2,
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            "t".to_string(),
        )
        .unwrap();
        assert_eq!(cube.get(0, 1, 0), 2.0);
        assert_eq!(cube.get(1, 0, 1), 7.0);
        let mut px = [0.0f32; 2];
        cube.pixel_into(1, 1, &mut px);
        assert_eq!(px, [4.0, 8.0]);
    }

    #[test]
    fn mask_rejects_nonbinary() {
        assert!(LabelMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn probmap_rejects_out_of_range() {
        assert!(ProbabilityMap::new(1, 1, vec![1.2]).is_err());
        assert!(ProbabilityMap::new(1, 1, vec![0.5]).is_ok());
    }

    #[test]
    fn padded_pixel_must_be_water() {
        let mut tile = blank_tile(0, "s".to_string(), 1);
        tile.pad_mask[0] = 1;
        tile.labels[0] = 1;
        assert!(tile.validate().is_err());
    }

    #[test]
    fn non_finite_detected() {
        let cube = HsiCube::new(1, 2, 1, vec![1.0, f32::NAN], "t".to_string()).unwrap();
        assert!(cube.check_finite().is_err());
    }
}
