//! Tile archive: a directory holding `tiles.manifest.json` plus per-tile raw
//! feature/label/pad-mask files named `tNNNNNN.feat.raw` / `.lab.raw` /
//! `.pad.raw`. Features are 64*64*K f32le channel-major; labels and pad
//! masks are 4096 bytes of {0,1}.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slickwater_core::grid::{Split, TileRecord, TILE_PIXELS};

use crate::error::{IoError, Result};

pub const MANIFEST_NAME: &str = "tiles.manifest.json";

/// One manifest row: everything about a tile except its raster payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileMeta {
    pub tile_id: u64,
    pub source_image: String,
    pub origin_row: usize,
    pub origin_col: usize,
    pub channels: usize,
    pub split: String,
    pub augmented: bool,
}

impl TileMeta {
    fn of(tile: &TileRecord) -> Self {
        TileMeta {
            tile_id: tile.tile_id,
            source_image: tile.source_image.clone(),
            origin_row: tile.origin_row,
            origin_col: tile.origin_col,
            channels: tile.channels,
            split: tile.split.as_str().to_string(),
            augmented: tile.augmented,
        }
    }
}

fn tile_path(dir: &Path, tile_id: u64, ext: &str) -> PathBuf {
    dir.join(format!("t{tile_id:06}.{ext}.raw"))
}

/// Writes the manifest and all per-tile files into `dir` (created if absent).
pub fn write_archive(dir: &Path, tiles: &[TileRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let metas: Vec<TileMeta> = tiles.iter().map(TileMeta::of).collect();
    for tile in tiles {
        tile.validate()?;
        let mut feat = Vec::with_capacity(tile.features.len() * 4);
        for v in &tile.features {
            feat.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(tile_path(dir, tile.tile_id, "feat"), feat)?;
        fs::write(tile_path(dir, tile.tile_id, "lab"), &tile.labels)?;
        fs::write(tile_path(dir, tile.tile_id, "pad"), &tile.pad_mask)?;
    }
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec_pretty(&metas)?)?;
    Ok(())
}

/// Reads the manifest only (cheap; used for split listings and id checks).
pub fn read_manifest(dir: &Path) -> Result<Vec<TileMeta>> {
    let path = dir.join(MANIFEST_NAME);
    let metas: Vec<TileMeta> = serde_json::from_slice(&fs::read(&path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", path.display())))?;
    Ok(metas)
}

/// SHA-256 of the manifest file bytes; recorded alongside derived artifacts
/// so later stages can refuse maps produced from a different archive.
pub fn manifest_sha256(dir: &Path) -> Result<String> {
    let bytes = fs::read(dir.join(MANIFEST_NAME))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_tile(dir: &Path, meta: &TileMeta) -> Result<TileRecord> {
    let feat_path = tile_path(dir, meta.tile_id, "feat");
    let bytes = fs::read(&feat_path)?;
    let expected = TILE_PIXELS * meta.channels * 4;
    if bytes.len() != expected {
        return Err(IoError::data(format!(
            "{}: {} bytes, expected {expected}",
            feat_path.display(),
            bytes.len()
        )));
    }
    let features = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let labels = fs::read(tile_path(dir, meta.tile_id, "lab"))?;
    let pad_mask = fs::read(tile_path(dir, meta.tile_id, "pad"))?;
    let tile = TileRecord {
        tile_id: meta.tile_id,
        source_image: meta.source_image.clone(),
        origin_row: meta.origin_row,
        origin_col: meta.origin_col,
        channels: meta.channels,
        features,
        labels,
        pad_mask,
        split: Split::from_str(&meta.split)?,
        augmented: meta.augmented,
    };
    tile.validate()?;
    Ok(tile)
}

/// Loads every tile in manifest order.
pub fn read_archive(dir: &Path) -> Result<Vec<TileRecord>> {
    read_manifest(dir)?
        .iter()
        .map(|m| load_tile(dir, m))
        .collect()
}

/// Loads only the tiles of one split, in manifest order.
pub fn read_split(dir: &Path, split: Split) -> Result<Vec<TileRecord>> {
    read_manifest(dir)?
        .iter()
        .filter(|m| m.split == split.as_str())
        .map(|m| load_tile(dir, m))
        .collect()
}
