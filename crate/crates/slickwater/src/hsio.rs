//! Bit-exact file IO for cubes, masks, and probability maps.
//!
//! Cubes and probability maps are stored as a JSON header plus a sibling raw
//! little-endian f32 raster; masks are binary PGM (P5). All paths passed here
//! are stems: `write_cube(c, "x")` emits `x.hsc.json` and `x.hsc.raw`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slickwater_core::grid::{HsiCube, LabelMask, ProbabilityMap};

use crate::error::{IoError, Result};

// ---------------------------------------------------------------------------
// Raw f32 rasters
// ---------------------------------------------------------------------------

fn write_f32_raw(path: &Path, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_f32_raw(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(IoError::data(format!(
            "{}: raster is {} bytes, header declares {} ({} bytes)",
            path.display(),
            bytes.len(),
            expected,
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(ext);
    stem.with_file_name(name)
}

// ---------------------------------------------------------------------------
// Cubes
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    rows: usize,
    cols: usize,
    channels: usize,
    dtype: String,
    layout: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution_m: Option<f32>,
}

/// Writes `<stem>.hsc.json` + `<stem>.hsc.raw` (band-sequential f32le).
pub fn write_cube(cube: &HsiCube, stem: &Path) -> Result<()> {
    cube.validate()?;
    let header = CubeHeader {
        rows: cube.rows,
        cols: cube.cols,
        channels: cube.channels,
        dtype: "f32le".into(),
        layout: "bsq".into(),
        resolution_m: cube.resolution_m,
    };
    fs::write(with_ext(stem, ".hsc.json"), serde_json::to_vec_pretty(&header)?)?;
    write_f32_raw(&with_ext(stem, ".hsc.raw"), &cube.data)
}

/// Reads a cube, rejecting non-finite values.
pub fn read_cube(stem: &Path) -> Result<HsiCube> {
    let cube = read_cube_raw(stem)?;
    cube.check_finite()?;
    Ok(cube)
}

/// Reads a cube, replacing non-finite values with 0 and returning the set of
/// channels that contained any; those channels are candidates for noisy-
/// channel removal.
pub fn read_cube_lenient(stem: &Path) -> Result<(HsiCube, Vec<usize>)> {
    let mut cube = read_cube_raw(stem)?;
    let plane = cube.rows * cube.cols;
    let mut dirty = Vec::new();
    for ch in 0..cube.channels {
        let slice = &mut cube.data[ch * plane..(ch + 1) * plane];
        let mut any = false;
        for v in slice.iter_mut() {
            if !v.is_finite() {
                *v = 0.0;
                any = true;
            }
        }
        if any {
            dirty.push(ch);
        }
    }
    Ok((cube, dirty))
}

fn read_cube_raw(stem: &Path) -> Result<HsiCube> {
    let header_path = with_ext(stem, ".hsc.json");
    let header: CubeHeader = serde_json::from_slice(&fs::read(&header_path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", header_path.display())))?;
    if header.dtype != "f32le" || header.layout != "bsq" {
        return Err(IoError::data(format!(
            "{}: unsupported dtype/layout {}/{}",
            header_path.display(),
            header.dtype,
            header.layout
        )));
    }
    let data = read_f32_raw(
        &with_ext(stem, ".hsc.raw"),
        header
            .rows
            .checked_mul(header.cols)
            .and_then(|p| p.checked_mul(header.channels))
            .ok_or_else(|| IoError::data("cube dimensions overflow"))?,
    )?;
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cube = HsiCube::new(header.rows, header.cols, header.channels, data, name)?;
    cube.resolution_m = header.resolution_m;
    Ok(cube)
}

// ---------------------------------------------------------------------------
// Masks (binary PGM)
// ---------------------------------------------------------------------------

/// Writes a label mask as binary PGM: 1 -> 255, 0 -> 0.
pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(mask.labels.len() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.cols, mask.rows)?;
    out.extend(mask.labels.iter().map(|&l| if l == 1 { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM mask; bytes >= 128 decode to 1.
pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| IoError::data(format!("{}: {msg}", path.display()));

    let token = |pos: &mut usize| -> Result<usize> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed PGM header token"))
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("not a binary PGM (magic P5 missing)"));
    }
    let mut pos = 2usize;
    let cols = token(&mut pos)?;
    let rows = token(&mut pos)?;
    let maxval = token(&mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("unsupported PGM maxval"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != rows * cols {
        return Err(bad(&format!(
            "raster is {} bytes, header declares {}x{}",
            raster.len(),
            rows,
            cols
        )));
    }
    let labels = raster.iter().map(|&b| u8::from(b >= 128)).collect();
    Ok(LabelMask::new(rows, cols, labels)?)
}

// ---------------------------------------------------------------------------
// Probability maps
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ProbmapHeader {
    rows: usize,
    cols: usize,
    dtype: String,
}

/// Writes `<stem>.pmap.json` + `<stem>.pmap.raw` (row-major f32le).
pub fn write_probmap(map: &ProbabilityMap, stem: &Path) -> Result<()> {
    let header = ProbmapHeader {
        rows: map.rows,
        cols: map.cols,
        dtype: "f32le".into(),
    };
    fs::write(with_ext(stem, ".pmap.json"), serde_json::to_vec_pretty(&header)?)?;
    write_f32_raw(&with_ext(stem, ".pmap.raw"), &map.probs)
}

pub fn read_probmap(stem: &Path) -> Result<ProbabilityMap> {
    let header_path = with_ext(stem, ".pmap.json");
    let header: ProbmapHeader = serde_json::from_slice(&fs::read(&header_path)?)
        .map_err(|e| IoError::data(format!("{}: {e}", header_path.display())))?;
    if header.dtype != "f32le" {
        return Err(IoError::data(format!(
            "{}: unsupported dtype {}",
            header_path.display(),
            header.dtype
        )));
    }
    let probs = read_f32_raw(&with_ext(stem, ".pmap.raw"), header.rows * header.cols)?;
    Ok(ProbabilityMap::new(header.rows, header.cols, probs)?)
}

/// Renders a probability map as a PGM grayscale image (p * 255, rounded).
/// Display-only output; never read back.
pub fn render_probmap_pgm(map: &ProbabilityMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(map.probs.len() + 32);
    write!(out, "P5\n{} {}\n255\n", map.cols, map.rows)?;
    out.extend(map.probs.iter().map(|&p| (p * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}
