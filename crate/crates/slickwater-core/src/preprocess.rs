//! Preprocessing pipeline: noisy-channel removal, per-channel
//! standardization, PCA, tiling with water-mean edge padding, shuffled
//! splitting, and oil-tile augmentation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::grid::{HsiCube, LabelMask, Split, TileRecord, TILE_PIXELS, TILE_SIZE};
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Noisy channel detection and removal
// ---------------------------------------------------------------------------

/// Per-cube channel statistics used by the noise test.
fn channel_stats(cube: &HsiCube, channel: usize) -> (f64, f64) {
    let plane = cube.channel(channel);
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var)
}

/// Mean absolute lag-1 spatial autocorrelation of one channel (average of the
/// horizontal and vertical lag-1 Pearson correlations).
fn lag1_autocorr(cube: &HsiCube, channel: usize) -> f64 {
    let (mean, var) = channel_stats(cube, channel);
    if var <= 0.0 {
        return 0.0;
    }
    let plane = cube.channel(channel);
    let (rows, cols) = (cube.rows, cube.cols);

    let mut acc_h = 0.0;
    let mut n_h = 0usize;
    let mut acc_v = 0.0;
    let mut n_v = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let x = plane[r * cols + c] as f64 - mean;
            if c + 1 < cols {
                acc_h += x * (plane[r * cols + c + 1] as f64 - mean);
                n_h += 1;
            }
            if r + 1 < rows {
                acc_v += x * (plane[(r + 1) * cols + c] as f64 - mean);
                n_v += 1;
            }
        }
    }
    let corr_h = if n_h > 0 { acc_h / (n_h as f64 * var) } else { 0.0 };
    let corr_v = if n_v > 0 { acc_v / (n_v as f64 * var) } else { 0.0 };
    let avail = (n_h.min(1) + n_v.min(1)) as f64;
    if avail == 0.0 {
        0.0
    } else {
        (libm::fabs(corr_h) * n_h.min(1) as f64 + libm::fabs(corr_v) * n_v.min(1) as f64) / avail
    }
}

/// Flags channels that are noisy in *every* cube (set intersection).
///
/// Per cube, a channel is noisy when its variance relative to the cube's
/// median channel variance falls below `variance_floor`, or when its lag-1
/// spatial autocorrelation falls below `flatness_threshold` (smooth natural
/// imagery correlates strongly between neighbors; sensor noise does not).
pub fn detect_noisy_channels(
    cubes: &[HsiCube],
    variance_floor: f64,
    flatness_threshold: f64,
) -> Result<Vec<usize>> {
    if cubes.is_empty() {
        return Err(CoreError::InvalidInput("no cubes supplied".into()));
    }
    let channels = cubes[0].channels;
    for cube in cubes {
        if cube.channels != channels {
            return Err(CoreError::DimensionMismatch(format!(
                "cube '{}' has {} channels, expected {}",
                cube.name, cube.channels, channels
            )));
        }
    }

    let mut flagged_everywhere = vec![true; channels];
    for cube in cubes {
        let variances: Vec<f64> = (0..channels).map(|c| channel_stats(cube, c).1).collect();
        let mut sorted = variances.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[channels / 2].max(f64::MIN_POSITIVE);

        for c in 0..channels {
            if !flagged_everywhere[c] {
                continue;
            }
            let low_variance = variances[c] / median < variance_floor;
            let flat = lag1_autocorr(cube, c) < flatness_threshold;
            if !(low_variance || flat) {
                flagged_everywhere[c] = false;
            }
        }
    }

    Ok((0..channels).filter(|&c| flagged_everywhere[c]).collect())
}

/// Deletes the listed channels, preserving the order of survivors.
pub fn remove_channels(cube: &HsiCube, indices: &[usize]) -> Result<HsiCube> {
    let mut drop = vec![false; cube.channels];
    for &i in indices {
        if i >= cube.channels {
            return Err(CoreError::InvalidInput(format!(
                "channel index {} out of range (cube has {})",
                i, cube.channels
            )));
        }
        if drop[i] {
            return Err(CoreError::InvalidInput(format!("duplicate channel index {i}")));
        }
        drop[i] = true;
    }
    let kept = cube.channels - indices.len();
    if kept == 0 {
        return Err(CoreError::InvalidInput(
            "removing all channels would leave an empty cube".into(),
        ));
    }
    let plane = cube.rows * cube.cols;
    let mut data = Vec::with_capacity(kept * plane);
    for c in 0..cube.channels {
        if !drop[c] {
            data.extend_from_slice(cube.channel(c));
        }
    }
    Ok(HsiCube {
        rows: cube.rows,
        cols: cube.cols,
        channels: kept,
        data,
        resolution_m: cube.resolution_m,
        name: cube.name.clone(),
    })
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-channel standardization parameters: x -> (x - mean) / std.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Fits per-channel mean and population (1/N) standard deviation on an
/// `n x k` row-major sample matrix.
pub fn fit_scaler(pixels: &[f32], k: usize) -> Result<ScalerParams> {
    if k == 0 || pixels.len() % k != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "pixel matrix length {} not a multiple of k={}",
            pixels.len(),
            k
        )));
    }
    let n = pixels.len() / k;
    if n < 2 {
        return Err(CoreError::InvalidInput("need at least 2 samples to fit a scaler".into()));
    }
    let mut means = vec![0.0f64; k];
    for row in pixels.chunks_exact(k) {
        for (m, &v) in means.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut vars = vec![0.0f64; k];
    for row in pixels.chunks_exact(k) {
        for ((var, &v), &m) in vars.iter_mut().zip(row).zip(&means) {
            let d = v as f64 - m;
            *var += d * d;
        }
    }
    let mut stds = Vec::with_capacity(k);
    for (c, var) in vars.iter().enumerate() {
        let std = libm::sqrt(var / n as f64);
        if std == 0.0 {
            return Err(CoreError::ZeroVariance { channel: c });
        }
        stds.push(std);
    }
    Ok(ScalerParams { means, stds })
}

/// Applies `(x - mean) / std` per channel.
pub fn apply_scaler(cube: &HsiCube, params: &ScalerParams) -> Result<HsiCube> {
    if params.means.len() != cube.channels {
        return Err(CoreError::DimensionMismatch(format!(
            "scaler has {} channels, cube '{}' has {}",
            params.means.len(),
            cube.name,
            cube.channels
        )));
    }
    let plane = cube.rows * cube.cols;
    let mut data = Vec::with_capacity(cube.data.len());
    for c in 0..cube.channels {
        let mean = params.means[c];
        let inv = 1.0 / params.stds[c];
        data.extend(
            cube.data[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| ((v as f64 - mean) * inv) as f32),
        );
    }
    Ok(HsiCube {
        rows: cube.rows,
        cols: cube.cols,
        channels: cube.channels,
        data,
        resolution_m: cube.resolution_m,
        name: cube.name.clone(),
    })
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// Principal component model fit on standardized pixel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `k_out x k_in` row-major; rows are orthonormal components in
    /// descending eigenvalue order.
    pub components: Vec<f64>,
    pub k_in: usize,
    pub k_out: usize,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric `k x k` matrix.
/// Returns (eigenvalues, eigenvectors as columns of `v`), unsorted.
fn jacobi_eigen(a: &mut [f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..k {
            for q in (p + 1)..k {
                off += a[p * k + q] * a[p * k + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                let apq = a[p * k + q];
                if libm::fabs(apq) < 1e-300 {
                    continue;
                }
                let app = a[p * k + p];
                let aqq = a[q * k + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for i in 0..k {
                    let aip = a[i * k + p];
                    let aiq = a[i * k + q];
                    a[i * k + p] = c * aip - s * aiq;
                    a[i * k + q] = s * aip + c * aiq;
                }
                for i in 0..k {
                    let api = a[p * k + i];
                    let aqi = a[q * k + i];
                    a[p * k + i] = c * api - s * aqi;
                    a[q * k + i] = s * api + c * aqi;
                }
                for i in 0..k {
                    let vip = v[i * k + p];
                    let viq = v[i * k + q];
                    v[i * k + p] = c * vip - s * viq;
                    v[i * k + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..k).map(|i| a[i * k + i]).collect();
    (eigenvalues, v)
}

/// Fits PCA by eigendecomposition of the `k x k` population covariance.
///
/// Components are ordered by descending eigenvalue; the number retained is
/// the smaller of `max_components` and the first count whose cumulative
/// explained-variance ratio reaches `variance_target`. Sign convention: the
/// largest-magnitude coordinate of each component is positive.
pub fn fit_pca(
    pixels: &[f32],
    k: usize,
    variance_target: f64,
    max_components: usize,
) -> Result<PcaModel> {
    if k == 0 || pixels.len() % k != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "pixel matrix length {} not a multiple of k={}",
            pixels.len(),
            k
        )));
    }
    let n = pixels.len() / k;
    if n < 2 {
        return Err(CoreError::InvalidInput("need at least 2 samples to fit PCA".into()));
    }
    if max_components == 0 {
        return Err(CoreError::InvalidInput("max_components must be >= 1".into()));
    }

    let mut mean = vec![0.0f64; k];
    for row in pixels.chunks_exact(k) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = vec![0.0f64; k * k];
    let mut centered = vec![0.0f64; k];
    for row in pixels.chunks_exact(k) {
        for (d, (&v, &m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *d = v as f64 - m;
        }
        for i in 0..k {
            let ci = centered[i];
            for j in i..k {
                cov[i * k + j] += ci * centered[j];
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov[i * k + j] / n as f64;
            cov[i * k + j] = v;
            cov[j * k + i] = v;
        }
    }
    let total_variance: f64 = (0..k).map(|i| cov[i * k + i]).sum();
    if total_variance <= 0.0 {
        return Err(CoreError::InvalidInput("degenerate input: zero total variance".into()));
    }

    let (eigenvalues, vectors) = jacobi_eigen(&mut cov, k);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

    let mut explained_variance = Vec::with_capacity(k);
    let mut explained_variance_ratio = Vec::with_capacity(k);
    for &idx in &order {
        let ev = eigenvalues[idx].max(0.0);
        explained_variance.push(ev);
        explained_variance_ratio.push(ev / total_variance);
    }

    let mut k_out = k;
    let mut cum = 0.0;
    for (i, &ratio) in explained_variance_ratio.iter().enumerate() {
        cum += ratio;
        if cum >= variance_target {
            k_out = i + 1;
            break;
        }
    }
    k_out = k_out.min(max_components);

    let mut components = vec![0.0f64; k_out * k];
    for (row, &idx) in order.iter().take(k_out).enumerate() {
        // Eigenvectors are stored as columns; fix the sign so the
        // largest-magnitude coordinate is positive.
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..k {
            let a = libm::fabs(vectors[i * k + idx]);
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        let sign = if vectors[best * k + idx] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..k {
            components[row * k + i] = sign * vectors[i * k + idx];
        }
    }

    explained_variance.truncate(k_out);
    explained_variance_ratio.truncate(k_out);

    Ok(PcaModel {
        components,
        k_in: k,
        k_out,
        explained_variance,
        explained_variance_ratio,
        mean,
    })
}

/// Projects every pixel onto the principal components:
/// `y = components * (x - mean)`.
pub fn apply_pca(cube: &HsiCube, model: &PcaModel) -> Result<HsiCube> {
    if cube.channels != model.k_in {
        return Err(CoreError::DimensionMismatch(format!(
            "PCA expects {} channels, cube '{}' has {}",
            model.k_in, cube.name, cube.channels
        )));
    }
    let plane = cube.rows * cube.cols;
    let mut data = vec![0.0f32; model.k_out * plane];
    let mut px = vec![0.0f64; model.k_in];
    for r in 0..cube.rows {
        for c in 0..cube.cols {
            let base = r * cube.cols + c;
            for ch in 0..model.k_in {
                px[ch] = cube.data[ch * plane + base] as f64 - model.mean[ch];
            }
            for out_ch in 0..model.k_out {
                let row = &model.components[out_ch * model.k_in..(out_ch + 1) * model.k_in];
                let mut acc = 0.0;
                for (w, x) in row.iter().zip(&px) {
                    acc += w * x;
                }
                data[out_ch * plane + base] = acc as f32;
            }
        }
    }
    Ok(HsiCube {
        rows: cube.rows,
        cols: cube.cols,
        channels: model.k_out,
        data,
        resolution_m: cube.resolution_m,
        name: cube.name.clone(),
    })
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

/// Cuts a cube/mask pair into non-overlapping 64x64 tiles.
///
/// Edge tiles are padded per channel with the mean value over water-labeled
/// pixels inside that tile, falling back to the whole-image water mean, then
/// to 0 when the image has no water at all. Padded pixels get label 0 and
/// pad_mask 1. Tile ids start at `first_tile_id` in row-major tile order.
pub fn tile_image(
    cube: &HsiCube,
    mask: &LabelMask,
    first_tile_id: u64,
) -> Result<Vec<TileRecord>> {
    if cube.rows != mask.rows || cube.cols != mask.cols {
        return Err(CoreError::DimensionMismatch(format!(
            "cube '{}' is {}x{}, mask is {}x{}",
            cube.name, cube.rows, cube.cols, mask.rows, mask.cols
        )));
    }
    let plane = cube.rows * cube.cols;
    let tile_rows = cube.rows.div_ceil(TILE_SIZE);
    let tile_cols = cube.cols.div_ceil(TILE_SIZE);

    // Whole-image water mean per channel (fallback for tiles without water).
    let mut image_water_mean = vec![0.0f64; cube.channels];
    let water_count = mask.labels.iter().filter(|&&l| l == 0).count();
    if water_count > 0 {
        for ch in 0..cube.channels {
            let chan = cube.channel(ch);
            let mut acc = 0.0;
            for (i, &l) in mask.labels.iter().enumerate() {
                if l == 0 {
                    acc += chan[i] as f64;
                }
            }
            image_water_mean[ch] = acc / water_count as f64;
        }
    }

    let mut tiles = Vec::with_capacity(tile_rows * tile_cols);
    let mut tile_id = first_tile_id;
    for tr in 0..tile_rows {
        for tc in 0..tile_cols {
            let origin_row = tr * TILE_SIZE;
            let origin_col = tc * TILE_SIZE;
            let valid_rows = TILE_SIZE.min(cube.rows - origin_row);
            let valid_cols = TILE_SIZE.min(cube.cols - origin_col);

            // Water mean within the valid region of this tile.
            let mut tile_water_mean = vec![0.0f64; cube.channels];
            let mut tile_water_count = 0usize;
            for r in 0..valid_rows {
                for c in 0..valid_cols {
                    if mask.get(origin_row + r, origin_col + c) == 0 {
                        tile_water_count += 1;
                    }
                }
            }
            if tile_water_count > 0 {
                for ch in 0..cube.channels {
                    let chan = cube.channel(ch);
                    let mut acc = 0.0;
                    for r in 0..valid_rows {
                        let src = (origin_row + r) * cube.cols + origin_col;
                        for c in 0..valid_cols {
                            if mask.labels[src + c] == 0 {
                                acc += chan[src + c] as f64;
                            }
                        }
                    }
                    tile_water_mean[ch] = acc / tile_water_count as f64;
                }
            } else {
                tile_water_mean.copy_from_slice(&image_water_mean);
            }

            let mut features = vec![0.0f32; TILE_PIXELS * cube.channels];
            let mut labels = vec![0u8; TILE_PIXELS];
            let mut pad_mask = vec![0u8; TILE_PIXELS];

            for ch in 0..cube.channels {
                let pad_value = tile_water_mean[ch] as f32;
                let dst_base = ch * TILE_PIXELS;
                for r in 0..TILE_SIZE {
                    for c in 0..TILE_SIZE {
                        let dst = dst_base + r * TILE_SIZE + c;
                        if r < valid_rows && c < valid_cols {
                            features[dst] =
                                cube.data[ch * plane + (origin_row + r) * cube.cols + origin_col + c];
                        } else {
                            features[dst] = pad_value;
                        }
                    }
                }
            }
            for r in 0..TILE_SIZE {
                for c in 0..TILE_SIZE {
                    let dst = r * TILE_SIZE + c;
                    if r < valid_rows && c < valid_cols {
                        labels[dst] = mask.get(origin_row + r, origin_col + c);
                    } else {
                        pad_mask[dst] = 1;
                    }
                }
            }

            tiles.push(TileRecord {
                tile_id,
                source_image: cube.name.clone(),
                origin_row,
                origin_col,
                channels: cube.channels,
                features,
                labels,
                pad_mask,
                split: Split::Train,
                augmented: false,
            });
            tile_id += 1;
        }
    }
    Ok(tiles)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Train/val/test fractions plus the shuffle seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for f in [self.train_frac, self.val_frac, self.test_frac] {
            if !(0.0..1.0).contains(&f) || f == 0.0 {
                return Err(CoreError::InvalidInput(format!(
                    "split fraction {f} outside (0,1)"
                )));
            }
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(CoreError::InvalidInput(format!("split fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Shuffles tiles with the seeded PRNG, then partitions by count: floor for
/// train and val, remainder to test. Writes the split tag into each record.
pub fn split_tiles(tiles: &mut [TileRecord], cfg: &SplitConfig) -> Result<()> {
    cfg.validate()?;
    let n = tiles.len();
    if n < 3 {
        return Err(CoreError::InvalidInput(format!(
            "need at least 3 tiles to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::from_seed(cfg.seed);
    rng.shuffle(&mut order);

    let n_train = libm::floor(n as f64 * cfg.train_frac) as usize;
    let n_val = libm::floor(n as f64 * cfg.val_frac) as usize;
    for (pos, &idx) in order.iter().enumerate() {
        tiles[idx].split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    Horizontal,
    Vertical,
}

/// Augmentation settings for oil-bearing training tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Subset of {90, 180, 270} degrees.
    pub rotations: Vec<u16>,
    pub flips: Vec<Flip>,
    /// Noise scale as a fraction of each channel's std over the tile.
    pub noise_sigma: f64,
    pub copies_per_oil_tile: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotations: vec![90, 180, 270],
            flips: vec![Flip::Horizontal, Flip::Vertical],
            noise_sigma: 0.01,
            copies_per_oil_tile: 1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Rotate(u16),
    Flip(Flip),
    Noise,
}

/// Maps a tile coordinate under a geometric transform.
///
/// Rotation convention: 90 degrees maps (r, c) -> (c, N-1-r), so a pixel at
/// (0, 0) lands at (0, 63).
fn map_coord(t: Transform, r: usize, c: usize) -> (usize, usize) {
    let n = TILE_SIZE - 1;
    match t {
        Transform::Rotate(90) => (c, n - r),
        Transform::Rotate(180) => (n - r, n - c),
        Transform::Rotate(270) => (n - c, r),
        Transform::Rotate(_) => (r, c),
        Transform::Flip(Flip::Horizontal) => (r, n - c),
        Transform::Flip(Flip::Vertical) => (n - r, c),
        Transform::Noise => (r, c),
    }
}

fn apply_transform(tile: &TileRecord, t: Transform, new_id: u64, rng: &mut Rng, sigma: f64) -> TileRecord {
    let mut out = tile.clone();
    out.tile_id = new_id;
    out.augmented = true;
    match t {
        Transform::Noise => {
            // Per-channel sigma scaled by that channel's std over the tile.
            for ch in 0..tile.channels {
                let chan = &tile.features[ch * TILE_PIXELS..(ch + 1) * TILE_PIXELS];
                let n = TILE_PIXELS as f64;
                let mean = chan.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = chan
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                let channel_sigma = sigma * libm::sqrt(var);
                let dst = &mut out.features[ch * TILE_PIXELS..(ch + 1) * TILE_PIXELS];
                for v in dst.iter_mut() {
                    *v += (channel_sigma * rng.next_normal()) as f32;
                }
            }
        }
        geometric => {
            for r in 0..TILE_SIZE {
                for c in 0..TILE_SIZE {
                    let (nr, nc) = map_coord(geometric, r, c);
                    let src = r * TILE_SIZE + c;
                    let dst = nr * TILE_SIZE + nc;
                    for ch in 0..tile.channels {
                        out.features[ch * TILE_PIXELS + dst] =
                            tile.features[ch * TILE_PIXELS + src];
                    }
                    out.labels[dst] = tile.labels[src];
                    out.pad_mask[dst] = tile.pad_mask[src];
                }
            }
        }
    }
    out
}

/// Expands the training set: each oil-bearing tile gets
/// `copies_per_oil_tile` augmented copies, each by one transform drawn from
/// the configured set. Water-only tiles pass through untouched.
///
/// New tile ids continue from the maximum input id.
pub fn augment_tiles(train_tiles: &[TileRecord], cfg: &AugmentConfig) -> Result<Vec<TileRecord>> {
    for t in train_tiles {
        if t.split != Split::Train {
            return Err(CoreError::InvalidInput(format!(
                "tile {} is not in the train split",
                t.tile_id
            )));
        }
    }
    let mut transforms: Vec<Transform> = Vec::new();
    for &deg in &cfg.rotations {
        if !matches!(deg, 90 | 180 | 270) {
            return Err(CoreError::InvalidInput(format!("unsupported rotation {deg}")));
        }
        transforms.push(Transform::Rotate(deg));
    }
    for &f in &cfg.flips {
        transforms.push(Transform::Flip(f));
    }
    if cfg.noise_sigma < 0.0 {
        return Err(CoreError::InvalidInput("noise_sigma must be >= 0".into()));
    }
    if cfg.noise_sigma > 0.0 {
        transforms.push(Transform::Noise);
    }
    if transforms.is_empty() && cfg.copies_per_oil_tile > 0 {
        return Err(CoreError::InvalidInput(
            "augmentation requested but the transform set is empty".into(),
        ));
    }

    let mut next_id = train_tiles.iter().map(|t| t.tile_id).max().unwrap_or(0) + 1;
    let mut rng = Rng::from_seed(cfg.seed);
    let mut out = Vec::with_capacity(train_tiles.len() * (1 + cfg.copies_per_oil_tile));
    for tile in train_tiles {
        out.push(tile.clone());
        if !tile.has_oil() {
            continue;
        }
        for _ in 0..cfg.copies_per_oil_tile {
            let t = transforms[rng.next_below(transforms.len() as u64) as usize];
            out.push(apply_transform(tile, t, next_id, &mut rng, cfg.noise_sigma));
            next_id += 1;
        }
    }
    Ok(out)
}

/// Flattens tile features into an `n x k` row-major pixel matrix, optionally
/// skipping padded pixels.
pub fn tiles_to_pixels(tiles: &[TileRecord], exclude_padded: bool) -> (Vec<f32>, Vec<u8>) {
    let k = tiles.first().map(|t| t.channels).unwrap_or(0);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut px = vec![0.0f32; k];
    for tile in tiles {
        for r in 0..TILE_SIZE {
            for c in 0..TILE_SIZE {
                let i = r * TILE_SIZE + c;
                if exclude_padded && tile.pad_mask[i] == 1 {
                    continue;
                }
                tile.pixel_into(r, c, &mut px);
                features.extend_from_slice(&px);
                labels.push(tile.labels[i]);
            }
        }
    }
    (features, labels)
}
