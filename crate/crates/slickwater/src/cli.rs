//! The `pipeline` CLI: synth -> preprocess -> train-rf -> predict-rf ->
//! train-cnn -> evaluate, all driven by one JSON config and a workspace
//! directory. Each invocation writes `run_manifest.json` describing its
//! inputs, seeds, and outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use slickwater_core::cnn::{init_model, make_cnn_dataset, refine_map, train_cnn};
use slickwater_core::grid::{HsiCube, ProbabilityMap, Split, TileRecord, TILE_PIXELS};
use slickwater_core::metrics::{
    confusion, f1, tile_f1_distribution, evaluate_tiles, MetricsReport, TileF1Distribution,
};
use slickwater_core::preprocess::{
    apply_pca, apply_scaler, augment_tiles, detect_noisy_channels, fit_pca, fit_scaler,
    remove_channels, split_tiles, tile_image, tiles_to_pixels, PcaModel, ScalerParams,
};
use slickwater_core::rforest::{assemble_forest, train_tree, Dataset, ForestModel};
use slickwater_core::synth::{default_profile, generate_scene};

use crate::archive;
use crate::config::{load_config, PipelineConfig};
use crate::error::{IoError, Result};
use crate::hsio;
use crate::models;
use crate::report;

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Oil-water hyperspectral classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Workspace directory holding all inputs and outputs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and masks.
    Synth(Common),
    /// Noisy-channel removal, standardization, PCA, tiling, split, augmentation.
    Preprocess(Common),
    /// Train the pixel-wise random forest on the train split.
    TrainRf(Common),
    /// Write RF probability maps for the configured splits.
    PredictRf(Common),
    /// Train the CNN refiner on validation-split RF maps.
    TrainCnn(Common),
    /// Pixel metrics and tile-F1 consistency reports on the test split.
    Evaluate(Common),
}

/// Entry point for the `pipeline` binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Synth(c) => ("synth", c),
        Command::Preprocess(c) => ("preprocess", c),
        Command::TrainRf(c) => ("train-rf", c),
        Command::PredictRf(c) => ("predict-rf", c),
        Command::TrainCnn(c) => ("train-cnn", c),
        Command::Evaluate(c) => ("evaluate", c),
    };
    match dispatch(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(name: &str, common: &Common) -> Result<()> {
    let cfg = load_config(&common.config)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(name, common, &cfg)?;
    match name {
        "synth" => cmd_synth(&cfg, &common.out, &mut manifest)?,
        "preprocess" => cmd_preprocess(&cfg, &common.out, &mut manifest)?,
        "train-rf" => cmd_train_rf(&cfg, &common.out, &mut manifest)?,
        "predict-rf" => cmd_predict_rf(&cfg, &common.out, &mut manifest)?,
        "train-cnn" => cmd_train_cnn(&cfg, &common.out, &mut manifest)?,
        "evaluate" => cmd_evaluate(&cfg, &common.out, &mut manifest)?,
        _ => unreachable!(),
    }
    manifest.write(&common.out, started.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
    command: String,
    config_echo: serde_json::Value,
    config_sha256: String,
    inputs: serde_json::Map<String, serde_json::Value>,
    outputs: Vec<String>,
    notes: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    fn new(command: &str, common: &Common, cfg: &PipelineConfig) -> Result<Self> {
        let config_bytes = fs::read(&common.config)?;
        Ok(RunManifest {
            command: command.to_string(),
            config_echo: serde_json::to_value(cfg)?,
            config_sha256: archive::hex_digest(&config_bytes),
            inputs: serde_json::Map::new(),
            outputs: Vec::new(),
            notes: serde_json::Map::new(),
        })
    }

    fn input(&mut self, key: &str, value: serde_json::Value) {
        self.inputs.insert(key.to_string(), value);
    }

    fn output(&mut self, out_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(rel.to_string_lossy().into_owned());
    }

    fn note(&mut self, key: &str, value: serde_json::Value) {
        self.notes.insert(key.to_string(), value);
    }

    fn write(self, out_dir: &Path, seconds: f64) -> Result<()> {
        let doc = json!({
            "command": self.command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_sha256": self.config_sha256,
            "config": self.config_echo,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "notes": self.notes,
            "seconds": seconds,
        });
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("run_manifest.json"), serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Workspace layout
// ---------------------------------------------------------------------------

fn scenes_dir(out: &Path) -> PathBuf {
    out.join("scenes")
}
fn archive_dir(out: &Path) -> PathBuf {
    out.join("archive")
}
fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}
fn maps_dir(out: &Path, split: Split) -> PathBuf {
    out.join("maps").join(split.as_str())
}
fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}
fn rf_stem(out: &Path) -> PathBuf {
    models_dir(out).join("model")
}

/// Scene stems (no extension), sorted by name for deterministic ordering.
fn list_scene_stems(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = scenes_dir(out);
    let mut stems = Vec::new();
    let entries = fs::read_dir(&dir)
        .map_err(|e| IoError::data(format!("{}: {e} (run `pipeline synth` first?)", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".hsc.json") {
            stems.push(dir.join(stem));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(IoError::data(format!("{}: no .hsc.json cubes found", dir.display())));
    }
    Ok(stems)
}

fn mask_path(stem: &Path) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".mask.pgm");
    stem.with_file_name(name)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let dir = scenes_dir(out);
    fs::create_dir_all(&dir)?;
    let profile = default_profile(cfg.synth.channels, cfg.synth.profile_seed);
    let mut fractions = Vec::new();
    for i in 0..cfg.synth.scenes {
        let scene_cfg = cfg.synth.scene_config(i as u64);
        let (cube, mask) = generate_scene(&scene_cfg, &profile)?;
        let stem = dir.join(&scene_cfg.name);
        hsio::write_cube(&cube, &stem)?;
        hsio::write_mask(&mask, &mask_path(&stem))?;
        manifest.output(out, &stem.with_extension(""));
        fractions.push(json!({
            "scene": scene_cfg.name,
            "seed": scene_cfg.seed,
            "oil_fraction": mask.oil_fraction(),
        }));
    }
    manifest.note("scenes", json!(fractions));
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

/// Applies scaler + PCA to one pixel vector.
fn transform_pixel(x: &[f32], scaler: &ScalerParams, pca: &PcaModel, out: &mut [f32]) {
    debug_assert_eq!(out.len(), pca.k_out);
    let k_in = pca.k_in;
    for (j, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for i in 0..k_in {
            let z = (x[i] as f64 - scaler.means[i]) / scaler.stds[i];
            acc += pca.components[j * k_in + i] * (z - pca.mean[i]);
        }
        *slot = acc as f32;
    }
}

/// Rewrites a tile's features through scaler + PCA (used in leakage-free
/// mode, where tiles are cut before the statistics exist).
fn transform_tile(tile: &TileRecord, scaler: &ScalerParams, pca: &PcaModel) -> TileRecord {
    let mut features = vec![0.0f32; TILE_PIXELS * pca.k_out];
    let mut x = vec![0.0f32; tile.channels];
    let mut y = vec![0.0f32; pca.k_out];
    for px in 0..TILE_PIXELS {
        for (ch, slot) in x.iter_mut().enumerate() {
            *slot = tile.features[ch * TILE_PIXELS + px];
        }
        transform_pixel(&x, scaler, pca, &mut y);
        for (ch, &v) in y.iter().enumerate() {
            features[ch * TILE_PIXELS + px] = v;
        }
    }
    TileRecord {
        channels: pca.k_out,
        features,
        ..tile.clone()
    }
}

/// Row-major pixel matrix over all cubes, in cube order.
fn pixel_matrix(cubes: &[HsiCube]) -> Vec<f32> {
    let k = cubes[0].channels;
    let n: usize = cubes.iter().map(|c| c.rows * c.cols).sum();
    let mut out = Vec::with_capacity(n * k);
    let mut x = vec![0.0f32; k];
    for cube in cubes {
        for r in 0..cube.rows {
            for c in 0..cube.cols {
                cube.pixel_into(r, c, &mut x);
                out.extend_from_slice(&x);
            }
        }
    }
    out
}

fn cmd_preprocess(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let pp = &cfg.preprocess;
    let stems = list_scene_stems(out)?;
    let mut cubes = Vec::with_capacity(stems.len());
    let mut masks = Vec::with_capacity(stems.len());
    let mut dirty_channels: Vec<usize> = Vec::new();
    for stem in &stems {
        let cube = if pp.allow_nonfinite {
            let (cube, dirty) = hsio::read_cube_lenient(stem)?;
            for ch in dirty {
                if !dirty_channels.contains(&ch) {
                    dirty_channels.push(ch);
                }
            }
            cube
        } else {
            hsio::read_cube(stem)?
        };
        masks.push(hsio::read_mask(&mask_path(stem))?);
        cubes.push(cube);
        manifest.input(&stem.to_string_lossy(), json!("scene cube + mask"));
    }

    // Stage 1: noisy-channel removal.
    let mut removed = match &pp.fixed_noisy_channels {
        Some(list) => list.clone(),
        None => detect_noisy_channels(&cubes, pp.variance_floor, pp.flatness_threshold)?,
    };
    // Channels that carried non-finite values are unusable regardless of the
    // detection outcome.
    for ch in dirty_channels {
        if !removed.contains(&ch) {
            removed.push(ch);
        }
    }
    removed.sort_unstable();
    let cubes: Vec<HsiCube> = cubes
        .iter()
        .map(|c| remove_channels(c, &removed))
        .collect::<core::result::Result<_, _>>()?;
    let k_removed = cubes[0].channels;

    let split_cfg = pp.split.to_core();
    let augment_cfg = pp.augment.to_core()?;
    let (mut tiles, scaler, pca) = if pp.leakage_free {
        // Tile and split first, then fit statistics on training pixels only.
        let mut tiles = Vec::new();
        for (cube, mask) in cubes.iter().zip(&masks) {
            let first_id = tiles.len() as u64;
            tiles.extend(tile_image(cube, mask, first_id)?);
        }
        split_tiles(&mut tiles, &split_cfg)?;
        let train: Vec<TileRecord> = tiles
            .iter()
            .filter(|t| t.split == Split::Train)
            .cloned()
            .collect();
        let (train_pixels, _) = tiles_to_pixels(&train, true);
        let scaler = fit_scaler(&train_pixels, k_removed)?;
        let standardized: Vec<f32> = train_pixels
            .chunks_exact(k_removed)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, &v)| ((v as f64 - scaler.means[i]) / scaler.stds[i]) as f32)
            })
            .collect();
        let pca = fit_pca(&standardized, k_removed, pp.variance_target, pp.max_components)?;
        let tiles = tiles
            .iter()
            .map(|t| transform_tile(t, &scaler, &pca))
            .collect();
        (tiles, scaler, pca)
    } else {
        // Paper order: fit on all images, then reduce, tile, and split.
        let pixels = pixel_matrix(&cubes);
        let scaler = fit_scaler(&pixels, k_removed)?;
        let standardized: Vec<HsiCube> = cubes
            .iter()
            .map(|c| apply_scaler(c, &scaler))
            .collect::<core::result::Result<_, _>>()?;
        let std_pixels = pixel_matrix(&standardized);
        let pca = fit_pca(&std_pixels, k_removed, pp.variance_target, pp.max_components)?;
        let reduced: Vec<HsiCube> = standardized
            .iter()
            .map(|c| apply_pca(c, &pca))
            .collect::<core::result::Result<_, _>>()?;
        let mut tiles = Vec::new();
        for (cube, mask) in reduced.iter().zip(&masks) {
            let first_id = tiles.len() as u64;
            tiles.extend(tile_image(cube, mask, first_id)?);
        }
        split_tiles(&mut tiles, &split_cfg)?;
        (tiles, scaler, pca)
    };

    // Stage 5: augmentation of oil-bearing training tiles.
    let train: Vec<TileRecord> = tiles
        .iter()
        .filter(|t| t.split == Split::Train)
        .cloned()
        .collect();
    // augment_tiles returns originals + copies; keep only the copies and give
    // them ids past the global maximum (its own numbering only avoids the
    // train split's ids).
    let mut augmented: Vec<TileRecord> = augment_tiles(&train, &augment_cfg)?
        .into_iter()
        .filter(|t| t.augmented)
        .collect();
    let next_id = tiles.iter().map(|t| t.tile_id).max().unwrap_or(0) + 1;
    for (i, t) in augmented.iter_mut().enumerate() {
        t.tile_id = next_id + i as u64;
    }
    let n_augmented = augmented.len();
    tiles.extend(augmented);

    let dir = archive_dir(out);
    archive::write_archive(&dir, &tiles)?;
    manifest.output(out, &dir.join(archive::MANIFEST_NAME));

    let preproc = models::PreprocModel::new(removed.clone(), &scaler, &pca, pp.leakage_free);
    fs::create_dir_all(models_dir(out))?;
    let preproc_path = models_dir(out).join("preprocess.json");
    models::save_preproc(&preproc, &preproc_path)?;
    manifest.output(out, &preproc_path);

    let count = |s: Split| tiles.iter().filter(|t| t.split == s && !t.augmented).count();
    manifest.note(
        "preprocess",
        json!({
            "removed_channels": removed,
            "k_out": pca.k_out,
            "explained_variance_ratio_sum": pca.explained_variance_ratio.iter().sum::<f64>(),
            "tiles": {
                "train": count(Split::Train),
                "val": count(Split::Val),
                "test": count(Split::Test),
                "augmented": n_augmented,
            },
        }),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-rf / predict-rf
// ---------------------------------------------------------------------------

/// Trains trees in parallel with per-tree derived seeds; byte-identical to
/// serial training.
fn train_forest_parallel(tiles: &[TileRecord], params: &slickwater_core::rforest::ForestParams) -> Result<ForestModel> {
    let (features, labels) = tiles_to_pixels(tiles, params.exclude_padded);
    let data = Dataset::new(&features, &labels, tiles.first().map_or(0, |t| t.channels))?;
    let trees: Vec<_> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| train_tree(&data, params, i))
        .collect();
    Ok(assemble_forest(trees, params, data.k)?)
}

fn cmd_train_rf(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let params = cfg.rf.to_core()?;
    let dir = archive_dir(out);
    let tiles = archive::read_split(&dir, Split::Train)?;
    if tiles.is_empty() {
        return Err(IoError::data("archive has no training tiles"));
    }
    manifest.input("archive_sha256", json!(archive::manifest_sha256(&dir)?));

    let (_, labels) = tiles_to_pixels(&tiles, params.exclude_padded);
    let oil: usize = labels.iter().map(|&l| l as usize).sum();
    let model = train_forest_parallel(&tiles, &params)?;

    fs::create_dir_all(models_dir(out))?;
    models::save_forest(&model, &rf_stem(out))?;
    manifest.output(out, &models_dir(out).join("model.rf.json"));
    manifest.note(
        "training",
        json!({
            "tiles": tiles.len(),
            "pixels": labels.len(),
            "oil_pixels": oil,
            "oil_fraction": oil as f64 / labels.len() as f64,
        }),
    );
    Ok(())
}

fn cmd_predict_rf(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let model = models::load_forest(&rf_stem(out))?;
    let dir = archive_dir(out);
    let archive_hash = archive::manifest_sha256(&dir)?;
    manifest.input("archive_sha256", json!(archive_hash.clone()));

    for split_name in &cfg.predict.splits {
        let split = Split::from_str(split_name).map_err(|e| IoError::config(e.to_string()))?;
        let tiles = archive::read_split(&dir, split)?;
        let maps: Vec<(u64, ProbabilityMap)> = tiles
            .par_iter()
            .map(|t| Ok((t.tile_id, model.predict_map(t)?)))
            .collect::<Result<_>>()?;
        let map_dir = maps_dir(out, split);
        fs::create_dir_all(&map_dir)?;
        let mut ids = Vec::with_capacity(maps.len());
        for (tile_id, map) in &maps {
            hsio::write_probmap(map, &map_dir.join(format!("t{tile_id:06}")))?;
            ids.push(*tile_id);
        }
        let maps_manifest = json!({
            "archive_sha256": archive_hash,
            "split": split.as_str(),
            "tile_ids": ids,
        });
        let manifest_path = map_dir.join("maps_manifest.json");
        fs::write(&manifest_path, serde_json::to_vec_pretty(&maps_manifest)?)?;
        manifest.output(out, &manifest_path);
        manifest.note(&format!("maps_{}", split.as_str()), json!(maps.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-cnn
// ---------------------------------------------------------------------------

fn cmd_train_cnn(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let rf_model = models::load_forest(&rf_stem(out))?;
    let dir = archive_dir(out);
    manifest.input("archive_sha256", json!(archive::manifest_sha256(&dir)?));
    let val_tiles = archive::read_split(&dir, Split::Val)?;
    let test_tiles = archive::read_split(&dir, Split::Test)?;
    let train_ids: Vec<u64> = archive::read_manifest(&dir)?
        .iter()
        .filter(|m| m.split == Split::Train.as_str())
        .map(|m| m.tile_id)
        .collect();

    let (cnn_train, cnn_val, _) = make_cnn_dataset(
        &rf_model,
        &val_tiles,
        &test_tiles,
        &train_ids,
        cfg.cnn.split_seed,
    )?;
    let init = init_model(&cfg.cnn.arch(), cfg.cnn.init_seed)?;
    let (best, log) = train_cnn(&init, &cnn_train, &cnn_val, &cfg.cnn.train_config())?;

    fs::create_dir_all(models_dir(out))?;
    models::save_cnn(&best, &rf_stem(out))?;
    let log_path = models_dir(out).join("cnn_epochs.csv");
    report::write_epoch_log_csv(&log_path, &log)?;
    manifest.output(out, &models_dir(out).join("model.cnn.json"));
    manifest.output(out, &log_path);
    let best_auc = log.iter().map(|e| e.val_auc).fold(f64::NEG_INFINITY, f64::max);
    manifest.note(
        "cnn_training",
        json!({
            "cnn_train": cnn_train.len(),
            "cnn_val": cnn_val.len(),
            "epochs": log.len(),
            "best_val_auc": best_auc,
        }),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct ModelEval {
    report: MetricsReport,
    dist: TileF1Distribution,
    tile_rows: Vec<(u64, f64, bool)>,
}

fn eval_maps(
    tiles: &[TileRecord],
    maps: &[ProbabilityMap],
    threshold: f64,
) -> Result<ModelEval> {
    let truths: Vec<Vec<u8>> = tiles.iter().map(|t| t.labels.clone()).collect();
    let pads: Vec<Vec<u8>> = tiles.iter().map(|t| t.pad_mask.clone()).collect();
    let ids: Vec<u64> = tiles.iter().map(|t| t.tile_id).collect();
    let report = evaluate_tiles(maps, &truths, &pads, threshold)?;
    let dist = tile_f1_distribution(&ids, maps, &truths, &pads, threshold)?;
    let mut tile_rows = Vec::with_capacity(tiles.len());
    for ((tile, map), pad) in tiles.iter().zip(maps).zip(&pads) {
        let c = confusion(map, &tile.labels, threshold, Some(pad))?;
        tile_rows.push((tile.tile_id, f1(&c), tile.has_oil()));
    }
    Ok(ModelEval {
        report,
        dist,
        tile_rows,
    })
}

fn write_model_reports(
    out: &Path,
    subdir: &str,
    eval: &ModelEval,
    maps: &[ProbabilityMap],
    ids: &[u64],
    manifest: &mut RunManifest,
) -> Result<()> {
    let dir = reports_dir(out).join(subdir);
    fs::create_dir_all(&dir)?;
    report::write_tile_f1_csv(&dir.join("tile_f1.csv"), &eval.tile_rows)?;
    report::write_tile_f1_hist_csv(&dir.join("tile_f1_hist.csv"), &eval.dist)?;
    manifest.output(out, &dir.join("tile_f1.csv"));
    manifest.output(out, &dir.join("tile_f1_hist.csv"));
    let render_dir = dir.join("renders");
    fs::create_dir_all(&render_dir)?;
    for (map, id) in maps.iter().zip(ids) {
        hsio::render_probmap_pgm(map, &render_dir.join(format!("t{id:06}.pgm")))?;
    }
    Ok(())
}

fn cmd_evaluate(cfg: &PipelineConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let threshold = cfg.evaluate.threshold;
    let dir = archive_dir(out);
    let archive_hash = archive::manifest_sha256(&dir)?;
    manifest.input("archive_sha256", json!(archive_hash.clone()));

    // Stage-ordering gate: the maps must come from this archive.
    let map_dir = maps_dir(out, Split::Test);
    let maps_manifest_path = map_dir.join("maps_manifest.json");
    let maps_manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(&maps_manifest_path).map_err(|e| {
            IoError::data(format!(
                "{}: {e} (run `pipeline predict-rf` first?)",
                maps_manifest_path.display()
            ))
        })?)?;
    let recorded = maps_manifest["archive_sha256"].as_str().unwrap_or_default();
    if recorded != archive_hash {
        return Err(IoError::data(format!(
            "test maps were produced from a different archive (hash {recorded} != {archive_hash}); \
             rerun predict-rf"
        )));
    }

    let tiles = archive::read_split(&dir, Split::Test)?;
    let rf_maps: Vec<ProbabilityMap> = tiles
        .iter()
        .map(|t| hsio::read_probmap(&map_dir.join(format!("t{:06}", t.tile_id))))
        .collect::<Result<_>>()?;
    let ids: Vec<u64> = tiles.iter().map(|t| t.tile_id).collect();

    let rf_eval = eval_maps(&tiles, &rf_maps, threshold)?;
    fs::create_dir_all(reports_dir(out))?;
    write_model_reports(out, "rf", &rf_eval, &rf_maps, &ids, manifest)?;

    let cnn_stem = rf_stem(out);
    let cnn_json = models_dir(out).join("model.cnn.json");
    let mut metric_rows: Vec<(&str, &MetricsReport)> = vec![("rf", &rf_eval.report)];
    let hybrid_eval;
    if cnn_json.exists() {
        let cnn = models::load_cnn(&cnn_stem)?;
        let refined: Vec<ProbabilityMap> = rf_maps
            .iter()
            .map(|m| Ok(refine_map(&cnn, m)?))
            .collect::<Result<_>>()?;
        hybrid_eval = Some((eval_maps(&tiles, &refined, threshold)?, refined));
        let (eval, maps) = hybrid_eval.as_ref().unwrap();
        write_model_reports(out, "rf_cnn", eval, maps, &ids, manifest)?;
        metric_rows.push(("rf+cnn", &eval.report));
    } else {
        hybrid_eval = None;
    }

    let metrics_path = reports_dir(out).join("metrics.csv");
    report::write_metrics_csv(&metrics_path, &metric_rows)?;
    manifest.output(out, &metrics_path);

    let mut comparison = json!({
        "rf": {
            "f1": rf_eval.report.f1,
            "recall": rf_eval.report.recall,
            "auc": rf_eval.report.auc,
            "fraction_below_0.7": rf_eval.dist.fraction_below,
        },
    });
    if let Some((eval, _)) = &hybrid_eval {
        comparison["rf+cnn"] = json!({
            "f1": eval.report.f1,
            "recall": eval.report.recall,
            "auc": eval.report.auc,
            "fraction_below_0.7": eval.dist.fraction_below,
        });
        if let (Some(a), Some(b)) = (rf_eval.dist.fraction_below, eval.dist.fraction_below) {
            comparison["fraction_below_delta"] = json!(b - a);
        }
    }
    manifest.note("comparison", comparison);
    Ok(())
}
