//! CSV report writers. Floats are rendered with Rust's shortest round-trip
//! formatting so reports are deterministic and parse back to the exact
//! computed values.

use std::fs;
use std::path::Path;

use slickwater_core::metrics::{MetricsReport, TileF1Distribution, F1_HIST_BINS};

use crate::error::Result;

/// `metrics.csv`: one row per model.
pub fn write_metrics_csv(path: &Path, rows: &[(&str, &MetricsReport)]) -> Result<()> {
    let mut out = String::from("model,accuracy,precision,recall,f1,auc,threshold,pixels\n");
    for (model, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            model, m.accuracy, m.precision, m.recall, m.f1, m.auc, m.threshold, m.pixel_count
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// `tile_f1.csv`: per-tile F1 with the inclusion flag (tiles without any
/// ground-truth oil are excluded from the distribution).
pub fn write_tile_f1_csv(path: &Path, rows: &[(u64, f64, bool)]) -> Result<()> {
    let mut out = String::from("tile_id,f1,included\n");
    for (tile_id, f1, included) in rows {
        out.push_str(&format!("{tile_id},{f1},{included}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// `tile_f1_hist.csv`: fixed [0,1] histogram with bin width 0.05.
pub fn write_tile_f1_hist_csv(path: &Path, dist: &TileF1Distribution) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in dist.histogram.iter().enumerate() {
        let lo = i as f64 / F1_HIST_BINS as f64;
        let hi = (i + 1) as f64 / F1_HIST_BINS as f64;
        out.push_str(&format!("{lo},{hi},{count}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Epoch log CSV for CNN training: `epoch,train_loss,val_auc`.
pub fn write_epoch_log_csv(
    path: &Path,
    log: &[slickwater_core::cnn::EpochLog],
) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_auc\n");
    for row in log {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.train_loss, row.val_auc));
    }
    fs::write(path, out)?;
    Ok(())
}
