//! Run artifacts: the campaign manifest, per-run metrics and checkpoints,
//! and the CSV table formats shared between subcommands.
//!
//! Nothing here records wall-clock time or absolute paths, so two campaigns
//! started from the same seed produce byte-identical files. Floats are
//! written with the shortest round-trip formatting.

use anyhow::Context;
use seqsearch::losses::{LossBreakdown, LossWeights};
use seqsearch::optim::EpochRecord;
use seqsearch::bloch::{RobustnessPoint, TrajectoryPoint};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Campaign-level record: everything needed to rerun every seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub experiment: String,
    pub scale: String,
    pub campaign_seed: u64,
    pub population: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_weights: f64,
    pub lr_alpha: f64,
    pub weights: LossWeights,
    pub robustness_grid: usize,
    pub checkpoint_every: usize,
    pub runs: Vec<RunStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStatus {
    pub seed: u64,
    /// Directory name relative to the campaign root.
    pub dir: String,
    /// "ok" or "failed: <reason>"; failed runs keep the campaign going.
    pub status: String,
}

/// Final per-run measurements, written next to the designed sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub experiment: String,
    pub run_seed: u64,
    pub pop_seed: u64,
    pub trainer_seed: u64,
    pub epochs: usize,
    pub category: String,
    pub n_rf: usize,
    pub flips_deg: Vec<f64>,
    pub phases_deg: Vec<f64>,
    pub duration_ms: f64,
    pub te_ms: f64,
    pub ti_ms: f64,
    pub relative_rf_energy_pct: f64,
    /// |s| on the nominal GM, WM, CSF voxels (table means, B1 = 1, dB0 = 0).
    pub nominal_abs: [f64; 3],
    /// Evaluation-mode loss over the full training population.
    pub eval_loss: LossBreakdown,
}

/// Exact training state mid-campaign; restoring it resumes the run
/// bit-identically (the trainer embeds its RNG and optimizer moments).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub trainer: seqsearch::optim::Trainer,
    pub history: Vec<EpochRecord>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub const HISTORY_HEADER: &str = "epoch,total,signal_gm,signal_wm,signal_csf,null_gm,null_wm,\
                                  null_csf,contrast,rf_count_term,rf_energy_term,n_rf,duration_ms,path";

/// One row per epoch; `path` is the sampled candidate index per layer,
/// dash-joined (empty for frozen-structure refinement).
pub fn write_history(path: &Path, records: &[EpochRecord]) -> anyhow::Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        let l = &r.loss;
        let path_str = r
            .path
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("-");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            l.total,
            l.signal[0],
            l.signal[1],
            l.signal[2],
            l.null[0],
            l.null[1],
            l.null[2],
            l.contrast,
            l.rf_count,
            l.rf_energy,
            r.n_rf,
            r.duration_ms,
            path_str
        )
        .expect("string write");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// (epoch, total) pairs back out of a history file.
pub fn read_history_totals(path: &Path) -> anyhow::Result<Vec<(usize, f64)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        let epoch = fields
            .next()
            .and_then(|f| f.parse().ok())
            .context("bad epoch column")?;
        let total = fields
            .next()
            .and_then(|f| f.parse().ok())
            .context("bad total column")?;
        out.push((epoch, total));
    }
    Ok(out)
}

/// Robustness rows for several tissues concatenated into one table.
pub fn write_robustness(
    path: &Path,
    maps: &[(&'static str, Vec<RobustnessPoint>)],
) -> anyhow::Result<()> {
    let mut out = String::from("tissue,db0_hz,b1,signal_abs,normalized\n");
    for (tissue, map) in maps {
        for p in map {
            writeln!(
                out,
                "{},{},{},{},{}",
                tissue, p.db0_hz, p.b1, p.signal_abs, p.normalized
            )
            .expect("string write");
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> anyhow::Result<()> {
    let mut out = String::from("voxel,tissue,t_ms,mx,my,mz,mxy\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.voxel_id, p.tissue, p.t_ms, p.mx, p.my, p.mz, p.mxy
        )
        .expect("string write");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
