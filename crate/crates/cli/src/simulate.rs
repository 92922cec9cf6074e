//! `simulate`: one-off evaluation of a sequence file. Prints the nominal
//! per-tissue signals and bookkeeping, and optionally writes a dense
//! trajectory or a robustness map for plotting.

use crate::artifacts::{write_robustness, write_trajectory};
use crate::config;
use anyhow::{bail, Context};
use clap::Args;
use seqsearch::bloch::{robustness_map, simulate_trajectory, simulate_voxel};
use seqsearch::categorize::{classify, standardize, timings};
use seqsearch::losses::relative_rf_energy;
use seqsearch::population::{Tissue, VoxelBatch};
use seqsearch::seq::Sequence;
use seqsearch::{rad_to_deg, Experiment};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sequence file to simulate.
    #[arg(long)]
    pub seq: Option<PathBuf>,
    /// Experiment context (tissue table and classifier gates).
    #[arg(long, default_value = "e1")]
    pub exp: String,
    /// TOML file whose keys override these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tissue selection: gm, wm, csf, or all.
    #[arg(long, default_value = "all")]
    pub tissue: String,
    /// Voxel frequency offset in Hz.
    #[arg(long, default_value_t = 0.0)]
    pub db0: f64,
    /// B1+ scale on every flip angle.
    #[arg(long, default_value_t = 1.0)]
    pub b1: f64,
    /// Write a trajectory CSV over the selected tissues.
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Trajectory sample spacing in ms.
    #[arg(long, default_value_t = 0.5)]
    pub traj_dt: f64,
    /// Write a robustness map CSV over the selected tissues.
    #[arg(long)]
    pub robustness: Option<PathBuf>,
    /// Robustness map side (n x n).
    #[arg(long, default_value_t = 11)]
    pub grid: usize,
    /// Print the signal table as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOverrides {
    pub seq: Option<PathBuf>,
    pub exp: Option<String>,
    pub tissue: Option<String>,
    pub db0: Option<f64>,
    pub b1: Option<f64>,
    pub traj: Option<PathBuf>,
    pub traj_dt: Option<f64>,
    pub robustness: Option<PathBuf>,
    pub grid: Option<usize>,
    pub json: Option<bool>,
}

impl SimulateArgs {
    fn apply(&mut self, o: SimulateOverrides) {
        if o.seq.is_some() {
            self.seq = o.seq;
        }
        if let Some(v) = o.exp {
            self.exp = v;
        }
        if let Some(v) = o.tissue {
            self.tissue = v;
        }
        if let Some(v) = o.db0 {
            self.db0 = v;
        }
        if let Some(v) = o.b1 {
            self.b1 = v;
        }
        if o.traj.is_some() {
            self.traj = o.traj;
        }
        if let Some(v) = o.traj_dt {
            self.traj_dt = v;
        }
        if o.robustness.is_some() {
            self.robustness = o.robustness;
        }
        if let Some(v) = o.grid {
            self.grid = v;
        }
        if let Some(v) = o.json {
            self.json = v;
        }
    }
}

#[derive(Debug, serde::Serialize)]
struct SignalRow {
    tissue: &'static str,
    abs: f64,
    phase_deg: f64,
}

pub fn run(mut args: SimulateArgs) -> anyhow::Result<()> {
    if let Some(path) = args.config.take() {
        args.apply(config::load::<SimulateOverrides>(&path)?);
    }
    let seq_path = args.seq.context("--seq is required")?;
    let text = std::fs::read_to_string(&seq_path)
        .with_context(|| format!("reading {}", seq_path.display()))?;
    let seq = Sequence::deserialize(&text)?;
    let issues = seq.validate();
    if !issues.is_empty() {
        bail!("invalid sequence: {}", issues.join("; "));
    }
    let exp = Experiment::parse(&args.exp)?;
    let table = exp.table();
    let tissues: Vec<Tissue> = match args.tissue.to_ascii_lowercase().as_str() {
        "all" => Tissue::ALL.to_vec(),
        "gm" => vec![Tissue::Gm],
        "wm" => vec![Tissue::Wm],
        "csf" => vec![Tissue::Csf],
        other => bail!("unknown tissue {other:?}; expected gm, wm, csf, or all"),
    };

    let mut rows = Vec::new();
    for &tissue in &tissues {
        let mut voxel = table.nominal(tissue);
        voxel.db0_hz = args.db0;
        voxel.b1 = args.b1;
        let s = simulate_voxel(&seq, &voxel);
        rows.push(SignalRow {
            tissue: tissue.name(),
            abs: s.norm(),
            phase_deg: rad_to_deg(s.arg()),
        });
    }

    let t = timings(&seq);
    let category = classify(&standardize(&seq)?, exp);
    if args.json {
        let value = serde_json::json!({
            "n_rf": seq.rf_count(),
            "duration_ms": seq.duration_ms(),
            "te_ms": t.te_ms,
            "ti_ms": t.ti_ms,
            "relative_rf_energy_pct": relative_rf_energy(&seq),
            "category": category.name(),
            "db0_hz": args.db0,
            "b1": args.b1,
            "signals": rows,
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!(
            "{} rf pulses, duration {} ms, te {} ms, ti {} ms",
            seq.rf_count(),
            seq.duration_ms(),
            t.te_ms,
            t.ti_ms
        );
        println!(
            "relative rf energy {:.1}%, category ({}): {}",
            relative_rf_energy(&seq),
            exp.name(),
            category.name()
        );
        println!("signals at db0 {} Hz, b1 {}:", args.db0, args.b1);
        for row in &rows {
            println!("  {:<4} |s| {:.4}  phase {:+.1} deg", row.tissue, row.abs, row.phase_deg);
        }
    }

    if let Some(path) = &args.traj {
        let batch = VoxelBatch {
            voxels: tissues.iter().map(|&t| table.nominal(t)).collect(),
            seed: 0,
        };
        let points = simulate_trajectory(&seq, &batch, args.traj_dt)?;
        write_trajectory(path, &points)?;
        println!("trajectory: {}", path.display());
    }
    if let Some(path) = &args.robustness {
        let mut maps = Vec::new();
        for &tissue in &tissues {
            maps.push((
                tissue.name(),
                robustness_map(&seq, tissue, &table, args.grid, args.grid)?,
            ));
        }
        write_robustness(path, &maps)?;
        println!("robustness map: {}", path.display());
    }
    Ok(())
}
