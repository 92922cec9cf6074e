//! `grid`: exhaustive two-RF baseline. Writes the top tuples as CSV and an
//! `optimum.json` that the report subcommand uses for the success rule; the
//! optimum file also carries the conventional reference so relative losses
//! have a fixed anchor.

use crate::artifacts::write_json;
use crate::config;
use anyhow::Context;
use clap::Args;
use seqsearch::bloch::simulate;
use seqsearch::grid::{run_grid, GridEntry, GridResult, GridSpec};
use seqsearch::losses::{composite_loss, relative_rf_energy, LossWeights};
use seqsearch::population::{sample_population, Tissue, VoxelBatch};
use seqsearch::Experiment;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Experiment: e1, e2, e2-diff-t1, or e3.
    #[arg(long, default_value = "e1")]
    pub exp: String,
    /// TOML file whose keys override these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default grid/<exp>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Published full-resolution axes instead of the desk-scale coarsening.
    #[arg(long)]
    pub full: bool,
    /// Population size.
    #[arg(long, default_value_t = 2000)]
    pub pop: usize,
    /// Population seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of best tuples kept in grid.csv.
    #[arg(long, default_value_t = 25)]
    pub top: usize,
    /// Run even when the sweep exceeds the evaluation budget.
    #[arg(long)]
    pub force: bool,
    /// GM/WM contrast weight override.
    #[arg(long)]
    pub lambda_contrast: Option<f64>,
    /// CSF nulling weight override.
    #[arg(long)]
    pub lambda_null: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOverrides {
    pub exp: Option<String>,
    pub out: Option<PathBuf>,
    pub full: Option<bool>,
    pub pop: Option<usize>,
    pub seed: Option<u64>,
    pub top: Option<usize>,
    pub force: Option<bool>,
    pub lambda_contrast: Option<f64>,
    pub lambda_null: Option<f64>,
}

impl GridArgs {
    fn apply(&mut self, o: GridOverrides) {
        if let Some(v) = o.exp {
            self.exp = v;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        if let Some(v) = o.full {
            self.full = v;
        }
        if let Some(v) = o.pop {
            self.pop = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.top {
            self.top = v;
        }
        if let Some(v) = o.force {
            self.force = v;
        }
        self.lambda_contrast = o.lambda_contrast.or(self.lambda_contrast);
        self.lambda_null = o.lambda_null.or(self.lambda_null);
    }
}

/// Everything the report subcommand needs to reproduce the scoring context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOptimum {
    pub experiment: String,
    pub scale: String,
    pub population: usize,
    pub pop_seed: u64,
    pub weights: LossWeights,
    pub spec: GridSpec,
    pub count: usize,
    pub best: GridEntry,
    /// 90-180 spin echo (or 180-90 inversion recovery for e3) scored on the
    /// same population.
    pub conventional: GridEntry,
}

pub fn run(mut args: GridArgs) -> anyhow::Result<()> {
    if let Some(path) = args.config.take() {
        args.apply(config::load::<GridOverrides>(&path)?);
    }
    let exp = Experiment::parse(&args.exp)?;
    let weights =
        crate::weights_with_overrides(exp, None, None, args.lambda_contrast, args.lambda_null);
    let spec = if args.full {
        GridSpec::full(exp)
    } else {
        GridSpec::desk(exp)
    };
    let population = sample_population(args.pop, args.seed, &exp.table())?;
    println!(
        "grid: {} ({}), {} tuples x {} voxels",
        exp.name(),
        if args.full { "full" } else { "desk" },
        spec.count(),
        population.voxels.len()
    );

    let result = run_grid(&spec, &population, &weights, args.top, args.force)?;
    let conventional = score_tuple(conventional_tuple(exp), &population, &weights)?;

    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("grid").join(exp.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_grid_csv(&out.join("grid.csv"), &result)?;
    let optimum = GridOptimum {
        experiment: exp.name().to_string(),
        scale: if args.full { "full" } else { "desk" }.to_string(),
        population: args.pop,
        pop_seed: args.seed,
        weights,
        spec,
        count: result.count,
        best: result.best().clone(),
        conventional,
    };
    write_json(&out.join("optimum.json"), &optimum)?;

    let b = &optimum.best;
    println!(
        "optimum: ({}, {}) deg, phi2 {} deg, dt ({}, {}) ms, loss {:.6}, energy {:.1}%",
        b.theta1_deg, b.theta2_deg, b.phi2_deg, b.dt1_ms, b.dt2_ms, b.loss, b.relative_rf_energy
    );
    let c = &optimum.conventional;
    println!(
        "conventional: ({}, {}) deg at ({}, {}) ms, loss {:.6}",
        c.theta1_deg, c.theta2_deg, c.dt1_ms, c.dt2_ms, c.loss
    );
    Ok(())
}

/// The textbook reference design for each experiment: a 90-180 spin echo at
/// the shortest in-range echo time, or for e3 a 180-90 inversion recovery
/// with the inversion time at the closed-form CSF null T1 ln 2.
pub fn conventional_tuple(exp: Experiment) -> [f64; 5] {
    let spec = GridSpec::full(exp);
    match exp {
        Experiment::E3 => [180.0, 90.0, 0.0, 4000.0 * std::f64::consts::LN_2, 6.2],
        _ => [90.0, 180.0, 180.0, spec.dt1_ms.start, spec.dt2_ms.start],
    }
}

/// Score one tuple the same way grid entries are scored: evaluation-mode
/// composite loss plus per-tissue mean |s|.
pub fn score_tuple(
    tuple: [f64; 5],
    population: &VoxelBatch,
    weights: &LossWeights,
) -> anyhow::Result<GridEntry> {
    let [theta1, theta2, phi2, dt1, dt2] = tuple;
    let seq = GridSpec::sequence(theta1, theta2, phi2, dt1, dt2);
    let signals = simulate(&seq, population)?;
    let (breakdown, _) = composite_loss(&signals, population, weights, &seq, None)?;
    let mut mean_abs = [0.0; 3];
    for (i, tissue) in Tissue::ALL.iter().enumerate() {
        let idx = population.tissue_indices(*tissue);
        if !idx.is_empty() {
            mean_abs[i] = idx.iter().map(|&v| signals[v].norm()).sum::<f64>() / idx.len() as f64;
        }
    }
    Ok(GridEntry {
        theta1_deg: theta1,
        theta2_deg: theta2,
        phi2_deg: phi2,
        dt1_ms: dt1,
        dt2_ms: dt2,
        loss: breakdown.total,
        breakdown,
        mean_abs,
        relative_rf_energy: relative_rf_energy(&seq),
    })
}

fn write_grid_csv(path: &Path, result: &GridResult) -> anyhow::Result<()> {
    let mut out = String::from(
        "rank,theta1_deg,theta2_deg,phi2_deg,dt1_ms,dt2_ms,loss,gm_abs,wm_abs,csf_abs,\
         relative_rf_energy_pct\n",
    );
    for (rank, e) in result.top.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            e.theta1_deg,
            e.theta2_deg,
            e.phi2_deg,
            e.dt1_ms,
            e.dt2_ms,
            e.loss,
            e.mean_abs[0],
            e.mean_abs[1],
            e.mean_abs[2],
            e.relative_rf_energy
        )
        .expect("string write");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
