//! `gradcheck`: fuzz the analytic gradients against central finite
//! differences on randomized sequences and voxel batches. Exits nonzero as
//! soon as the worst relative error crosses the tolerance.

use crate::config;
use anyhow::bail;
use clap::Args;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsearch::gradcheck::{check_sequence, random_sequence};
use seqsearch::losses::LossWeights;
use seqsearch::population::{sample_population, TissueTable};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random sequences.
    #[arg(long, default_value_t = 20)]
    pub sequences: usize,
    /// Voxels per random batch.
    #[arg(long, default_value_t = 10)]
    pub voxels: usize,
    /// RNG seed for sequences and batches.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// TOML file whose keys override these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckOverrides {
    pub sequences: Option<usize>,
    pub voxels: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

impl GradcheckArgs {
    fn apply(&mut self, o: GradcheckOverrides) {
        if let Some(v) = o.sequences {
            self.sequences = v;
        }
        if let Some(v) = o.voxels {
            self.voxels = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.tol {
            self.tol = v;
        }
    }
}

/// Rotating weight configurations so every loss term shows up in the sweep.
pub fn weight_cycle() -> Vec<LossWeights> {
    vec![
        LossWeights::e1(),
        LossWeights::e2(30.0),
        LossWeights::e3(0.25),
        LossWeights::e2(50.0),
        LossWeights::e3(1.0),
    ]
}

pub fn run(mut args: GradcheckArgs) -> anyhow::Result<()> {
    if let Some(path) = args.config.take() {
        args.apply(config::load::<GradcheckOverrides>(&path)?);
    }
    let table = TissueTable::default();
    let cycle = weight_cycle();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    for i in 0..args.sequences {
        let seq = random_sequence(&mut rng);
        let batch = sample_population(args.voxels.max(3), rng.next_u64(), &table)?;
        let report = check_sequence(&seq, &batch, &cycle[i % cycle.len()])?;
        println!(
            "seq {:>3}/{}: {} rf, {} params, max rel err {:.3e}",
            i + 1,
            args.sequences,
            seq.rf_count(),
            report.entries.len(),
            report.max_rel_err
        );
        worst = worst.max(report.max_rel_err);
    }
    println!("worst relative error {worst:.3e} (tolerance {:.0e})", args.tol);
    if worst >= args.tol {
        bail!("gradient check failed: {worst:.3e} >= {:.0e}", args.tol);
    }
    println!("gradients agree with finite differences");
    Ok(())
}
