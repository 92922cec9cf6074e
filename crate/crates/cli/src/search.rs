//! `search`: run one or more seeded searches of the same experiment and
//! collect the artifacts in one campaign directory.
//!
//! Layout, for `--out DIR`:
//!
//! ```text
//! DIR/manifest.json          config + per-run status
//! DIR/run_<seed>/sequence.seq
//! DIR/run_<seed>/history.csv
//! DIR/run_<seed>/metrics.json
//! DIR/run_<seed>/robustness.csv
//! DIR/run_<seed>/checkpoint.json   (with --checkpoint-every)
//! ```
//!
//! All randomness descends from the run seed: the population seed and the
//! trainer seed are the first two draws of ChaCha8(run_seed), so any run can
//! be reproduced alone from the manifest.

use crate::artifacts::{self, Checkpoint, Manifest, RunMetrics, RunStatus};
use crate::config;
use anyhow::{bail, Context};
use clap::Args;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsearch::bloch::{robustness_map, simulate, simulate_voxel};
use seqsearch::categorize::{classify, standardize, timings};
use seqsearch::losses::{composite_loss, relative_rf_energy, LossWeights};
use seqsearch::optim::{EpochRecord, TrainConfig, Trainer};
use seqsearch::population::{sample_population, Tissue};
use seqsearch::seq::Sequence;
use seqsearch::{rad_to_deg, Experiment};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const DESK_POPULATION: usize = 10_000;
pub const DESK_BATCH: usize = 500;
pub const DESK_EPOCHS: usize = 200;
pub const FULL_POPULATION: usize = 100_000;
pub const FULL_BATCH: usize = 1_000;
pub const FULL_EPOCHS: usize = 1_000;

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Experiment: e1, e2, e2-diff-t1, or e3.
    #[arg(long, default_value = "e1")]
    pub exp: String,
    /// TOML file whose keys override these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Campaign directory (default runs/<exp>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Campaign seed; run seeds default to seed, seed+1, ...
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of runs.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Explicit comma separated run seeds; wins over --seed/--seeds.
    #[arg(long)]
    pub seed_list: Option<String>,
    /// Full-scale presets (population 100000, batch 1000, epochs 1000)
    /// instead of the desk-scale 10000/500/200.
    #[arg(long)]
    pub full: bool,
    /// Population size override.
    #[arg(long)]
    pub population: Option<usize>,
    /// Batch size override.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Epoch count override.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD step for pulse parameters.
    #[arg(long)]
    pub lr_weights: Option<f64>,
    /// Adam step for architecture parameters.
    #[arg(long)]
    pub lr_alpha: Option<f64>,
    /// RF count penalty weight override.
    #[arg(long)]
    pub lambda_count: Option<f64>,
    /// RF energy penalty weight override.
    #[arg(long)]
    pub lambda_energy: Option<f64>,
    /// GM/WM contrast weight override.
    #[arg(long)]
    pub lambda_contrast: Option<f64>,
    /// CSF nulling weight override.
    #[arg(long)]
    pub lambda_null: Option<f64>,
    /// Robustness map side (n x n over the dB0 x B1 ranges).
    #[arg(long, default_value_t = 11)]
    pub robustness: usize,
    /// Checkpoint period in epochs; 0 disables. A run whose directory holds
    /// a checkpoint resumes from it.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Worker threads for the campaign (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOverrides {
    pub exp: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub seed_list: Option<String>,
    pub full: Option<bool>,
    pub population: Option<usize>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_weights: Option<f64>,
    pub lr_alpha: Option<f64>,
    pub lambda_count: Option<f64>,
    pub lambda_energy: Option<f64>,
    pub lambda_contrast: Option<f64>,
    pub lambda_null: Option<f64>,
    pub robustness: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub threads: Option<usize>,
}

impl SearchArgs {
    fn apply(&mut self, o: SearchOverrides) {
        if let Some(v) = o.exp {
            self.exp = v;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.seeds {
            self.seeds = v;
        }
        if o.seed_list.is_some() {
            self.seed_list = o.seed_list;
        }
        if let Some(v) = o.full {
            self.full = v;
        }
        self.population = o.population.or(self.population);
        self.batch = o.batch.or(self.batch);
        self.epochs = o.epochs.or(self.epochs);
        self.lr_weights = o.lr_weights.or(self.lr_weights);
        self.lr_alpha = o.lr_alpha.or(self.lr_alpha);
        self.lambda_count = o.lambda_count.or(self.lambda_count);
        self.lambda_energy = o.lambda_energy.or(self.lambda_energy);
        self.lambda_contrast = o.lambda_contrast.or(self.lambda_contrast);
        self.lambda_null = o.lambda_null.or(self.lambda_null);
        if let Some(v) = o.robustness {
            self.robustness = v;
        }
        if let Some(v) = o.checkpoint_every {
            self.checkpoint_every = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
    }
}

/// Fully resolved campaign configuration shared by the worker threads.
struct Campaign {
    exp: Experiment,
    weights: LossWeights,
    population: usize,
    batch: usize,
    epochs: usize,
    lr_weights: f64,
    lr_alpha: f64,
    robustness: usize,
    checkpoint_every: usize,
}

pub fn run(mut args: SearchArgs) -> anyhow::Result<()> {
    if let Some(path) = args.config.take() {
        args.apply(config::load::<SearchOverrides>(&path)?);
    }
    let exp = Experiment::parse(&args.exp)?;
    let (scale, pop_default, batch_default, epochs_default) = if args.full {
        ("full", FULL_POPULATION, FULL_BATCH, FULL_EPOCHS)
    } else {
        ("desk", DESK_POPULATION, DESK_BATCH, DESK_EPOCHS)
    };
    let campaign = Campaign {
        exp,
        weights: crate::weights_with_overrides(
            exp,
            args.lambda_count,
            args.lambda_energy,
            args.lambda_contrast,
            args.lambda_null,
        ),
        population: args.population.unwrap_or(pop_default),
        batch: args.batch.unwrap_or(batch_default),
        epochs: args.epochs.unwrap_or(epochs_default),
        lr_weights: args.lr_weights.unwrap_or(0.01),
        lr_alpha: args.lr_alpha.unwrap_or(0.001),
        robustness: args.robustness,
        checkpoint_every: args.checkpoint_every,
    };
    if campaign.robustness < 2 {
        bail!("robustness map needs at least 2 samples per axis");
    }

    let run_seeds: Vec<u64> = match &args.seed_list {
        Some(list) => config::parse_seed_list(list)?,
        None => (0..args.seeds as u64).map(|i| args.seed + i).collect(),
    };
    if run_seeds.is_empty() {
        bail!("no run seeds requested");
    }
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(exp.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    println!(
        "campaign: {} x {} runs, population {}, batch {}, epochs {} ({scale} scale)",
        exp.name(),
        run_seeds.len(),
        campaign.population,
        campaign.batch,
        campaign.epochs
    );

    let statuses: Vec<Mutex<Option<String>>> =
        run_seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = match args.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(run_seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= run_seeds.len() {
                    break;
                }
                let seed = run_seeds[i];
                let dir = out.join(format!("run_{seed}"));
                let status = match run_one(&campaign, seed, &dir) {
                    Ok(metrics) => {
                        println!(
                            "run_{seed}: ok  loss {:.6}  {} rf  {}",
                            metrics.eval_loss.total, metrics.n_rf, metrics.category
                        );
                        "ok".to_string()
                    }
                    Err(err) => {
                        println!("run_{seed}: failed: {err:#}");
                        format!("failed: {err:#}")
                    }
                };
                *statuses[i].lock().unwrap() = Some(status);
            });
        }
    });

    let runs: Vec<RunStatus> = run_seeds
        .iter()
        .zip(&statuses)
        .map(|(&seed, status)| RunStatus {
            seed,
            dir: format!("run_{seed}"),
            status: status.lock().unwrap().take().unwrap_or_default(),
        })
        .collect();
    let failed = runs.iter().filter(|r| r.status != "ok").count();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: exp.name().to_string(),
        scale: scale.to_string(),
        campaign_seed: args.seed,
        population: campaign.population,
        batch: campaign.batch,
        epochs: campaign.epochs,
        lr_weights: campaign.lr_weights,
        lr_alpha: campaign.lr_alpha,
        weights: campaign.weights.clone(),
        robustness_grid: campaign.robustness,
        checkpoint_every: campaign.checkpoint_every,
        runs,
    };
    artifacts::write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "manifest: {} ({} ok, {} failed)",
        out.join("manifest.json").display(),
        run_seeds.len() - failed,
        failed
    );
    Ok(())
}

/// One seeded search: train, discretize, evaluate, write artifacts.
fn run_one(campaign: &Campaign, run_seed: u64, dir: &Path) -> anyhow::Result<RunMetrics> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut split = ChaCha8Rng::seed_from_u64(run_seed);
    let pop_seed = split.next_u64();
    let trainer_seed = split.next_u64();

    let population = sample_population(campaign.population, pop_seed, &campaign.exp.table())?;
    let cfg = TrainConfig {
        epochs: campaign.epochs,
        batch_size: campaign.batch,
        lr_weights: campaign.lr_weights,
        lr_alpha: campaign.lr_alpha,
        weights: campaign.weights.clone(),
    };

    let checkpoint_path = dir.join("checkpoint.json");
    let (mut trainer, mut history) = if checkpoint_path.exists() {
        let ck: Checkpoint = artifacts::read_json(&checkpoint_path)?;
        (ck.trainer, ck.history)
    } else {
        (Trainer::new(trainer_seed, campaign.lr_alpha), Vec::new())
    };
    while trainer.epoch < campaign.epochs {
        let remaining = campaign.epochs - trainer.epoch;
        let chunk = match campaign.checkpoint_every {
            0 => remaining,
            k => k.min(remaining),
        };
        trainer.train(&population, &cfg, chunk, &mut history)?;
        if campaign.checkpoint_every > 0 {
            let ck = Checkpoint {
                trainer: trainer.clone(),
                history: history.clone(),
            };
            artifacts::write_json(&checkpoint_path, &ck)?;
        }
    }

    let seq = trainer.space.discretize()?;
    std::fs::write(dir.join("sequence.seq"), seq.serialize())?;
    artifacts::write_history(&dir.join("history.csv"), &history)?;
    let metrics = evaluate(campaign, run_seed, pop_seed, trainer_seed, &seq, &population)?;
    write_maps(campaign, &seq, dir)?;
    artifacts::write_json(&dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

fn evaluate(
    campaign: &Campaign,
    run_seed: u64,
    pop_seed: u64,
    trainer_seed: u64,
    seq: &Sequence,
    population: &seqsearch::population::VoxelBatch,
) -> anyhow::Result<RunMetrics> {
    let signals = simulate(seq, population)?;
    let (eval_loss, _) = composite_loss(&signals, population, &campaign.weights, seq, None)?;
    let table = campaign.exp.table();
    let mut nominal_abs = [0.0; 3];
    for (i, tissue) in Tissue::ALL.iter().enumerate() {
        nominal_abs[i] = simulate_voxel(seq, &table.nominal(*tissue)).norm();
    }
    let category = classify(&standardize(seq)?, campaign.exp);
    let t = timings(seq);
    Ok(RunMetrics {
        experiment: campaign.exp.name().to_string(),
        run_seed,
        pop_seed,
        trainer_seed,
        epochs: campaign.epochs,
        category: category.name().to_string(),
        n_rf: seq.rf_count(),
        flips_deg: seq.flips().iter().map(|&f| rad_to_deg(f)).collect(),
        phases_deg: seq.phases().iter().map(|&p| rad_to_deg(p)).collect(),
        duration_ms: seq.duration_ms(),
        te_ms: t.te_ms,
        ti_ms: t.ti_ms,
        relative_rf_energy_pct: relative_rf_energy(seq),
        nominal_abs,
        eval_loss,
    })
}

fn write_maps(campaign: &Campaign, seq: &Sequence, dir: &Path) -> anyhow::Result<()> {
    let table = campaign.exp.table();
    let n = campaign.robustness;
    let mut maps = Vec::new();
    for tissue in Tissue::ALL {
        maps.push((tissue.name(), robustness_map(seq, tissue, &table, n, n)?));
    }
    artifacts::write_robustness(&dir.join("robustness.csv"), &maps)
}

/// Frozen-structure refinement helper shared with the acceptance tests:
/// seeds, trains, and returns the refined sequence plus its history.
pub fn refine_frozen(
    seq: &Sequence,
    exp: Experiment,
    population_n: usize,
    pop_seed: u64,
    cfg: &TrainConfig,
    train_seed: u64,
) -> anyhow::Result<(Sequence, Vec<EpochRecord>)> {
    let population = sample_population(population_n, pop_seed, &exp.table())?;
    let mut history = Vec::new();
    let refined = seqsearch::optim::train_frozen(seq, &population, cfg, train_seed, &mut history)?;
    Ok((refined, history))
}
