//! `report`: turn a campaign directory plus a grid optimum into the
//! occurrence tables. Everything is recomputed from `sequence.seq` and the
//! optimum file, so rerunning the report never changes its output.
//!
//! Outputs, for `--out DIR`:
//!
//! ```text
//! DIR/report.csv              per-category statistics
//! DIR/success.csv             per-run classification and success rule
//! DIR/summary.txt             the same, human readable
//! DIR/loss_curves.csv         stacked (run, epoch, total) from history.csv
//! DIR/trajectories/<cat>.csv  nominal-tissue trajectory of the best run
//! ```

use crate::artifacts::{read_history_totals, read_json, write_trajectory};
use crate::config;
use crate::grid::GridOptimum;
use anyhow::{bail, Context};
use clap::Args;
use seqsearch::bloch::{simulate, simulate_trajectory, simulate_voxel};
use seqsearch::categorize::{aggregate, classify, standardize, timings, Category, RunRecord};
use seqsearch::grid::success_threshold;
use seqsearch::losses::{composite_loss, relative_rf_energy};
use seqsearch::population::{sample_population, Tissue, VoxelBatch};
use seqsearch::seq::Sequence;
use seqsearch::Experiment;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Campaign directory holding run_<seed> subdirectories.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// optimum.json written by the grid subcommand.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// TOML file whose keys override these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default <runs>/report).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trajectory sample spacing in ms.
    #[arg(long, default_value_t = 0.5)]
    pub traj_dt: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOverrides {
    pub runs: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub traj_dt: Option<f64>,
}

impl ReportArgs {
    fn apply(&mut self, o: ReportOverrides) {
        if o.runs.is_some() {
            self.runs = o.runs;
        }
        if o.grid.is_some() {
            self.grid = o.grid;
        }
        if o.out.is_some() {
            self.out = o.out;
        }
        if let Some(v) = o.traj_dt {
            self.traj_dt = v;
        }
    }
}

/// One scored run; `record` is absent when the sequence file could not be
/// read, in which case `note` says why and the run is excluded from the
/// category statistics.
struct ScoredRun {
    dir_name: String,
    seed: Option<u64>,
    loss: f64,
    success: bool,
    te_ms: f64,
    ti_ms: f64,
    total_ms: f64,
    record: Option<RunRecord>,
    note: String,
}

pub fn run(mut args: ReportArgs) -> anyhow::Result<()> {
    if let Some(path) = args.config.take() {
        args.apply(config::load::<ReportOverrides>(&path)?);
    }
    let runs_dir = args.runs.context("--runs is required")?;
    let grid_path = args.grid.context("--grid is required")?;
    let optimum: GridOptimum = read_json(&grid_path)?;
    let exp = Experiment::parse(&optimum.experiment)?;
    let population = sample_population(optimum.population, optimum.pop_seed, &exp.table())?;

    let run_dirs = discover_runs(&runs_dir)?;
    if run_dirs.is_empty() {
        bail!("no run_* directories under {}", runs_dir.display());
    }
    let out = args.out.unwrap_or_else(|| runs_dir.join("report"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let scored: Vec<ScoredRun> = run_dirs
        .iter()
        .map(|dir| score_run(dir, exp, &population, &optimum))
        .collect();

    let records: Vec<RunRecord> = scored.iter().filter_map(|s| s.record.clone()).collect();
    if records.is_empty() {
        bail!("no readable sequences under {}", runs_dir.display());
    }
    let report = aggregate(&records)?;
    write_report_csv(&out.join("report.csv"), &report)?;
    write_success_csv(&out.join("success.csv"), &scored)?;
    write_loss_curves(&out.join("loss_curves.csv"), &runs_dir, &scored)?;
    write_trajectories(&out.join("trajectories"), &scored, exp, args.traj_dt)?;
    let summary = summary_text(&scored, &report, &optimum);
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("report: {}", out.display());
    Ok(())
}

/// run_<seed> directories sorted by seed so tables are stable regardless of
/// filesystem order.
fn discover_runs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("run_").and_then(|s| s.parse().ok()) {
            if entry.path().is_dir() {
                found.push((seed, entry.path()));
            }
        }
    }
    found.sort_by_key(|(seed, _)| *seed);
    Ok(found.into_iter().map(|(_, path)| path).collect())
}

fn score_run(
    dir: &Path,
    exp: Experiment,
    population: &VoxelBatch,
    optimum: &GridOptimum,
) -> ScoredRun {
    let dir_name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seed = dir_name.strip_prefix("run_").and_then(|s| s.parse().ok());
    let failed = |note: String| ScoredRun {
        dir_name: dir_name.clone(),
        seed,
        loss: f64::NAN,
        success: false,
        te_ms: 0.0,
        ti_ms: 0.0,
        total_ms: 0.0,
        record: None,
        note,
    };
    let text = match std::fs::read_to_string(dir.join("sequence.seq")) {
        Ok(text) => text,
        Err(err) => return failed(format!("no sequence: {err}")),
    };
    let seq = match Sequence::deserialize(&text) {
        Ok(seq) => seq,
        Err(err) => return failed(format!("bad sequence: {err}")),
    };
    let std_seq = match standardize(&seq) {
        Ok(s) => s,
        Err(err) => return failed(format!("bad sequence: {err}")),
    };
    let loss = match simulate(&seq, population)
        .and_then(|signals| composite_loss(&signals, population, &optimum.weights, &seq, None))
    {
        Ok((breakdown, _)) => breakdown.total,
        Err(err) => return failed(format!("evaluation failed: {err}")),
    };
    let table = exp.table();
    let mut nominal = [0.0; 3];
    for (i, tissue) in Tissue::ALL.iter().enumerate() {
        nominal[i] = simulate_voxel(&seq, &table.nominal(*tissue)).norm();
    }
    let t = timings(&seq);
    ScoredRun {
        dir_name,
        seed,
        loss,
        success: success_threshold(loss, optimum.best.loss),
        te_ms: t.te_ms,
        ti_ms: t.ti_ms,
        total_ms: t.total_ms,
        record: Some(RunRecord {
            label: classify(&std_seq, exp),
            seq,
            signals: nominal,
            relative_energy: relative_rf_energy(&std_seq.seq),
        }),
        note: String::new(),
    }
}

fn write_report_csv(
    path: &Path,
    report: &seqsearch::categorize::CategoryReport,
) -> anyhow::Result<()> {
    let join = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.1}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    let mut out = String::from(
        "category,count,occurrence_pct,n_rf,flips_mean_deg,flips_std_deg,\
         refocus_phase_mean_deg,refocus_phase_std_deg,te_mean_ms,te_std_ms,ti_mean_ms,ti_std_ms,\
         total_mean_ms,total_std_ms,gm_mean,gm_std,wm_mean,wm_std,csf_mean,csf_std,\
         energy_mean_pct,energy_std_pct\n",
    );
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label.name(),
            r.count,
            r.occurrence_pct,
            r.n_rf,
            join(&r.flips_mean_deg),
            join(&r.flips_std_deg),
            r.refocus_phase_mean_deg,
            r.refocus_phase_std_deg,
            r.te_mean_ms,
            r.te_std_ms,
            r.ti_mean_ms,
            r.ti_std_ms,
            r.total_mean_ms,
            r.total_std_ms,
            r.signals_mean[0],
            r.signals_std[0],
            r.signals_mean[1],
            r.signals_std[1],
            r.signals_mean[2],
            r.signals_std[2],
            r.energy_mean_pct,
            r.energy_std_pct
        )
        .expect("string write");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_success_csv(path: &Path, scored: &[ScoredRun]) -> anyhow::Result<()> {
    let mut out = String::from(
        "run,seed,category,loss,success,relative_rf_energy_pct,n_rf,te_ms,ti_ms,total_ms,\
         gm_abs,wm_abs,csf_abs,note\n",
    );
    for s in scored {
        let seed = s.seed.map(|v| v.to_string()).unwrap_or_default();
        match &s.record {
            Some(r) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},",
                s.dir_name,
                seed,
                r.label.name(),
                s.loss,
                s.success,
                r.relative_energy,
                r.seq.rf_count(),
                s.te_ms,
                s.ti_ms,
                s.total_ms,
                r.signals[0],
                r.signals[1],
                r.signals[2]
            )
            .expect("string write"),
            None => writeln!(out, "{},{seed},,,,,,,,,,,,{}", s.dir_name, s.note)
                .expect("string write"),
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_loss_curves(path: &Path, runs_dir: &Path, scored: &[ScoredRun]) -> anyhow::Result<()> {
    let mut out = String::from("run,epoch,total\n");
    for s in scored {
        let history = runs_dir.join(&s.dir_name).join("history.csv");
        if !history.exists() {
            continue;
        }
        for (epoch, total) in read_history_totals(&history)? {
            writeln!(out, "{},{},{}", s.dir_name, epoch, total).expect("string write");
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// The lowest-loss member of each category, simulated on the nominal
/// tissues for plotting.
fn write_trajectories(
    dir: &Path,
    scored: &[ScoredRun],
    exp: Experiment,
    traj_dt: f64,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let table = exp.table();
    let nominal = VoxelBatch {
        voxels: Tissue::ALL.iter().map(|&t| table.nominal(t)).collect(),
        seed: 0,
    };
    for category in [
        Category::TwoRfHahn,
        Category::ThreeRfHahn,
        Category::HahnPhase180,
        Category::HahnPhase0,
        Category::OtherSpinEcho,
        Category::IrSe,
        Category::IrGre,
        Category::Others,
    ] {
        let best = scored
            .iter()
            .filter(|s| {
                s.record.as_ref().map(|r| r.label) == Some(category) && s.loss.is_finite()
            })
            .min_by(|a, b| a.loss.total_cmp(&b.loss));
        if let Some(s) = best {
            let seq = &s.record.as_ref().expect("filtered on record").seq;
            let points = simulate_trajectory(seq, &nominal, traj_dt)?;
            write_trajectory(&dir.join(format!("{}.csv", category.name())), &points)?;
        }
    }
    Ok(())
}

fn summary_text(
    scored: &[ScoredRun],
    report: &seqsearch::categorize::CategoryReport,
    optimum: &GridOptimum,
) -> String {
    let mut out = String::new();
    let failed = scored.iter().filter(|s| s.record.is_none()).count();
    let succeeded = scored.iter().filter(|s| s.success).count();
    writeln!(
        out,
        "{} runs ({} unreadable), {} within 5% of the grid optimum",
        scored.len(),
        failed,
        succeeded
    )
    .expect("string write");
    let b = &optimum.best;
    writeln!(
        out,
        "grid optimum: ({}, {}) deg, phi2 {} deg, dt ({}, {}) ms, loss {:.6}",
        b.theta1_deg, b.theta2_deg, b.phi2_deg, b.dt1_ms, b.dt2_ms, b.loss
    )
    .expect("string write");
    let c = &optimum.conventional;
    writeln!(out, "conventional reference loss: {:.6}", c.loss).expect("string write");
    writeln!(
        out,
        "\n{:<14} {:>5} {:>6}  {:<18} {:>8} {:>8} {:>9}",
        "category", "count", "pct", "flips (deg)", "te (ms)", "ti (ms)", "energy %"
    )
    .expect("string write");
    for r in &report.rows {
        let flips = r
            .flips_mean_deg
            .iter()
            .map(|f| format!("{f:.1}"))
            .collect::<Vec<_>>()
            .join("-");
        writeln!(
            out,
            "{:<14} {:>5} {:>6.1}  {:<18} {:>8.1} {:>8.1} {:>9.1}",
            r.label.name(),
            r.count,
            r.occurrence_pct,
            flips,
            r.te_mean_ms,
            r.ti_mean_ms,
            r.energy_mean_pct
        )
        .expect("string write");
    }
    out
}
