//! Command line front end: multi-seed search campaigns, the exhaustive
//! two-RF grid baseline, campaign reports, one-off sequence simulation, and
//! the finite-difference gradient suite.
//!
//! Every subcommand accepts `--config FILE`; keys in the TOML file override
//! the matching flags, and flags cover whatever the file omits.

pub mod artifacts;
pub mod config;
pub mod gradcheck;
pub mod grid;
pub mod report;
pub mod search;
pub mod simulate;

use clap::{Parser, Subcommand};
use seqsearch::losses::LossWeights;
use seqsearch::Experiment;

#[derive(Debug, Parser)]
#[command(name = "seqsearch", version, about = "Automated MR pulse sequence design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a multi-seed gradient-based sequence search campaign.
    Search(search::SearchArgs),
    /// Exhaustive grid search over two-RF sequences.
    Grid(grid::GridArgs),
    /// Categorize campaign runs and score them against a grid optimum.
    Report(report::ReportArgs),
    /// Simulate a sequence file: signals, trajectory, robustness map.
    Simulate(simulate::SimulateArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search(args) => search::run(args),
        Command::Grid(args) => grid::run(args),
        Command::Report(args) => report::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Gradcheck(args) => gradcheck::run(args),
    }
}

/// Experiment defaults with the per-term lambda flags applied on top.
/// `null` moves only the CSF entry; the GM and WM nulling weights are not
/// part of any experiment definition.
pub fn weights_with_overrides(
    exp: Experiment,
    count: Option<f64>,
    energy: Option<f64>,
    contrast: Option<f64>,
    null: Option<f64>,
) -> LossWeights {
    let mut w = exp.weights();
    if let Some(v) = count {
        w.rf_count = v;
    }
    if let Some(v) = energy {
        w.rf_energy = v;
    }
    if let Some(v) = contrast {
        w.contrast = v;
    }
    if let Some(v) = null {
        w.null[2] = v;
    }
    w
}
