//! Differentiable Bloch simulation and gradient-based search over MR pulse
//! sequences, with a grid-search baseline and a categorization pipeline for
//! multi-seed design campaigns.
//!
//! The crate is organized around a small set of value types:
//!
//! * [`seq::Sequence`]: an ordered list of RF and wait operations, the design
//!   artifact produced by every search path.
//! * [`population::VoxelBatch`]: synthetic voxels (tissue plus imaging
//!   properties) with a deterministic 256-spin intra-voxel frequency grid.
//! * [`bloch`]: forward simulation of a sequence over a batch and exact
//!   reverse-mode gradients with respect to every trainable parameter.
//! * [`nas::SearchSpace`]: the layered candidate-operation space whose
//!   architecture parameters are trained jointly with the operation weights.
//! * [`grid`]: exhaustive two-RF reference search and the success threshold.
//! * [`categorize`]: structural classification and cross-seed statistics.

pub mod bloch;
pub mod categorize;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod nas;
pub mod optim;
pub mod population;
pub mod seq;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("pruning would remove the only RF pulse")]
    EmptySequence,
    #[error("invalid sequence: {0:?}")]
    InvalidSequence(Vec<String>),
    #[error("population must contain at least 3 voxels to cover all tissues, got {0}")]
    PopulationTooSmall(usize),
    #[error("empty voxel batch")]
    EmptyBatch,
    #[error("loss term requires tissue {0} but the batch has none")]
    MissingTissue(&'static str),
    #[error("contrast loss requires equal GM and WM counts, got {gm} and {wm}")]
    UnpairedContrast { gm: usize, wm: usize },
    #[error("grid evaluation budget exceeded ({estimate}); pass force to run anyway")]
    GridBudget { estimate: String },
    #[error("run aborted at epoch {0} after repeated non-finite losses")]
    NonFiniteLoss(usize),
    #[error("sequence has no RF pulse")]
    NoRfPulse,
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// The three optimization experiments, which fix the loss weighting and the
/// tissue population. E2 by default equalizes GM and WM T1 so contrast can
/// only come from T2; the DiffT1 variant keeps the literature T1 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Experiment {
    E1,
    E2,
    E2DiffT1,
    E3,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(Experiment::E1),
            "e2" => Ok(Experiment::E2),
            "e2-diff-t1" | "e2difft1" => Ok(Experiment::E2DiffT1),
            "e3" => Ok(Experiment::E3),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?}; expected e1, e2, e2-diff-t1, or e3"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::E1 => "e1",
            Experiment::E2 => "e2",
            Experiment::E2DiffT1 => "e2-diff-t1",
            Experiment::E3 => "e3",
        }
    }

    /// Default loss weighting for the experiment.
    pub fn weights(&self) -> losses::LossWeights {
        match self {
            Experiment::E1 => losses::LossWeights::e1(),
            Experiment::E2 | Experiment::E2DiffT1 => losses::LossWeights::e2(30.0),
            Experiment::E3 => losses::LossWeights::e3(0.25),
        }
    }

    /// Tissue parameter table for the experiment's population.
    pub fn table(&self) -> population::TissueTable {
        match self {
            Experiment::E2 => population::TissueTable::same_t1(),
            _ => population::TissueTable::default(),
        }
    }
}

/// Degrees to radians.
pub fn deg_to_rad(d: f64) -> f64 {
    d * (std::f64::consts::PI / 180.0)
}

/// Radians to degrees.
pub fn rad_to_deg(r: f64) -> f64 {
    // Dividing by the same constant deg_to_rad multiplies by keeps the two
    // conversions inverses of each other to within one rounding.
    r / (std::f64::consts::PI / 180.0)
}
