//! Finite-difference verification of the reverse-mode gradients.
//!
//! The checker perturbs each trainable parameter of a sequence (flips and
//! phases directly, idle times in log space) and compares the central
//! difference of the composite loss against the analytic gradient. Idle
//! steps are taken in rho = ln(dt + eps) because that is the trained
//! parameterization.

use crate::bloch::{simulate, simulate_with_grads, OpParams, ParamLayout, LOG_TIME_EPS};
use crate::losses::{composite_loss, LossWeights};
use crate::population::VoxelBatch;
use crate::seq::{Op, Sequence, RF_IDLE_FLOOR_MS};
use crate::Result;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

/// Central-difference step for flips and phases, radians.
pub const H_ANGLE: f64 = 1e-5;
/// Central-difference step for log-idle parameters. Truncation error grows
/// like (offset * dt)^2 * h^2, so long waits on off-resonant spins need a
/// small step; 1e-5 keeps them accurate while staying well above roundoff.
pub const H_RHO: f64 = 1e-5;

/// One parameter's comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckEntry {
    /// Op index and parameter kind, e.g. "op2.theta".
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// |a - n| scaled by the larger magnitude; tiny pairs compare absolutely so
/// a zero gradient against FD noise does not dominate the report.
fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

fn loss_of(seq: &Sequence, batch: &VoxelBatch, weights: &LossWeights) -> Result<f64> {
    let signals = simulate(seq, batch)?;
    Ok(composite_loss(&signals, batch, weights, seq, None)?.0.total)
}

/// Sequence with one parameter shifted. Idle shifts move rho.
fn perturbed(seq: &Sequence, op_idx: usize, field: usize, h: f64) -> Sequence {
    let mut s = seq.clone();
    match &mut s.ops[op_idx] {
        Op::Rf(r) => match field {
            0 => r.flip += h,
            1 => r.phase += h,
            _ => r.idle_after = ((r.idle_after + LOG_TIME_EPS).ln() + h).exp() - LOG_TIME_EPS,
        },
        Op::Wait(w) => {
            w.idle = ((w.idle + LOG_TIME_EPS).ln() + h).exp() - LOG_TIME_EPS;
        }
    }
    s
}

/// Compare every analytic parameter gradient of `seq` against central
/// finite differences of the composite loss over `batch`.
pub fn check_sequence(
    seq: &Sequence,
    batch: &VoxelBatch,
    weights: &LossWeights,
) -> Result<GradCheckReport> {
    let layout = ParamLayout::of(seq);
    let signals = simulate(seq, batch)?;
    let (_, adj) = composite_loss(&signals, batch, weights, seq, None)?;
    let grads = simulate_with_grads(seq, batch, &adj)?;

    let mut entries = Vec::new();
    for (op_idx, op_params) in layout.per_op.iter().enumerate() {
        let fields: Vec<(usize, &str, usize, f64)> = match op_params {
            OpParams::Rf { theta, phi, rho } => vec![
                (*theta, "theta", 0, H_ANGLE),
                (*phi, "phi", 1, H_ANGLE),
                (*rho, "rho", 2, H_RHO),
            ],
            OpParams::Wait { rho } => vec![(*rho, "rho", 2, H_RHO)],
        };
        for (idx, name, field, h) in fields {
            let mut analytic = grads.params[idx];
            if name == "theta" {
                // The eval-mode energy penalty differentiates directly.
                if let Op::Rf(r) = &seq.ops[op_idx] {
                    analytic += 2.0 * weights.rf_energy * r.flip;
                }
            }
            let up = loss_of(&perturbed(seq, op_idx, field, h), batch, weights)?;
            let down = loss_of(&perturbed(seq, op_idx, field, -h), batch, weights)?;
            let numeric = (up - down) / (2.0 * h);
            entries.push(GradCheckEntry {
                param: format!("op{op_idx}.{name}"),
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
            });
        }
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_err,
    })
}

/// Random valid sequence for fuzzing: 1-5 RF pulses with waits mixed in,
/// flips away from the pruning threshold, idles comfortably above their
/// floors so central differences stay feasible.
pub fn random_sequence<R: Rng>(rng: &mut R) -> Sequence {
    let n_rf = rng.gen_range(1..=5);
    let flip = Uniform::new(10.0f64, 180.0);
    let phase = Uniform::new(-180.0f64, 180.0);
    let rf_idle = Uniform::new(RF_IDLE_FLOOR_MS + 0.5, 30.0);
    let wait_idle = Uniform::new(0.5f64, 200.0);
    let mut ops = Vec::new();
    for k in 0..n_rf {
        ops.push(Sequence::rf(
            crate::deg_to_rad(flip.sample(rng)),
            crate::deg_to_rad(phase.sample(rng)),
            rf_idle.sample(rng),
        ));
        if k + 1 < n_rf && rng.gen_bool(0.4) {
            ops.push(Sequence::wait(wait_idle.sample(rng)));
        }
    }
    Sequence::new(ops)
}
