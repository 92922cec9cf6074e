//! Exhaustive two-RF reference search over (theta1, theta2, phi2, dt1, dt2)
//! with phi1 fixed at 0.
//!
//! The sweep factorizes the simulation: the state after RF1 and the first
//! idle is cached per voxel and reused for every (theta2, phi2, dt2), and the
//! second idle's per-spin trig and relaxation factors are memoized per
//! (voxel, dt2). Every reused quantity is produced by the same kernels the
//! sequential simulator calls with the same inputs, so a tuple's loss equals
//! `bloch::simulate` + `losses::composite_loss` on the equivalent sequence
//! bit for bit; a test asserts the equality and the top-of-table re-scoring
//! below asserts it on every reported row.

use crate::bloch::{apply_rf, evolve, evolve_spin, matvec, precession_angle, rf_matrix, SpinState};
use crate::losses::{composite_loss, relative_rf_energy, LossBreakdown, LossWeights};
use crate::population::{spin_grid, Tissue, VoxelBatch, N_SPINS};
use crate::seq::Sequence;
use crate::{deg_to_rad, Error, Experiment, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Refuse grids above this many tuple-voxel evaluations unless forced.
pub const GRID_BUDGET: f64 = 5e8;

/// Inclusive sweep range. Units follow the field it is used for.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub const fn new(start: f64, stop: f64, step: f64) -> Self {
        Axis { start, stop, step }
    }

    /// Enumerated values start, start+step, ... through stop. The count is
    /// rounded robustly so representation noise in (stop-start)/step never
    /// drops the endpoint; a fractional final step stays inside the range.
    pub fn values(&self) -> Vec<f64> {
        assert!(self.step > 0.0, "axis step must be positive");
        assert!(self.stop >= self.start, "axis stop must not precede start");
        let n = ((self.stop - self.start) / self.step * (1.0 + 1e-12) + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Sweep ranges per Table 4 conventions: flips and phase in degrees, idle
/// times in milliseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub theta1_deg: Axis,
    pub theta2_deg: Axis,
    pub phi2_deg: Axis,
    pub dt1_ms: Axis,
    pub dt2_ms: Axis,
}

impl GridSpec {
    /// Published full-resolution ranges for the experiment.
    pub fn full(exp: Experiment) -> Self {
        match exp {
            Experiment::E1 => GridSpec {
                theta1_deg: Axis::new(85.0, 95.0, 1.0),
                theta2_deg: Axis::new(170.0, 180.0, 1.0),
                phi2_deg: Axis::new(0.0, 180.0, 1.0),
                dt1_ms: Axis::new(6.2, 7.2, 0.1),
                dt2_ms: Axis::new(6.2, 7.2, 0.1),
            },
            Experiment::E2 | Experiment::E2DiffT1 => GridSpec {
                theta1_deg: Axis::new(85.0, 95.0, 1.0),
                theta2_deg: Axis::new(170.0, 180.0, 1.0),
                phi2_deg: Axis::new(0.0, 180.0, 1.0),
                dt1_ms: Axis::new(15.0, 25.0, 0.5),
                dt2_ms: Axis::new(15.0, 25.0, 0.5),
            },
            Experiment::E3 => GridSpec {
                theta1_deg: Axis::new(170.0, 180.0, 1.0),
                theta2_deg: Axis::new(85.0, 95.0, 1.0),
                phi2_deg: Axis::new(0.0, 180.0, 5.0),
                dt1_ms: Axis::new(2780.0, 3800.0, 10.0),
                dt2_ms: Axis::new(6.2, 11.2, 1.0),
            },
        }
    }

    /// Step-coarsened ranges sized for a workstation run.
    pub fn desk(exp: Experiment) -> Self {
        match exp {
            Experiment::E1 => GridSpec {
                phi2_deg: Axis::new(0.0, 180.0, 5.0),
                dt1_ms: Axis::new(6.2, 7.2, 0.5),
                dt2_ms: Axis::new(6.2, 7.2, 0.5),
                ..GridSpec::full(exp)
            },
            Experiment::E2 | Experiment::E2DiffT1 => GridSpec {
                phi2_deg: Axis::new(0.0, 180.0, 5.0),
                dt1_ms: Axis::new(15.0, 25.0, 2.5),
                dt2_ms: Axis::new(15.0, 25.0, 2.5),
                ..GridSpec::full(exp)
            },
            Experiment::E3 => GridSpec {
                phi2_deg: Axis::new(0.0, 180.0, 15.0),
                dt1_ms: Axis::new(2780.0, 3800.0, 50.0),
                dt2_ms: Axis::new(6.2, 11.2, 1.0),
                ..GridSpec::full(exp)
            },
        }
    }

    /// Number of enumerated tuples.
    pub fn count(&self) -> usize {
        self.theta1_deg.len()
            * self.theta2_deg.len()
            * self.phi2_deg.len()
            * self.dt1_ms.len()
            * self.dt2_ms.len()
    }

    /// The concrete sequence a tuple denotes: RF(theta1, 0) - dt1 -
    /// RF(theta2, phi2) - dt2 - readout.
    pub fn sequence(theta1_deg: f64, theta2_deg: f64, phi2_deg: f64, dt1_ms: f64, dt2_ms: f64) -> Sequence {
        Sequence::new(vec![
            Sequence::rf(deg_to_rad(theta1_deg), 0.0, dt1_ms),
            Sequence::rf(deg_to_rad(theta2_deg), deg_to_rad(phi2_deg), dt2_ms),
        ])
    }
}

/// One scored tuple. `loss` is the composite total; the breakdown and the
/// per-tissue mean |s| come from re-scoring through the sequential simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub theta1_deg: f64,
    pub theta2_deg: f64,
    pub phi2_deg: f64,
    pub dt1_ms: f64,
    pub dt2_ms: f64,
    pub loss: f64,
    pub breakdown: LossBreakdown,
    /// Mean |s| per tissue in Tissue::ALL order.
    pub mean_abs: [f64; 3],
    pub relative_rf_energy: f64,
}

impl GridEntry {
    pub fn tuple(&self) -> [f64; 5] {
        [
            self.theta1_deg,
            self.theta2_deg,
            self.phi2_deg,
            self.dt1_ms,
            self.dt2_ms,
        ]
    }

    pub fn sequence(&self) -> Sequence {
        GridSpec::sequence(
            self.theta1_deg,
            self.theta2_deg,
            self.phi2_deg,
            self.dt1_ms,
            self.dt2_ms,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResult {
    pub spec: GridSpec,
    pub count: usize,
    pub n_voxels: usize,
    /// Ascending by loss; ties broken toward the lexicographically smaller
    /// tuple. `top[0]` is the global optimum.
    pub top: Vec<GridEntry>,
}

impl GridResult {
    pub fn best(&self) -> &GridEntry {
        &self.top[0]
    }
}

/// loss_design within 5% of loss_opt, with the margin on |loss_opt| so the
/// rule stays meaningful for negative (contrast-dominated) losses.
pub fn success_threshold(loss_design: f64, loss_opt: f64) -> bool {
    loss_design <= loss_opt + 0.05 * loss_opt.abs()
}

/// Candidate ordering: loss ascending, lexicographic tuple on ties.
fn better(loss: f64, tuple: &[f64; 5], than_loss: f64, than_tuple: &[f64; 5]) -> bool {
    if loss != than_loss {
        return loss < than_loss;
    }
    for (a, b) in tuple.iter().zip(than_tuple) {
        if a != b {
            return a < b;
        }
    }
    false
}

struct Dt2Memo {
    cb: [f64; N_SPINS],
    sb: [f64; N_SPINS],
    e2: f64,
    e1: f64,
}

/// Exhaustively score every tuple of `spec` on `population` and return the
/// `top_k` best. Refuses oversized sweeps unless `force` is set.
pub fn run_grid(
    spec: &GridSpec,
    population: &VoxelBatch,
    weights: &LossWeights,
    top_k: usize,
    force: bool,
) -> Result<GridResult> {
    let top_k = top_k.max(1);
    let t1s = spec.theta1_deg.values();
    let t2s = spec.theta2_deg.values();
    let p2s = spec.phi2_deg.values();
    let d1s = spec.dt1_ms.values();
    let d2s = spec.dt2_ms.values();
    let count = t1s.len() * t2s.len() * p2s.len() * d1s.len() * d2s.len();
    let nv = population.voxels.len();
    if nv == 0 {
        return Err(Error::EmptyBatch);
    }
    let estimate = count as f64 * nv as f64;
    if estimate > GRID_BUDGET && !force {
        return Err(Error::GridBudget {
            estimate: format!(
                "{count} tuples x {nv} voxels = {estimate:.2e} evaluations (budget {GRID_BUDGET:.0e})"
            ),
        });
    }

    let offsets: Vec<[f64; N_SPINS]> = population
        .voxels
        .iter()
        .map(|v| spin_grid(v.t2_prime_ms, v.spread_hz).offsets_hz)
        .collect();
    // Second-idle factors per (voxel, dt2), identical expressions to evolve().
    let memo: Vec<Vec<Dt2Memo>> = population
        .voxels
        .iter()
        .zip(&offsets)
        .map(|(v, off)| {
            d2s.iter()
                .map(|&dt2| {
                    let mut m = Dt2Memo {
                        cb: [0.0; N_SPINS],
                        sb: [0.0; N_SPINS],
                        e2: (-dt2 / v.t2_ms).exp(),
                        e1: (-dt2 / v.t1_ms).exp(),
                    };
                    for i in 0..N_SPINS {
                        let beta = precession_angle(v.db0_hz + off[i], dt2);
                        let (sb, cb) = beta.sin_cos();
                        m.cb[i] = cb;
                        m.sb[i] = sb;
                    }
                    m
                })
                .collect()
        })
        .collect();

    let mut best: Option<(f64, [f64; 5])> = None;
    // (loss, tuple) sorted ascending with the same ordering as `better`.
    let mut top: Vec<(f64, [f64; 5])> = Vec::with_capacity(top_k + 1);
    let mut prefix: Vec<SpinState> = Vec::with_capacity(nv);
    let mut signals: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); nv]; d2s.len()];

    for &th1 in &t1s {
        for &dt1 in &d1s {
            prefix.clear();
            for (v, vox) in population.voxels.iter().enumerate() {
                let mut st = SpinState::equilibrium(vox.m0);
                apply_rf(&mut st, deg_to_rad(th1), 0.0, vox.b1);
                evolve(&mut st, dt1, vox, &offsets[v]);
                prefix.push(st);
            }
            for &th2 in &t2s {
                for &ph2 in &p2s {
                    let ph2_rad = deg_to_rad(ph2);
                    for (v, vox) in population.voxels.iter().enumerate() {
                        let r = rf_matrix(vox.b1 * deg_to_rad(th2), ph2_rad);
                        let pre = &prefix[v];
                        let mut px = [0.0; N_SPINS];
                        let mut py = [0.0; N_SPINS];
                        for i in 0..N_SPINS {
                            let (x, y, _) = matvec(&r, pre.mx[i], pre.my[i], pre.mz[i]);
                            px[i] = x;
                            py[i] = y;
                        }
                        for (k, m) in memo[v].iter().enumerate() {
                            // evolve() then readout(): the transverse update
                            // and the ascending-index sums, fused. Mz is
                            // never read after the last pulse, so it is not
                            // carried.
                            let mut re = 0.0;
                            let mut im = 0.0;
                            for i in 0..N_SPINS {
                                let (x, y, _) =
                                    evolve_spin(px[i], py[i], 0.0, m.cb[i], m.sb[i], m.e2, m.e1, 0.0);
                                re += x;
                                im += y;
                            }
                            signals[k][v] =
                                Complex64::new(re / N_SPINS as f64, im / N_SPINS as f64);
                        }
                    }
                    for (k, &dt2) in d2s.iter().enumerate() {
                        let seq = GridSpec::sequence(th1, th2, ph2, dt1, dt2);
                        let (bd, _) =
                            composite_loss(&signals[k], population, weights, &seq, None)?;
                        let tuple = [th1, th2, ph2, dt1, dt2];
                        score(&mut best, &mut top, top_k, bd.total, tuple);
                    }
                }
            }
        }
    }

    // Re-score the kept tuples through the sequential simulator; the totals
    // must match the sweep bit for bit.
    let entries = top
        .iter()
        .map(|&(loss, t)| {
            let seq = GridSpec::sequence(t[0], t[1], t[2], t[3], t[4]);
            let sigs = crate::bloch::simulate(&seq, population)?;
            let (bd, _) = composite_loss(&sigs, population, weights, &seq, None)?;
            assert_eq!(
                bd.total.to_bits(),
                loss.to_bits(),
                "grid fast path diverged from the simulator"
            );
            let mut mean_abs = [0.0; 3];
            for (t, tis) in Tissue::ALL.iter().enumerate() {
                let idx = population.tissue_indices(*tis);
                if !idx.is_empty() {
                    mean_abs[t] =
                        idx.iter().map(|&v| sigs[v].norm()).sum::<f64>() / idx.len() as f64;
                }
            }
            Ok(GridEntry {
                theta1_deg: t[0],
                theta2_deg: t[1],
                phi2_deg: t[2],
                dt1_ms: t[3],
                dt2_ms: t[4],
                loss,
                breakdown: bd,
                mean_abs,
                relative_rf_energy: relative_rf_energy(&seq),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(best.map_or(true, |(l, t)| {
        l == entries[0].loss && t == entries[0].tuple()
    }));

    Ok(GridResult {
        spec: spec.clone(),
        count,
        n_voxels: nv,
        top: entries,
    })
}

fn score(
    best: &mut Option<(f64, [f64; 5])>,
    top: &mut Vec<(f64, [f64; 5])>,
    top_k: usize,
    loss: f64,
    tuple: [f64; 5],
) {
    match best {
        Some((bl, bt)) if !better(loss, &tuple, *bl, bt) => {}
        _ => *best = Some((loss, tuple)),
    }
    if top.len() == top_k {
        let (wl, wt) = top[top_k - 1];
        if !better(loss, &tuple, wl, &wt) {
            return;
        }
    }
    let pos = top.partition_point(|(l, t)| better(*l, t, loss, &tuple));
    top.insert(pos, (loss, tuple));
    top.truncate(top_k);
}
