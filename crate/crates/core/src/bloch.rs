//! Differentiable Bloch simulation.
//!
//! RF pulses are instantaneous rotations: M <- Rz(phi) Rx(b1 theta) Rz(-phi) M
//! with a left-handed rotation about +x at phase 0 (a 90 degree pulse takes
//! +z to -y). Idle periods apply T2 decay and off-resonance precession to the
//! transverse components and T1 recovery to Mz; the reversible T2' dephasing
//! enters only through the static per-spin offsets of the voxel's spin grid.
//!
//! `simulate` produces the complex readout signal per voxel (mean transverse
//! magnetization over the 256 spins at the end of the final idle period).
//! `simulate_with_grads` adds exact reverse-mode derivatives of a scalar loss
//! with respect to every flip angle, phase, and log-idle parameter, given the
//! loss adjoint for each voxel's complex signal.

use crate::population::{spin_grid, Tissue, TissueTable, VoxelBatch, VoxelProps, N_SPINS};
use crate::seq::{Op, Sequence};
use crate::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Offset added to idle times before the log transform: rho = ln(dt + 0.001).
pub const LOG_TIME_EPS: f64 = 0.001;

/// Per-spin magnetization of one voxel.
#[derive(Debug, Clone)]
pub struct SpinState {
    pub mx: [f64; N_SPINS],
    pub my: [f64; N_SPINS],
    pub mz: [f64; N_SPINS],
}

impl SpinState {
    /// Thermal equilibrium (0, 0, M0).
    pub fn equilibrium(m0: f64) -> Self {
        SpinState {
            mx: [0.0; N_SPINS],
            my: [0.0; N_SPINS],
            mz: [m0; N_SPINS],
        }
    }

    /// Mean complex transverse magnetization over the spins.
    pub fn readout(&self) -> Complex64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..N_SPINS {
            re += self.mx[i];
            im += self.my[i];
        }
        Complex64::new(re / N_SPINS as f64, im / N_SPINS as f64)
    }

    /// Mean magnetization vector over the spins.
    pub fn mean(&self) -> (f64, f64, f64) {
        let n = N_SPINS as f64;
        (
            self.mx.iter().sum::<f64>() / n,
            self.my.iter().sum::<f64>() / n,
            self.mz.iter().sum::<f64>() / n,
        )
    }
}

/// Rotation matrix of an RF pulse: Rz(phase) Rx(alpha) Rz(-phase) for the
/// effective flip alpha (b1-scaled), row-major.
#[inline]
pub fn rf_matrix(alpha: f64, phase: f64) -> [[f64; 3]; 3] {
    let (s, c) = alpha.sin_cos();
    let (sp, cp) = phase.sin_cos();
    [
        [cp * cp + c * sp * sp, sp * cp * (1.0 - c), sp * s],
        [sp * cp * (1.0 - c), sp * sp + c * cp * cp, -cp * s],
        [-s * sp, s * cp, c],
    ]
}

/// Derivative of `rf_matrix` with respect to the effective flip alpha.
#[inline]
fn rf_matrix_dalpha(alpha: f64, phase: f64) -> [[f64; 3]; 3] {
    let (s, c) = alpha.sin_cos();
    let (sp, cp) = phase.sin_cos();
    [
        [-s * sp * sp, sp * cp * s, sp * c],
        [sp * cp * s, -s * cp * cp, -cp * c],
        [-c * sp, c * cp, -s],
    ]
}

/// Derivative of `rf_matrix` with respect to the phase.
#[inline]
fn rf_matrix_dphase(alpha: f64, phase: f64) -> [[f64; 3]; 3] {
    let (s, c) = alpha.sin_cos();
    let (sp, cp) = phase.sin_cos();
    let cs2 = cp * cp - sp * sp;
    let two_spcp = 2.0 * sp * cp;
    [
        [two_spcp * (c - 1.0), cs2 * (1.0 - c), cp * s],
        [cs2 * (1.0 - c), two_spcp * (1.0 - c), sp * s],
        [-s * cp, -s * sp, 0.0],
    ]
}

#[inline]
pub(crate) fn matvec(r: &[[f64; 3]; 3], x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    (
        r[0][0] * x + r[0][1] * y + r[0][2] * z,
        r[1][0] * x + r[1][1] * y + r[1][2] * z,
        r[2][0] * x + r[2][1] * y + r[2][2] * z,
    )
}

#[inline]
fn matvec_t(r: &[[f64; 3]; 3], x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    (
        r[0][0] * x + r[1][0] * y + r[2][0] * z,
        r[0][1] * x + r[1][1] * y + r[2][1] * z,
        r[0][2] * x + r[1][2] * y + r[2][2] * z,
    )
}

/// Precession angle over `dt_ms` for a spin at `f_hz`: beta = -2 pi f dt.
#[inline]
pub(crate) fn precession_angle(f_hz: f64, dt_ms: f64) -> f64 {
    -2.0 * PI * f_hz * dt_ms * 1e-3
}

/// One spin's idle-period update. `cb`/`sb` are cos/sin of the precession
/// angle, `e2`/`e1` the T2/T1 exponentials. Shared by the sequential
/// simulator and the grid-search fast path so both produce identical bits.
#[inline]
pub(crate) fn evolve_spin(
    mx: f64,
    my: f64,
    mz: f64,
    cb: f64,
    sb: f64,
    e2: f64,
    e1: f64,
    m0: f64,
) -> (f64, f64, f64) {
    (
        e2 * (mx * cb - my * sb),
        e2 * (mx * sb + my * cb),
        m0 + (mz - m0) * e1,
    )
}

/// Apply an RF rotation in place. The effective flip is `b1 * flip`.
pub fn apply_rf(state: &mut SpinState, flip: f64, phase: f64, b1: f64) {
    let r = rf_matrix(b1 * flip, phase);
    for i in 0..N_SPINS {
        let (x, y, z) = matvec(&r, state.mx[i], state.my[i], state.mz[i]);
        state.mx[i] = x;
        state.my[i] = y;
        state.mz[i] = z;
    }
}

/// Apply relaxation and off-resonance precession over `dt_ms` in place.
/// Each spin precesses at its total offset dB0 + grid offset.
pub fn evolve(state: &mut SpinState, dt_ms: f64, voxel: &VoxelProps, offsets_hz: &[f64; N_SPINS]) {
    let e2 = (-dt_ms / voxel.t2_ms).exp();
    let e1 = (-dt_ms / voxel.t1_ms).exp();
    for i in 0..N_SPINS {
        let beta = precession_angle(voxel.db0_hz + offsets_hz[i], dt_ms);
        let (sb, cb) = beta.sin_cos();
        let (x, y, z) = evolve_spin(
            state.mx[i], state.my[i], state.mz[i], cb, sb, e2, e1, voxel.m0,
        );
        state.mx[i] = x;
        state.my[i] = y;
        state.mz[i] = z;
    }
}

/// Flat event stream of a sequence: each RF op contributes a rotation event
/// and an idle event, each wait op an idle event.
#[derive(Debug, Clone, Copy)]
enum Event {
    Rf { flip: f64, phase: f64, op: usize },
    Idle { dt: f64, op: usize },
}

fn events(seq: &Sequence) -> Vec<Event> {
    let mut ev = Vec::with_capacity(2 * seq.ops.len());
    for (op, o) in seq.ops.iter().enumerate() {
        match o {
            Op::Rf(r) => {
                ev.push(Event::Rf {
                    flip: r.flip,
                    phase: r.phase,
                    op,
                });
                ev.push(Event::Idle {
                    dt: r.idle_after,
                    op,
                });
            }
            Op::Wait(w) => ev.push(Event::Idle { dt: w.idle, op }),
        }
    }
    ev
}

/// Layout of the trainable parameters of a sequence: per op, an RF pulse
/// owns (theta, phi, rho) and a wait op owns (rho), concatenated in op
/// order. rho is the log-idle parameter ln(dt + 0.001).
#[derive(Debug, Clone)]
pub struct ParamLayout {
    /// (theta, phi, rho) index triple per RF op, rho index per wait op.
    pub per_op: Vec<OpParams>,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum OpParams {
    Rf { theta: usize, phi: usize, rho: usize },
    Wait { rho: usize },
}

impl ParamLayout {
    pub fn of(seq: &Sequence) -> Self {
        let mut per_op = Vec::with_capacity(seq.ops.len());
        let mut next = 0;
        for op in &seq.ops {
            match op {
                Op::Rf(_) => {
                    per_op.push(OpParams::Rf {
                        theta: next,
                        phi: next + 1,
                        rho: next + 2,
                    });
                    next += 3;
                }
                Op::Wait(_) => {
                    per_op.push(OpParams::Wait { rho: next });
                    next += 1;
                }
            }
        }
        ParamLayout { per_op, len: next }
    }
}

/// Simulate one voxel and return its complex readout signal.
pub fn simulate_voxel(seq: &Sequence, voxel: &VoxelProps) -> Complex64 {
    let grid = spin_grid(voxel.t2_prime_ms, voxel.spread_hz);
    let mut state = SpinState::equilibrium(voxel.m0);
    for ev in events(seq) {
        match ev {
            Event::Rf { flip, phase, .. } => apply_rf(&mut state, flip, phase, voxel.b1),
            Event::Idle { dt, .. } => evolve(&mut state, dt, voxel, &grid.offsets_hz),
        }
    }
    state.readout()
}

/// Simulate a batch; one complex signal per voxel, in batch order.
pub fn simulate(seq: &Sequence, batch: &VoxelBatch) -> Result<Vec<Complex64>> {
    let errs = seq.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidSequence(errs));
    }
    Ok(batch
        .voxels
        .iter()
        .map(|v| simulate_voxel(seq, v))
        .collect())
}

/// Gradients of a scalar loss with respect to the sequence parameters, plus
/// the per-op gate sensitivities used by architecture-parameter training.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// dL/d(theta, phi, rho) in `ParamLayout` order, summed over the batch.
    pub params: Vec<f64>,
    /// dL/d(gate of op k): the inner product of the loss adjoint with the
    /// state emitted by op k, summed over spins and voxels.
    pub gates: Vec<f64>,
}

/// Reverse-mode gradients for `seq` over `batch`. `adjoints[v]` holds
/// dL/d(Re s_v) + i dL/d(Im s_v) for voxel v's readout signal s_v. A zero
/// adjoint contributes nothing. Voxels accumulate in batch order so results
/// are deterministic.
pub fn simulate_with_grads(
    seq: &Sequence,
    batch: &VoxelBatch,
    adjoints: &[Complex64],
) -> Result<Gradients> {
    let errs = seq.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidSequence(errs));
    }
    assert_eq!(batch.voxels.len(), adjoints.len(), "one adjoint per voxel");
    let layout = ParamLayout::of(seq);
    let ev = events(seq);
    let mut params = vec![0.0; layout.len];
    let mut gates = vec![0.0; seq.ops.len()];
    // End-of-op event index per op: the op's gate reads the state after its
    // final event.
    let mut op_end = vec![0usize; seq.ops.len()];
    for (e, event) in ev.iter().enumerate() {
        let op = match event {
            Event::Rf { op, .. } | Event::Idle { op, .. } => *op,
        };
        op_end[op] = e;
    }

    for (voxel, adj) in batch.voxels.iter().zip(adjoints) {
        if adj.re == 0.0 && adj.im == 0.0 {
            continue;
        }
        backward_voxel(
            &ev, &layout, voxel, *adj, &op_end, &mut params, &mut gates,
        );
    }
    Ok(Gradients { params, gates })
}

fn backward_voxel(
    ev: &[Event],
    layout: &ParamLayout,
    voxel: &VoxelProps,
    adj_signal: Complex64,
    op_end: &[usize],
    params: &mut [f64],
    gates: &mut [f64],
) {
    let grid = spin_grid(voxel.t2_prime_ms, voxel.spread_hz);
    // Forward pass, keeping the state after every event.
    let mut states = Vec::with_capacity(ev.len() + 1);
    states.push(SpinState::equilibrium(voxel.m0));
    for event in ev {
        let mut s = states.last().unwrap().clone();
        match *event {
            Event::Rf { flip, phase, .. } => apply_rf(&mut s, flip, phase, voxel.b1),
            Event::Idle { dt, .. } => evolve(&mut s, dt, voxel, &grid.offsets_hz),
        }
        states.push(s);
    }

    // Readout adjoint: s = mean(mx + i my).
    let scale = 1.0 / N_SPINS as f64;
    let mut ax = [adj_signal.re * scale; N_SPINS];
    let mut ay = [adj_signal.im * scale; N_SPINS];
    let mut az = [0.0; N_SPINS];

    for (e, event) in ev.iter().enumerate().rev() {
        let op = match event {
            Event::Rf { op, .. } | Event::Idle { op, .. } => *op,
        };
        // Gate sensitivity: adjoint dotted with the op's output state.
        if op_end[op] == e {
            let out = &states[e + 1];
            let mut dot = 0.0;
            for i in 0..N_SPINS {
                dot += ax[i] * out.mx[i] + ay[i] * out.my[i] + az[i] * out.mz[i];
            }
            gates[op] += dot;
        }
        match *event {
            Event::Idle { dt, .. } => {
                let e2 = (-dt / voxel.t2_ms).exp();
                let e1 = (-dt / voxel.t1_ms).exp();
                let inp = &states[e];
                let out = &states[e + 1];
                let mut d_dt = 0.0;
                for i in 0..N_SPINS {
                    let k = 2.0 * PI * (voxel.db0_hz + grid.offsets_hz[i]) * 1e-3;
                    // d(out)/d(dt) written in terms of the output state:
                    // transverse decays at 1/T2 and rotates at -k, Mz relaxes
                    // toward M0 at 1/T1.
                    d_dt += ax[i] * (-out.mx[i] / voxel.t2_ms + k * out.my[i])
                        + ay[i] * (-out.my[i] / voxel.t2_ms - k * out.mx[i])
                        + az[i] * ((voxel.m0 - inp.mz[i]) * e1 / voxel.t1_ms);
                    // Adjoint through the linear map: transpose rotation.
                    let beta = precession_angle(voxel.db0_hz + grid.offsets_hz[i], dt);
                    let (sb, cb) = beta.sin_cos();
                    let nax = e2 * (cb * ax[i] + sb * ay[i]);
                    let nay = e2 * (-sb * ax[i] + cb * ay[i]);
                    ax[i] = nax;
                    ay[i] = nay;
                    az[i] *= e1;
                }
                let rho_idx = match layout.per_op[op] {
                    OpParams::Rf { rho, .. } | OpParams::Wait { rho } => rho,
                };
                // Chain through rho = ln(dt + eps): dL/drho = (dt + eps) dL/ddt.
                params[rho_idx] += d_dt * (dt + LOG_TIME_EPS);
            }
            Event::Rf { flip, phase, .. } => {
                let alpha = voxel.b1 * flip;
                let r = rf_matrix(alpha, phase);
                let da = rf_matrix_dalpha(alpha, phase);
                let dp = rf_matrix_dphase(alpha, phase);
                let inp = &states[e];
                let (theta_idx, phi_idx) = match layout.per_op[op] {
                    OpParams::Rf { theta, phi, .. } => (theta, phi),
                    OpParams::Wait { .. } => unreachable!("RF event on wait op"),
                };
                let mut d_alpha = 0.0;
                let mut d_phase = 0.0;
                for i in 0..N_SPINS {
                    let (x, y, z) = (inp.mx[i], inp.my[i], inp.mz[i]);
                    let (dax, day, daz) = matvec(&da, x, y, z);
                    let (dpx, dpy, dpz) = matvec(&dp, x, y, z);
                    d_alpha += ax[i] * dax + ay[i] * day + az[i] * daz;
                    d_phase += ax[i] * dpx + ay[i] * dpy + az[i] * dpz;
                    let (nax, nay, naz) = matvec_t(&r, ax[i], ay[i], az[i]);
                    ax[i] = nax;
                    ay[i] = nay;
                    az[i] = naz;
                }
                params[theta_idx] += voxel.b1 * d_alpha;
                params[phi_idx] += d_phase;
            }
        }
    }
}

/// One cell of an inhomogeneity robustness map.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessPoint {
    pub db0_hz: f64,
    pub b1: f64,
    pub signal_abs: f64,
    /// |s| divided by the on-resonance (dB0 = 0, B1 = 1) value.
    pub normalized: f64,
}

/// Sweep the nominal voxel of `tissue` over the table's dB0 x B1 ranges and
/// report |s| normalized to the on-resonance value. Row-major in dB0 then
/// B1.
pub fn robustness_map(
    seq: &Sequence,
    tissue: Tissue,
    table: &TissueTable,
    n_db0: usize,
    n_b1: usize,
) -> Result<Vec<RobustnessPoint>> {
    assert!(n_db0 >= 2 && n_b1 >= 2, "need at least a 2 x 2 map");
    let reference = simulate_voxel(seq, &table.nominal(tissue)).norm();
    let (db0_lo, db0_hi) = table.db0_range_hz;
    let (b1_lo, b1_hi) = table.b1_range;
    let mut out = Vec::with_capacity(n_db0 * n_b1);
    for i in 0..n_db0 {
        let db0 = db0_lo + (db0_hi - db0_lo) * i as f64 / (n_db0 - 1) as f64;
        for j in 0..n_b1 {
            let b1 = b1_lo + (b1_hi - b1_lo) * j as f64 / (n_b1 - 1) as f64;
            let mut voxel = table.nominal(tissue);
            voxel.db0_hz = db0;
            voxel.b1 = b1;
            let signal_abs = simulate_voxel(seq, &voxel).norm();
            out.push(RobustnessPoint {
                db0_hz: db0,
                b1,
                signal_abs,
                normalized: signal_abs / reference,
            });
        }
    }
    Ok(out)
}

/// One sampled point of a magnetization trajectory (per-voxel means).
#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub t_ms: f64,
    pub voxel_id: usize,
    pub tissue: &'static str,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
    pub mxy: f64,
}

/// Dense time sampling of the mean magnetization for plotting. Each idle
/// period is split into steps of at most `sample_dt_ms`; a sample is taken
/// after every step and immediately after each RF pulse.
pub fn simulate_trajectory(
    seq: &Sequence,
    batch: &VoxelBatch,
    sample_dt_ms: f64,
) -> Result<Vec<TrajectoryPoint>> {
    let errs = seq.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidSequence(errs));
    }
    let mut out = Vec::new();
    for (voxel_id, voxel) in batch.voxels.iter().enumerate() {
        let grid = spin_grid(voxel.t2_prime_ms, voxel.spread_hz);
        let mut state = SpinState::equilibrium(voxel.m0);
        let mut t = 0.0;
        let push = |t: f64, s: &SpinState, out: &mut Vec<TrajectoryPoint>| {
            let (mx, my, mz) = s.mean();
            let sig = s.readout();
            out.push(TrajectoryPoint {
                t_ms: t,
                voxel_id,
                tissue: voxel.tissue.name(),
                mx,
                my,
                mz,
                mxy: sig.norm(),
            });
        };
        push(t, &state, &mut out);
        for ev in events(seq) {
            match ev {
                Event::Rf { flip, phase, .. } => {
                    apply_rf(&mut state, flip, phase, voxel.b1);
                    push(t, &state, &mut out);
                }
                Event::Idle { dt, .. } => {
                    let steps = (dt / sample_dt_ms).ceil().max(1.0) as usize;
                    let step = dt / steps as f64;
                    for _ in 0..steps {
                        evolve(&mut state, step, voxel, &grid.offsets_hz);
                        t += step;
                        push(t, &state, &mut out);
                    }
                }
            }
        }
    }
    Ok(out)
}
