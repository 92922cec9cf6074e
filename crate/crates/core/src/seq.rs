//! Canonical pulse-sequence representation, validation, pruning, and the
//! plain-text serialization format.
//!
//! Angles are stored in radians internally; serialization and reports use
//! degrees. Idle times are milliseconds. The readout happens at the end of
//! the final operation's idle period.

use crate::{deg_to_rad, rad_to_deg, Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Minimum idle time after an RF pulse, in ms.
pub const RF_IDLE_FLOOR_MS: f64 = 6.2;

/// Default flip-angle pruning threshold (3 degrees), in radians.
pub const PRUNE_THRESHOLD_RAD: f64 = 3.0 * PI / 180.0;

/// Instantaneous RF rotation followed by an idle period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfOp {
    /// Flip angle in radians, nonnegative.
    pub flip: f64,
    /// Phase in radians, normalized to (-pi, pi].
    pub phase: f64,
    /// Time from this pulse to the next event, ms. At least 6.2 ms.
    pub idle_after: f64,
}

/// Pure idle period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitOp {
    /// Idle time in ms, positive.
    pub idle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Rf(RfOp),
    Wait(WaitOp),
}

impl Op {
    pub fn idle(&self) -> f64 {
        match self {
            Op::Rf(r) => r.idle_after,
            Op::Wait(w) => w.idle,
        }
    }

    fn idle_mut(&mut self) -> &mut f64 {
        match self {
            Op::Rf(r) => &mut r.idle_after,
            Op::Wait(w) => &mut w.idle,
        }
    }
}

/// Wrap an angle to the canonical phase range (-pi, pi].
pub fn wrap_phase(phase: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut p = phase % two_pi;
    if p <= -PI {
        p += two_pi;
    } else if p > PI {
        p -= two_pi;
    }
    p
}

/// Ordered list of operations. The first operation must be an RF pulse and a
/// sequence holds at most 5 RF pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub ops: Vec<Op>,
}

impl Sequence {
    pub fn new(ops: Vec<Op>) -> Self {
        let ops = ops
            .into_iter()
            .map(|op| match op {
                Op::Rf(r) => Op::Rf(RfOp {
                    phase: wrap_phase(r.phase),
                    ..r
                }),
                w => w,
            })
            .collect();
        Sequence { ops }
    }

    /// Convenience constructor for one RF op.
    pub fn rf(flip_rad: f64, phase_rad: f64, idle_ms: f64) -> Op {
        Op::Rf(RfOp {
            flip: flip_rad,
            phase: wrap_phase(phase_rad),
            idle_after: idle_ms,
        })
    }

    pub fn wait(idle_ms: f64) -> Op {
        Op::Wait(WaitOp { idle: idle_ms })
    }

    /// Total duration in ms: the sum of all idle periods. The readout sits at
    /// the end of the last one, so this is also the time from the first RF
    /// pulse to the readout.
    pub fn duration_ms(&self) -> f64 {
        self.ops.iter().map(|op| op.idle()).sum()
    }

    pub fn rf_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Rf(_))).count()
    }

    /// Flip angles of the RF pulses in order, radians.
    pub fn flips(&self) -> Vec<f64> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Rf(r) => Some(r.flip),
                _ => None,
            })
            .collect()
    }

    /// Phases of the RF pulses in order, radians.
    pub fn phases(&self) -> Vec<f64> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Rf(r) => Some(r.phase),
                _ => None,
            })
            .collect()
    }

    /// All invariant violations; an empty list means the sequence is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.ops.is_empty() {
            errs.push("sequence is empty".to_string());
            return errs;
        }
        if !matches!(self.ops[0], Op::Rf(_)) {
            errs.push("first op must be RF".to_string());
        }
        let n_rf = self.rf_count();
        if n_rf > 5 {
            errs.push(format!("at most 5 RF pulses allowed, found {n_rf}"));
        }
        for (k, op) in self.ops.iter().enumerate() {
            match op {
                Op::Rf(r) => {
                    if !(r.flip >= 0.0) {
                        errs.push(format!("op {k}: flip angle must be >= 0"));
                    }
                    if !(r.idle_after >= RF_IDLE_FLOOR_MS) {
                        errs.push(format!(
                            "op {k}: idle_after < {RF_IDLE_FLOOR_MS} ms"
                        ));
                    }
                    if !r.flip.is_finite() || !r.phase.is_finite() {
                        errs.push(format!("op {k}: non-finite RF parameter"));
                    }
                }
                Op::Wait(w) => {
                    if !(w.idle > 0.0) {
                        errs.push(format!("op {k}: wait idle must be > 0"));
                    }
                }
            }
        }
        errs
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Remove RF pulses with flip angle below `threshold` (radians). The idle
    /// time of a removed pulse is merged into the preceding op's idle so the
    /// total duration is preserved; a removed leading pulse merges forward
    /// into the following op instead. Removing the only RF pulse is an error.
    pub fn prune_small_flips(&self, threshold: f64) -> Result<Sequence> {
        let keep_rf = self
            .ops
            .iter()
            .filter(|op| matches!(op, Op::Rf(r) if r.flip >= threshold))
            .count();
        if keep_rf == 0 && self.rf_count() > 0 {
            return Err(Error::EmptySequence);
        }
        let mut ops: Vec<Op> = Vec::with_capacity(self.ops.len());
        let mut carry_forward = 0.0;
        for op in &self.ops {
            match op {
                Op::Rf(r) if r.flip < threshold => {
                    if let Some(prev) = ops.last_mut() {
                        *prev.idle_mut() += r.idle_after;
                    } else {
                        carry_forward += r.idle_after;
                    }
                }
                _ => {
                    let mut op = *op;
                    if carry_forward > 0.0 {
                        *op.idle_mut() += carry_forward;
                        carry_forward = 0.0;
                    }
                    ops.push(op);
                }
            }
        }
        Ok(Sequence { ops })
    }

    /// Serialize to the plain-text format. One op per line:
    ///
    /// ```text
    /// rf flip_deg=90 phase_deg=0 idle_ms=6.2
    /// wait idle_ms=100
    /// ```
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            match op {
                Op::Rf(r) => {
                    out.push_str(&format!(
                        "rf flip_deg={} phase_deg={} idle_ms={}\n",
                        rad_to_deg(r.flip),
                        rad_to_deg(r.phase),
                        r.idle_after
                    ));
                }
                Op::Wait(w) => {
                    out.push_str(&format!("wait idle_ms={}\n", w.idle));
                }
            }
        }
        out
    }

    /// Parse the plain-text format. Blank lines and `#` comments are ignored.
    pub fn deserialize(text: &str) -> Result<Sequence> {
        let mut ops = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let mut fields = t.split_whitespace();
            let kind = fields.next().unwrap();
            let mut flip_deg = None;
            let mut phase_deg = None;
            let mut idle_ms = None;
            for field in fields {
                let (key, val) = field.split_once('=').ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("expected key=value, got {field:?}"),
                })?;
                let num: f64 = val.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number for {key}: {val:?}"),
                })?;
                match key {
                    "flip_deg" => flip_deg = Some(num),
                    "phase_deg" => phase_deg = Some(num),
                    "idle_ms" => idle_ms = Some(num),
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown field {key:?}"),
                        })
                    }
                }
            }
            let idle = idle_ms.ok_or_else(|| Error::Parse {
                line,
                msg: "missing idle_ms".to_string(),
            })?;
            match kind {
                "rf" => {
                    let flip = flip_deg.ok_or_else(|| Error::Parse {
                        line,
                        msg: "missing flip_deg".to_string(),
                    })?;
                    let phase = phase_deg.ok_or_else(|| Error::Parse {
                        line,
                        msg: "missing phase_deg".to_string(),
                    })?;
                    ops.push(Op::Rf(RfOp {
                        flip: deg_to_rad(flip),
                        phase: wrap_phase(deg_to_rad(phase)),
                        idle_after: idle,
                    }));
                }
                "wait" => {
                    if flip_deg.is_some() || phase_deg.is_some() {
                        return Err(Error::Parse {
                            line,
                            msg: "wait op takes only idle_ms".to_string(),
                        });
                    }
                    ops.push(Op::Wait(WaitOp { idle }));
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown op kind {other:?}"),
                    })
                }
            }
        }
        Ok(Sequence { ops })
    }
}
