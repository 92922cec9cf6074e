//! Sequence search space: layered candidate operations with architecture
//! weights, single-path sampling, and the softmax gradients that train the
//! architecture from gate sensitivities.
//!
//! The space has 5 layers. Layer 1 holds 5 RF candidates whose flip angles
//! start in disjoint 36 degree bands, so the first op is always an RF pulse;
//! layers 2-5 add 3 wait candidates with idle times initialized log-uniformly
//! over three decades. One candidate per layer is sampled from the softmax of
//! the layer's architecture weights; only that path is simulated and updated.

use crate::losses::LossWeights;
use crate::seq::{Op, Sequence, PRUNE_THRESHOLD_RAD, RF_IDLE_FLOOR_MS};
use crate::{deg_to_rad, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub const N_LAYERS: usize = 5;
pub const RF_CANDIDATES: usize = 5;
pub const WAIT_CANDIDATES: usize = 3;
/// Width of each RF candidate's initial flip-angle band, degrees.
pub const FLIP_BAND_DEG: f64 = 36.0;
/// Initial std of the architecture weights.
pub const ALPHA_INIT_STD: f64 = 0.001;
/// Smallest representable wait idle: keeps dt + eps strictly positive with
/// headroom, so the log-time parameter stays finite.
pub const WAIT_IDLE_FLOOR_MS: f64 = 0.0005;

use crate::bloch::LOG_TIME_EPS;

/// One selectable operation with its trainable parameters. Idle times are
/// stored as rho = ln(dt + eps).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Candidate {
    Rf { theta: f64, phi: f64, rho: f64 },
    Wait { rho: f64 },
}

impl Candidate {
    pub fn is_rf(&self) -> bool {
        matches!(self, Candidate::Rf { .. })
    }

    /// Squared flip in squared radians; zero for waits.
    pub fn energy(&self) -> f64 {
        match self {
            Candidate::Rf { theta, .. } => theta * theta,
            Candidate::Wait { .. } => 0.0,
        }
    }

    /// The max() guards against exp(ln(x)) rounding a hair below the idle
    /// floor, which would trip sequence validation on a freshly projected op.
    pub fn realize(&self) -> Op {
        match *self {
            Candidate::Rf { theta, phi, rho } => {
                let idle = (rho.exp() - LOG_TIME_EPS).max(crate::seq::RF_IDLE_FLOOR_MS);
                Sequence::rf(theta, phi, idle)
            }
            Candidate::Wait { rho } => {
                let idle = (rho.exp() - LOG_TIME_EPS).max(WAIT_IDLE_FLOOR_MS);
                Sequence::wait(idle)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub candidates: Vec<Candidate>,
    pub alphas: Vec<f64>,
}

impl Layer {
    /// Softmax of the architecture weights, numerically shifted by the max.
    pub fn probs(&self) -> Vec<f64> {
        let max = self.alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.alphas.iter().map(|a| (a - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.alphas.iter().enumerate() {
            if *a > self.alphas[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: Vec<Layer>,
}

/// Fresh search space with randomized parameters. RF candidate k draws its
/// flip uniformly from [36k, 36(k+1)] degrees and its phase from
/// [-180, 180]; RF idles start at the hardware floor. Wait candidate j draws
/// its idle log-uniformly from decade j of [1, 1000] ms.
pub fn init_search_space<R: Rng>(rng: &mut R) -> SearchSpace {
    let alpha = Normal::new(0.0, ALPHA_INIT_STD).unwrap();
    let phase = Uniform::new_inclusive(-180.0f64, 180.0);
    let mut layers = Vec::with_capacity(N_LAYERS);
    for layer in 0..N_LAYERS {
        let mut candidates = Vec::new();
        for k in 0..RF_CANDIDATES {
            let lo = FLIP_BAND_DEG * k as f64;
            let flip = Uniform::new_inclusive(lo, lo + FLIP_BAND_DEG).sample(rng);
            candidates.push(Candidate::Rf {
                theta: deg_to_rad(flip),
                phi: deg_to_rad(phase.sample(rng)),
                rho: (RF_IDLE_FLOOR_MS + LOG_TIME_EPS).ln(),
            });
        }
        if layer > 0 {
            for j in 0..WAIT_CANDIDATES {
                let lo = 10f64.powi(j as i32);
                let ln_dt = Uniform::new_inclusive(lo.ln(), (10.0 * lo).ln()).sample(rng);
                candidates.push(Candidate::Wait {
                    rho: (ln_dt.exp() + LOG_TIME_EPS).ln(),
                });
            }
        }
        let alphas = (0..candidates.len()).map(|_| alpha.sample(rng)).collect();
        layers.push(Layer { candidates, alphas });
    }
    SearchSpace { layers }
}

impl SearchSpace {
    /// Sample one candidate per layer from the softmax distributions.
    pub fn sample_path<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        self.layers
            .iter()
            .map(|layer| {
                let p = layer.probs();
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            })
            .collect()
    }

    /// Highest-weight candidate per layer.
    pub fn argmax_path(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::argmax).collect()
    }

    /// Build the concrete sequence selected by `path`.
    pub fn realize(&self, path: &[usize]) -> Sequence {
        assert_eq!(path.len(), self.layers.len(), "one choice per layer");
        Sequence::new(
            self.layers
                .iter()
                .zip(path)
                .map(|(layer, &c)| layer.candidates[c].realize())
                .collect(),
        )
    }

    /// Final design: argmax path with sub-threshold flips pruned away.
    pub fn discretize(&self) -> Result<Sequence> {
        let mut seq = self
            .realize(&self.argmax_path())
            .prune_small_flips(PRUNE_THRESHOLD_RAD)?;
        // Waits before the first pulse act on equilibrium magnetization and
        // do nothing; dropping them keeps the pruned result valid.
        let lead = seq
            .ops
            .iter()
            .take_while(|op| !matches!(op, Op::Rf(_)))
            .count();
        seq.ops.drain(..lead);
        let errs = seq.validate();
        if errs.is_empty() {
            Ok(seq)
        } else {
            Err(Error::InvalidSequence(errs))
        }
    }

    /// Expected number of RF pulses under the softmax distributions.
    pub fn expected_rf_count(&self) -> f64 {
        self.layers
            .iter()
            .map(|layer| {
                layer
                    .probs()
                    .iter()
                    .zip(&layer.candidates)
                    .filter(|(_, c)| c.is_rf())
                    .map(|(p, _)| p)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Expected RF energy (squared radians) under the softmax distributions.
    pub fn expected_rf_energy(&self) -> f64 {
        self.layers
            .iter()
            .map(|layer| {
                layer
                    .probs()
                    .iter()
                    .zip(&layer.candidates)
                    .map(|(p, c)| p * c.energy())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Gradients of the composite loss with respect to every architecture
    /// weight. `gate_dots[l]` is dL/d(gate) of the layer's realized op from
    /// the simulator; the single-path estimator spreads it over the layer as
    /// dL/d(alpha_i) = g p_a (delta_ia - p_i). The expected count and energy
    /// penalties differentiate exactly: d(sum_j p_j c_j)/d(alpha_i) =
    /// p_i (c_i - sum_j c_j p_j).
    pub fn arch_grads(
        &self,
        path: &[usize],
        gate_dots: &[f64],
        weights: &LossWeights,
    ) -> Vec<Vec<f64>> {
        assert_eq!(path.len(), self.layers.len());
        assert_eq!(gate_dots.len(), self.layers.len());
        self.layers
            .iter()
            .zip(path.iter().zip(gate_dots))
            .map(|(layer, (&active, &g))| {
                let p = layer.probs();
                let count_mean: f64 = p
                    .iter()
                    .zip(&layer.candidates)
                    .map(|(pi, c)| pi * if c.is_rf() { 1.0 } else { 0.0 })
                    .sum();
                let energy_mean: f64 = p
                    .iter()
                    .zip(&layer.candidates)
                    .map(|(pi, c)| pi * c.energy())
                    .sum();
                p.iter()
                    .zip(&layer.candidates)
                    .enumerate()
                    .map(|(i, (&pi, c))| {
                        let delta = if i == active { 1.0 } else { 0.0 };
                        let signal = g * p[active] * (delta - pi);
                        let count = if c.is_rf() { 1.0 } else { 0.0 };
                        signal
                            + weights.rf_count * pi * (count - count_mean)
                            + weights.rf_energy * pi * (c.energy() - energy_mean)
                    })
                    .collect()
            })
            .collect()
    }

    /// Keep every candidate inside the feasible set: RF idles at or above
    /// the hardware floor, wait idles strictly positive, flips nonnegative.
    pub fn project(&mut self) {
        let rf_floor = (RF_IDLE_FLOOR_MS + LOG_TIME_EPS).ln();
        let wait_floor = (WAIT_IDLE_FLOOR_MS + LOG_TIME_EPS).ln();
        for layer in &mut self.layers {
            for c in &mut layer.candidates {
                match c {
                    Candidate::Rf { theta, rho, .. } => {
                        if *theta < 0.0 {
                            *theta = 0.0;
                        }
                        if *rho < rf_floor {
                            *rho = rf_floor;
                        }
                    }
                    Candidate::Wait { rho } => {
                        if *rho < wait_floor {
                            *rho = wait_floor;
                        }
                    }
                }
            }
        }
    }

    /// Total number of architecture weights across layers.
    pub fn n_alphas(&self) -> usize {
        self.layers.iter().map(|l| l.alphas.len()).sum()
    }
}
