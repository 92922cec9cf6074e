//! Optimizers and the training loops that drive the search.
//!
//! Sequence weights (flips, phases, log-idles) follow plain SGD along the
//! sampled path; architecture weights follow ADAM. One batch is drawn per
//! epoch. Training state (space, optimizer moments, RNG) serializes as a
//! checkpoint, and resuming from it reproduces an uninterrupted run bit for
//! bit because every random draw goes through the checkpointed RNG.

use crate::bloch::{simulate, simulate_with_grads, OpParams, ParamLayout, LOG_TIME_EPS};
use crate::losses::{composite_loss, LossBreakdown, LossWeights};
use crate::nas::{init_search_space, Candidate, SearchSpace};
use crate::population::{draw_batch, VoxelBatch};
use crate::seq::{Op, Sequence, RF_IDLE_FLOOR_MS};
use crate::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training aborts after this many consecutive non-finite losses.
pub const MAX_NON_FINITE: usize = 5;

/// Plain gradient descent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, param: &mut f64, grad: f64) {
        *param -= self.lr * grad;
    }
}

/// ADAM with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_alpha: f64,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, weights: LossWeights) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            lr_weights: 0.01,
            lr_alpha: 0.001,
            weights,
        }
    }
}

/// One epoch's log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Sampled candidate index per layer.
    pub path: Vec<usize>,
    pub duration_ms: f64,
    pub n_rf: usize,
}

/// Complete training state; serializing and restoring this resumes a run
/// exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    pub epoch: usize,
    pub space: SearchSpace,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    #[serde(default)]
    non_finite_streak: usize,
}

impl Trainer {
    /// Initialize a fresh search from a seed. The architecture optimizer
    /// covers every layer's weights, flattened in layer order.
    pub fn new(seed: u64, lr_alpha: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = init_search_space(&mut rng);
        let adam = Adam::new(space.n_alphas(), lr_alpha);
        Trainer {
            epoch: 0,
            space,
            adam,
            rng,
            non_finite_streak: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trainer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))
    }

    /// Run `epochs` more training epochs, appending one record per epoch.
    pub fn train(
        &mut self,
        population: &VoxelBatch,
        cfg: &TrainConfig,
        epochs: usize,
        history: &mut Vec<EpochRecord>,
    ) -> Result<()> {
        if cfg.batch_size > population.voxels.len() {
            return Err(Error::Config(format!(
                "batch size {} exceeds population size {}",
                cfg.batch_size,
                population.voxels.len()
            )));
        }
        let sgd = Sgd { lr: cfg.lr_weights };
        for _ in 0..epochs {
            self.epoch += 1;
            let batch = draw_batch(population, cfg.batch_size, &mut self.rng)?;
            let path = self.space.sample_path(&mut self.rng);
            let seq = self.space.realize(&path);
            let signals = simulate(&seq, &batch)?;
            let (bd, adj) = composite_loss(
                &signals,
                &batch,
                &cfg.weights,
                &seq,
                Some(&self.space),
            )?;
            let record = EpochRecord {
                epoch: self.epoch,
                loss: bd.clone(),
                path: path.clone(),
                duration_ms: seq.duration_ms(),
                n_rf: seq.rf_count(),
            };
            if !bd.total.is_finite() {
                self.non_finite_streak += 1;
                history.push(record);
                if self.non_finite_streak > MAX_NON_FINITE {
                    return Err(Error::NonFiniteLoss(self.epoch));
                }
                continue;
            }
            let layout = ParamLayout::of(&seq);
            let mut grads = simulate_with_grads(&seq, &batch, &adj)?;
            let finite = |g: &f64| g.is_finite();
            if !(grads.params.iter().all(finite) && grads.gates.iter().all(finite)) {
                self.non_finite_streak += 1;
                history.push(record);
                if self.non_finite_streak > MAX_NON_FINITE {
                    return Err(Error::NonFiniteLoss(self.epoch));
                }
                continue;
            }
            self.non_finite_streak = 0;
            // Energy penalty reaches the active flips with its probability
            // weight: d(sum_l p_l theta_l^2)/d(theta_active) = 2 p theta.
            for (l, &c) in path.iter().enumerate() {
                if let Candidate::Rf { theta, .. } = self.space.layers[l].candidates[c] {
                    let p = self.space.layers[l].probs()[c];
                    if let OpParams::Rf { theta: ti, .. } = layout.per_op[l] {
                        grads.params[ti] += 2.0 * cfg.weights.rf_energy * p * theta;
                    }
                }
            }

            let arch = self.space.arch_grads(&path, &grads.gates, &cfg.weights);
            for (l, &c) in path.iter().enumerate() {
                match (&mut self.space.layers[l].candidates[c], layout.per_op[l]) {
                    (
                        Candidate::Rf { theta, phi, rho },
                        OpParams::Rf {
                            theta: ti,
                            phi: pi,
                            rho: ri,
                        },
                    ) => {
                        sgd.step(theta, grads.params[ti]);
                        sgd.step(phi, grads.params[pi]);
                        sgd.step(rho, grads.params[ri]);
                    }
                    (Candidate::Wait { rho }, OpParams::Wait { rho: ri }) => {
                        sgd.step(rho, grads.params[ri]);
                    }
                    _ => unreachable!("layout follows the realized ops"),
                }
            }

            let flat_grads: Vec<f64> = arch.into_iter().flatten().collect();
            let mut flat_alphas: Vec<f64> = self
                .space
                .layers
                .iter()
                .flat_map(|l| l.alphas.iter().copied())
                .collect();
            self.adam.step(&mut flat_alphas, &flat_grads);
            let mut k = 0;
            for layer in &mut self.space.layers {
                for a in &mut layer.alphas {
                    *a = flat_alphas[k];
                    k += 1;
                }
            }

            self.space.project();
            history.push(record);
        }
        Ok(())
    }
}

/// Refine a fixed sequence by SGD on its own parameters. The structure does
/// not change; penalties use the realized pulses directly. Idle times move
/// in log space and stay above their floors; flips stay nonnegative.
pub fn train_frozen(
    seq: &Sequence,
    population: &VoxelBatch,
    cfg: &TrainConfig,
    seed: u64,
    history: &mut Vec<EpochRecord>,
) -> Result<Sequence> {
    if cfg.batch_size > population.voxels.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds population size {}",
            cfg.batch_size,
            population.voxels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = seq.clone();
    let sgd = Sgd { lr: cfg.lr_weights };
    let mut streak = 0usize;
    for epoch in 1..=cfg.epochs {
        let batch = draw_batch(population, cfg.batch_size, &mut rng)?;
        let signals = simulate(&seq, &batch)?;
        let (bd, adj) = composite_loss(&signals, &batch, &cfg.weights, &seq, None)?;
        history.push(EpochRecord {
            epoch,
            loss: bd.clone(),
            path: Vec::new(),
            duration_ms: seq.duration_ms(),
            n_rf: seq.rf_count(),
        });
        if !bd.total.is_finite() {
            streak += 1;
            if streak > MAX_NON_FINITE {
                return Err(Error::NonFiniteLoss(epoch));
            }
            continue;
        }
        let layout = ParamLayout::of(&seq);
        let grads = simulate_with_grads(&seq, &batch, &adj)?;
        if !grads.params.iter().all(|g| g.is_finite()) {
            streak += 1;
            if streak > MAX_NON_FINITE {
                return Err(Error::NonFiniteLoss(epoch));
            }
            continue;
        }
        streak = 0;
        let rf_floor = (RF_IDLE_FLOOR_MS + LOG_TIME_EPS).ln();
        for (op, p) in seq.ops.iter_mut().zip(&layout.per_op) {
            match (op, p) {
                (
                    Op::Rf(r),
                    OpParams::Rf {
                        theta: ti,
                        phi: pi,
                        rho: ri,
                    },
                ) => {
                    let g_flip = grads.params[*ti] + 2.0 * cfg.weights.rf_energy * r.flip;
                    sgd.step(&mut r.flip, g_flip);
                    if r.flip < 0.0 {
                        r.flip = 0.0;
                    }
                    sgd.step(&mut r.phase, grads.params[*pi]);
                    let mut rho = (r.idle_after + LOG_TIME_EPS).ln();
                    sgd.step(&mut rho, grads.params[*ri]);
                    r.idle_after = (rho.max(rf_floor).exp() - LOG_TIME_EPS).max(RF_IDLE_FLOOR_MS);
                }
                (Op::Wait(w), OpParams::Wait { rho: ri }) => {
                    let mut rho = (w.idle + LOG_TIME_EPS).ln();
                    sgd.step(&mut rho, grads.params[*ri]);
                    let floor = (crate::nas::WAIT_IDLE_FLOOR_MS + LOG_TIME_EPS).ln();
                    w.idle = (rho.max(floor).exp() - LOG_TIME_EPS).max(crate::nas::WAIT_IDLE_FLOOR_MS);
                }
                _ => unreachable!("layout follows the ops"),
            }
        }
    }
    Ok(seq)
}
