//! Loss terms over simulated signals and RF penalty surrogates.
//!
//! All signal terms are batch means, so the composite loss is invariant to
//! duplicating the batch. Contrast pairs GM and WM voxels by index within
//! their tissue groups, which requires equal GM and WM counts; the sampler
//! guarantees this.

use crate::nas::SearchSpace;
use crate::population::{Tissue, VoxelBatch};
use crate::seq::Sequence;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Normalizer for the relative RF energy scale: a conventional 90-180 spin
/// echo's energy in squared radians.
fn reference_energy() -> f64 {
    let a = PI / 2.0;
    let b = PI;
    a * a + b * b
}

/// Weighted loss configuration. Signal terms are selected per tissue:
/// `signal` maximizes |s| toward M0, `null` minimizes |s|, `contrast`
/// rewards |s_GM| - |s_WM| differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight on (M0 - |s|)^2 per tissue, in Tissue::ALL order.
    pub signal: [f64; 3],
    /// Weight on |s|^2 per tissue.
    pub null: [f64; 3],
    /// Weight on the GM/WM contrast term.
    pub contrast: f64,
    /// Weight on the expected RF pulse count.
    pub rf_count: f64,
    /// Weight on the expected squared-flip RF energy.
    pub rf_energy: f64,
}

impl LossWeights {
    /// Maximize all-tissue signal.
    pub fn e1() -> Self {
        LossWeights {
            signal: [1.0, 1.0, 1.0],
            null: [0.0; 3],
            contrast: 0.0,
            rf_count: 1e-3,
            rf_energy: 1e-4,
        }
    }

    /// Signal plus GM/WM contrast.
    pub fn e2(contrast: f64) -> Self {
        LossWeights {
            contrast,
            ..LossWeights::e1()
        }
    }

    /// Weight GM/WM signal and suppress CSF.
    pub fn e3(null_csf: f64) -> Self {
        LossWeights {
            signal: [0.75, 0.75, 0.0],
            null: [0.0, 0.0, null_csf],
            contrast: 0.0,
            rf_count: 1e-3,
            rf_energy: 1e-4,
        }
    }
}

/// Loss value split by term. `total` is the weighted sum actually optimized.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted mean (M0 - |s|)^2 per tissue present in the batch.
    pub signal: [f64; 3],
    /// Unweighted mean |s|^2 per tissue.
    pub null: [f64; 3],
    /// Unweighted contrast term -mean(|s_GM| - |s_WM|)^2.
    pub contrast: f64,
    /// RF count penalty term (expected count in search mode).
    pub rf_count: f64,
    /// RF energy penalty term in squared radians.
    pub rf_energy: f64,
}

/// Per-voxel |s| with the zero-signal subgradient convention |0|' = 0.
fn magnitudes(signals: &[Complex64]) -> Vec<f64> {
    signals.iter().map(|s| s.norm()).collect()
}

/// Composite loss over a batch plus d(total)/d(re, im) per voxel signal.
///
/// RF penalties are taken from `arch`: in search mode the candidate
/// probabilities weight each layer's expected count and energy; with
/// `arch = None` the penalties use the realized sequence directly
/// (evaluation of a fixed design).
pub fn composite_loss(
    signals: &[Complex64],
    batch: &VoxelBatch,
    weights: &LossWeights,
    seq: &Sequence,
    arch: Option<&SearchSpace>,
) -> Result<(LossBreakdown, Vec<Complex64>)> {
    assert_eq!(signals.len(), batch.voxels.len(), "one signal per voxel");
    if signals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mags = magnitudes(signals);
    let mut bd = LossBreakdown::default();
    let mut adj = vec![Complex64::new(0.0, 0.0); signals.len()];
    // dL/d|s_v| accumulated across terms, chained through |s| at the end.
    let mut d_mag = vec![0.0; signals.len()];

    for (t, tis) in Tissue::ALL.iter().enumerate() {
        let vs = batch.tissue_indices(*tis);
        if vs.is_empty() {
            if weights.signal[t] != 0.0 || weights.null[t] != 0.0 {
                return Err(Error::MissingTissue(tis.name()));
            }
            continue;
        }
        let n = vs.len() as f64;
        let mut sig_sum = 0.0;
        let mut null_sum = 0.0;
        for &v in &vs {
            let m0 = batch.voxels[v].m0;
            let r = m0 - mags[v];
            sig_sum += r * r;
            null_sum += mags[v] * mags[v];
        }
        bd.signal[t] = sig_sum / n;
        bd.null[t] = null_sum / n;
        bd.total += weights.signal[t] * bd.signal[t] + weights.null[t] * bd.null[t];
        if weights.signal[t] != 0.0 || weights.null[t] != 0.0 {
            for &v in &vs {
                let m0 = batch.voxels[v].m0;
                d_mag[v] += weights.signal[t] * (-2.0 * (m0 - mags[v]) / n)
                    + weights.null[t] * (2.0 * mags[v] / n);
            }
        }
    }

    let gm = batch.tissue_indices(Tissue::Gm);
    let wm = batch.tissue_indices(Tissue::Wm);
    if weights.contrast != 0.0 {
        if gm.is_empty() {
            return Err(Error::MissingTissue(Tissue::Gm.name()));
        }
        if gm.len() != wm.len() {
            return Err(Error::UnpairedContrast {
                gm: gm.len(),
                wm: wm.len(),
            });
        }
        let n = gm.len() as f64;
        let mut sum = 0.0;
        for (&g, &w) in gm.iter().zip(&wm) {
            let d = mags[g] - mags[w];
            sum += d * d;
        }
        bd.contrast = -sum / n;
        bd.total += weights.contrast * bd.contrast;
        for (&g, &w) in gm.iter().zip(&wm) {
            let d = mags[g] - mags[w];
            d_mag[g] += weights.contrast * (-2.0 * d / n);
            d_mag[w] += weights.contrast * (2.0 * d / n);
        }
    }

    let (count, energy) = match arch {
        Some(space) => (space.expected_rf_count(), space.expected_rf_energy()),
        None => (seq.rf_count() as f64, rf_energy(seq)),
    };
    bd.rf_count = count;
    bd.rf_energy = energy;
    bd.total += weights.rf_count * count + weights.rf_energy * energy;

    for v in 0..signals.len() {
        let a = mags[v];
        if a > 0.0 {
            adj[v] = Complex64::new(
                d_mag[v] * signals[v].re / a,
                d_mag[v] * signals[v].im / a,
            );
        }
    }
    Ok((bd, adj))
}

/// Sum of squared flip angles in squared radians.
pub fn rf_energy(seq: &Sequence) -> f64 {
    seq.flips().iter().map(|f| f * f).sum()
}

/// RF energy as a percentage of a conventional 90-180 spin echo's energy.
pub fn relative_rf_energy(seq: &Sequence) -> f64 {
    rf_energy(seq) / reference_energy() * 100.0
}

/// Gradient of the eval-mode energy penalty with respect to each flip:
/// d(w * sum theta^2)/d(theta_k) = 2 w theta_k.
pub fn rf_energy_grad(seq: &Sequence, weight: f64) -> Vec<f64> {
    seq.flips().iter().map(|f| 2.0 * weight * f).collect()
}
