//! Structural classification of designed sequences and cross-seed report
//! statistics.
//!
//! Classification operates on standardized sequences (first RF phase 0,
//! phases wrapped, sign set by the second RF) so it is invariant to the
//! global phase freedoms the loss cannot observe. All flip tolerances are
//! +-20 degrees; pulses under 20 degrees count as negligible preparation.

use crate::seq::{wrap_phase, Op, Sequence};
use crate::{rad_to_deg, Error, Experiment, Result};
use serde::{Deserialize, Serialize};

/// Tolerance around the nominal 90/180 flips and refocusing phases, degrees.
pub const TOL_DEG: f64 = 20.0;
/// Flips below this are negligible preparatory pulses.
pub const SMALL_FLIP_DEG: f64 = 20.0;
/// TI gate for inversion-recovery labels in the CSF-suppression experiment.
pub const TI_IR_E3_MS: f64 = 2700.0;
/// TI gate for inversion-prepared spin echoes in the contrast experiment.
pub const TI_IR_E2_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    TwoRfHahn,
    ThreeRfHahn,
    HahnPhase180,
    HahnPhase0,
    OtherSpinEcho,
    IrSe,
    IrGre,
    Others,
}

impl Category {
    pub fn name(&self) -> &'static str {
        match self {
            Category::TwoRfHahn => "TwoRF-Hahn",
            Category::ThreeRfHahn => "ThreeRF-Hahn",
            Category::HahnPhase180 => "Hahn-phase180",
            Category::HahnPhase0 => "Hahn-phase0",
            Category::OtherSpinEcho => "OtherSpinEcho",
            Category::IrSe => "IR-SE",
            Category::IrGre => "IR-GRE",
            Category::Others => "Others",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sequence in canonical phase form: first RF phase 0, all phases in
/// (-180, 180], globally sign-inverted when the second RF phase was
/// negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizedSequence {
    pub seq: Sequence,
}

/// Phase-shift, wrap, and sign-normalize. Errors when no RF pulse remains.
pub fn standardize(seq: &Sequence) -> Result<StandardizedSequence> {
    Ok(StandardizedSequence {
        seq: shift_and_wrap(seq, true)?,
    })
}

/// Standardization without the sign-inversion step, used by the adaptive
/// phase statistics.
fn standardize_no_flip(seq: &Sequence) -> Result<Sequence> {
    shift_and_wrap(seq, false)
}

fn shift_and_wrap(seq: &Sequence, sign_normalize: bool) -> Result<Sequence> {
    let mut ops = seq.ops.clone();
    let phi1 = ops
        .iter()
        .find_map(|op| match op {
            Op::Rf(r) => Some(r.phase),
            Op::Wait(_) => None,
        })
        .ok_or(Error::NoRfPulse)?;
    let mut rf_seen = 0usize;
    let mut second_phase = None;
    for op in &mut ops {
        if let Op::Rf(r) = op {
            r.phase = wrap_phase(r.phase - phi1);
            rf_seen += 1;
            if rf_seen == 2 {
                second_phase = Some(r.phase);
            }
        }
    }
    if sign_normalize {
        if let Some(p2) = second_phase {
            if p2 < 0.0 {
                for op in &mut ops {
                    if let Op::Rf(r) = op {
                        r.phase = wrap_phase(-r.phase);
                    }
                }
            }
        }
    }
    Ok(Sequence { ops })
}

/// Flip angles in degrees, phases in degrees, and cumulative start times of
/// each RF pulse.
struct RfView {
    flips: Vec<f64>,
    phases: Vec<f64>,
    starts_ms: Vec<f64>,
}

fn rf_view(seq: &Sequence) -> RfView {
    let mut v = RfView {
        flips: Vec::new(),
        phases: Vec::new(),
        starts_ms: Vec::new(),
    };
    let mut t = 0.0;
    for op in &seq.ops {
        if let Op::Rf(r) = op {
            v.flips.push(rad_to_deg(r.flip));
            v.phases.push(rad_to_deg(r.phase));
            v.starts_ms.push(t);
        }
        t += op.idle();
    }
    v
}

fn near(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Phase within tolerance of 0.
fn phase_near_zero(p: f64) -> bool {
    p.abs() <= TOL_DEG
}

/// Phase within tolerance of +-180.
fn phase_near_180(p: f64) -> bool {
    p.abs() >= 180.0 - TOL_DEG
}

/// Hahn flip pattern: at least two pulses, all leading pulses negligible,
/// and the last two within tolerance of 90 and 180 degrees.
fn hahn_flips(flips: &[f64]) -> bool {
    let n = flips.len();
    if n < 2 {
        return false;
    }
    flips[..n - 2].iter().all(|&f| f < SMALL_FLIP_DEG)
        && near(flips[n - 2], 90.0, TOL_DEG)
        && near(flips[n - 1], 180.0, TOL_DEG)
}

/// Inversion-recovery flip pattern over the full pulse list: 180-90 for two
/// pulses, 180-90-180 for three. Returns the inversion time.
fn ir_pattern(v: &RfView, with_refocus: bool) -> Option<f64> {
    let want = if with_refocus { 3 } else { 2 };
    if v.flips.len() != want {
        return None;
    }
    if !near(v.flips[0], 180.0, TOL_DEG) || !near(v.flips[1], 90.0, TOL_DEG) {
        return None;
    }
    if with_refocus && !near(v.flips[2], 180.0, TOL_DEG) {
        return None;
    }
    Some(v.starts_ms[1] - v.starts_ms[0])
}

/// Deterministic rule cascade per experiment; anything unmatched is Others.
pub fn classify(std_seq: &StandardizedSequence, exp: Experiment) -> Category {
    let v = rf_view(&std_seq.seq);
    if v.flips.is_empty() {
        return Category::Others;
    }
    let refocus = *v.phases.last().unwrap();
    match exp {
        Experiment::E1 => {
            if hahn_flips(&v.flips) {
                if phase_near_zero(refocus) || phase_near_180(refocus) {
                    match v.flips.len() {
                        2 => Category::TwoRfHahn,
                        3 => Category::ThreeRfHahn,
                        _ => Category::OtherSpinEcho,
                    }
                } else {
                    Category::OtherSpinEcho
                }
            } else {
                Category::Others
            }
        }
        Experiment::E2 | Experiment::E2DiffT1 => {
            if exp == Experiment::E2DiffT1 {
                if let Some(ti) = ir_pattern(&v, true) {
                    if ti > TI_IR_E2_MS {
                        return Category::IrSe;
                    }
                }
            }
            if hahn_flips(&v.flips) {
                if phase_near_180(refocus) {
                    Category::HahnPhase180
                } else if phase_near_zero(refocus) {
                    Category::HahnPhase0
                } else {
                    Category::OtherSpinEcho
                }
            } else {
                Category::Others
            }
        }
        Experiment::E3 => {
            if let Some(ti) = ir_pattern(&v, false) {
                if ti > TI_IR_E3_MS {
                    return Category::IrGre;
                }
            }
            if let Some(ti) = ir_pattern(&v, true) {
                if ti > TI_IR_E3_MS {
                    return Category::IrSe;
                }
            }
            Category::Others
        }
    }
}

/// Timing summary of a sequence. The excitation pulse is the first flip in
/// [70, 110] degrees, falling back to the first non-negligible pulse.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Timings {
    /// First RF to readout.
    pub total_ms: f64,
    /// Excitation RF to readout.
    pub te_ms: f64,
    /// First RF to the excitation RF; zero when they coincide.
    pub ti_ms: f64,
}

pub fn timings(seq: &Sequence) -> Timings {
    let v = rf_view(seq);
    let total_ms = seq.duration_ms();
    if v.flips.is_empty() {
        return Timings {
            total_ms,
            te_ms: total_ms,
            ti_ms: 0.0,
        };
    }
    let exc = v
        .flips
        .iter()
        .position(|&f| (70.0..=110.0).contains(&f))
        .or_else(|| v.flips.iter().position(|&f| f >= SMALL_FLIP_DEG))
        .unwrap_or(0);
    Timings {
        total_ms,
        te_ms: total_ms - v.starts_ms[exc],
        ti_ms: v.starts_ms[exc] - v.starts_ms[0],
    }
}

/// One campaign run as consumed by `aggregate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: Category,
    /// Final designed sequence (raw phases; aggregation re-standardizes).
    pub seq: Sequence,
    /// Mean |s| per tissue in Tissue::ALL order.
    pub signals: [f64; 3],
    /// Relative RF energy, percent.
    pub relative_energy: f64,
}

/// Per-category statistics row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryRow {
    pub label: Category,
    pub count: usize,
    pub occurrence_pct: f64,
    /// RF count the parameter statistics are computed over (the category's
    /// most common count; ties toward fewer pulses).
    pub n_rf: usize,
    pub flips_mean_deg: Vec<f64>,
    pub flips_std_deg: Vec<f64>,
    pub refocus_phase_mean_deg: f64,
    pub refocus_phase_std_deg: f64,
    pub te_mean_ms: f64,
    pub te_std_ms: f64,
    pub ti_mean_ms: f64,
    pub ti_std_ms: f64,
    pub total_mean_ms: f64,
    pub total_std_ms: f64,
    pub signals_mean: [f64; 3],
    pub signals_std: [f64; 3],
    pub energy_mean_pct: f64,
    pub energy_std_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryReport {
    pub total_runs: usize,
    /// Descending occurrence, name-ordered on ties.
    pub rows: Vec<CategoryRow>,
}

/// Sample mean and standard deviation (n-1 denominator; 0 for n < 2).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Refocusing phases adapted to their distribution before linear statistics:
/// when at least 80% cluster within 30 degrees of 0, the sign-inversion step
/// is skipped; when they cluster at +-180, negatives shift by +360 so the
/// cluster is contiguous; otherwise the fully standardized phases are used.
fn adaptive_phases(no_flip: &[f64], standardized: &[f64]) -> Vec<f64> {
    let n = no_flip.len() as f64;
    if n == 0.0 {
        return Vec::new();
    }
    let near_zero = no_flip.iter().filter(|p| p.abs() <= 30.0).count() as f64;
    let near_180 = no_flip.iter().filter(|p| p.abs() >= 150.0).count() as f64;
    if near_zero / n >= 0.8 {
        no_flip.to_vec()
    } else if near_180 / n >= 0.8 {
        no_flip
            .iter()
            .map(|&p| if p < 0.0 { p + 360.0 } else { p })
            .collect()
    } else {
        standardized.to_vec()
    }
}

/// Cross-run statistics per category. Occurrence percentages sum to 100.
pub fn aggregate(runs: &[RunRecord]) -> Result<CategoryReport> {
    if runs.is_empty() {
        return Err(Error::Config("no runs to aggregate".into()));
    }
    let order = [
        Category::TwoRfHahn,
        Category::ThreeRfHahn,
        Category::HahnPhase180,
        Category::HahnPhase0,
        Category::OtherSpinEcho,
        Category::IrSe,
        Category::IrGre,
        Category::Others,
    ];
    let mut rows = Vec::new();
    for label in order {
        let members: Vec<&RunRecord> = runs.iter().filter(|r| r.label == label).collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len();

        // Modal RF count; parameter statistics only mix runs with the same
        // pulse structure.
        let mut counts: Vec<usize> = members.iter().map(|r| r.seq.rf_count()).collect();
        counts.sort_unstable();
        let n_rf = counts
            .iter()
            .map(|&c| (counts.iter().filter(|&&x| x == c).count(), c))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, c)| c)
            .unwrap_or(0);
        let modal: Vec<&&RunRecord> = members
            .iter()
            .filter(|r| r.seq.rf_count() == n_rf)
            .collect();

        let std_seqs: Vec<Sequence> = modal
            .iter()
            .map(|r| standardize(&r.seq).map(|s| s.seq))
            .collect::<Result<_>>()?;
        let no_flip_seqs: Vec<Sequence> = modal
            .iter()
            .map(|r| standardize_no_flip(&r.seq))
            .collect::<Result<_>>()?;

        let mut flips_mean = Vec::new();
        let mut flips_std = Vec::new();
        for k in 0..n_rf {
            let col: Vec<f64> = std_seqs
                .iter()
                .map(|s| rad_to_deg(s.flips()[k]))
                .collect();
            let (m, sd) = mean_std(&col);
            flips_mean.push(m);
            flips_std.push(sd);
        }

        let std_phases: Vec<f64> = std_seqs
            .iter()
            .map(|s| rad_to_deg(*s.phases().last().unwrap()))
            .collect();
        let no_flip_phases: Vec<f64> = no_flip_seqs
            .iter()
            .map(|s| rad_to_deg(*s.phases().last().unwrap()))
            .collect();
        let (ph_mean, ph_std) = mean_std(&adaptive_phases(&no_flip_phases, &std_phases));

        let t: Vec<Timings> = modal.iter().map(|r| timings(&r.seq)).collect();
        let (te_mean, te_std) = mean_std(&t.iter().map(|x| x.te_ms).collect::<Vec<_>>());
        let (ti_mean, ti_std) = mean_std(&t.iter().map(|x| x.ti_ms).collect::<Vec<_>>());
        let (tot_mean, tot_std) = mean_std(&t.iter().map(|x| x.total_ms).collect::<Vec<_>>());

        let mut signals_mean = [0.0; 3];
        let mut signals_std = [0.0; 3];
        for tis in 0..3 {
            let col: Vec<f64> = members.iter().map(|r| r.signals[tis]).collect();
            let (m, sd) = mean_std(&col);
            signals_mean[tis] = m;
            signals_std[tis] = sd;
        }
        let (en_mean, en_std) =
            mean_std(&members.iter().map(|r| r.relative_energy).collect::<Vec<_>>());

        rows.push(CategoryRow {
            label,
            count,
            occurrence_pct: 100.0 * count as f64 / runs.len() as f64,
            n_rf,
            flips_mean_deg: flips_mean,
            flips_std_deg: flips_std,
            refocus_phase_mean_deg: ph_mean,
            refocus_phase_std_deg: ph_std,
            te_mean_ms: te_mean,
            te_std_ms: te_std,
            ti_mean_ms: ti_mean,
            ti_std_ms: ti_std,
            total_mean_ms: tot_mean,
            total_std_ms: tot_std,
            signals_mean,
            signals_std,
            energy_mean_pct: en_mean,
            energy_std_pct: en_std,
        });
    }
    rows.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.label.name().cmp(b.label.name()))
    });
    Ok(CategoryReport {
        total_runs: runs.len(),
        rows,
    })
}
