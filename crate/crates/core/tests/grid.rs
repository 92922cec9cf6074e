//! Grid-search correctness: axis enumeration, tuple counts, budget refusal,
//! agreement between the factorized sweep and the sequential simulator, and
//! the success-threshold rule.

use seqsearch::bloch::simulate;
use seqsearch::grid::{run_grid, success_threshold, Axis, GridSpec};
use seqsearch::losses::{composite_loss, LossWeights};
use seqsearch::population::{sample_population, TissueTable, VoxelBatch};
use seqsearch::{Error, Experiment};

fn population(n: usize, seed: u64) -> VoxelBatch {
    sample_population(n, seed, &TissueTable::default()).unwrap()
}

fn zero_weights() -> LossWeights {
    LossWeights {
        signal: [0.0; 3],
        null: [0.0; 3],
        contrast: 0.0,
        rf_count: 0.0,
        rf_energy: 0.0,
    }
}

#[test]
fn axis_enumeration_is_robust_to_rounding() {
    let dt = Axis::new(6.2, 7.2, 0.1);
    let vals = dt.values();
    assert_eq!(vals.len(), 11);
    assert_eq!(vals[0], 6.2);
    assert!((vals[10] - 7.2).abs() < 1e-9, "endpoint {}", vals[10]);

    // 0.1 steps across a long range must not drop the endpoint.
    assert_eq!(Axis::new(2780.0, 3800.0, 10.0).len(), 103);
    assert_eq!(Axis::new(0.0, 180.0, 1.0).len(), 181);
    assert_eq!(Axis::new(0.0, 180.0, 5.0).len(), 37);
    // Degenerate single-point axis.
    assert_eq!(Axis::new(5.0, 5.0, 1.0).values(), vec![5.0]);
}

#[test]
fn published_grid_sizes_are_reproduced() {
    assert_eq!(GridSpec::full(Experiment::E1).count(), 2_650_021);
    assert_eq!(GridSpec::full(Experiment::E2).count(), 9_658_341);
    assert_eq!(GridSpec::full(Experiment::E3).count(), 2_766_786);

    // Desk-scale grids trade step size, not coverage.
    let desk = GridSpec::desk(Experiment::E1);
    assert_eq!(desk.count(), 11 * 11 * 37 * 3 * 3);
    assert_eq!(desk.theta1_deg.values(), GridSpec::full(Experiment::E1).theta1_deg.values());
    let desk3 = GridSpec::desk(Experiment::E3);
    assert_eq!(desk3.dt1_ms.values().first(), Some(&2780.0));
    assert_eq!(desk3.dt1_ms.values().last(), Some(&3780.0));
}

#[test]
fn oversized_sweeps_are_refused_without_force() {
    let pop = population(2000, 1);
    let spec = GridSpec::full(Experiment::E1);
    let err = run_grid(&spec, &pop, &LossWeights::e1(), 5, false).unwrap_err();
    assert!(matches!(err, Error::GridBudget { .. }));
}

#[test]
fn empty_population_is_an_error() {
    let pop = VoxelBatch {
        voxels: Vec::new(),
        seed: 0,
    };
    let spec = GridSpec {
        theta1_deg: Axis::new(90.0, 90.0, 1.0),
        theta2_deg: Axis::new(180.0, 180.0, 1.0),
        phi2_deg: Axis::new(0.0, 0.0, 1.0),
        dt1_ms: Axis::new(6.2, 6.2, 1.0),
        dt2_ms: Axis::new(6.2, 6.2, 1.0),
    };
    let err = run_grid(&spec, &pop, &LossWeights::e1(), 1, false).unwrap_err();
    assert!(matches!(err, Error::EmptyBatch));
}

/// Brute-force the same sweep through the sequential simulator with the same
/// ordering rule and compare the winner exactly.
#[test]
fn sweep_minimum_matches_a_sequential_brute_force() {
    let pop = population(9, 1);
    let weights = LossWeights::e1();
    let spec = GridSpec {
        theta1_deg: Axis::new(85.0, 95.0, 5.0),
        theta2_deg: Axis::new(170.0, 180.0, 10.0),
        phi2_deg: Axis::new(0.0, 180.0, 90.0),
        dt1_ms: Axis::new(6.2, 6.2, 1.0),
        dt2_ms: Axis::new(6.2, 7.0, 0.8),
    };
    let result = run_grid(&spec, &pop, &weights, 10, false).unwrap();

    let mut best: Option<(f64, [f64; 5])> = None;
    let mut losses = Vec::new();
    for &t1 in &spec.theta1_deg.values() {
        for &t2 in &spec.theta2_deg.values() {
            for &p2 in &spec.phi2_deg.values() {
                for &d1 in &spec.dt1_ms.values() {
                    for &d2 in &spec.dt2_ms.values() {
                        let seq = GridSpec::sequence(t1, t2, p2, d1, d2);
                        let sigs = simulate(&seq, &pop).unwrap();
                        let (bd, _) = composite_loss(&sigs, &pop, &weights, &seq, None).unwrap();
                        losses.push(bd.total);
                        let tuple = [t1, t2, p2, d1, d2];
                        let replace = match best {
                            None => true,
                            Some((bl, bt)) => {
                                bd.total < bl || (bd.total == bl && tuple < bt)
                            }
                        };
                        if replace {
                            best = Some((bd.total, tuple));
                        }
                    }
                }
            }
        }
    }
    let (bl, bt) = best.unwrap();
    assert_eq!(result.best().loss.to_bits(), bl.to_bits());
    assert_eq!(result.best().tuple(), bt);
    assert_eq!(result.count, losses.len());

    // The reported top list is sorted ascending and contains the k smallest.
    let tops = &result.top;
    assert_eq!(tops.len(), 10);
    for w in tops.windows(2) {
        assert!(w[0].loss <= w[1].loss);
    }
    let mut sorted = losses.clone();
    sorted.sort_by(f64::total_cmp);
    for (entry, want) in tops.iter().zip(&sorted) {
        assert_eq!(entry.loss.to_bits(), want.to_bits());
    }
}

#[test]
fn ties_resolve_to_the_lexicographically_smallest_tuple() {
    let pop = population(3, 1);
    let spec = GridSpec {
        theta1_deg: Axis::new(85.0, 90.0, 5.0),
        theta2_deg: Axis::new(170.0, 180.0, 10.0),
        phi2_deg: Axis::new(0.0, 0.0, 1.0),
        dt1_ms: Axis::new(6.2, 7.2, 1.0),
        dt2_ms: Axis::new(6.2, 7.2, 1.0),
    };
    // Zero weights make every tuple score 0, so ordering is purely the
    // tie-break rule.
    let result = run_grid(&spec, &pop, &zero_weights(), 3, false).unwrap();
    assert_eq!(result.best().tuple(), [85.0, 170.0, 0.0, 6.2, 6.2]);
    assert_eq!(result.top[1].tuple(), [85.0, 170.0, 0.0, 6.2, 7.2]);
    assert_eq!(result.top[2].tuple(), [85.0, 170.0, 0.0, 7.2, 6.2]);
}

#[test]
fn widening_an_axis_never_worsens_the_optimum() {
    let pop = population(9, 1);
    let weights = LossWeights::e1();
    let narrow = GridSpec {
        theta1_deg: Axis::new(88.0, 90.0, 1.0),
        theta2_deg: Axis::new(176.0, 178.0, 1.0),
        phi2_deg: Axis::new(180.0, 180.0, 1.0),
        dt1_ms: Axis::new(6.2, 6.2, 1.0),
        dt2_ms: Axis::new(6.2, 6.2, 1.0),
    };
    let wide = GridSpec {
        theta1_deg: Axis::new(85.0, 95.0, 1.0),
        theta2_deg: Axis::new(170.0, 180.0, 1.0),
        ..narrow.clone()
    };
    let a = run_grid(&narrow, &pop, &weights, 1, false).unwrap();
    let b = run_grid(&wide, &pop, &weights, 1, false).unwrap();
    assert!(b.best().loss <= a.best().loss);
}

#[test]
fn entries_report_means_and_energy() {
    let pop = population(9, 1);
    let spec = GridSpec {
        theta1_deg: Axis::new(90.0, 90.0, 1.0),
        theta2_deg: Axis::new(180.0, 180.0, 1.0),
        phi2_deg: Axis::new(180.0, 180.0, 1.0),
        dt1_ms: Axis::new(6.2, 6.2, 1.0),
        dt2_ms: Axis::new(6.2, 6.2, 1.0),
    };
    let result = run_grid(&spec, &pop, &LossWeights::e1(), 1, false).unwrap();
    let e = result.best();
    assert_eq!(e.relative_rf_energy, 100.0);
    for m in e.mean_abs {
        assert!(m > 0.0 && m < 1.1, "tissue mean {m}");
    }
    assert_eq!(e.breakdown.total.to_bits(), e.loss.to_bits());
    assert_eq!(result.n_voxels, 9);
}

#[test]
fn success_threshold_follows_the_five_percent_rule() {
    assert!(success_threshold(1.04, 1.0));
    assert!(!success_threshold(1.051, 1.0));
    assert!(success_threshold(0.5, 0.5));
    assert!(success_threshold(0.0, 0.0));
    assert!(!success_threshold(1e-9, 0.0));
    // Negative optima: the margin must widen, not flip.
    assert!(success_threshold(-0.096, -0.1));
    assert!(!success_threshold(-0.0949, -0.1));
    assert!(success_threshold(-0.2, -0.1));
}
