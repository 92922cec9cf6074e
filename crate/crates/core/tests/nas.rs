//! Search-space behavior: initialization bands, softmax sampling, path
//! realization and discretization, and the architecture gradient estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqsearch::bloch::LOG_TIME_EPS;
use seqsearch::losses::LossWeights;
use seqsearch::nas::{
    init_search_space, Candidate, Layer, SearchSpace, FLIP_BAND_DEG, N_LAYERS, RF_CANDIDATES,
    WAIT_CANDIDATES, WAIT_IDLE_FLOOR_MS,
};
use seqsearch::seq::{Op, RF_IDLE_FLOOR_MS};
use seqsearch::{deg_to_rad, rad_to_deg, Error};

fn rf(theta: f64, phi: f64, idle_ms: f64) -> Candidate {
    Candidate::Rf {
        theta,
        phi,
        rho: (idle_ms + LOG_TIME_EPS).ln(),
    }
}

fn wait(idle_ms: f64) -> Candidate {
    Candidate::Wait {
        rho: (idle_ms + LOG_TIME_EPS).ln(),
    }
}

fn single_layer(candidates: Vec<Candidate>, alphas: Vec<f64>) -> SearchSpace {
    SearchSpace {
        layers: vec![Layer { candidates, alphas }],
    }
}

#[test]
fn initial_space_has_the_documented_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let space = init_search_space(&mut rng);
    assert_eq!(space.layers.len(), N_LAYERS);
    assert_eq!(space.layers[0].candidates.len(), RF_CANDIDATES);
    assert!(space.layers[0].candidates.iter().all(Candidate::is_rf));
    for layer in &space.layers[1..] {
        assert_eq!(layer.candidates.len(), RF_CANDIDATES + WAIT_CANDIDATES);
        assert!(layer.candidates[..RF_CANDIDATES].iter().all(Candidate::is_rf));
        assert!(layer.candidates[RF_CANDIDATES..]
            .iter()
            .all(|c| !c.is_rf()));
    }
    assert_eq!(
        space.n_alphas(),
        RF_CANDIDATES + (N_LAYERS - 1) * (RF_CANDIDATES + WAIT_CANDIDATES)
    );
}

#[test]
fn initialization_respects_the_parameter_bands() {
    for seed in [0u64, 11, 42] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = init_search_space(&mut rng);
        for layer in &space.layers {
            for a in &layer.alphas {
                assert!(a.abs() < 0.01, "alpha {a} too large");
            }
            for (k, c) in layer.candidates.iter().enumerate() {
                match *c {
                    Candidate::Rf { theta, phi, rho } => {
                        let deg = rad_to_deg(theta);
                        let lo = FLIP_BAND_DEG * k as f64;
                        assert!(
                            (lo..=lo + FLIP_BAND_DEG).contains(&deg),
                            "flip {deg} outside band {k}"
                        );
                        assert!((-std::f64::consts::PI..=std::f64::consts::PI).contains(&phi));
                        assert_eq!(rho, (RF_IDLE_FLOOR_MS + LOG_TIME_EPS).ln());
                    }
                    Candidate::Wait { rho } => {
                        let j = k - RF_CANDIDATES;
                        let dt = rho.exp() - LOG_TIME_EPS;
                        let lo = 10f64.powi(j as i32);
                        assert!(
                            (lo..=10.0 * lo).contains(&dt),
                            "wait {dt} outside decade {j}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn softmax_is_a_distribution_and_shift_invariant() {
    let layer = Layer {
        candidates: vec![rf(1.0, 0.0, 6.2), wait(5.0), wait(80.0)],
        alphas: vec![0.3, -0.2, 1.4],
    };
    let p = layer.probs();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&pi| pi > 0.0));

    let shifted = Layer {
        candidates: layer.candidates.clone(),
        alphas: layer.alphas.iter().map(|a| a + 1000.0).collect(),
    };
    for (a, b) in p.iter().zip(shifted.probs()) {
        assert!((a - b).abs() < 1e-12, "softmax not shift invariant");
    }

    let extreme = Layer {
        candidates: layer.candidates.clone(),
        alphas: vec![1000.0, 1001.0, 999.0],
    };
    assert!(extreme.probs().iter().all(|p| p.is_finite()));
}

#[test]
fn equal_weights_give_exactly_uniform_probabilities() {
    let layer = Layer {
        candidates: vec![rf(1.0, 0.0, 6.2), wait(5.0), wait(80.0), wait(300.0)],
        alphas: vec![0.7; 4],
    };
    for p in layer.probs() {
        assert_eq!(p, 0.25);
    }
}

#[test]
fn argmax_breaks_ties_toward_the_lowest_index() {
    let layer = Layer {
        candidates: vec![wait(1.0), wait(2.0), wait(3.0)],
        alphas: vec![0.5, 0.2, 0.5],
    };
    assert_eq!(layer.argmax(), 0);
    let flat = Layer {
        candidates: vec![wait(1.0), wait(2.0)],
        alphas: vec![-1.0, -1.0],
    };
    assert_eq!(flat.argmax(), 0);
}

#[test]
fn sampling_frequencies_match_the_softmax() {
    // alphas ln(1), ln(2), ln(3) give p = (1/6, 2/6, 3/6).
    let space = single_layer(
        vec![rf(1.0, 0.0, 6.2), wait(5.0), wait(80.0)],
        vec![0.0, 2f64.ln(), 3f64.ln()],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 60_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let path = space.sample_path(&mut rng);
        assert_eq!(path.len(), 1);
        counts[path[0]] += 1;
    }
    let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
    for (c, w) in counts.iter().zip(want) {
        let freq = *c as f64 / n as f64;
        // 5 sigma of a binomial proportion at n = 60k.
        assert!((freq - w).abs() < 0.01, "freq {freq}, want {w}");
    }
}

#[test]
fn realize_builds_the_selected_ops() {
    let space = SearchSpace {
        layers: vec![
            Layer {
                candidates: vec![rf(1.0, 0.5, 10.0), rf(2.0, -0.5, 7.0)],
                alphas: vec![0.0, 0.0],
            },
            Layer {
                candidates: vec![rf(0.3, 0.0, 6.2), wait(25.0)],
                alphas: vec![0.0, 0.0],
            },
        ],
    };
    let seq = space.realize(&[1, 1]);
    assert_eq!(seq.ops.len(), 2);
    match seq.ops[0] {
        Op::Rf(r) => {
            assert_eq!(r.flip, 2.0);
            assert_eq!(r.phase, -0.5);
            assert!((r.idle_after - 7.0).abs() < 1e-12);
        }
        Op::Wait(_) => panic!("expected an RF op"),
    }
    match seq.ops[1] {
        Op::Wait(w) => assert!((w.idle - 25.0).abs() < 1e-12),
        Op::Rf(_) => panic!("expected a wait op"),
    }
}

#[test]
fn realized_idles_never_undershoot_the_floors() {
    // ln/exp roundoff must not produce an idle below the floor.
    let at_floor = rf(1.0, 0.0, RF_IDLE_FLOOR_MS);
    match at_floor.realize() {
        Op::Rf(r) => assert!(r.idle_after >= RF_IDLE_FLOOR_MS),
        Op::Wait(_) => panic!("expected an RF op"),
    }
    let tiny = Candidate::Wait {
        rho: (WAIT_IDLE_FLOOR_MS + LOG_TIME_EPS).ln(),
    };
    match tiny.realize() {
        Op::Wait(w) => assert!(w.idle >= WAIT_IDLE_FLOOR_MS),
        Op::Rf(_) => panic!("expected a wait op"),
    }
}

#[test]
fn discretize_prunes_small_flips_and_drops_leading_waits() {
    let space = SearchSpace {
        layers: vec![
            Layer {
                candidates: vec![rf(deg_to_rad(2.0), 0.0, 10.0)],
                alphas: vec![0.0],
            },
            Layer {
                candidates: vec![wait(50.0)],
                alphas: vec![0.0],
            },
            Layer {
                candidates: vec![rf(deg_to_rad(90.0), 0.0, 6.2)],
                alphas: vec![0.0],
            },
            Layer {
                candidates: vec![wait(20.0)],
                alphas: vec![0.0],
            },
            Layer {
                candidates: vec![rf(deg_to_rad(180.0), 0.0, 6.2)],
                alphas: vec![0.0],
            },
        ],
    };
    let seq = space.discretize().expect("valid design");
    // The 2 degree pulse is pruned (its idle merges into the wait) and the
    // now-leading wait is dropped.
    assert_eq!(seq.ops.len(), 3);
    match seq.ops[0] {
        Op::Rf(r) => assert!((rad_to_deg(r.flip) - 90.0).abs() < 1e-9),
        Op::Wait(_) => panic!("expected the 90 degree pulse first"),
    }
    match seq.ops[1] {
        Op::Wait(w) => assert!((w.idle - 20.0).abs() < 1e-9),
        Op::Rf(_) => panic!("expected the inner wait"),
    }
    assert!((seq.duration_ms() - 32.4).abs() < 1e-9);
    assert!(seq.is_valid());
}

#[test]
fn discretize_rejects_a_space_with_no_real_pulses() {
    let space = SearchSpace {
        layers: vec![Layer {
            candidates: vec![rf(deg_to_rad(1.0), 0.0, 6.2), rf(deg_to_rad(2.5), 0.0, 6.2)],
            alphas: vec![1.0, 0.0],
        }],
    };
    assert!(matches!(space.discretize(), Err(Error::EmptySequence)));
}

#[test]
fn discretize_follows_the_argmax_path() {
    let space = SearchSpace {
        layers: vec![Layer {
            candidates: vec![rf(deg_to_rad(45.0), 0.0, 6.2), rf(deg_to_rad(90.0), 0.0, 8.0)],
            alphas: vec![0.1, 0.9],
        }],
    };
    let seq = space.discretize().expect("valid design");
    assert_eq!(seq.ops.len(), 1);
    match seq.ops[0] {
        Op::Rf(r) => {
            assert!((rad_to_deg(r.flip) - 90.0).abs() < 1e-9);
            assert!((r.idle_after - 8.0).abs() < 1e-9);
        }
        Op::Wait(_) => panic!("expected an RF op"),
    }
}

#[test]
fn expected_penalties_match_hand_sums() {
    let space = SearchSpace {
        layers: vec![
            Layer {
                candidates: vec![rf(1.0, 0.0, 6.2), wait(5.0)],
                alphas: vec![0.0, 0.0],
            },
            Layer {
                candidates: vec![rf(2.0, 0.0, 6.2), rf(0.5, 0.0, 6.2)],
                alphas: vec![0.0, 0.0],
            },
        ],
    };
    // Layer 1: p = (1/2, 1/2), count 0.5, energy 0.5 * 1.
    // Layer 2: all RF, count 1, energy (4 + 0.25) / 2.
    assert!((space.expected_rf_count() - 1.5).abs() < 1e-12);
    assert!((space.expected_rf_energy() - (0.5 + 2.125)).abs() < 1e-12);
}

/// Surrogate objective the architecture gradients differentiate for a fixed
/// sampled path: the active candidate's gate probability times its gate
/// sensitivity, plus the expected-count and expected-energy penalties.
fn surrogate(space: &SearchSpace, active: usize, gate: f64, weights: &LossWeights) -> f64 {
    let p = space.layers[0].probs();
    p[active] * gate
        + weights.rf_count * space.expected_rf_count()
        + weights.rf_energy * space.expected_rf_energy()
}

#[test]
fn arch_grads_differentiate_the_sampled_path_surrogate() {
    let mut space = single_layer(
        vec![rf(1.2, 0.0, 6.2), wait(5.0), rf(0.4, 1.0, 6.2)],
        vec![0.1, -0.3, 0.2],
    );
    let gates = [0.7, -0.4, 1.1];
    let weights = LossWeights {
        signal: [0.0; 3],
        null: [0.0; 3],
        contrast: 0.0,
        rf_count: 0.01,
        rf_energy: 0.02,
    };

    let h = 1e-6;
    for active in 0..3 {
        let grads = space.arch_grads(&[active], &[gates[active]], &weights);
        for i in 0..3 {
            let base = space.layers[0].alphas[i];
            space.layers[0].alphas[i] = base + h;
            let up = surrogate(&space, active, gates[active], &weights);
            space.layers[0].alphas[i] = base - h;
            let down = surrogate(&space, active, gates[active], &weights);
            space.layers[0].alphas[i] = base;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (grads[0][i] - fd).abs() < 1e-8,
                "path {active}, alpha {i}: grad {}, fd {fd}",
                grads[0][i]
            );
        }
    }
}

#[test]
fn arch_grads_sum_to_zero_per_layer() {
    // Softmax gradients live on the simplex tangent: both the gate term and
    // the exact penalty derivatives sum to zero over a layer's weights.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let space = init_search_space(&mut rng);
    let weights = LossWeights::e1();
    let path = space.sample_path(&mut rng);
    let gates: Vec<f64> = (0..path.len()).map(|l| 0.3 * l as f64 - 0.7).collect();
    for layer in space.arch_grads(&path, &gates, &weights) {
        let sum: f64 = layer.iter().sum();
        assert!(sum.abs() < 1e-12, "layer gradient sum {sum}");
    }
}

#[test]
fn arch_grads_vanish_once_a_layer_has_converged() {
    let space = single_layer(
        vec![rf(1.0, 0.0, 6.2), wait(5.0), wait(80.0)],
        vec![60.0, 0.0, 0.0],
    );
    let weights = LossWeights {
        signal: [0.0; 3],
        null: [0.0; 3],
        contrast: 0.0,
        rf_count: 0.0,
        rf_energy: 0.0,
    };
    let g = space.arch_grads(&[0], &[1.0], &weights);
    for gi in &g[0] {
        assert!(gi.abs() < 1e-20, "grad {gi} should vanish at a one-hot");
    }
}

#[test]
fn project_clamps_into_the_feasible_set() {
    let mut space = SearchSpace {
        layers: vec![Layer {
            candidates: vec![
                Candidate::Rf {
                    theta: -0.2,
                    phi: 0.3,
                    rho: (0.001f64).ln(),
                },
                Candidate::Wait { rho: -20.0 },
            ],
            alphas: vec![0.0, 0.0],
        }],
    };
    space.project();
    match space.layers[0].candidates[0] {
        Candidate::Rf { theta, rho, .. } => {
            assert_eq!(theta, 0.0);
            assert_eq!(rho, (RF_IDLE_FLOOR_MS + LOG_TIME_EPS).ln());
        }
        Candidate::Wait { .. } => panic!("expected an RF candidate"),
    }
    match space.layers[0].candidates[1] {
        Candidate::Wait { rho } => {
            assert_eq!(rho, (WAIT_IDLE_FLOOR_MS + LOG_TIME_EPS).ln());
        }
        Candidate::Rf { .. } => panic!("expected a wait candidate"),
    }

    // Idempotent: projecting a feasible space changes nothing.
    let once = serde_json::to_string(&space).unwrap();
    space.project();
    assert_eq!(serde_json::to_string(&space).unwrap(), once);
}
