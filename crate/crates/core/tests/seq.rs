use std::f64::consts::PI;

use proptest::prelude::*;
use seqsearch::seq::{wrap_phase, Op, Sequence, PRUNE_THRESHOLD_RAD, RF_IDLE_FLOOR_MS};
use seqsearch::{deg_to_rad, Error};

fn ulps_apart(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    (a.to_bits() as i64).abs_diff(b.to_bits() as i64)
}

#[test]
fn wrap_phase_lands_in_the_canonical_range() {
    assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    assert_eq!(wrap_phase(0.0), 0.0);
    assert_eq!(wrap_phase(PI), PI);
    assert_eq!(wrap_phase(-PI), PI);
    assert_eq!(wrap_phase(2.0 * PI), 0.0);
    assert!((wrap_phase(-3.0 * PI) - PI).abs() < 1e-12);
}

#[test]
fn constructors_normalize_phases() {
    let op = Sequence::rf(1.0, 3.0 * PI / 2.0, 6.2);
    match op {
        Op::Rf(r) => assert!((r.phase + PI / 2.0).abs() < 1e-15),
        _ => panic!("expected RF"),
    }
}

#[test]
fn validate_accepts_the_canonical_hahn_pair() {
    let seq = Sequence::new(vec![
        Sequence::rf(PI / 2.0, 0.0, 6.2),
        Sequence::rf(PI, PI, 6.2),
    ]);
    assert!(seq.is_valid());
    assert_eq!(seq.rf_count(), 2);
    assert!((seq.duration_ms() - 12.4).abs() < 1e-12);
}

#[test]
fn validate_flags_each_violation() {
    assert_eq!(Sequence::new(vec![]).validate(), vec!["sequence is empty"]);

    let wait_first = Sequence::new(vec![Sequence::wait(5.0), Sequence::rf(1.0, 0.0, 6.2)]);
    assert!(wait_first.validate().iter().any(|e| e.contains("first op")));

    let six_rf = Sequence::new(vec![Sequence::rf(1.0, 0.0, 6.2); 6]);
    assert!(six_rf.validate().iter().any(|e| e.contains("at most 5")));

    let short_idle = Sequence::new(vec![Sequence::rf(1.0, 0.0, 5.0)]);
    assert!(short_idle.validate().iter().any(|e| e.contains("idle_after")));

    let neg_flip = Sequence::new(vec![Sequence::rf(-0.1, 0.0, 6.2)]);
    assert!(neg_flip.validate().iter().any(|e| e.contains(">= 0")));

    let zero_wait = Sequence::new(vec![Sequence::rf(1.0, 0.0, 6.2), Sequence::wait(0.0)]);
    assert!(zero_wait.validate().iter().any(|e| e.contains("wait idle")));

    let nan_flip = Sequence::new(vec![Sequence::rf(f64::NAN, 0.0, 6.2)]);
    assert!(!nan_flip.is_valid());
}

#[test]
fn prune_drops_small_flips_and_preserves_duration() {
    let seq = Sequence::new(vec![
        Sequence::rf(deg_to_rad(88.0), 0.0, 10.0),
        Sequence::rf(deg_to_rad(2.0), 0.0, 20.0),
        Sequence::rf(deg_to_rad(177.0), PI, 30.0),
    ]);
    let pruned = seq.prune_small_flips(PRUNE_THRESHOLD_RAD).unwrap();
    assert_eq!(pruned.rf_count(), 2);
    assert_eq!(pruned.flips(), vec![deg_to_rad(88.0), deg_to_rad(177.0)]);
    // The removed pulse's idle merges into the preceding interval.
    assert_eq!(pruned.ops[0].idle(), 30.0);
    assert_eq!(pruned.ops[1].idle(), 30.0);
    assert!((pruned.duration_ms() - seq.duration_ms()).abs() < 1e-12);
}

#[test]
fn prune_merges_a_leading_small_flip_forward() {
    let seq = Sequence::new(vec![
        Sequence::rf(deg_to_rad(2.0), 0.0, 8.0),
        Sequence::rf(deg_to_rad(88.0), 0.0, 10.0),
        Sequence::rf(deg_to_rad(177.0), PI, 6.2),
    ]);
    let pruned = seq.prune_small_flips(PRUNE_THRESHOLD_RAD).unwrap();
    assert_eq!(pruned.flips().len(), 2);
    assert_eq!(pruned.ops[0].idle(), 18.0);
    assert!((pruned.duration_ms() - seq.duration_ms()).abs() < 1e-12);
    assert!(pruned.is_valid());
}

#[test]
fn prune_keeps_borderline_flips() {
    let seq = Sequence::new(vec![
        Sequence::rf(deg_to_rad(6.1), 0.0, 6.2),
        Sequence::rf(deg_to_rad(87.4), 0.0, 6.2),
        Sequence::rf(deg_to_rad(170.1), PI, 6.2),
    ]);
    let pruned = seq.prune_small_flips(PRUNE_THRESHOLD_RAD).unwrap();
    assert_eq!(pruned, seq);

    let single = Sequence::new(vec![Sequence::rf(PI / 2.0, 0.0, 6.2)]);
    assert_eq!(single.prune_small_flips(PRUNE_THRESHOLD_RAD).unwrap(), single);
}

#[test]
fn prune_rejects_removing_every_pulse() {
    let seq = Sequence::new(vec![Sequence::rf(deg_to_rad(2.0), 0.0, 6.2)]);
    match seq.prune_small_flips(PRUNE_THRESHOLD_RAD) {
        Err(Error::EmptySequence) => {}
        other => panic!("expected EmptySequence, got {other:?}"),
    }
}

#[test]
fn fixture_parses_and_reserializes_byte_identically() {
    let text = include_str!("fixtures/hahn.seq");
    let seq = Sequence::deserialize(text).unwrap();
    assert_eq!(seq.rf_count(), 2);
    assert!((seq.flips()[0] - PI / 2.0).abs() < 1e-12);
    assert!((seq.phases()[1] - PI).abs() < 1e-12);

    // Canonical text is a fixed point of deserialize/serialize (modulo the
    // comment header, which serialization does not reproduce).
    let canonical = "rf flip_deg=90 phase_deg=0 idle_ms=6.2\nrf flip_deg=180 phase_deg=180 idle_ms=6.2\n";
    assert_eq!(seq.serialize(), canonical);
    let reparsed = Sequence::deserialize(canonical).unwrap();
    assert_eq!(reparsed.serialize(), canonical);
}

#[test]
fn deserialize_reports_the_offending_line() {
    let cases = [
        ("rf flip_deg=90 phase_deg=0", "missing idle_ms"),
        ("squawk idle_ms=3", "unknown op"),
        ("wait idle_ms=5 flip_deg=2", "wait"),
        ("rf flip_deg=abc phase_deg=0 idle_ms=9", "bad number"),
        ("rf flip_deg=90 gain=3 idle_ms=9", "unknown field"),
        ("rf flip90", "key=value"),
    ];
    for (text, needle) in cases {
        let full = format!("# header\n\n{text}\n");
        match Sequence::deserialize(&full) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3, "line number for {text:?}");
                assert!(
                    msg.to_lowercase().contains(needle) || needle == "wait",
                    "unexpected message {msg:?} for {text:?}"
                );
            }
            other => panic!("expected parse error for {text:?}, got {other:?}"),
        }
    }
}

fn arb_op(first: bool) -> impl Strategy<Value = Op> {
    let rf = (
        0.0..(2.0 * PI),
        (-PI * 0.999)..(PI * 0.999),
        RF_IDLE_FLOOR_MS..500.0,
    )
        .prop_map(|(flip, phase, idle)| Sequence::rf(flip, phase, idle));
    if first {
        rf.boxed()
    } else {
        prop_oneof![
            rf,
            (0.001..1000.0f64).prop_map(Sequence::wait),
        ]
        .boxed()
    }
}

fn arb_sequence() -> impl Strategy<Value = Sequence> {
    (arb_op(true), prop::collection::vec(arb_op(false), 0..6)).prop_map(|(head, tail)| {
        let mut ops = vec![head];
        // Keep at most 4 more RF pulses so the sequence stays valid.
        let mut rf_left = 4;
        for op in tail {
            match op {
                Op::Rf(_) if rf_left == 0 => {}
                Op::Rf(_) => {
                    rf_left -= 1;
                    ops.push(op);
                }
                w => ops.push(w),
            }
        }
        Sequence::new(ops)
    })
}

proptest! {
    /// Serialization round-trips within 1 ulp on angles (the degree
    /// conversion rounds twice) and exactly on idle times.
    #[test]
    fn roundtrip_preserves_every_op(seq in arb_sequence()) {
        prop_assert!(seq.is_valid());
        let back = Sequence::deserialize(&seq.serialize()).unwrap();
        prop_assert_eq!(back.ops.len(), seq.ops.len());
        for (a, b) in seq.ops.iter().zip(&back.ops) {
            match (a, b) {
                (Op::Rf(x), Op::Rf(y)) => {
                    prop_assert!(ulps_apart(x.flip, y.flip) <= 1);
                    prop_assert!(wrap_phase(x.phase - y.phase).abs() < 1e-12);
                    prop_assert_eq!(x.idle_after.to_bits(), y.idle_after.to_bits());
                }
                (Op::Wait(x), Op::Wait(y)) => {
                    prop_assert_eq!(x.idle.to_bits(), y.idle.to_bits());
                }
                _ => prop_assert!(false, "op kind changed"),
            }
        }
    }

    /// One serialize/deserialize pass reaches a fixed point of the text form.
    #[test]
    fn serialization_stabilizes_after_one_pass(seq in arb_sequence()) {
        let once = Sequence::deserialize(&seq.serialize()).unwrap().serialize();
        let twice = Sequence::deserialize(&once).unwrap().serialize();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn prune_never_changes_duration(seq in arb_sequence()) {
        if let Ok(pruned) = seq.prune_small_flips(PRUNE_THRESHOLD_RAD) {
            prop_assert!((pruned.duration_ms() - seq.duration_ms()).abs() < 1e-9);
            prop_assert!(pruned.flips().iter().all(|&f| f >= PRUNE_THRESHOLD_RAD
                || seq.flips().iter().all(|&g| g < PRUNE_THRESHOLD_RAD)));
        }
    }
}
