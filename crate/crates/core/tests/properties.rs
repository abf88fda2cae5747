//! Invariants checked over generated inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadsig_core::attacks::{dos_gate, mitm_output_apply, DosKind, GateDecision, MitmOutputKind};
use roadsig_core::control::{postprocess, rate_limit, speed_from_y, ControlCommand};
use roadsig_core::metrics::stats::{percentile, sd};
use roadsig_core::metrics::{
    bonferroni, ci95, classify_signature, cohens_d, fingerprint, paired_t_test, Signature, Thresholds,
};
use roadsig_core::perception::PerceptionOutput;
use roadsig_core::protocol::q9;

fn output_kind() -> impl Strategy<Value = MitmOutputKind> {
    prop_oneof![
        (-2.0..2.0f64).prop_map(|value| MitmOutputKind::Target { value }),
        (-2.0..2.0f64).prop_map(|offset| MitmOutputKind::Bias { offset }),
        Just(MitmOutputKind::Invert),
        (-1.5..0.0f64, 0.0..1.5f64).prop_map(|(low, high)| MitmOutputKind::Random { low, high }),
    ]
}

fn sample(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mitm_output_stays_in_range(
        x in -1.0..1.0f64,
        y in -1.0..1.0f64,
        kind in output_kind(),
        apply_to_y: bool,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (o, m) = mitm_output_apply(PerceptionOutput { x, y }, &kind, apply_to_y, &mut rng);
        prop_assert!((-1.0..=1.0).contains(&o.x) && (-1.0..=1.0).contains(&o.y));
        prop_assert!(m >= 0.0);
        if !apply_to_y {
            prop_assert_eq!(o.y, y);
        }
        match kind {
            MitmOutputKind::Bias { offset } => prop_assert_eq!(o.x, (x + offset).clamp(-1.0, 1.0)),
            MitmOutputKind::Target { value } => prop_assert_eq!(o.x, value.clamp(-1.0, 1.0)),
            MitmOutputKind::Invert => prop_assert_eq!(o.x, -x),
            MitmOutputKind::Random { low, high } => {
                prop_assert!(o.x >= low.max(-1.0) && o.x <= high.min(1.0))
            }
        }
    }

    #[test]
    fn drop_gate_respects_its_extremes(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            prop_assert_eq!(dos_gate(&DosKind::Drop { rate: 0.0 }, &mut rng), GateDecision::Pass);
            prop_assert_eq!(dos_gate(&DosKind::Drop { rate: 1.0 }, &mut rng), GateDecision::Dropped);
        }
    }

    #[test]
    fn steering_mapping_is_bounded(x in -1.0..1.0f64, gain in 0.0..5.0f64, r_max in 0.01..2.0f64, prev in -2.0..2.0f64, slew in 0.0..1.0f64) {
        let r = postprocess(PerceptionOutput { x, y: 0.0 }, gain, r_max);
        prop_assert!(r.abs() <= r_max);
        let cmd = ControlCommand { rotation: prev, ..ControlCommand::idle(0.3) };
        let next = rate_limit(&cmd, r, slew);
        prop_assert!((next - prev).abs() <= slew + 1e-12);
        prop_assert!(speed_from_y(x, 0.3, 0.2) >= 0.0);
    }

    #[test]
    fn normalization_maps_extremes_to_unit_interval(rows in prop::collection::vec(prop::array::uniform3(-50.0..5000.0f64), 2..10)) {
        let named: Vec<(String, [f64; 3])> = rows.iter().enumerate().map(|(i, v)| (format!("r{i}"), *v)).collect();
        let fp = fingerprint(&named);
        for a in 0..3 {
            let vals: Vec<f64> = fp.iter().map(|f| f.normalized.unwrap()[a]).collect();
            prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
            if !fp[0].degenerate[a] {
                prop_assert!(vals.contains(&0.0) && vals.contains(&1.0));
            }
        }
    }

    #[test]
    fn classifier_labels_follow_the_thresholds(n in prop::array::uniform3(0.0..=1.0f64)) {
        let t = Thresholds::default();
        let s = classify_signature(n, t);
        match s {
            Signature::ControlDominant => prop_assert!(n[0] >= t.hi && n[1] <= t.lo && n[2] <= t.lo),
            Signature::MultiDimensional => prop_assert!(n.iter().all(|&v| v >= t.lo)),
            Signature::ResponsivenessDominant => prop_assert!(n[2] >= t.hi && n[0] <= t.lo),
            Signature::ControlModerate => prop_assert!(n[0] > t.lo && n[0] < t.hi),
            Signature::Nominal => {}
        }
        if n.iter().all(|&v| v <= t.lo) {
            prop_assert_eq!(s, Signature::Nominal);
        }
    }

    #[test]
    fn ci_is_centered_and_widens_with_spread(v in sample(2..30), k in 1.5..4.0f64) {
        let ci = ci95(&v).unwrap();
        prop_assert!(ci.lower() <= ci.mean && ci.mean <= ci.upper());
        let wide: Vec<f64> = v.iter().map(|x| x * k).collect();
        let w = ci95(&wide).unwrap();
        prop_assert!((w.half_width - k * ci.half_width).abs() <= 1e-9 * (1.0 + w.half_width));
        prop_assert!((ci.sd - sd(&v)).abs() <= 1e-12 * (1.0 + ci.sd));
    }

    #[test]
    fn paired_test_and_effect_are_antisymmetric(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.p));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        if ab.t.is_finite() {
            prop_assert!((ab.t + ba.t).abs() < 1e-9 * (1.0 + ab.t.abs()));
        }
        let dab = cohens_d(&a, &b).unwrap().d;
        let dba = cohens_d(&b, &a).unwrap().d;
        if dab.is_finite() {
            prop_assert!((dab + dba).abs() < 1e-9 * (1.0 + dab.abs()));
        }
    }

    #[test]
    fn bonferroni_is_monotone_and_capped(p in 0.0..=1.0f64, m in 1usize..50) {
        let c = bonferroni(p, m);
        prop_assert!(c >= p && c <= 1.0);
        prop_assert!(bonferroni(p, m + 1) >= c);
    }

    #[test]
    fn percentile_is_bracketed(v in sample(1..40), q in 0.0..=100.0f64) {
        let p = percentile(&v, q);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p >= lo && p <= hi);
    }

    #[test]
    fn q9_is_idempotent_and_close(v in -1e6..1e6f64) {
        let q = q9(v);
        prop_assert_eq!(q9(q), q);
        prop_assert!((q - v).abs() <= 1e-8 * v.abs().max(f64::MIN_POSITIVE));
    }
}
