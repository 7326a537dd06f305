use artran_core::sst::{
    clean_from_noisy, extended_transition, loss_terms_on_tape, noisy_posterior, theta_tensor,
    total_loss, transition, volume_loss, LossWeights, Posterior, SstParams,
};
use artran_core::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss written out from scratch, without any library helper.
fn loss_oracle(pb: f64, pa: f64, delta: f64, se: f64, th: [f64; 3]) -> f64 {
    let (s0, s1, s2) = (sigmoid(th[0]), sigmoid(th[1]), sigmoid(th[2]));
    let t = |d: f64| {
        (
            (1.0 + s0 * s1) / 2.0 + (1.0 - s0) / 4.0 * (1.0 - d),
            (1.0 + s0 * s2) / 2.0 + (1.0 - s0) / 4.0 * (1.0 + d),
        )
    };
    let ce = |p1: f64, d: f64| {
        let (t11, t22) = t(d);
        let q1 = (1.0 - t11) * (1.0 - p1) + t22 * p1;
        let y = if se - 0.25 * d <= -6.0 { 1 } else { 0 };
        if y == 1 {
            -q1.ln()
        } else {
            -(1.0 - q1).ln()
        }
    };
    let e11 = 1.0 + (s0 * s1 - s0) / 2.0;
    let e22 = 1.0 + (s0 * s2 - s0) / 2.0;
    ce(pb, 0.0) + ce(pa, delta) + (e11 + e22 - 1.0).ln()
}

fn theta() -> impl Strategy<Value = SstParams> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b, c)| SstParams::new(a, b, c))
}

const GRID: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn diagonals_stay_in_the_open_band(p in theta(), delta in -1.0..=1.0f64) {
        let t = transition(delta, &p).unwrap();
        prop_assert!(t.t11 > 0.5 && t.t11 < 1.0, "{t:?}");
        prop_assert!(t.t22 > 0.5 && t.t22 < 1.0, "{t:?}");
        prop_assert!(t.det() > 0.0);
        for col in 0..2 {
            let e = t.entries();
            prop_assert!((e[0][col] + e[1][col] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn shifted_simplex_lies_inside_extended(p in theta(), delta in -1.0..=1.0f64) {
        let t = transition(delta, &p).unwrap();
        let ext = extended_transition(&p);
        prop_assert!(t.t11 <= ext.t11 && t.t22 <= ext.t22);
    }

    #[test]
    fn noisy_positive_rises_with_delta(p in theta(), clean in 0.0..=1.0f64) {
        let post = Posterior::positive(clean);
        let mut last = f64::NEG_INFINITY;
        for d in GRID {
            let q = noisy_posterior(&post, &transition(d, &p).unwrap()).p1;
            prop_assert!(q >= last - 1e-15, "{q} after {last} at delta {d}");
            last = q;
        }
    }

    #[test]
    fn clean_noisy_round_trip(p in theta(), delta in -1.0..=1.0f64, clean in 0.0..=1.0f64) {
        let t = transition(delta, &p).unwrap();
        let post = Posterior::positive(clean);
        let back = clean_from_noisy(&noisy_posterior(&post, &t), &t).unwrap();
        prop_assert!((back.p0 - post.p0).abs() < 1e-9 && (back.p1 - post.p1).abs() < 1e-9);
    }

    #[test]
    fn transition_is_affine_in_delta(p in theta(), a in -1.0..=1.0f64, b in -1.0..=1.0f64) {
        let mid = transition((a + b) / 2.0, &p).unwrap();
        let (ta, tb) = (transition(a, &p).unwrap(), transition(b, &p).unwrap());
        prop_assert!((mid.t11 - (ta.t11 + tb.t11) / 2.0).abs() < 1e-12);
        prop_assert!((mid.t22 - (ta.t22 + tb.t22) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn extended_matrix_is_built_from_the_endpoints(p in theta()) {
        let ext = extended_transition(&p);
        prop_assert!((ext.t11 - transition(-1.0, &p).unwrap().t11).abs() < 1e-12);
        prop_assert!((ext.t22 - transition(1.0, &p).unwrap().t22).abs() < 1e-12);
    }

    #[test]
    fn total_loss_matches_oracle(
        p in theta(),
        pb in 0.01..0.99f64,
        pa in 0.01..0.99f64,
        delta in -1.0..=1.0f64,
        se in -9.0..-3.0f64,
    ) {
        let got = total_loss(
            &Posterior::positive(pb),
            &Posterior::positive(pa),
            delta,
            se,
            Some(&p),
            &LossWeights::default(),
        ).unwrap();
        let want = loss_oracle(pb, pa, delta, se, p.as_array());
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn hand_evaluated_cases() {
    let zero = SstParams::new(0.0, 0.0, 0.0);
    let t = transition(0.5, &zero).unwrap();
    assert!((t.t11 - 0.6875).abs() < 1e-15 && (t.t22 - 0.8125).abs() < 1e-15);
    let ext = extended_transition(&zero);
    assert!((ext.t11 - 0.875).abs() < 1e-15 && (ext.t22 - 0.875).abs() < 1e-15);
    assert!((volume_loss(&ext).unwrap() - 0.75f64.ln()).abs() < 1e-12);
    let n = noisy_posterior(&Posterior::new(0.5, 0.5), &t);
    assert!((n.p0 - 0.4375).abs() < 1e-15 && (n.p1 - 0.5625).abs() < 1e-15);
}

#[test]
fn saturated_theta_approaches_identity() {
    let big = SstParams::new(40.0, 40.0, 40.0);
    for d in GRID {
        let t = transition(d, &big).unwrap();
        assert!((t.t11 - 1.0).abs() < 1e-12 && (t.t22 - 1.0).abs() < 1e-12);
    }
    let small = SstParams::new(-40.0, 0.0, 0.0);
    let t = transition(0.0, &small).unwrap();
    assert!((t.t11 - 0.75).abs() < 1e-12 && (t.t22 - 0.75).abs() < 1e-12);
}

#[test]
fn out_of_range_delta_is_rejected() {
    assert!(transition(-1.5, &SstParams::default()).is_err());
}

#[test]
fn equal_posteriors_at_zero_give_equal_terms() {
    let tape = Tape::<f64>::new();
    let clean = Tensor::from_f64(&[2], &[0.7, 0.3]).unwrap();
    let theta = tape.constant(theta_tensor(&SstParams::default()));
    for se in [-7.0, -6.0, -5.0] {
        let (b, a) = (tape.constant(clean.clone()), tape.constant(clean.clone()));
        let terms = loss_terms_on_tape(b, a, 0.0, se, Some(theta)).unwrap();
        assert_eq!(terms.benchmark.item(), terms.adjusted.item());
    }
}
