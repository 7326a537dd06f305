mod common;

use artran_core::screen::*;
use artran_core::synth::{generate_dataset, group_volumes, GenConfig, Volume};
use artran_core::train::biased_label;
use artran_core::vit::{Artran, ModelConfig};
use artran_core::Image;
use common::probe_image;
use proptest::prelude::*;

fn model() -> Artran<f32> {
    Artran::init(ModelConfig::toy(), 21).unwrap()
}

#[test]
fn centre_frame_arithmetic() {
    let eight: Vec<usize> = (0..8).collect();
    assert_eq!(select_center_frames(&eight, 7).unwrap(), &eight[0..7]);
    let seven: Vec<usize> = (0..7).collect();
    assert_eq!(select_center_frames(&seven, 7).unwrap(), &seven[..]);
    let many: Vec<usize> = (0..400).collect();
    let picked = select_center_frames(&many, coerce_odd(100)).unwrap();
    assert_eq!((picked[0], picked[98], picked.len()), (150, 248, 99));
    assert!(select_center_frames(&eight, 9).is_err());
}

#[test]
fn documented_uncertainty_values() {
    let u = uncertainty_scores(&[0.9; 7], &[0.9]).unwrap();
    assert_eq!(u.u_disagreement, 0.0);
    assert_eq!(majority_decision(&[0.9; 7]), 1);

    let probs = [0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1];
    let u = uncertainty_scores(&probs, &[0.5]).unwrap();
    assert!((u.u_disagreement - 6.0 / 7.0).abs() < 1e-15);

    assert_eq!(uncertainty_scores(&[1.0; 3], &[1.0]).unwrap().u_posterior, 0.0);
    let near = uncertainty_scores(&[0.5 + 1e-12; 5], &[0.5]).unwrap();
    assert!((near.u_posterior - 1.0).abs() < 1e-9);
    assert_eq!(uncertainty_scores(&[0.2], &[0.0, 1.0, 0.0, 1.0]).unwrap().u_sweep, 1.0);
    assert!(uncertainty_scores(&[], &[0.1]).is_err());
}

#[test]
fn majority_tie_goes_positive() {
    assert_eq!(majority_decision(&[0.9, 0.1]), 1);
    assert_eq!(majority_decision(&[0.9, 0.1, 0.2]), 0);
    // exactly 0.5 is not a positive frame
    assert_eq!(majority_decision(&[0.5, 0.5, 0.9]), 0);
}

proptest! {
    #[test]
    fn scores_are_bounded_and_symmetric(
        probs in prop::collection::vec(0.0..=1.0f64, 1..12),
        sweep in prop::collection::vec(0.0..=1.0f64, 1..10),
    ) {
        let u = uncertainty_scores(&probs, &sweep).unwrap();
        for s in [u.u_posterior, u.u_disagreement, u.u_sweep] {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let v = uncertainty_scores(&flipped, &sweep).unwrap();
        prop_assert!((u.u_posterior - v.u_posterior).abs() < 1e-12);
        let unanimous = probs.iter().all(|&p| p > 0.5) || probs.iter().all(|&p| p <= 0.5);
        prop_assert_eq!(u.u_disagreement == 0.0, unanimous);
    }

    #[test]
    fn spearman_of_monotone_maps_is_one(xs in prop::collection::btree_set(-1000i32..1000, 3..20)) {
        let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v * v + 3.0).collect();
        prop_assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-12);
    }
}

#[test]
fn spearman_with_ties_uses_average_ranks() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 1.0, 2.0, 2.0];
    // ranks 1.5,1.5,3.5,3.5 against 1..4
    let want = 4.0 / (5.0f64 * 4.0).sqrt();
    assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-12);
    assert_eq!(spearman(&x, &[2.0; 4]), None);
}

#[test]
fn screening_is_deterministic_and_consistent() {
    let m = model();
    let frames: Vec<Image> = (0..7).map(|f| common::probe_image(-6.0 - f as f64 * 0.1)).collect();
    let a = screen_volume("v", &frames, 0.25, &m, &DEFAULT_SWEEP).unwrap();
    let b = screen_volume("v", &frames, 0.25, &m, &DEFAULT_SWEEP).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.sweep.len(), 9);
    assert_eq!(a.frame_posteriors.len(), 7);
    for &(d, mean_p) in &a.sweep {
        let r = screen_volume("v", &frames, d, &m, &[]).unwrap();
        assert_eq!(mean(&r.frame_posteriors), mean_p);
    }
    let json = serde_json::to_value(&a).unwrap();
    for key in ["volume_id", "delta", "frame_posteriors", "decision", "u_posterior", "u_disagreement", "u_sweep", "sweep"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn screening_rejects_bad_inputs() {
    let m = model();
    let frames = vec![probe_image(-3.0)];
    assert!(screen_volume("v", &frames, 1.5, &m, &DEFAULT_SWEEP).is_err());
    let wrong = vec![Image::zeros(32, 64)];
    assert!(screen_volume("v", &wrong, 0.0, &m, &DEFAULT_SWEEP).is_err());
}

/// Stands in for a perfect screener: decides from the recorded SE directly.
fn oracle_rows(volumes: &[Volume], deltas: &[f64]) -> Vec<SweepRow> {
    let se: Vec<f64> = volumes.iter().map(|v| v.se_d).collect();
    let decisions: Vec<Vec<u8>> = se
        .iter()
        .map(|&s| deltas.iter().map(|&d| biased_label(s, d).unwrap()).collect())
        .collect();
    sweep_rows_from_decisions(&se, &decisions, deltas).unwrap()
}

#[test]
fn perfect_decisions_score_perfectly() {
    let cfg = GenConfig {
        n_volumes: 40,
        frames_per_volume: 1,
        noise_sigma_d: 0.0,
        ..Default::default()
    };
    let volumes = group_volumes(&generate_dataset(&cfg).unwrap());
    let rows = oracle_rows(&volumes, &DEFAULT_SWEEP);
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!((r.precision, r.recall, r.accuracy), (1.0, 1.0, 1.0));
    }
    let three = oracle_rows(&volumes, &[-1.0, 0.0, 1.0]);
    assert!(three.windows(2).all(|w| w[0].labeled_positive() <= w[1].labeled_positive()));
}

#[test]
fn pr_sweep_table_has_one_row_per_delta() {
    let cfg = GenConfig {
        n_volumes: 3,
        frames_per_volume: 3,
        ..Default::default()
    };
    let volumes = group_volumes(&generate_dataset(&cfg).unwrap());
    let rows = pr_sweep(&volumes, &model(), &[-1.0, 0.0, 1.0], 3).unwrap();
    let tsv = sweep_table_tsv(&rows);
    assert_eq!(tsv.lines().count(), 4);
    assert!(tsv.starts_with("delta\t"));
    for r in &rows {
        assert_eq!(r.true_pos + r.false_pos + r.true_neg + r.false_neg, 3);
    }
    assert!(pr_sweep(&[], &model(), &[0.0], 3).is_err());
}
