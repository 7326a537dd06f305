use artran_core::synth::*;
use artran_core::train::biased_label;
use artran_core::{Error, Image};
use std::fs;

fn small(n_volumes: usize, frames: usize) -> GenConfig {
    GenConfig {
        n_volumes,
        frames_per_volume: frames,
        ..Default::default()
    }
}

/// Least-squares quadratic coefficient of the brightest row per column,
/// against `x − W/2`.
fn fitted_curvature(image: &Image) -> f64 {
    let (h, w) = (image.height, image.width);
    let mut pts = Vec::with_capacity(w);
    for x in 0..w {
        let mut best = 0;
        for y in 1..h {
            if image.at(y, x) > image.at(best, x) {
                best = y;
            }
        }
        pts.push((x as f64 + 0.5 - w as f64 / 2.0, best as f64 + 0.5));
    }
    // normal equations for y = a + b·x + c·x²
    let mut m = [[0.0f64; 4]; 3];
    for &(x, y) in &pts {
        let basis = [1.0, x, x * x];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            m[r][3] += basis[r] * y;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    m[2][3] / m[2][2]
}

#[test]
fn noise_free_config_copies_se() {
    let cfg = GenConfig {
        noise_sigma_d: 0.0,
        ..small(20, 1)
    };
    for s in generate_dataset(&cfg).unwrap() {
        assert_eq!(s.se_d, s.se_struct_d);
    }
    let vols = group_volumes(&generate_dataset(&cfg).unwrap());
    assert_eq!(label_flip_rate(&vols, 0.0).unwrap(), 0.0);
}

#[test]
fn regeneration_is_bit_identical() {
    let cfg = small(4, 3);
    let a = generate_volume(2, &cfg).unwrap();
    let b = generate_volume(2, &cfg).unwrap();
    assert_eq!(a, b);
    // order independence: the whole-dataset pass produces the same volume
    let all = generate_dataset(&cfg).unwrap();
    assert_eq!(&all[6..9], &a[..]);
}

#[test]
fn structural_offset_is_shared_by_all_frames() {
    let cfg = small(10, 8);
    for v in 0..10 {
        let frames = generate_volume(v, &cfg).unwrap();
        let eps = frames[0].se_struct_d - frames[0].se_d;
        assert!(frames.iter().all(|f| f.se_struct_d - f.se_d == eps));
    }
}

#[test]
fn pixels_stay_in_unit_interval() {
    for s in generate_dataset(&small(10, 2)).unwrap() {
        assert!(s.image.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn axial_length_is_centred_at_the_anchor() {
    // Monte-Carlo over volumes whose SE is pinned next to the anchor.
    let n = 1000;
    let cfg = GenConfig {
        n_volumes: n,
        se_range: (-6.0, -6.0 + 1e-9),
        ..Default::default()
    };
    let mean = (0..n).map(|v| volume_latents(v, &cfg).al_mm).sum::<f64>() / n as f64;
    let bound = 3.0 * 0.25 / (n as f64).sqrt();
    assert!((mean - 26.0).abs() < bound, "mean {mean}, bound {bound}");
}

#[test]
fn band_curvature_grows_with_myopia() {
    let cfg = GenConfig {
        noise_sigma_d: 0.0,
        ..Default::default()
    };
    let mut last = f64::NEG_INFINITY;
    for step in 0..=24 {
        let se = -0.5 * step as f64;
        let mean = (0..8)
            .map(|f| fitted_curvature(&render_frame(se, step, f, &cfg).unwrap()))
            .sum::<f64>()
            / 8.0;
        assert!(mean >= last, "curvature {mean} at {se} D fell below {last}");
        last = mean;
    }
}

#[test]
fn out_of_bounds_band_names_the_se() {
    let err = render_frame(-40.0, 0, 0, &GenConfig::default()).unwrap_err();
    assert!(matches!(err, Error::BandOutOfBounds { .. }));
    assert!(err.to_string().contains("-40"), "{err}");
}

#[test]
fn flip_rate_matches_brute_force_count() {
    let cfg = small(60, 1);
    let vols = group_volumes(&generate_dataset(&cfg).unwrap());
    for delta in [-1.0, 0.0, 0.5] {
        let thr = -6.0 + 0.25 * delta;
        let flips = vols
            .iter()
            .filter(|v| (v.se_d <= thr) != (v.se_struct_d <= thr))
            .count();
        let rate = label_flip_rate(&vols, delta).unwrap();
        assert_eq!(rate, flips as f64 / 60.0);
        assert_eq!(latent_flip_rate(&cfg, delta).unwrap(), rate);
    }
}

#[test]
fn flips_concentrate_at_the_threshold() {
    let cfg = GenConfig {
        n_volumes: 6000,
        ..Default::default()
    };
    let mut bins = [(0usize, 0usize); 6];
    for v in 0..cfg.n_volumes {
        let lat = volume_latents(v, &cfg);
        let bin = ((lat.se_d + 6.0).abs() as usize).min(5);
        let flipped =
            biased_label(lat.se_d, 0.0).unwrap() != biased_label(lat.se_struct_d, 0.0).unwrap();
        bins[bin].0 += flipped as usize;
        bins[bin].1 += 1;
    }
    let rates: Vec<f64> = bins.iter().map(|&(f, n)| f as f64 / n as f64).collect();
    assert!(rates[1..].iter().all(|&r| r < rates[0]), "{rates:?}");
}

#[test]
fn split_is_by_volume_in_proportion() {
    let vols = group_volumes(&generate_dataset(&small(60, 2)).unwrap());
    let count = |s: Split| vols.iter().filter(|v| v.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (36, 12, 12));
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_volume(0, &small(1, 4)).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a, b);
        let bits = |i: &Image| i.pixels.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.image), bits(&b.image));
        assert_eq!(a.se_d.to_bits(), b.se_d.to_bits());
    }
    let manifest = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
    assert!(manifest.starts_with('#'));
}

#[test]
fn frame_file_size_follows_the_layout() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_volume(0, &small(1, 1)).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let path = dir.path().join(frame_file_name(&samples[0].volume_id, 0));
    let bytes = fs::read(path).unwrap();
    assert_eq!(bytes.len(), 16400);
    assert_eq!(&bytes[..4], b"SOCT");
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("manifest not found"), "{err}");
}

#[test]
fn corrupt_frames_give_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_volume(0, &small(1, 1)).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let path = dir.path().join(frame_file_name(&samples[0].volume_id, 0));
    let good = fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::BadMagic { .. })));

    fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Truncated(_))));

    let mut extra = good.clone();
    extra.extend_from_slice(&[0; 4]);
    fs::write(&path, &extra).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let neg = GenConfig {
        noise_sigma_d: -0.1,
        ..Default::default()
    };
    assert!(generate_volume(0, &neg).is_err());
    let flipped = GenConfig {
        se_range: (0.0, -12.0),
        ..Default::default()
    };
    assert!(generate_volume(0, &flipped).is_err());
}
