mod common;

use common::TestRng;
use hrir_ident::identifiers::{angular_distance, IdentificationResult, Snapshot};
use hrir_ident::metrics::{
    azimuth_map, itd, itd_lag, log_spectral_distortion, normalized_misalignment, AlignedPair, Band,
};
use hrir_ident::scenario::RotationProfile;
use proptest::prelude::*;

/// LSD computed with a direct O(F^2) DFT.
fn lsd_oracle(pairs: &[(Vec<f64>, Vec<f64>)], fs: f64, fft_size: usize, band: Band) -> f64 {
    let magnitude = |ir: &[f64], bin: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in ir.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (bin * n) as f64 / fft_size as f64;
            re += v * phase.cos();
            im += v * phase.sin();
        }
        (re * re + im * im).sqrt().max(1e-12)
    };
    let mut total = 0.0;
    let mut count = 0;
    for (h, e) in pairs {
        for bin in 1..=fft_size / 2 {
            let f = bin as f64 * fs / fft_size as f64;
            if f > band.lo && f <= band.hi {
                let db = 20.0 * (magnitude(h, bin) / magnitude(e, bin)).log10();
                total += db * db;
                count += 1;
            }
        }
    }
    (total / count as f64).sqrt()
}

/// Brute-force normalized cross-correlation argmax, smallest |lag| on ties.
fn itd_oracle(left: &[f64], right: &[f64], max_lag: usize) -> isize {
    let k = left.len() as isize;
    let el: f64 = left.iter().map(|v| v * v).sum();
    let er: f64 = right.iter().map(|v| v * v).sum();
    let mut candidates: Vec<isize> = (-(max_lag as isize)..=max_lag as isize).collect();
    candidates.sort_by_key(|l| l.abs());
    let mut best = (f64::NEG_INFINITY, 0);
    for lag in candidates {
        let mut acc = 0.0;
        for i in 0..k {
            let j = i + lag;
            if (0..k).contains(&j) {
                acc += left[i as usize] * right[j as usize];
            }
        }
        let score = acc / (el * er).sqrt();
        if score > best.0 {
            best = (score, lag);
        }
    }
    best.1
}

fn nonzero_vec(rng: &mut TestRng, n: usize) -> Vec<f64> {
    let mut v = rng.vec(n);
    v[0] += 2.0;
    v
}

fn pairs(truth: &[Vec<f64>], est: &[Vec<f64>]) -> Vec<AlignedPair> {
    truth
        .iter()
        .zip(est)
        .map(|(h, e)| AlignedPair::new(h.clone(), e.clone()).unwrap())
        .collect()
}

#[test]
fn metric_identities() {
    let mut rng = TestRng::new(1);
    let h = nonzero_vec(&mut rng, 32);
    let zero = normalized_misalignment(&pairs(std::slice::from_ref(&h), &[vec![0.0; 32]])).unwrap();
    assert!(zero.nm_db.abs() < 1e-12);
    let half: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
    let nm = normalized_misalignment(&pairs(std::slice::from_ref(&h), &[half]))
        .unwrap()
        .nm_db;
    assert!((nm + 6.02).abs() <= 0.01, "{nm}");
    let double: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let lsd = log_spectral_distortion(
        &pairs(std::slice::from_ref(&h), &[double]),
        48_000.0,
        None,
        Band::full(48_000.0),
    )
    .unwrap();
    assert!((lsd - 6.02).abs() <= 0.01, "{lsd}");

    let mut left = vec![0.0; 64];
    let mut right = vec![0.0; 64];
    left[10] = 1.0;
    right[15] = 1.0;
    let us = itd(&left, &right, 44, 44_100.0).unwrap() * 1e6;
    assert!((us - 113.38).abs() <= 0.01, "{us}");
}

#[test]
fn azimuth_lookup_over_a_full_turn() {
    // 0.25 degrees per frame
    let rot = RotationProfile::new(0.0, 90.0, 360.0).unwrap();
    let mut result = IdentificationResult::empty("t", 1, 2, rot);
    result.frames = 1440;
    for n in 0..1440 {
        result.snapshots.push(Snapshot {
            frame: n,
            azimuth: rot.angle(n),
            values: vec![n as f64, 0.0],
        });
    }
    let targets: Vec<f64> = (0..360).map(f64::from).collect();
    let found = azimuth_map(&result, &targets).unwrap();
    for (t, est) in targets.iter().zip(&found) {
        assert!(angular_distance(*t, est.azimuth) <= 0.5);
        assert_eq!(est.blocks[0][0] as usize, est.frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nm_of_a_scaled_estimate(seed in any::<u64>(), a in -3.0f64..3.0) {
        prop_assume!((1.0 - a).abs() > 1e-3);
        let mut rng = TestRng::new(seed);
        let truth: Vec<Vec<f64>> = (0..4).map(|_| nonzero_vec(&mut rng, 12)).collect();
        let est: Vec<Vec<f64>> = truth.iter().map(|h| h.iter().map(|v| a * v).collect()).collect();
        let nm = normalized_misalignment(&pairs(&truth, &est)).unwrap().nm_db;
        let expected = 10.0 * ((1.0 - a) * (1.0 - a)).log10();
        prop_assert!((nm - expected).abs() <= 1e-9);
    }

    #[test]
    fn lsd_ignores_a_common_scale(seed in any::<u64>(), a in 0.01f64..100.0) {
        let mut rng = TestRng::new(seed);
        let truth: Vec<Vec<f64>> = (0..3).map(|_| nonzero_vec(&mut rng, 16)).collect();
        let est: Vec<Vec<f64>> = (0..3).map(|_| nonzero_vec(&mut rng, 16)).collect();
        let scale = |v: &[Vec<f64>]| v.iter().map(|h| h.iter().map(|x| a * x).collect()).collect::<Vec<Vec<f64>>>();
        let band = Band::full(16_000.0);
        let base = log_spectral_distortion(&pairs(&truth, &est), 16_000.0, None, band).unwrap();
        let scaled = log_spectral_distortion(&pairs(&scale(&truth), &scale(&est)), 16_000.0, None, band).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn lsd_matches_a_direct_dft(seed in any::<u64>(), taps in 2usize..24, extra in 0usize..3, lo in 0.0f64..3000.0) {
        let mut rng = TestRng::new(seed);
        let truth: Vec<Vec<f64>> = (0..2).map(|_| nonzero_vec(&mut rng, taps)).collect();
        let est: Vec<Vec<f64>> = (0..2).map(|_| nonzero_vec(&mut rng, taps)).collect();
        let fft_size = taps.next_power_of_two() << extra;
        let band = Band { lo, hi: 8000.0 };
        let ours = log_spectral_distortion(&pairs(&truth, &est), 16_000.0, Some(fft_size), band);
        let raw: Vec<_> = truth.into_iter().zip(est).collect();
        let has_bins = (1..=fft_size / 2).any(|b| band.contains(b as f64 * 16_000.0 / fft_size as f64));
        if has_bins {
            let oracle = lsd_oracle(&raw, 16_000.0, fft_size, band);
            prop_assert!((ours.unwrap() - oracle).abs() <= 1e-8 * (1.0 + oracle));
        } else {
            prop_assert!(ours.is_err());
        }
    }

    #[test]
    fn zero_padding_changes_nothing_but_the_default_fft(seed in any::<u64>(), pad in 1usize..8) {
        let mut rng = TestRng::new(seed);
        let h = nonzero_vec(&mut rng, 16);
        let e = nonzero_vec(&mut rng, 12);
        let mut padded = e.clone();
        padded.resize(16, 0.0);
        let a = normalized_misalignment(&pairs(std::slice::from_ref(&h), std::slice::from_ref(&e))).unwrap();
        let b = normalized_misalignment(&pairs(std::slice::from_ref(&h), &[padded.clone()])).unwrap();
        prop_assert_eq!(a, b);
        let band = Band::full(8000.0);
        let la = log_spectral_distortion(&pairs(std::slice::from_ref(&h), &[e]), 8000.0, Some(32), band).unwrap();
        let lb = log_spectral_distortion(&pairs(std::slice::from_ref(&h), &[padded]), 8000.0, Some(32), band).unwrap();
        prop_assert_eq!(la, lb);

        let mut left = h.clone();
        let mut right: Vec<f64> = h.iter().rev().copied().collect();
        let base = itd_lag(&left, &right, 6).unwrap();
        left.resize(16 + pad, 0.0);
        right.resize(16 + pad, 0.0);
        prop_assert_eq!(itd_lag(&left, &right, 6).unwrap(), base);
    }

    #[test]
    fn itd_matches_brute_force_and_is_antisymmetric(seed in any::<u64>(), k in 2usize..20) {
        let mut rng = TestRng::new(seed);
        let left = nonzero_vec(&mut rng, k);
        let right = nonzero_vec(&mut rng, k);
        let max_lag = k - 1;
        let lag = itd_lag(&left, &right, max_lag).unwrap();
        prop_assert_eq!(lag, itd_oracle(&left, &right, max_lag));
        prop_assert_eq!(itd_lag(&right, &left, max_lag).unwrap(), -lag);
        prop_assert_eq!(itd_lag(&left, &left, max_lag).unwrap(), 0);
    }

    #[test]
    fn metrics_do_not_modify_or_depend_on_call_order(seed in any::<u64>()) {
        let mut rng = TestRng::new(seed);
        let truth: Vec<Vec<f64>> = (0..3).map(|_| nonzero_vec(&mut rng, 8)).collect();
        let est: Vec<Vec<f64>> = (0..3).map(|_| nonzero_vec(&mut rng, 8)).collect();
        let p = pairs(&truth, &est);
        let band = Band::full(8000.0);
        let first = (normalized_misalignment(&p).unwrap(), log_spectral_distortion(&p, 8000.0, None, band).unwrap());
        let second = (normalized_misalignment(&p).unwrap(), log_spectral_distortion(&p, 8000.0, None, band).unwrap());
        prop_assert_eq!(first, second);
        prop_assert_eq!(p, pairs(&truth, &est));
    }
}
