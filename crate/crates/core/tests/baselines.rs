mod common;

use common::{frame_nm_db, TestRng};
use hrir_ident::identifiers::{
    default_nlms_eps, jo_nlms_step, kalman_step, nlms_step, run_baseline, BaselineConfig, ElevVector,
    IdentificationResult, JoNlmsState, KalmanState, StorePolicy,
};
use hrir_ident::scenario::{render, IrTrajectory};
use hrir_ident::signals::ExcitationBank;
use proptest::prelude::*;

/// Mean per-frame NM in dB over the last `tail` frames of an every-frame run.
fn tail_nm_db(traj: &IrTrajectory, result: &IdentificationResult, tail: usize) -> f64 {
    let n = result.snapshots.len();
    let total: f64 = result.snapshots[n - tail..]
        .iter()
        .map(|s| frame_nm_db(&traj.frame(s.frame), &s.values))
        .sum();
    total / tail as f64
}

#[test]
fn nlms_converges_on_a_noise_free_static_system() {
    // S = 2, K~ = 16: one sweep period is 32 frames
    let (bank, traj) = common::static_system(2, 16, 20 * 32 + 1, 11);
    let rec = common::clean(&traj, &bank);
    let cfg = BaselineConfig::Nlms { mu: 0.5, eps: None };
    let result = run_baseline(&cfg, &bank, &rec, &StorePolicy::EveryFrame).unwrap();
    let last = result.snapshots.last().unwrap();
    assert_eq!(last.frame, 20 * 32);
    let nm = frame_nm_db(&traj.frame(last.frame), &last.values);
    assert!(nm <= -60.0, "NM after 20 periods: {nm} dB");
}

#[test]
fn nlms_steady_state_matches_a_straight_loop_at_30_db() {
    let frames = 6400;
    let (bank, traj) = common::static_system(2, 16, frames, 12);
    let rec = common::noisy(&traj, &bank, 30.0, 13);
    let cfg = BaselineConfig::Nlms { mu: 0.5, eps: None };
    let result = run_baseline(&cfg, &bank, &rec, &StorePolicy::EveryFrame).unwrap();
    let ours = tail_nm_db(&traj, &result, frames / 4);

    let oracle_history = common::straight_loop_nlms(&bank, &rec.y, 0.5, default_nlms_eps(32));
    let oracle: f64 = oracle_history[frames - frames / 4..]
        .iter()
        .enumerate()
        .map(|(i, h)| frame_nm_db(&traj.frame(frames - frames / 4 + i), h))
        .sum::<f64>()
        / (frames / 4) as f64;
    assert!(
        (ours - oracle).abs() <= 3.0,
        "library {ours} dB, oracle {oracle} dB"
    );
    assert!(ours < -15.0, "steady state {ours} dB");
}

#[test]
fn baseline_runs_are_deterministic() {
    let (bank, traj) = common::static_system(2, 8, 500, 3);
    let rec = common::noisy(&traj, &bank, 20.0, 4);
    for cfg in [
        BaselineConfig::Nlms { mu: 0.3, eps: None },
        BaselineConfig::Kalman {
            q: 1e-6,
            r: rec.noise_variance,
            p0: 1e-2,
            diagonal: false,
        },
        BaselineConfig::JoNlms {
            sigma_v2: rec.noise_variance,
            m0: 1.0,
        },
    ] {
        let a = run_baseline(&cfg, &bank, &rec, &common::every(7)).unwrap();
        let b = run_baseline(&cfg, &bank, &rec, &common::every(7)).unwrap();
        assert_eq!(a, b);
    }
}

/// Static start plus a Gaussian random walk with per-tap variance `q`.
fn random_walk(bank: &ExcitationBank, frames: usize, q: f64, seed: u64) -> IrTrajectory {
    let (_, start) = common::static_system(bank.speakers(), bank.taps(), 1, seed);
    let d = bank.width();
    let mut h = start.frame(0);
    let mut rng = TestRng::new(seed ^ 0xABCD);
    // uniform on [-a, a] with variance q
    let amp = (3.0 * q).sqrt();
    let mut values = Vec::with_capacity(frames * d);
    for _ in 0..frames {
        values.extend_from_slice(&h);
        h.iter_mut().for_each(|v| *v += amp * rng.uniform());
    }
    IrTrajectory::from_frames(
        frames,
        bank.speakers(),
        bank.taps(),
        common::still(8000.0),
        values,
    )
    .unwrap()
}

#[test]
fn kalman_tracks_a_random_walk_at_least_as_well_as_nlms() {
    let frames = 4000;
    let (q, r) = (1e-6, 1e-3);
    let bank = common::bank(2, 16, frames);
    let traj = random_walk(&bank, frames, q, 21);
    let rec = render(&traj, &bank, r, 22).unwrap();
    let kalman = BaselineConfig::Kalman {
        q,
        r,
        p0: 1e-2,
        diagonal: false,
    };
    let nlms = BaselineConfig::Nlms { mu: 0.5, eps: None };
    let k = run_baseline(&kalman, &bank, &rec, &StorePolicy::EveryFrame).unwrap();
    let n = run_baseline(&nlms, &bank, &rec, &StorePolicy::EveryFrame).unwrap();
    let (k_nm, n_nm) = (
        tail_nm_db(&traj, &k, frames / 10),
        tail_nm_db(&traj, &n, frames / 10),
    );
    assert!(k_nm <= n_nm, "kalman {k_nm} dB, nlms {n_nm} dB");
}

#[test]
fn kalman_scalar_step_by_hand() {
    // P- = 0.25 + 0.25 = 0.5, innovation = 2 * 0.5 * 2 + 2 = 4, gain = 0.25
    let mut s = KalmanState::new(1, 0.25, 2.0, 0.25, false).unwrap();
    s.h_hat = ElevVector(vec![1.0]);
    let next = kalman_step(&s, &[2.0], 5.0).unwrap();
    assert_eq!(next.h_hat[0], 1.75);
    assert_eq!(next.cov_at(0, 0), 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nlms_posterior_error_shrinks_by_the_step(seed in any::<u64>(), mu in 0.0f64..=1.0) {
        let mut rng = TestRng::new(seed);
        let x = rng.vec(10);
        let h = ElevVector(rng.vec(10));
        let y = 3.0 * rng.uniform();
        let eps = default_nlms_eps(10);
        let prior: f64 = y - x.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
        let next = nlms_step(&h, &x, y, mu, eps).unwrap();
        let post: f64 = y - x.iter().zip(next.iter()).map(|(a, b)| a * b).sum::<f64>();
        let power: f64 = x.iter().map(|v| v * v).sum();
        let expected = prior * (1.0 - mu * power / (power + eps));
        prop_assert!((post - expected).abs() <= 1e-12 * (1.0 + prior.abs()));
    }

    #[test]
    fn kalman_covariance_stays_symmetric_and_nonnegative(seed in any::<u64>(), diagonal in any::<bool>()) {
        let mut rng = TestRng::new(seed);
        let d = 6;
        let mut s = KalmanState::new(d, 1e-4, 0.05, 1e-2, diagonal).unwrap();
        for _ in 0..40 {
            let x = rng.vec(d);
            s = kalman_step(&s, &x, rng.uniform()).unwrap();
            for i in 0..d {
                prop_assert!(s.cov_at(i, i) >= 0.0);
                for j in 0..d {
                    prop_assert_eq!(s.cov_at(i, j), s.cov_at(j, i));
                }
            }
        }
    }

    #[test]
    fn noise_free_jo_nlms_is_unit_nlms(seed in any::<u64>()) {
        let mut rng = TestRng::new(seed);
        let mut s = JoNlmsState::new(12, 0.0, 1.0).unwrap();
        s.h_hat = ElevVector(rng.vec(12));
        let x = rng.vec(12);
        let y = rng.uniform();
        let a = jo_nlms_step(&s, &x, y).unwrap();
        let b = nlms_step(&s.h_hat, &x, y, 1.0, 0.0).unwrap();
        let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = a.h_hat.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-10 * norm);
    }
}
