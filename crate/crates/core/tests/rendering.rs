mod common;

use common::TestRng;
use hrir_ident::scenario::{
    idw_interpolate, render, render_at_snr, render_clean, IrGrid, IrTrajectory, RotationProfile,
};
use hrir_ident::signals::ExcitationBank;
use proptest::prelude::*;

/// Inner-product form `x_{n,ele} · h_{n,ele}`.
fn regressor_oracle(traj: &IrTrajectory, bank: &ExcitationBank) -> Vec<f64> {
    (0..traj.frames())
        .map(|n| {
            let x = bank.regressor(n).unwrap().values;
            x.iter().zip(traj.frame(n)).map(|(a, b)| a * b).sum()
        })
        .collect()
}

fn random_trajectory(rng: &mut TestRng, frames: usize, speakers: usize, taps: usize) -> IrTrajectory {
    IrTrajectory::from_frames(
        frames,
        speakers,
        taps,
        common::still(8000.0),
        rng.vec(frames * speakers * taps),
    )
    .unwrap()
}

#[test]
fn both_signal_models_agree_on_random_instances() {
    let mut rng = TestRng::new(2024);
    for _ in 0..100 {
        // the sweep period S*K must be even
        let (speakers, taps) = loop {
            let s = 1 + (rng.next_u64() % 3) as usize;
            let k = 1 + (rng.next_u64() % 8) as usize;
            if (s * k).is_multiple_of(2) {
                break (s, k);
            }
        };
        let frames = 1 + (rng.next_u64() % 128) as usize;
        let bank = common::bank(speakers, taps, frames);
        let traj = random_trajectory(&mut rng, frames, speakers, taps);
        let y = render_clean(&traj, &bank).unwrap();
        let conv = common::convolution_render(&traj, &bank);
        let dot = regressor_oracle(&traj, &bank);
        for n in 0..frames {
            assert!((y[n] - conv[n]).abs() <= 1e-12);
            assert!((y[n] - dot[n]).abs() <= 1e-12);
        }
    }
}

#[test]
fn noise_matches_the_requested_snr() {
    let (bank, traj) = common::static_system(2, 8, 20_000, 4);
    let clean = render_clean(&traj, &bank).unwrap();
    let rec = render_at_snr(&traj, &bank, 30.0, 9).unwrap();
    let noise_power: f64 = rec
        .y
        .iter()
        .zip(&clean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / clean.len() as f64;
    let clean_power: f64 = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let measured = 10.0 * (clean_power / noise_power).log10();
    assert!((measured - 30.0).abs() < 0.1, "measured {measured}");
    assert_eq!(render_at_snr(&traj, &bank, 30.0, 9).unwrap(), rec);
    assert_ne!(render_at_snr(&traj, &bank, 30.0, 10).unwrap().y, rec.y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clean_render_is_linear_in_the_trajectory(seed in any::<u64>(), a in -4.0f64..4.0) {
        let mut rng = TestRng::new(seed);
        let bank = common::bank(2, 4, 40);
        let traj = random_trajectory(&mut rng, 40, 2, 4);
        let y = render(&traj, &bank, 0.0, 0).unwrap().y;
        let ya = render(&traj.scaled(a), &bank, 0.0, 0).unwrap().y;
        for (u, v) in y.iter().zip(&ya) {
            prop_assert!((a * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn idw_stays_between_the_bracketing_responses(seed in any::<u64>(), az in 0.0f64..360.0) {
        let mut rng = TestRng::new(seed);
        let azimuths = vec![0.0, 45.0, 90.0, 180.0, 300.0];
        let data = rng.vec(azimuths.len() * 2 * 5);
        let grid = IrGrid::new(azimuths.clone(), 2, 5, 48_000.0, data).unwrap();
        let out = idw_interpolate(&grid, az);
        // bracketing neighbours, with wrap-around
        let hi = azimuths.iter().position(|&a| a > az).unwrap_or(0);
        let lo = (hi + azimuths.len() - 1) % azimuths.len();
        for (i, v) in out.iter().enumerate() {
            let (a, b) = (grid.point(lo)[i], grid.point(hi)[i]);
            prop_assert!(*v >= a.min(b) - 1e-12 && *v <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn azimuth_is_periodic_and_increasing_before_wrap(
        theta0 in 0.0f64..360.0,
        omega in 1.0f64..90.0,
        n in 0usize..100_000,
    ) {
        let fs = 8000.0;
        let rot = RotationProfile::new(theta0, omega, fs).unwrap();
        let a = rot.angle(n);
        prop_assert!((0.0..360.0).contains(&a));
        let period = (360.0 / omega * fs).round();
        if (360.0 / omega * fs - period).abs() < 1e-9 {
            let b = rot.angle(n + period as usize);
            prop_assert!(hrir_ident::identifiers::angular_distance(a, b) < 1e-6);
        }
        let next = rot.angle(n + 1);
        prop_assert!(next > a || a + omega / fs >= 360.0 - 1e-9);
    }
}
