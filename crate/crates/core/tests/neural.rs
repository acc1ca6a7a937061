mod common;

use common::TestRng;
use hrir_ident::identifiers::{ElevVector, StorePolicy};
use hrir_ident::neural::{
    cell_forward, identify_sequence, init_identity, segment_and_train, train, CellInput, DnnParams,
    TrainerConfig, POWER_EPS,
};
use hrir_ident::scenario::{synth_trajectory, Recording, RotationProfile, SynthKind};
use hrir_ident::signals::ExcitationBank;
use proptest::prelude::*;

fn moving_fixture(frames: usize) -> (ExcitationBank, Recording) {
    let bank = common::bank(2, 4, frames);
    let rot = RotationProfile::new(0.0, 45.0, 8000.0).unwrap();
    let traj = synth_trajectory(
        &SynthKind::SmoothRandom {
            seed: 8,
            decay: 2.0,
            step_std: 0.1,
            smoothing: 0.9,
        },
        frames,
        2,
        4,
        rot,
    )
    .unwrap();
    (bank.clone(), common::noisy(&traj, &bank, 30.0, 5))
}

fn short_training() -> TrainerConfig {
    TrainerConfig {
        lr: 3e-3,
        max_epochs: 15,
        ..TrainerConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let (bank, rec) = moving_fixture(300);
    let a = train(&bank, &rec, &short_training()).unwrap();
    let b = train(&bank, &rec, &short_training()).unwrap();
    assert_eq!(a.params, b.params);
    let losses: Vec<f64> = a.log.iter().map(|r| r.l_train).collect();
    let again: Vec<f64> = b.log.iter().map(|r| r.l_train).collect();
    assert_eq!(losses.len(), again.len());
    assert!(losses.iter().zip(&again).all(|(x, y)| x.to_bits() == y.to_bits()));

    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(a.best_loss, min);
    assert!(a.best_loss <= a.initial_loss());
    assert_eq!(a.log[a.best_epoch - 1].l_train, a.best_loss);
}

#[test]
fn training_loss_is_the_log_of_the_mean_square_error() {
    let (bank, rec) = moving_fixture(250);
    let outcome = train(&bank, &rec, &short_training()).unwrap();
    let d = bank.width();
    let run = identify_sequence(
        &outcome.params,
        &bank,
        &rec,
        &ElevVector::zeros(d),
        &vec![0.0; d],
        &StorePolicy::Stride { stride: 1000 },
    )
    .unwrap();
    // independent accumulation from the error trace
    let mse = run.e_trace.iter().map(|e| e * e).sum::<f64>() / run.e_trace.len() as f64;
    let expected = mse.ln();
    assert!(
        (outcome.best_loss - expected).abs() <= 1e-9 * expected.abs(),
        "{} vs {expected}",
        outcome.best_loss
    );
}

#[test]
fn segmented_output_does_not_depend_on_worker_count() {
    let (bank, rec) = moving_fixture(300);
    let cfg = TrainerConfig {
        max_epochs: 6,
        ..short_training()
    };
    let policy = StorePolicy::Stride { stride: 10 };
    let serial = segment_and_train(&bank, &rec, 3, &cfg, &policy, 1).unwrap();
    let parallel = segment_and_train(&bank, &rec, 3, &cfg, &policy, 3).unwrap();
    assert_eq!(serial.result.snapshots, parallel.result.snapshots);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&serial.result.e_trace), bits(&parallel.result.e_trace));
    assert_eq!(serial.result.segment_starts, vec![100, 200]);
    for (a, b) in serial.segments.iter().zip(&parallel.segments) {
        assert_eq!(
            a.outcome.as_ref().unwrap().params,
            b.outcome.as_ref().unwrap().params
        );
    }
}

fn random_params(d: usize, seed: u64, scale: f64) -> DnnParams {
    let mut p = init_identity(d).unwrap();
    let mut rng = TestRng::new(seed);
    p.as_flat_mut()
        .iter_mut()
        .for_each(|v| *v += scale * rng.uniform());
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_cell_reproduces_the_normalized_step(seed in any::<u64>(), size in 1e-9f64..1e-4) {
        let d = 8;
        let mut rng = TestRng::new(seed);
        let x = rng.vec(d);
        let power: f64 = x.iter().map(|v| v * v).sum();
        // choose e so that ||u0|| = size
        let e = size * (power + POWER_EPS) / power.sqrt();
        let grad: Vec<f64> = x.iter().map(|v| v * e).collect();
        let out = cell_forward(&init_identity(d).unwrap(), CellInput { grad: &grad, power, c: &vec![0.0; d] }).unwrap();
        let u0: Vec<f64> = grad.iter().map(|g| g / (power + POWER_EPS)).collect();
        let norm = u0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = out.delta.iter().zip(&u0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-6 * norm, "{diff:e} vs {norm:e}");
    }

    #[test]
    fn hidden_state_stays_bounded(seed in any::<u64>(), scale in 0.0f64..2.0) {
        let d = 6;
        let params = random_params(d, seed, scale);
        let mut rng = TestRng::new(seed.wrapping_add(1));
        let mut c = vec![0.0; d];
        for _ in 0..50 {
            let grad: Vec<f64> = rng.vec(d).into_iter().map(|v| 10.0 * v).collect();
            let out = cell_forward(&params, CellInput { grad: &grad, power: 1.0 + rng.uniform().abs(), c: &c }).unwrap();
            prop_assert!(out.c_next.iter().all(|v| v.abs() <= 1.0));
            c = out.c_next;
        }
    }
}
