#![allow(dead_code)]

use hrir_ident::identifiers::StorePolicy;
use hrir_ident::scenario::{
    render, render_at_snr, synth_trajectory, IrTrajectory, Recording, RotationProfile, SynthKind,
};
use hrir_ident::signals::{build_excitation_bank, generate_perfect_sweep, ExcitationBank};

/// Small deterministic generator for test fixtures (SplitMix64).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }
}

pub fn bank(speakers: usize, taps: usize, frames: usize) -> ExcitationBank {
    let sweep = generate_perfect_sweep(speakers * taps).unwrap();
    build_excitation_bank(&sweep, speakers, taps, frames).unwrap()
}

pub fn still(sample_rate: f64) -> RotationProfile {
    RotationProfile::new(0.0, 0.0, sample_rate).unwrap()
}

pub fn static_system(
    speakers: usize,
    taps: usize,
    frames: usize,
    seed: u64,
) -> (ExcitationBank, IrTrajectory) {
    let bank = bank(speakers, taps, frames);
    let traj = synth_trajectory(
        &SynthKind::Static {
            seed,
            decay: taps as f64 / 3.0,
        },
        frames,
        speakers,
        taps,
        still(8000.0),
    )
    .unwrap();
    (bank, traj)
}

pub fn clean(traj: &IrTrajectory, bank: &ExcitationBank) -> Recording {
    render(traj, bank, 0.0, 0).unwrap()
}

pub fn noisy(traj: &IrTrajectory, bank: &ExcitationBank, snr_db: f64, seed: u64) -> Recording {
    render_at_snr(traj, bank, snr_db, seed).unwrap()
}

/// Per-frame NM in dB of the estimate against the true frame (equal lengths).
pub fn frame_nm_db(truth: &[f64], est: &[f64]) -> f64 {
    let num: f64 = truth.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|a| a * a).sum();
    10.0 * (num / den).log10()
}

pub fn every(stride: usize) -> StorePolicy {
    StorePolicy::Stride { stride }
}

/// Direct O(P^2) circular autocorrelation.
pub fn circular_autocorr(x: &[f64]) -> Vec<f64> {
    let p = x.len();
    (0..p)
        .map(|tau| (0..p).map(|n| x[n] * x[(n + tau) % p]).sum())
        .collect()
}

/// Convolution form of the microphone signal: sum over speakers and taps of
/// `x_s(n-k) h_{n,s}(k)`.
pub fn convolution_render(traj: &IrTrajectory, bank: &ExcitationBank) -> Vec<f64> {
    let (s_count, k_count) = (traj.speakers(), traj.taps());
    (0..traj.frames())
        .map(|n| {
            let h = traj.frame(n);
            let mut acc = 0.0;
            for s in 0..s_count {
                for k in 0..k_count {
                    acc += bank.sample(s, n as isize - k as isize) * h[s * k_count + k];
                }
            }
            acc
        })
        .collect()
}

/// Plain NLMS written straight from the signal model: regressor built from
/// the bank rows with zero history, estimate recorded before each update.
pub fn straight_loop_nlms(bank: &ExcitationBank, y: &[f64], mu: f64, eps: f64) -> Vec<Vec<f64>> {
    let (speakers, taps) = (bank.speakers(), bank.taps());
    let d = speakers * taps;
    let mut h = vec![0.0; d];
    let mut history = Vec::with_capacity(y.len());
    for (n, &yn) in y.iter().enumerate() {
        history.push(h.clone());
        let mut x = vec![0.0; d];
        for s in 0..speakers {
            for k in 0..taps.min(n + 1) {
                x[s * taps + k] = bank.row(s)[n - k];
            }
        }
        let mut e = yn;
        let mut power = 0.0;
        for i in 0..d {
            e -= x[i] * h[i];
            power += x[i] * x[i];
        }
        for i in 0..d {
            h[i] += mu * e * x[i] / (power + eps);
        }
    }
    history
}
