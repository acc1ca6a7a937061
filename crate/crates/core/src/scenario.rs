//! Ground-truth time-varying impulse responses and the simulated in-ear
//! recording they produce under a rotating speaker array.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::ExcitationBank;

/// Impulse responses measured on an azimuth grid, one per (azimuth, row).
///
/// A "row" is a source position on the rotating arc (an elevation); payload
/// order is `(azimuth, row, tap)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrGrid {
    azimuths: Vec<f64>,
    rows: usize,
    taps: usize,
    sample_rate: f64,
    data: Vec<f64>,
}

impl IrGrid {
    pub fn new(
        azimuths: Vec<f64>,
        rows: usize,
        taps: usize,
        sample_rate: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if azimuths.len() < 2 {
            return Err(Error::invalid("IR grid needs at least two azimuths"));
        }
        if azimuths.iter().any(|a| !(0.0..360.0).contains(a)) {
            return Err(Error::invalid("grid azimuths must lie in [0, 360)"));
        }
        if azimuths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid azimuths must be strictly increasing"));
        }
        if rows == 0 || taps == 0 {
            return Err(Error::invalid("grid needs at least one row and one tap"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("grid sample rate must be positive"));
        }
        if data.len() != azimuths.len() * rows * taps {
            return Err(Error::invalid(format!(
                "grid payload has {} values, expected {}",
                data.len(),
                azimuths.len() * rows * taps
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid payload contains non-finite values"));
        }
        Ok(Self {
            azimuths,
            rows,
            taps,
            sample_rate,
            data,
        })
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All rows at grid point `index`, `rows * taps` values.
    pub fn point(&self, index: usize) -> &[f64] {
        let stride = self.rows * self.taps;
        &self.data[index * stride..(index + 1) * stride]
    }

    pub fn ir(&self, index: usize, row: usize) -> &[f64] {
        &self.point(index)[row * self.taps..(row + 1) * self.taps]
    }
}

/// Forward angular distance from `from` to `to`, in `[0, 360)`.
fn forward_distance(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(360.0)
}

/// Inverse-distance weighting between the two grid azimuths bracketing
/// `azimuth` (wrapping at 360 degrees). Returns all rows, `rows * taps`.
pub fn idw_interpolate(grid: &IrGrid, azimuth: f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.rows * grid.taps];
    idw_interpolate_into(grid, azimuth, &mut out);
    out
}

pub(crate) fn idw_interpolate_into(grid: &IrGrid, azimuth: f64, out: &mut [f64]) {
    let az = azimuth.rem_euclid(360.0);
    let count = grid.azimuths.len();
    // Index of the last grid azimuth <= az, wrapping to the final point.
    let upper = grid.azimuths.partition_point(|&a| a <= az);
    let lo = if upper == 0 { count - 1 } else { upper - 1 };
    let hi = (lo + 1) % count;
    let d_lo = forward_distance(grid.azimuths[lo], az);
    let d_hi = forward_distance(az, grid.azimuths[hi]);

    if d_lo <= 1e-12 {
        out.copy_from_slice(grid.point(lo));
        return;
    }
    if d_hi <= 1e-12 {
        out.copy_from_slice(grid.point(hi));
        return;
    }
    // weights 1/d normalized: w_lo = d_hi / (d_lo + d_hi)
    let w_lo = d_hi / (d_lo + d_hi);
    let w_hi = d_lo / (d_lo + d_hi);
    for ((o, a), b) in out.iter_mut().zip(grid.point(lo)).zip(grid.point(hi)) {
        *o = w_lo * a + w_hi * b;
    }
}

/// Constant-speed rotation of the speaker array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationProfile {
    /// Start azimuth, degrees.
    pub theta0: f64,
    /// Degrees per second.
    pub omega: f64,
    /// Hz.
    pub sample_rate: f64,
}

impl RotationProfile {
    pub fn new(theta0: f64, omega: f64, sample_rate: f64) -> Result<Self> {
        let r = Self {
            theta0,
            omega,
            sample_rate,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::invalid("rotation sample rate must be positive"));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() || !self.theta0.is_finite() {
            return Err(Error::invalid("rotation speed must be finite and >= 0"));
        }
        Ok(())
    }

    /// Azimuth at sample `n`, in `[0, 360)`.
    pub fn angle(&self, n: usize) -> f64 {
        (self.theta0 + self.omega * n as f64 / self.sample_rate).rem_euclid(360.0)
    }

    /// Frames needed to sweep `span` degrees (rounded to the nearest sample).
    pub fn frames_for_span(&self, span: f64) -> Result<usize> {
        if !(self.omega > 0.0) {
            return Err(Error::invalid("a span needs a positive rotation speed"));
        }
        Ok((span / self.omega * self.sample_rate).round() as usize)
    }
}

/// Parameters for the synthetic ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    /// A fixed random IR with exponential decay envelope.
    Static { seed: u64, decay: f64 },
    /// Windowed-sinc fractional delay; the delay of speaker `s` at time `n`
    /// is `base_delay + s * speaker_delay_step + delay_per_degree * theta(n)`.
    FractionalDelayPan {
        base_delay: f64,
        delay_per_degree: f64,
        #[serde(default)]
        speaker_delay_step: f64,
        half_width: usize,
    },
    /// Per-tap random walks smoothed by a one-pole low-pass, on top of a
    /// decaying random base IR.
    SmoothRandom {
        seed: u64,
        decay: f64,
        step_std: f64,
        smoothing: f64,
    },
}

#[derive(Debug, Clone)]
enum Source {
    /// Fully materialized `(n, s, k)` values.
    Frames(Vec<f64>),
    /// One `(s, k)` frame repeated for every `n`.
    Static(Vec<f64>),
    Grid {
        grid: Arc<IrGrid>,
        row_map: Vec<usize>,
    },
    FractionalDelay {
        base_delay: f64,
        delay_per_degree: f64,
        speaker_delay_step: f64,
        half_width: usize,
    },
}

/// Ground-truth `h_{n,s}(k)` over a whole sequence. Grid-backed and analytic
/// trajectories are generated frame by frame on demand.
#[derive(Debug, Clone)]
pub struct IrTrajectory {
    frames: usize,
    speakers: usize,
    taps: usize,
    rotation: RotationProfile,
    source: Source,
}

impl IrTrajectory {
    /// Wraps materialized values laid out as `(n, s, k)`.
    pub fn from_frames(
        frames: usize,
        speakers: usize,
        taps: usize,
        rotation: RotationProfile,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_dims(frames, speakers, taps)?;
        rotation.validate()?;
        if values.len() != frames * speakers * taps {
            return Err(Error::invalid(format!(
                "trajectory has {} values, expected {}",
                values.len(),
                frames * speakers * taps
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite values"));
        }
        Ok(Self {
            frames,
            speakers,
            taps,
            rotation,
            source: Source::Frames(values),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn rotation(&self) -> RotationProfile {
        self.rotation
    }

    pub fn frame_width(&self) -> usize {
        self.speakers * self.taps
    }

    /// Writes `h_{n,s}(k)` for all `s, k` into `out` (length `S*K`).
    pub fn frame_into(&self, n: usize, out: &mut [f64]) {
        assert!(n < self.frames, "frame {n} out of range");
        assert_eq!(out.len(), self.frame_width());
        let width = self.frame_width();
        match &self.source {
            Source::Frames(v) => out.copy_from_slice(&v[n * width..(n + 1) * width]),
            Source::Static(v) => out.copy_from_slice(v),
            Source::Grid { grid, row_map } => {
                let all = idw_interpolate(grid, self.rotation.angle(n));
                for (block, &row) in out.chunks_exact_mut(self.taps).zip(row_map) {
                    block.copy_from_slice(&all[row * self.taps..(row + 1) * self.taps]);
                }
            }
            Source::FractionalDelay {
                base_delay,
                delay_per_degree,
                speaker_delay_step,
                half_width,
            } => {
                let theta = self.rotation.angle(n);
                for (s, block) in out.chunks_exact_mut(self.taps).enumerate() {
                    let delay = base_delay + s as f64 * speaker_delay_step + delay_per_degree * theta;
                    windowed_sinc_into(delay, *half_width, block);
                }
            }
        }
    }

    pub fn frame(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.frame_width()];
        self.frame_into(n, &mut out);
        out
    }

    /// Returns the same trajectory with every value multiplied by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let mut values = Vec::with_capacity(self.frames * self.frame_width());
        for n in 0..self.frames {
            values.extend(self.frame(n).into_iter().map(|v| v * a));
        }
        Self {
            source: Source::Frames(values),
            ..self.clone()
        }
    }
}

fn check_dims(frames: usize, speakers: usize, taps: usize) -> Result<()> {
    if frames == 0 || speakers == 0 || taps == 0 {
        return Err(Error::invalid("trajectory dimensions N, S, K must all be >= 1"));
    }
    Ok(())
}

/// `h_{n,s} = idw(grid, theta(n))[row_map[s]]`, generated lazily.
pub fn trajectory_from_grid(
    grid: Arc<IrGrid>,
    rotation: RotationProfile,
    frames: usize,
    row_map: Vec<usize>,
) -> Result<IrTrajectory> {
    check_dims(frames, row_map.len(), grid.taps())?;
    rotation.validate()?;
    if let Some(&bad) = row_map.iter().find(|&&r| r >= grid.rows()) {
        return Err(Error::invalid(format!(
            "speaker row map references row {bad}, grid has {}",
            grid.rows()
        )));
    }
    Ok(IrTrajectory {
        frames,
        speakers: row_map.len(),
        taps: grid.taps(),
        rotation,
        source: Source::Grid { grid, row_map },
    })
}

/// Windowed sinc centred at `delay` with a Hann window of half-width `half_width` taps.
fn windowed_sinc_into(delay: f64, half_width: usize, out: &mut [f64]) {
    let w = half_width as f64;
    for (k, v) in out.iter_mut().enumerate() {
        let t = k as f64 - delay;
        *v = if t.abs() >= w {
            0.0
        } else if t == 0.0 {
            1.0
        } else if t == t.round() {
            // sinc vanishes at nonzero integers
            0.0
        } else {
            let sinc = (PI * t).sin() / (PI * t);
            sinc * 0.5 * (1.0 + (PI * t / w).cos())
        };
    }
}

/// Builds one of the synthetic ground truths.
pub fn synth_trajectory(
    kind: &SynthKind,
    frames: usize,
    speakers: usize,
    taps: usize,
    rotation: RotationProfile,
) -> Result<IrTrajectory> {
    check_dims(frames, speakers, taps)?;
    rotation.validate()?;
    let source = match *kind {
        SynthKind::Static { seed, decay } => {
            check_decay(decay)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Source::Static(decaying_random_ir(&mut rng, speakers, taps, decay))
        }
        SynthKind::FractionalDelayPan {
            base_delay,
            delay_per_degree,
            speaker_delay_step,
            half_width,
        } => {
            if half_width == 0 {
                return Err(Error::invalid("fractional delay half width must be >= 1"));
            }
            if ![base_delay, delay_per_degree, speaker_delay_step]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::invalid("fractional delay parameters must be finite"));
            }
            for n in 0..frames {
                let theta = rotation.angle(n);
                for s in 0..speakers {
                    let d = base_delay + s as f64 * speaker_delay_step + delay_per_degree * theta;
                    if d < 0.0 || d > (taps - 1) as f64 {
                        return Err(Error::invalid(format!(
                            "delay {d:.3} at frame {n}, speaker {s} falls outside [0, {}]",
                            taps - 1
                        )));
                    }
                }
            }
            Source::FractionalDelay {
                base_delay,
                delay_per_degree,
                speaker_delay_step,
                half_width,
            }
        }
        SynthKind::SmoothRandom {
            seed,
            decay,
            step_std,
            smoothing,
        } => {
            check_decay(decay)?;
            if !(step_std >= 0.0) || !step_std.is_finite() {
                return Err(Error::invalid("smooth_random step_std must be finite and >= 0"));
            }
            if !(0.0..1.0).contains(&smoothing) {
                return Err(Error::invalid("smooth_random smoothing must lie in [0, 1)"));
            }
            Source::Frames(smooth_random_frames(
                seed, frames, speakers, taps, decay, step_std, smoothing,
            ))
        }
    };
    Ok(IrTrajectory {
        frames,
        speakers,
        taps,
        rotation,
        source,
    })
}

fn check_decay(decay: f64) -> Result<()> {
    if !(decay > 0.0) || !decay.is_finite() {
        return Err(Error::invalid("decay constant must be positive"));
    }
    Ok(())
}

fn envelope(k: usize, decay: f64) -> f64 {
    (-(k as f64) / decay).exp()
}

fn decaying_random_ir(rng: &mut ChaCha8Rng, speakers: usize, taps: usize, decay: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..speakers * taps)
        .map(|i| normal.sample(rng) * envelope(i % taps, decay))
        .collect()
}

fn smooth_random_frames(
    seed: u64,
    frames: usize,
    speakers: usize,
    taps: usize,
    decay: f64,
    step_std: f64,
    smoothing: f64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let width = speakers * taps;
    let env: Vec<f64> = (0..width).map(|i| envelope(i % taps, decay)).collect();
    let mut walk = decaying_random_ir(&mut rng, speakers, taps, decay);
    let mut smooth = walk.clone();
    let mut values = Vec::with_capacity(frames * width);
    for _ in 0..frames {
        values.extend_from_slice(&smooth);
        for i in 0..width {
            walk[i] += step_std * env[i] * normal.sample(&mut rng);
            smooth[i] = smoothing * smooth[i] + (1.0 - smoothing) * walk[i];
        }
    }
    values
}

/// Simulated in-ear microphone signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub y: Vec<f64>,
    pub noise_variance: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub rotation: RotationProfile,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.rotation.sample_rate
    }
}

/// Noise variance that yields `target_snr_db` against a signal of `clean_power`.
pub fn snr_to_variance(clean_power: f64, target_snr_db: f64) -> Result<f64> {
    if !(clean_power > 0.0) || !clean_power.is_finite() {
        return Err(Error::invalid("clean power must be positive"));
    }
    Ok(clean_power / 10f64.powf(target_snr_db / 10.0))
}

/// Noise-free microphone signal `sum_s sum_k x_s(n-k) h_{n,s}(k)`.
pub fn render_clean(traj: &IrTrajectory, bank: &ExcitationBank) -> Result<Vec<f64>> {
    if bank.speakers() != traj.speakers() {
        return Err(Error::invalid(format!(
            "bank has {} speakers, trajectory {}",
            bank.speakers(),
            traj.speakers()
        )));
    }
    if bank.len() < traj.frames() {
        return Err(Error::invalid(format!(
            "bank length {} shorter than trajectory length {}",
            bank.len(),
            traj.frames()
        )));
    }
    let taps = traj.taps();
    let mut frame = vec![0.0; traj.frame_width()];
    let mut y = Vec::with_capacity(traj.frames());
    for n in 0..traj.frames() {
        traj.frame_into(n, &mut frame);
        let mut acc = 0.0;
        for (s, h) in frame.chunks_exact(taps).enumerate() {
            let row = bank.row(s);
            for (k, hk) in h.iter().enumerate().take(n + 1) {
                acc += row[n - k] * hk;
            }
        }
        y.push(acc);
    }
    Ok(y)
}

fn mean_power(y: &[f64]) -> f64 {
    if y.is_empty() {
        0.0
    } else {
        y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
    }
}

fn add_noise(y: &mut [f64], variance: f64, seed: u64) {
    if variance == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt()).unwrap();
    y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
}

/// Renders the microphone signal with white Gaussian noise of the given variance.
pub fn render(
    traj: &IrTrajectory,
    bank: &ExcitationBank,
    noise_variance: f64,
    seed: u64,
) -> Result<Recording> {
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::invalid("noise variance must be finite and >= 0"));
    }
    let mut y = render_clean(traj, bank)?;
    let clean_power = mean_power(&y);
    let snr_db =
        (noise_variance > 0.0 && clean_power > 0.0).then(|| 10.0 * (clean_power / noise_variance).log10());
    add_noise(&mut y, noise_variance, seed);
    Ok(Recording {
        y,
        noise_variance,
        snr_db,
        seed,
        rotation: traj.rotation(),
    })
}

/// Renders with noise scaled to hit `snr_db` against the clean signal power.
pub fn render_at_snr(
    traj: &IrTrajectory,
    bank: &ExcitationBank,
    snr_db: f64,
    seed: u64,
) -> Result<Recording> {
    let mut y = render_clean(traj, bank)?;
    let noise_variance = snr_to_variance(mean_power(&y), snr_db)?;
    add_noise(&mut y, noise_variance, seed);
    Ok(Recording {
        y,
        noise_variance,
        snr_db: Some(snr_db),
        seed,
        rotation: traj.rotation(),
    })
}
