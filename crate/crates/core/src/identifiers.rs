//! Streaming identifiers that share one step contract: given the regressor
//! `x_{n,ele}` and the observation `y(n)`, form `e(n) = y(n) - x ĥ^T` and
//! update the flat estimate `ĥ_{n,ele}`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Recording, RotationProfile};
use crate::signals::{dot, ExcitationBank};

/// Flat estimate of all `S` impulse responses, block layout as the regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevVector(pub Vec<f64>);

impl ElevVector {
    pub fn zeros(width: usize) -> Self {
        Self(vec![0.0; width])
    }
}

impl Deref for ElevVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ElevVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ElevVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_width(x: &[f64], h: &[f64]) -> Result<()> {
    if x.len() != h.len() {
        return Err(Error::invalid(format!(
            "regressor length {} does not match estimate length {}",
            x.len(),
            h.len()
        )));
    }
    Ok(())
}

/// `e = y - x·ĥ`.
pub fn estimation_error(x: &[f64], y: f64, h: &[f64]) -> Result<f64> {
    check_width(x, h)?;
    Ok(y - dot(x, h))
}

/// `∇ISE = x e`.
pub fn ise_gradient(x: &[f64], e: f64) -> Vec<f64> {
    x.iter().map(|v| v * e).collect()
}

/// Error, squared error and its gradient for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub e: f64,
    pub ise: f64,
    pub grad: Vec<f64>,
}

impl StepRecord {
    pub fn evaluate(x: &[f64], y: f64, h: &[f64]) -> Result<Self> {
        let e = estimation_error(x, y, h)?;
        Ok(Self {
            e,
            ise: e * e,
            grad: ise_gradient(x, e),
        })
    }
}

/// `ĥ' = ĥ + mu x e`.
pub fn lms_step(h: &ElevVector, x: &[f64], y: f64, mu: f64) -> Result<ElevVector> {
    let mut out = h.clone();
    lms_update(&mut out, x, y, mu)?;
    Ok(out)
}

fn lms_update(h: &mut [f64], x: &[f64], y: f64, mu: f64) -> Result<f64> {
    let e = estimation_error(x, y, h)?;
    let scale = mu * e;
    h.iter_mut().zip(x).for_each(|(hi, xi)| *hi += scale * xi);
    Ok(e)
}

/// `ĥ' = ĥ + mu x e / (x·x + eps)`.
pub fn nlms_step(h: &ElevVector, x: &[f64], y: f64, mu: f64, eps: f64) -> Result<ElevVector> {
    let mut out = h.clone();
    nlms_update(&mut out, x, y, mu, eps)?;
    Ok(out)
}

fn nlms_update(h: &mut [f64], x: &[f64], y: f64, mu: f64, eps: f64) -> Result<f64> {
    let e = estimation_error(x, y, h)?;
    let scale = mu * e / (dot(x, x) + eps);
    h.iter_mut().zip(x).for_each(|(hi, xi)| *hi += scale * xi);
    Ok(e)
}

/// Default NLMS regularizer for a regressor of `width` entries.
pub fn default_nlms_eps(width: usize) -> f64 {
    1e-8 * width as f64
}

/// Covariance of the random-walk Kalman filter.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Row-major `d x d`.
    Full(Vec<f64>),
    /// Diagonal only; cross-covariances are dropped after every update,
    /// which underestimates the gain coupling between taps.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub h_hat: ElevVector,
    pub cov: Covariance,
    /// Process noise scale, `Q = q I`.
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
}

impl KalmanState {
    /// Zero estimate with `P_0 = p0 I`.
    pub fn new(width: usize, q: f64, r: f64, p0: f64, diagonal: bool) -> Result<Self> {
        if !(q >= 0.0) || !(r >= 0.0) || !(p0 >= 0.0) {
            return Err(Error::invalid("Kalman q, r and p0 must be >= 0"));
        }
        let cov = if diagonal {
            Covariance::Diagonal(vec![p0; width])
        } else {
            let mut p = vec![0.0; width * width];
            for i in 0..width {
                p[i * width + i] = p0;
            }
            Covariance::Full(p)
        };
        Ok(Self {
            h_hat: ElevVector::zeros(width),
            cov,
            q,
            r,
        })
    }

    fn width(&self) -> usize {
        self.h_hat.len()
    }

    /// Covariance entry `(i, j)`.
    pub fn cov_at(&self, i: usize, j: usize) -> f64 {
        match &self.cov {
            Covariance::Full(p) => p[i * self.width() + j],
            Covariance::Diagonal(p) => {
                if i == j {
                    p[i]
                } else {
                    0.0
                }
            }
        }
    }

    fn update(&mut self, x: &[f64], y: f64, frame: usize) -> Result<f64> {
        let e = estimation_error(x, y, &self.h_hat)?;
        let d = self.width();
        let q = self.q;
        match &mut self.cov {
            Covariance::Full(p) => {
                for i in 0..d {
                    p[i * d + i] += q;
                }
                let px: Vec<f64> = p.chunks_exact(d).map(|row| dot(row, x)).collect();
                let innovation = dot(x, &px) + self.r;
                if !innovation.is_finite() || innovation <= 0.0 {
                    return Err(Error::numerical(
                        frame,
                        format!("Kalman innovation variance is {innovation}"),
                    ));
                }
                for (h, g) in self.h_hat.iter_mut().zip(&px) {
                    *h += g / innovation * e;
                }
                for i in 0..d {
                    let gi = px[i] / innovation;
                    for j in 0..d {
                        p[i * d + j] -= gi * px[j];
                    }
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        let avg = 0.5 * (p[i * d + j] + p[j * d + i]);
                        p[i * d + j] = avg;
                        p[j * d + i] = avg;
                    }
                }
            }
            Covariance::Diagonal(p) => {
                p.iter_mut().for_each(|v| *v += q);
                let px: Vec<f64> = p.iter().zip(x).map(|(a, b)| a * b).collect();
                let innovation = dot(x, &px) + self.r;
                if !innovation.is_finite() || innovation <= 0.0 {
                    return Err(Error::numerical(
                        frame,
                        format!("Kalman innovation variance is {innovation}"),
                    ));
                }
                for ((h, pi), g) in self.h_hat.iter_mut().zip(p.iter_mut()).zip(&px) {
                    let gi = g / innovation;
                    *h += gi * e;
                    *pi = (*pi - gi * g).max(0.0);
                }
            }
        }
        Ok(e)
    }
}

/// Random-walk Kalman step: `P- = P + qI`, `g = P- x / (x P- x + r)`,
/// `ĥ' = ĥ + g e`, `P' = P- - g (x P-)`.
pub fn kalman_step(state: &KalmanState, x: &[f64], y: f64) -> Result<KalmanState> {
    let mut next = state.clone();
    next.update(x, y, 0)?;
    Ok(next)
}

/// Jointly optimized NLMS state. The step size comes from the running
/// misalignment estimate `m`, the measurement noise `sigma_v2` and an
/// estimate of the system's drift per step, `sigma_w2`.
#[derive(Debug, Clone, PartialEq)]
pub struct JoNlmsState {
    pub h_hat: ElevVector,
    pub m: f64,
    pub sigma_v2: f64,
    /// Drift estimate `||ĥ(n) - ĥ(n-1)||^2 / L` from the previous update.
    pub sigma_w2: f64,
}

impl JoNlmsState {
    pub fn new(width: usize, sigma_v2: f64, m0: f64) -> Result<Self> {
        if !(sigma_v2 >= 0.0) || !(m0 >= 0.0) {
            return Err(Error::invalid("JO-NLMS sigma_v2 and m0 must be >= 0"));
        }
        Ok(Self {
            h_hat: ElevVector::zeros(width),
            m: m0,
            sigma_v2,
            sigma_w2: 0.0,
        })
    }

    fn update(&mut self, x: &[f64], y: f64, frame: usize) -> Result<f64> {
        let e = estimation_error(x, y, &self.h_hat)?;
        let power = dot(x, x);
        if power == 0.0 {
            return Ok(e);
        }
        let len = self.h_hat.len() as f64;
        let predicted = self.m + len * self.sigma_w2;
        // mu = p / (p x·x + L sigma_v^2) = 1 / (x·x + delta), delta = L sigma_v^2 / p
        let mu = if self.sigma_v2 == 0.0 {
            1.0 / power
        } else {
            predicted / (predicted * power + len * self.sigma_v2)
        };
        if !mu.is_finite() {
            return Err(Error::numerical(frame, format!("JO-NLMS step size is {mu}")));
        }
        let scale = mu * e;
        let mut drift = 0.0;
        for (h, xi) in self.h_hat.iter_mut().zip(x) {
            let delta = scale * xi;
            *h += delta;
            drift += delta * delta;
        }
        self.m = (predicted * (1.0 - mu * power / len)).max(0.0);
        self.sigma_w2 = drift / len;
        Ok(e)
    }
}

pub fn jo_nlms_step(state: &JoNlmsState, x: &[f64], y: f64) -> Result<JoNlmsState> {
    let mut next = state.clone();
    next.update(x, y, 0)?;
    Ok(next)
}

/// Hyperparameters of the classical identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "snake_case")]
pub enum BaselineConfig {
    Lms {
        mu: f64,
    },
    Nlms {
        mu: f64,
        /// Defaults to `1e-8 * S * K~`.
        #[serde(default)]
        eps: Option<f64>,
    },
    JoNlms {
        sigma_v2: f64,
        #[serde(default = "default_m0")]
        m0: f64,
    },
    Kalman {
        q: f64,
        r: f64,
        #[serde(default = "default_p0")]
        p0: f64,
        #[serde(default)]
        diagonal: bool,
    },
}

fn default_m0() -> f64 {
    1.0
}

fn default_p0() -> f64 {
    1e-2
}

impl BaselineConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineConfig::Lms { .. } => "lms",
            BaselineConfig::Nlms { .. } => "nlms",
            BaselineConfig::JoNlms { .. } => "jo_nlms",
            BaselineConfig::Kalman { .. } => "kalman",
        }
    }

    /// Fresh identifier with a zero initial estimate.
    pub fn build(&self, width: usize) -> Result<Baseline> {
        Ok(match *self {
            BaselineConfig::Lms { mu } => {
                if !(mu >= 0.0) {
                    return Err(Error::invalid("LMS mu must be >= 0"));
                }
                Baseline::Lms {
                    h: ElevVector::zeros(width),
                    mu,
                }
            }
            BaselineConfig::Nlms { mu, eps } => {
                let eps = eps.unwrap_or_else(|| default_nlms_eps(width));
                if !(mu >= 0.0) || !(eps > 0.0) {
                    return Err(Error::invalid("NLMS needs mu >= 0 and eps > 0"));
                }
                Baseline::Nlms {
                    h: ElevVector::zeros(width),
                    mu,
                    eps,
                }
            }
            BaselineConfig::JoNlms { sigma_v2, m0 } => {
                Baseline::JoNlms(JoNlmsState::new(width, sigma_v2, m0)?)
            }
            BaselineConfig::Kalman { q, r, p0, diagonal } => {
                Baseline::Kalman(KalmanState::new(width, q, r, p0, diagonal)?)
            }
        })
    }
}

/// Anything that refines `ĥ` one frame at a time.
pub trait Identifier {
    /// Current estimate `ĥ_n`.
    fn estimate(&self) -> &[f64];
    /// Consumes frame `frame`; returns `e(n)` computed with the pre-update estimate.
    fn step(&mut self, x: &[f64], y: f64, frame: usize) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub enum Baseline {
    Lms { h: ElevVector, mu: f64 },
    Nlms { h: ElevVector, mu: f64, eps: f64 },
    JoNlms(JoNlmsState),
    Kalman(KalmanState),
}

impl Identifier for Baseline {
    fn estimate(&self) -> &[f64] {
        match self {
            Baseline::Lms { h, .. } | Baseline::Nlms { h, .. } => h,
            Baseline::JoNlms(s) => &s.h_hat,
            Baseline::Kalman(s) => &s.h_hat,
        }
    }

    fn step(&mut self, x: &[f64], y: f64, frame: usize) -> Result<f64> {
        let e = match self {
            Baseline::Lms { h, mu } => lms_update(h, x, y, *mu)?,
            Baseline::Nlms { h, mu, eps } => nlms_update(h, x, y, *mu, *eps)?,
            Baseline::JoNlms(s) => s.update(x, y, frame)?,
            Baseline::Kalman(s) => s.update(x, y, frame)?,
        };
        if !e.is_finite() {
            return Err(Error::numerical(frame, "estimation error is not finite"));
        }
        Ok(e)
    }
}

/// Which estimates to keep while streaming. The error trace is always kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StorePolicy {
    EveryFrame,
    Stride {
        stride: usize,
    },
    /// For every target azimuth, the frame whose angle is circularly closest.
    Azimuths {
        azimuths: Vec<f64>,
    },
}

/// Circular distance between two angles in degrees, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl StorePolicy {
    /// Sorted, deduplicated frame indices selected out of `0..frames`.
    pub fn frames(&self, frames: usize, rotation: &RotationProfile) -> Result<Vec<usize>> {
        Ok(match self {
            StorePolicy::EveryFrame => (0..frames).collect(),
            StorePolicy::Stride { stride } => {
                if *stride == 0 {
                    return Err(Error::invalid("store stride must be >= 1"));
                }
                (0..frames).step_by(*stride).collect()
            }
            StorePolicy::Azimuths { azimuths } => {
                if frames == 0 {
                    return Ok(Vec::new());
                }
                let mut best = vec![(f64::INFINITY, 0usize); azimuths.len()];
                for n in 0..frames {
                    let theta = rotation.angle(n);
                    for (slot, &target) in best.iter_mut().zip(azimuths) {
                        let d = angular_distance(theta, target);
                        if d < slot.0 {
                            *slot = (d, n);
                        }
                    }
                }
                let mut picked: Vec<usize> = best.into_iter().map(|(_, n)| n).collect();
                picked.sort_unstable();
                picked.dedup();
                picked
            }
        })
    }
}

/// `ĥ_n` as it stood when frame `frame` was processed.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub frame: usize,
    pub azimuth: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub algo: String,
    pub hyperparameters: serde_json::Value,
    pub frames: usize,
    pub speakers: usize,
    pub taps: usize,
    pub rotation: RotationProfile,
    /// `e(n)` for every processed frame.
    pub e_trace: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// First frame of every segment after the first (segmented runs only).
    pub segment_starts: Vec<usize>,
    /// Segments whose processing failed; their frames carry no snapshots.
    pub failed_segments: Vec<usize>,
}

impl IdentificationResult {
    pub fn empty(algo: &str, speakers: usize, taps: usize, rotation: RotationProfile) -> Self {
        Self {
            algo: algo.to_string(),
            hyperparameters: serde_json::Value::Null,
            frames: 0,
            speakers,
            taps,
            rotation,
            e_trace: Vec::new(),
            snapshots: Vec::new(),
            segment_starts: Vec::new(),
            failed_segments: Vec::new(),
        }
    }

    pub fn snapshot_at(&self, frame: usize) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| &self.snapshots[i])
    }
}

pub(crate) fn check_stream_dims(bank: &ExcitationBank, recording: &Recording) -> Result<()> {
    if bank.len() < recording.len() {
        return Err(Error::invalid(format!(
            "bank length {} shorter than recording length {}",
            bank.len(),
            recording.len()
        )));
    }
    Ok(())
}

/// Streams frames `0..N` through `identifier`, recording `e(n)` and the
/// snapshots chosen by `policy`.
pub fn run_identifier<I: Identifier + ?Sized>(
    identifier: &mut I,
    bank: &ExcitationBank,
    recording: &Recording,
    policy: &StorePolicy,
) -> Result<IdentificationResult> {
    check_stream_dims(bank, recording)?;
    if identifier.estimate().len() != bank.width() {
        return Err(Error::invalid(format!(
            "identifier width {} does not match bank width {}",
            identifier.estimate().len(),
            bank.width()
        )));
    }
    let frames = recording.len();
    let rotation = recording.rotation;
    let keep = policy.frames(frames, &rotation)?;
    let mut next_keep = keep.iter().peekable();
    let mut x = vec![0.0; bank.width()];
    let mut result = IdentificationResult::empty("", bank.speakers(), bank.taps(), rotation);
    result.frames = frames;
    result.e_trace.reserve(frames);
    for (n, &y) in recording.y.iter().enumerate() {
        if next_keep.peek() == Some(&&n) {
            next_keep.next();
            result.snapshots.push(Snapshot {
                frame: n,
                azimuth: rotation.angle(n),
                values: identifier.estimate().to_vec(),
            });
        }
        bank.regressor_into(n, &mut x)?;
        result.e_trace.push(identifier.step(&x, y, n)?);
    }
    Ok(result)
}

/// Builds the identifier for `config` and streams the whole recording.
pub fn run_baseline(
    config: &BaselineConfig,
    bank: &ExcitationBank,
    recording: &Recording,
    policy: &StorePolicy,
) -> Result<IdentificationResult> {
    let mut identifier = config.build(bank.width())?;
    let mut result = run_identifier(&mut identifier, bank, recording, policy)?;
    result.algo = config.name().to_string();
    result.hyperparameters = serde_json::to_value(config).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(result)
}
