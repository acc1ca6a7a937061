//! Scoring of identified impulse responses: normalized misalignment, log
//! spectral distortion, interaural time difference, azimuth alignment and
//! the post-processing applied before scoring measured data.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiers::{angular_distance, IdentificationResult};
use crate::scenario::IrTrajectory;

/// Reported NM when the estimate matches exactly.
pub const NM_FLOOR_DB: f64 = -300.0;
/// Magnitudes below this are clamped before taking logarithms.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

/// A true IR and its estimate, zero-padded to the true length.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    truth: Vec<f64>,
    estimate: Vec<f64>,
}

impl AlignedPair {
    /// Pads `estimate` with zeros up to `truth.len()`. An estimate longer
    /// than the truth is rejected.
    pub fn new(truth: Vec<f64>, mut estimate: Vec<f64>) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::invalid("true impulse response is empty"));
        }
        if estimate.len() > truth.len() {
            return Err(Error::invalid(format!(
                "estimate has {} taps, more than the {} true taps",
                estimate.len(),
                truth.len()
            )));
        }
        estimate.resize(truth.len(), 0.0);
        Ok(Self { truth, estimate })
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Identified blocks at one target azimuth, one `K̃` block per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthEstimate {
    pub target: f64,
    pub frame: usize,
    pub azimuth: f64,
    pub blocks: Vec<Vec<f64>>,
}

/// For every target azimuth, the snapshot whose tag is circularly closest
/// (earliest frame on ties), split into per-speaker blocks.
pub fn azimuth_map(result: &IdentificationResult, targets: &[f64]) -> Result<Vec<AzimuthEstimate>> {
    if result.snapshots.is_empty() {
        return Err(Error::invalid("identification result holds no snapshots"));
    }
    let width = result.speakers * result.taps;
    targets
        .iter()
        .map(|&target| {
            let mut best = &result.snapshots[0];
            let mut best_d = angular_distance(best.azimuth, target);
            for snap in &result.snapshots[1..] {
                let d = angular_distance(snap.azimuth, target);
                if d < best_d {
                    best = snap;
                    best_d = d;
                }
            }
            if best.values.len() != width {
                return Err(Error::invalid(format!(
                    "snapshot at frame {} has {} values, expected {width}",
                    best.frame,
                    best.values.len()
                )));
            }
            Ok(AzimuthEstimate {
                target,
                frame: best.frame,
                azimuth: best.azimuth,
                blocks: best.values.chunks(result.taps).map(<[f64]>::to_vec).collect(),
            })
        })
        .collect()
}

/// One pair per (snapshot, speaker): the true frame at the snapshot's index
/// against the identified block.
pub fn pairs_from_trajectory(
    truth: &IrTrajectory,
    result: &IdentificationResult,
) -> Result<Vec<AlignedPair>> {
    if truth.speakers() != result.speakers {
        return Err(Error::invalid(format!(
            "trajectory has {} speakers, result {}",
            truth.speakers(),
            result.speakers
        )));
    }
    let mut pairs = Vec::with_capacity(result.snapshots.len() * result.speakers);
    for snap in &result.snapshots {
        if snap.frame >= truth.frames() {
            return Err(Error::invalid(format!(
                "snapshot frame {} is beyond the {} true frames",
                snap.frame,
                truth.frames()
            )));
        }
        let frame = truth.frame(snap.frame);
        for (t, e) in frame.chunks(truth.taps()).zip(snap.values.chunks(result.taps)) {
            pairs.push(AlignedPair::new(t.to_vec(), e.to_vec())?);
        }
    }
    Ok(pairs)
}

/// Pairs every estimated snapshot with the true snapshot of the same frame.
pub fn pairs_from_snapshots(
    truth: &IdentificationResult,
    estimate: &IdentificationResult,
) -> Result<Vec<AlignedPair>> {
    if truth.speakers != estimate.speakers {
        return Err(Error::invalid(format!(
            "truth has {} speakers, estimate {}",
            truth.speakers, estimate.speakers
        )));
    }
    let mut pairs = Vec::with_capacity(estimate.snapshots.len() * estimate.speakers);
    for snap in &estimate.snapshots {
        let t = truth.snapshot_at(snap.frame).ok_or_else(|| {
            Error::invalid(format!(
                "no true impulse responses stored for frame {}",
                snap.frame
            ))
        })?;
        for (tb, eb) in t.values.chunks(truth.taps).zip(snap.values.chunks(estimate.taps)) {
            pairs.push(AlignedPair::new(tb.to_vec(), eb.to_vec())?);
        }
    }
    Ok(pairs)
}

/// One speaker's left and right IRs at each target azimuth, zero-padded to `taps`.
pub fn binaural_set(
    left: &IdentificationResult,
    right: &IdentificationResult,
    targets: &[f64],
    speaker: usize,
    taps: usize,
) -> Result<Vec<BinauralIr>> {
    if speaker >= left.speakers || speaker >= right.speakers {
        return Err(Error::invalid(format!("speaker {speaker} is out of range")));
    }
    let pad = |block: &[f64]| -> Result<Vec<f64>> {
        if block.len() > taps {
            return Err(Error::invalid("impulse response longer than the padded length"));
        }
        let mut v = block.to_vec();
        v.resize(taps, 0.0);
        Ok(v)
    };
    let l = azimuth_map(left, targets)?;
    let r = azimuth_map(right, targets)?;
    l.iter()
        .zip(&r)
        .map(|(a, b)| {
            Ok(BinauralIr {
                azimuth: a.target,
                left: pad(&a.blocks[speaker])?,
                right: pad(&b.blocks[speaker])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmSummary {
    pub nm_db: f64,
    /// Every evaluated pair matched exactly (the value is the floor).
    pub exact_match: bool,
    pub evaluated: usize,
    /// Pairs skipped because the true IR has zero norm.
    pub excluded_zero_norm: usize,
}

/// Mean over pairs of `10 log10(‖h − ĥ‖² / ‖h‖²)`, each term floored at
/// [`NM_FLOOR_DB`].
pub fn normalized_misalignment(pairs: &[AlignedPair]) -> Result<NmSummary> {
    let terms: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| {
            let den: f64 = p.truth.iter().map(|v| v * v).sum();
            if den == 0.0 {
                return None;
            }
            let num: f64 = p
                .truth
                .iter()
                .zip(&p.estimate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Some(if num == 0.0 {
                NM_FLOOR_DB
            } else {
                (10.0 * (num / den).log10()).max(NM_FLOOR_DB)
            })
        })
        .collect();
    let used: Vec<f64> = terms.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::invalid("every true impulse response has zero norm"));
    }
    let nm_db = (used.iter().sum::<f64>() / used.len() as f64).max(NM_FLOOR_DB);
    Ok(NmSummary {
        nm_db,
        exact_match: used.iter().all(|&v| v == NM_FLOOR_DB),
        evaluated: used.len(),
        excluded_zero_norm: pairs.len() - used.len(),
    })
}

/// Frequency range `(lo, hi]` in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// `(0, fs/2]`.
    pub fn full(sample_rate: f64) -> Self {
        Self {
            lo: 0.0,
            hi: sample_rate / 2.0,
        }
    }

    /// 200 Hz to 17 kHz, as used for measured HRIRs.
    pub fn experiment() -> Self {
        Self {
            lo: 200.0,
            hi: 17_000.0,
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        f > self.lo && f <= self.hi
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(self.lo >= 0.0) || !(self.hi > self.lo) || self.hi > sample_rate / 2.0 {
            return Err(Error::invalid(format!(
                "band ({}, {}] must satisfy 0 <= lo < hi <= fs/2 = {}",
                self.lo,
                self.hi,
                sample_rate / 2.0
            )));
        }
        Ok(())
    }
}

/// Smallest power of two that is at least `taps`.
pub fn default_fft_size(taps: usize) -> usize {
    taps.max(1).next_power_of_two()
}

/// Bins `1..=fft_size/2` whose centre frequency lies in `band`.
pub fn band_bins(fft_size: usize, sample_rate: f64, band: Band) -> Vec<usize> {
    (1..=fft_size / 2)
        .filter(|&i| band.contains(i as f64 * sample_rate / fft_size as f64))
        .collect()
}

/// Zero-padded `fft_size`-point DFT of a real IR.
pub fn spectrum(ir: &[f64], fft_size: usize) -> Result<Vec<Complex64>> {
    if fft_size < ir.len() || fft_size == 0 {
        return Err(Error::invalid(format!(
            "fft size {fft_size} is shorter than the {} taps",
            ir.len()
        )));
    }
    let mut buf: Vec<Complex64> = ir.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(fft_size, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(fft_size).process(&mut buf);
    Ok(buf)
}

/// RMS over pairs and in-band bins of `20 log10(|H| / |Ĥ|)`.
pub fn log_spectral_distortion(
    pairs: &[AlignedPair],
    sample_rate: f64,
    fft_size: Option<usize>,
    band: Band,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no impulse-response pairs to score"));
    }
    band.validate(sample_rate)?;
    let taps = pairs.iter().map(AlignedPair::len).max().unwrap_or(1);
    let fft_size = fft_size.unwrap_or_else(|| default_fft_size(taps));
    if fft_size < taps {
        return Err(Error::invalid(format!("fft size {fft_size} is below K = {taps}")));
    }
    let bins = band_bins(fft_size, sample_rate, band);
    if bins.is_empty() {
        return Err(Error::invalid("band contains no frequency bins"));
    }
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let sums: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let transform = |ir: &[f64]| {
                let mut buf: Vec<Complex64> = ir.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                buf.resize(fft_size, Complex64::new(0.0, 0.0));
                fft.process(&mut buf);
                buf
            };
            let h = transform(&p.truth);
            let e = transform(&p.estimate);
            bins.iter()
                .map(|&i| {
                    let ratio = h[i].norm().max(MAGNITUDE_FLOOR) / e[i].norm().max(MAGNITUDE_FLOOR);
                    let db = 20.0 * ratio.log10();
                    db * db
                })
                .sum::<f64>()
        })
        .collect();
    let total: f64 = sums.iter().sum();
    Ok((total / (pairs.len() * bins.len()) as f64).sqrt())
}

/// `floor(1 ms · fs)`, kept below `taps`.
pub fn default_max_lag(sample_rate: f64, taps: usize) -> usize {
    ((1e-3 * sample_rate).floor() as usize).min(taps.saturating_sub(1))
}

/// Lag maximizing the normalized cross-correlation
/// `sum_k left(k) right(k + lag) / sqrt(E_left E_right)` over
/// `|lag| <= max_lag`. Positive when the right ear lags. Ties go to the
/// smaller `|lag|`.
pub fn itd_lag(left: &[f64], right: &[f64], max_lag: usize) -> Result<isize> {
    if left.len() != right.len() {
        return Err(Error::invalid(format!(
            "ear lengths differ: {} vs {}",
            left.len(),
            right.len()
        )));
    }
    if max_lag >= left.len() {
        return Err(Error::invalid(format!(
            "max lag {max_lag} must be below the {} taps",
            left.len()
        )));
    }
    let el: f64 = left.iter().map(|v| v * v).sum();
    let er: f64 = right.iter().map(|v| v * v).sum();
    if el == 0.0 || er == 0.0 {
        return Err(Error::invalid("zero-energy impulse response"));
    }
    let norm = (el * er).sqrt();
    let k = left.len() as isize;
    let corr = |lag: isize| -> f64 {
        let lo = 0.max(-lag);
        let hi = k.min(k - lag);
        (lo..hi)
            .map(|i| left[i as usize] * right[(i + lag) as usize])
            .sum::<f64>()
            / norm
    };
    let mut best_lag = 0isize;
    let mut best = corr(0);
    for m in 1..=max_lag as isize {
        let (neg, pos) = (corr(-m), corr(m));
        // An exact tie between -m and +m is left unresolved so that swapping
        // the ears negates the result.
        let candidate = if neg > pos {
            Some((neg, -m))
        } else if pos > neg {
            Some((pos, m))
        } else {
            None
        };
        if let Some((value, lag)) = candidate {
            if value > best {
                best = value;
                best_lag = lag;
            }
        }
    }
    Ok(best_lag)
}

/// ITD in seconds; see [`itd_lag`].
pub fn itd(left: &[f64], right: &[f64], max_lag: usize, sample_rate: f64) -> Result<f64> {
    Ok(itd_lag(left, right, max_lag)? as f64 / sample_rate)
}

/// Zeroes every sample outside `[t0·fs, t1·fs)`.
pub fn time_window(ir: &[f64], t0: f64, t1: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(t0 >= 0.0) || !(t1 > t0) || !(sample_rate > 0.0) {
        return Err(Error::invalid("time window needs 0 <= t0 < t1 and fs > 0"));
    }
    let edge = |t: f64| (t * sample_rate - 1e-9).ceil().max(0.0) as usize;
    let (lo, hi) = (edge(t0), edge(t1));
    Ok(ir
        .iter()
        .enumerate()
        .map(|(i, &v)| if i >= lo && i < hi { v } else { 0.0 })
        .collect())
}

/// Regularized spectral division `H conj(O) / (|O|² + reg)`.
pub fn otf_compensate(estimate: &[Complex64], otf: &[Complex64], reg: f64) -> Result<Vec<Complex64>> {
    if estimate.len() != otf.len() {
        return Err(Error::invalid(format!(
            "spectrum has {} bins, OTF {}",
            estimate.len(),
            otf.len()
        )));
    }
    if !(reg >= 0.0) {
        return Err(Error::invalid("regularization must be >= 0"));
    }
    Ok(estimate
        .iter()
        .zip(otf)
        .map(|(h, o)| h * o.conj() / (o.norm_sqr() + reg))
        .collect())
}

/// Left and right IRs at one azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralIr {
    pub azimuth: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItdRow {
    pub azimuth_deg: f64,
    pub itd_us_true: f64,
    pub itd_us_est: f64,
    pub abs_err_us: f64,
}

const AZIMUTH_MATCH: f64 = 1e-6;

fn find_azimuth<'a>(set: &'a [BinauralIr], azimuth: f64, which: &str) -> Result<&'a BinauralIr> {
    set.iter()
        .find(|b| angular_distance(b.azimuth, azimuth) <= AZIMUTH_MATCH)
        .ok_or_else(|| Error::invalid(format!("{which} set has no entry at azimuth {azimuth}")))
}

/// `|ITD(estimate) − ITD(truth)|` in microseconds at each azimuth.
pub fn itd_error_table(
    truth: &[BinauralIr],
    estimate: &[BinauralIr],
    azimuths: &[f64],
    max_lag: usize,
    sample_rate: f64,
) -> Result<Vec<ItdRow>> {
    azimuths
        .iter()
        .map(|&az| {
            let t = find_azimuth(truth, az, "true")?;
            let e = find_azimuth(estimate, az, "estimated")?;
            let at = |err: Error| match err {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("azimuth {az}: {m}")),
                other => other,
            };
            let it = itd(&t.left, &t.right, max_lag, sample_rate).map_err(at)? * 1e6;
            let ie = itd(&e.left, &e.right, max_lag, sample_rate).map_err(at)? * 1e6;
            Ok(ItdRow {
                azimuth_deg: az,
                itd_us_true: it,
                itd_us_est: ie,
                abs_err_us: (ie - it).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nm_db: f64,
    pub nm_exact_match: bool,
    pub lsd_db: f64,
    pub pairs_evaluated: usize,
    pub pairs_excluded_zero_norm: usize,
    pub fft_size: usize,
    pub band: Band,
    pub itd_table: Vec<ItdRow>,
}

/// NM and LSD over `pairs`; the ITD table is attached by the caller.
pub fn score_pairs(
    pairs: &[AlignedPair],
    sample_rate: f64,
    fft_size: Option<usize>,
    band: Band,
) -> Result<MetricsReport> {
    let nm = normalized_misalignment(pairs)?;
    let taps = pairs.iter().map(AlignedPair::len).max().unwrap_or(1);
    let fft_size = fft_size.unwrap_or_else(|| default_fft_size(taps));
    Ok(MetricsReport {
        nm_db: nm.nm_db,
        nm_exact_match: nm.exact_match,
        lsd_db: log_spectral_distortion(pairs, sample_rate, Some(fft_size), band)?,
        pairs_evaluated: nm.evaluated,
        pairs_excluded_zero_norm: nm.excluded_zero_norm,
        fft_size,
        band,
        itd_table: Vec::new(),
    })
}
