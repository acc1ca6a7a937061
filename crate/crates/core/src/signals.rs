//! Excitation signals: the perfect sweep, the per-speaker shifted bank and
//! the stacked regressor vector fed to every identifier.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One period of a perfect sweep. Its circular autocorrelation is a
/// scaled delta: `r(0) = period`, `r(tau) ~ 0` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfectSweep {
    samples: Vec<f64>,
}

impl PerfectSweep {
    pub fn period(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Builds a perfect sweep of `period` samples with unit sample power.
///
/// The spectrum has unit magnitude and quadratic phase `-pi k^2 / P` on the
/// bins `0..=P/2`, completed conjugate-symmetrically. The Nyquist bin is
/// forced to a real `+-1` so the time signal stays real for any even `P`.
pub fn generate_perfect_sweep(period: usize) -> Result<PerfectSweep> {
    if period < 2 || !period.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "sweep period must be even and >= 2, got {period}"
        )));
    }
    let half = period / 2;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); period];
    for (k, bin) in spectrum.iter_mut().enumerate().take(half) {
        // k^2 mod 2P keeps the phase argument small for large periods.
        let k2 = ((k as u128 * k as u128) % (2 * period as u128)) as f64;
        *bin = Complex64::from_polar(1.0, -PI * k2 / period as f64);
    }
    let nyq = ((half as u128 * half as u128) % (2 * period as u128)) as f64;
    let nyq_re = (-PI * nyq / period as f64).cos();
    spectrum[half] = Complex64::new(if nyq_re < 0.0 { -1.0 } else { 1.0 }, 0.0);
    for k in 1..half {
        spectrum[period - k] = spectrum[k].conj();
    }

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(period).process(&mut spectrum);

    // rustfft's inverse is unnormalized; rescale to mean(x^2) = 1.
    let mut samples: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let power = samples.iter().map(|x| x * x).sum::<f64>() / period as f64;
    let scale = 1.0 / power.sqrt();
    samples.iter_mut().for_each(|x| *x *= scale);
    Ok(PerfectSweep { samples })
}

/// Metadata describing how an excitation bank was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankLayout {
    pub speakers: usize,
    pub taps: usize,
    pub length: usize,
}

impl BankLayout {
    pub fn period(&self) -> usize {
        self.speakers * self.taps
    }

    /// Width of the stacked regressor, `S * K~`.
    pub fn width(&self) -> usize {
        self.speakers * self.taps
    }
}

/// `S` circularly shifted copies of a base sweep, each tiled to length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationBank {
    layout: BankLayout,
    rows: Vec<Vec<f64>>,
}

/// Speaker `s` (0-based) plays the base sweep shifted by `s * taps` samples.
pub fn build_excitation_bank(
    sweep: &PerfectSweep,
    speakers: usize,
    taps: usize,
    length: usize,
) -> Result<ExcitationBank> {
    if speakers == 0 || taps == 0 {
        return Err(Error::invalid("speaker count and tap count must be positive"));
    }
    if sweep.period() != speakers * taps {
        return Err(Error::invalid(format!(
            "sweep period {} does not equal S*K~ = {}*{}",
            sweep.period(),
            speakers,
            taps
        )));
    }
    if length == 0 {
        return Err(Error::invalid("bank length must be >= 1"));
    }
    let period = sweep.period();
    let base = sweep.samples();
    let rows = (0..speakers)
        .map(|s| {
            let shift = s * taps;
            (0..length).map(|n| base[(n + shift) % period]).collect()
        })
        .collect();
    Ok(ExcitationBank {
        layout: BankLayout {
            speakers,
            taps,
            length,
        },
        rows,
    })
}

impl ExcitationBank {
    /// Wraps externally supplied rows (e.g. read back from disk).
    pub fn from_rows(taps: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let speakers = rows.len();
        if speakers == 0 || taps == 0 {
            return Err(Error::invalid("bank needs at least one row and one tap"));
        }
        let length = rows[0].len();
        if length == 0 || rows.iter().any(|r| r.len() != length) {
            return Err(Error::invalid("bank rows must be non-empty and equally long"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bank contains non-finite samples"));
        }
        Ok(Self {
            layout: BankLayout {
                speakers,
                taps,
                length,
            },
            rows,
        })
    }

    pub fn layout(&self) -> BankLayout {
        self.layout
    }

    pub fn speakers(&self) -> usize {
        self.layout.speakers
    }

    pub fn taps(&self) -> usize {
        self.layout.taps
    }

    pub fn len(&self) -> usize {
        self.layout.length
    }

    pub fn is_empty(&self) -> bool {
        self.layout.length == 0
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn row(&self, speaker: usize) -> &[f64] {
        &self.rows[speaker]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Sample `x_s(n)`, zero before time 0.
    #[inline]
    pub fn sample(&self, speaker: usize, n: isize) -> f64 {
        if n < 0 {
            0.0
        } else {
            self.rows[speaker][n as usize]
        }
    }

    /// Fills `out` (length `S*K~`) with the regressor at time `n`.
    ///
    /// Block `s` holds `[x_s(n), x_s(n-1), ..., x_s(n-K~+1)]`.
    pub fn regressor_into(&self, n: usize, out: &mut [f64]) -> Result<()> {
        if n >= self.layout.length {
            return Err(Error::invalid(format!(
                "time index {n} outside bank of length {}",
                self.layout.length
            )));
        }
        if out.len() != self.width() {
            return Err(Error::invalid(format!(
                "regressor buffer has length {}, expected {}",
                out.len(),
                self.width()
            )));
        }
        let taps = self.layout.taps;
        let avail = (n + 1).min(taps);
        for (row, block) in self.rows.iter().zip(out.chunks_exact_mut(taps)) {
            for (j, slot) in block.iter_mut().enumerate().take(avail) {
                *slot = row[n - j];
            }
            block[avail..].iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    }

    pub fn regressor(&self, n: usize) -> Result<RegressorVector> {
        let mut values = vec![0.0; self.width()];
        self.regressor_into(n, &mut values)?;
        Ok(RegressorVector { values })
    }
}

/// Stacked excitation vector `x_{n,ele}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorVector {
    pub values: Vec<f64>,
}

impl RegressorVector {
    pub fn power(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
