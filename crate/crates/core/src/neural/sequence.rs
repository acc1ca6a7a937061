//! Whole-sequence updating with the recurrent cell, the log-MSE training
//! loss, and exact backpropagation through time over both recurrences
//! (the hidden state `c_n` and the estimate `ĥ_n`, which feeds `e(n)`).

use std::ops::Range;

use crate::error::{Error, Result};
use crate::identifiers::{check_stream_dims, ElevVector, Snapshot, StorePolicy};
use crate::scenario::{Recording, RotationProfile};
use crate::signals::{dot, ExcitationBank};

use super::cell::{cell_backward, cell_forward_at, CellCache, CellInput};
use super::params::{DnnParams, Field};

/// Floor added inside the logarithm of the training loss.
pub const LOG_FLOOR: f64 = 1e-30;

/// `ln(L / N + floor)`.
pub fn training_loss(accumulated: f64, frames: usize) -> f64 {
    (accumulated / frames.max(1) as f64 + LOG_FLOOR).ln()
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    e: f64,
    cell: CellCache,
}

/// Activations of a full forward pass, consumed by [`backprop_sequence`].
#[derive(Debug, Clone)]
pub struct RunCache {
    width: usize,
    loss: f64,
    steps: Vec<StepCache>,
}

impl RunCache {
    pub fn frames(&self) -> usize {
        self.steps.len()
    }

    pub fn accumulated_loss(&self) -> f64 {
        self.loss
    }

    /// Approximate bytes held, for budgeting long segments.
    pub fn footprint_bytes(&self) -> usize {
        self.steps.len() * (11 * self.width + 2) * std::mem::size_of::<f64>()
    }
}

/// Outcome of running the cell over a span of frames.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    /// Accumulated `sum e(n)^2`.
    pub loss: f64,
    pub frames: usize,
    pub e_trace: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub h_final: ElevVector,
    pub c_final: Vec<f64>,
    pub cache: Option<RunCache>,
}

impl SequenceRun {
    pub fn training_loss(&self) -> f64 {
        training_loss(self.loss, self.frames)
    }
}

/// Runs the cell over the whole recording starting from `h0`, `c0`.
pub fn identify_sequence(
    params: &DnnParams,
    bank: &ExcitationBank,
    recording: &Recording,
    h0: &ElevVector,
    c0: &[f64],
    policy: &StorePolicy,
) -> Result<SequenceRun> {
    check_stream_dims(bank, recording)?;
    let keep = policy.frames(recording.len(), &recording.rotation)?;
    run_span(
        params,
        bank,
        &recording.y,
        recording.rotation,
        0..recording.len(),
        h0,
        c0,
        &keep,
        false,
    )
}

/// Forward pass over `span` of `y`. `keep` lists global frame indices to
/// snapshot (sorted). Regressors use the bank's real history before
/// `span.start`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_span(
    params: &DnnParams,
    bank: &ExcitationBank,
    y: &[f64],
    rotation: RotationProfile,
    span: Range<usize>,
    h0: &ElevVector,
    c0: &[f64],
    keep: &[usize],
    record_cache: bool,
) -> Result<SequenceRun> {
    let d = params.width();
    if bank.width() != d || h0.len() != d || c0.len() != d {
        return Err(Error::invalid(format!(
            "model width {d} does not match bank width {}, h0 {} or c0 {}",
            bank.width(),
            h0.len(),
            c0.len()
        )));
    }
    if span.end > y.len() || span.end > bank.len() {
        return Err(Error::invalid("frame span exceeds recording or bank"));
    }

    let mut h = h0.clone();
    let mut c = c0.to_vec();
    let mut loss = 0.0;
    let mut e_trace = Vec::with_capacity(span.len());
    let mut snapshots = Vec::new();
    let mut steps = Vec::with_capacity(if record_cache { span.len() } else { 0 });
    let mut keep = keep.iter().skip_while(|&&n| n < span.start).peekable();
    let mut x = vec![0.0; d];

    for n in span.clone() {
        if keep.peek() == Some(&&n) {
            keep.next();
            snapshots.push(Snapshot {
                frame: n,
                azimuth: rotation.angle(n),
                values: h.to_vec(),
            });
        }
        bank.regressor_into(n, &mut x)?;
        let e = y[n] - dot(&x, &h);
        if !e.is_finite() {
            return Err(Error::NumericalFailure {
                frame: n,
                message: "estimation error is not finite".into(),
                running_loss: Some(loss),
            });
        }
        let grad: Vec<f64> = x.iter().map(|v| v * e).collect();
        let out = cell_forward_at(
            params,
            CellInput {
                grad: &grad,
                power: dot(&x, &x),
                c: &c,
            },
            n,
        )
        .map_err(|err| match err {
            Error::NumericalFailure { frame, message, .. } => Error::NumericalFailure {
                frame,
                message,
                running_loss: Some(loss),
            },
            other => other,
        })?;
        h.iter_mut().zip(&out.delta).for_each(|(a, b)| *a += b);
        loss += e * e;
        e_trace.push(e);
        c = out.c_next;
        if record_cache {
            steps.push(StepCache {
                x: x.clone(),
                e,
                cell: out.cache,
            });
        }
    }

    Ok(SequenceRun {
        loss,
        frames: span.len(),
        e_trace,
        snapshots,
        h_final: h,
        c_final: c,
        cache: record_cache.then_some(RunCache {
            width: d,
            loss,
            steps,
        }),
    })
}

/// Gradient of `ln(L/N)` with respect to every parameter. Fields listed in
/// `frozen` are treated as constants and report an exactly zero gradient.
pub fn backprop_sequence(params: &DnnParams, cache: &RunCache, frozen: &[Field]) -> Result<DnnParams> {
    let d = params.width();
    if cache.width != d {
        return Err(Error::Internal(format!(
            "run cache has width {}, parameters {d}",
            cache.width
        )));
    }
    let mut grads = DnnParams::zeros(d)?;
    let frames = cache.steps.len();
    if frames == 0 {
        return Ok(grads);
    }
    let n = frames as f64;
    let dloss = (1.0 / n) / (cache.loss / n + LOG_FLOOR);

    let mut dh = vec![0.0; d];
    let mut dc = vec![0.0; d];
    for step in cache.steps.iter().rev() {
        if step.x.len() != d {
            return Err(Error::Internal("run cache entry has the wrong width".into()));
        }
        // ĥ_{n+1} = ĥ_n + Δ_n, so dΔ_n = dĥ_{n+1}
        let adj = cell_backward(params, &step.cell, &dh, &dc, &mut grads);
        let de = 2.0 * step.e * dloss + dot(&step.x, &adj.grad);
        // e = y - x·ĥ_n
        dh.iter_mut().zip(&step.x).for_each(|(a, xi)| *a -= de * xi);
        dc = adj.c;
    }
    for &f in frozen {
        grads.get_mut(f).fill(0.0);
    }
    Ok(grads)
}

/// Forward plus reverse pass over a span; returns `(L_train, grads)`.
pub fn loss_and_gradient(
    params: &DnnParams,
    bank: &ExcitationBank,
    recording: &Recording,
    span: Range<usize>,
    frozen: &[Field],
) -> Result<(f64, DnnParams)> {
    let d = params.width();
    let run = run_span(
        params,
        bank,
        &recording.y,
        recording.rotation,
        span,
        &ElevVector::zeros(d),
        &vec![0.0; d],
        &[],
        true,
    )?;
    let cache = run.cache.as_ref().expect("cache requested");
    Ok((run.training_loss(), backprop_sequence(params, cache, frozen)?))
}
