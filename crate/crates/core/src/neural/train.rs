//! Whole-sequence updating and optimization: every epoch runs the cell over
//! the full segment from `ĥ = 0, c = 0`, takes `ln(mean ISE)` as the loss,
//! backpropagates through the entire sequence and applies one Adam step.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identifiers::{check_stream_dims, ElevVector, IdentificationResult, StorePolicy};
use crate::scenario::{Recording, RotationProfile};
use crate::signals::ExcitationBank;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::params::{init_identity, DnnParams, Field};
use super::sequence::{backprop_sequence, run_span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Relative `L_train` improvement below which an epoch counts as stalled.
    pub convergence_tol: f64,
    /// Consecutive stalled epochs before training stops.
    pub patience: usize,
    pub clip_norm: Option<f64>,
    /// Keep the normalization vector at its initial value (fixed NLMS-style normalization).
    pub freeze_norm: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 300,
            convergence_tol: 1e-4,
            patience: 10,
            clip_norm: None,
            freeze_norm: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("trainer lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("trainer betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence_tol must be >= 0"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::invalid("clip_norm must be positive when set"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            clip_norm: self.clip_norm,
        }
    }

    fn frozen(&self) -> Vec<Field> {
        if self.freeze_norm {
            vec![Field::NormVec]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `NaN` for failed epochs.
    pub l_train: f64,
    /// Seconds since training started.
    pub wall_time: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest `L_train`.
    pub params: DnnParams,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.log
            .iter()
            .find(|r| !r.failed)
            .map_or(f64::NAN, |r| r.l_train)
    }
}

const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// Trains a freshly identity-initialized model on the whole recording.
pub fn train(bank: &ExcitationBank, recording: &Recording, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    check_stream_dims(bank, recording)?;
    train_span(bank, &recording.y, recording.rotation, 0..recording.len(), cfg)
}

pub(crate) fn train_span(
    bank: &ExcitationBank,
    y: &[f64],
    rotation: RotationProfile,
    span: Range<usize>,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = bank.width();
    let zero_h = ElevVector::zeros(d);
    let zero_c = vec![0.0; d];
    let frozen = cfg.frozen();
    let mut adam = cfg.adam();

    let mut params = init_identity(d)?;
    let mut state = AdamState::new(params.count());
    let mut best: Option<(f64, usize, DnnParams)> = None;
    let mut log = Vec::new();
    let mut prev_loss: Option<f64> = None;
    let mut stalled = 0;
    let mut failures = 0;
    let mut stop = StopReason::MaxEpochs;
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let attempt = run_span(
            &params,
            bank,
            y,
            rotation,
            span.clone(),
            &zero_h,
            &zero_c,
            &[],
            true,
        )
        .and_then(|run| {
            let loss = run.training_loss();
            let grads = backprop_sequence(&params, run.cache.as_ref().unwrap(), &frozen)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::numerical(span.start, "non-finite loss or gradient"));
            }
            Ok((loss, grads))
        });

        let (loss, grads) = match attempt {
            Ok(v) => v,
            Err(Error::NumericalFailure { frame, message, .. }) => {
                failures += 1;
                log.push(EpochRecord {
                    epoch,
                    l_train: f64::NAN,
                    wall_time: started.elapsed().as_secs_f64(),
                    failed: true,
                });
                if failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::NumericalFailure {
                        frame,
                        message: format!(
                            "training aborted after {failures} consecutive failed epochs: {message}"
                        ),
                        running_loss: None,
                    });
                }
                // Back off: restart from the best parameters with a smaller step.
                params = match &best {
                    Some((_, _, p)) => p.clone(),
                    None => init_identity(d)?,
                };
                state = AdamState::new(params.count());
                adam.lr *= 0.5;
                continue;
            }
            Err(other) => return Err(other),
        };
        failures = 0;
        log.push(EpochRecord {
            epoch,
            l_train: loss,
            wall_time: started.elapsed().as_secs_f64(),
            failed: false,
        });
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, epoch, params.clone()));
        }
        if let Some(prev) = prev_loss {
            let improvement = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
            stalled = if improvement < cfg.convergence_tol {
                stalled + 1
            } else {
                0
            };
        }
        prev_loss = Some(loss);

        adam_step(&mut params, &grads, &mut state, &adam);

        if stalled >= cfg.patience {
            stop = StopReason::Converged;
            break;
        }
    }

    let (best_loss, best_epoch, params) =
        best.ok_or_else(|| Error::numerical(span.start, "no epoch completed"))?;
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_loss,
        log,
        stop,
    })
}

/// Training and final identification of one segment.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub span: Range<usize>,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

#[derive(Debug, Clone)]
pub struct SegmentedRun {
    pub result: IdentificationResult,
    pub segments: Vec<SegmentOutcome>,
}

/// Splits `0..N` into `segments` contiguous spans of `ceil(N / M)` frames
/// (the last one shorter).
pub fn segment_spans(frames: usize, segments: usize) -> Result<Vec<Range<usize>>> {
    if segments == 0 {
        return Err(Error::invalid("segment count must be >= 1"));
    }
    if frames == 0 {
        return Ok(Vec::new());
    }
    if segments > frames {
        return Err(Error::invalid(format!(
            "cannot split {frames} frames into {segments} segments"
        )));
    }
    let len = frames.div_ceil(segments);
    Ok((0..segments)
        .map(|i| (i * len).min(frames)..((i + 1) * len).min(frames))
        .filter(|r| !r.is_empty())
        .collect())
}

/// Trains one model per segment (each from zero `ĥ` and `c`), identifies
/// each segment with its best parameters and stitches the results.
///
/// Segments run on a pool of `workers` threads; output does not depend on
/// the worker count.
pub fn segment_and_train(
    bank: &ExcitationBank,
    recording: &Recording,
    segments: usize,
    cfg: &TrainerConfig,
    policy: &StorePolicy,
    workers: usize,
) -> Result<SegmentedRun> {
    check_stream_dims(bank, recording)?;
    cfg.validate()?;
    let spans = segment_spans(recording.len(), segments)?;
    let keep = policy.frames(recording.len(), &recording.rotation)?;
    let d = bank.width();
    let rotation = recording.rotation;

    let run_one = |span: &Range<usize>| -> (SegmentOutcome, Option<crate::neural::SequenceRun>) {
        let trained = train_span(bank, &recording.y, rotation, span.clone(), cfg);
        let trained = trained.and_then(|t| {
            let run = run_span(
                &t.params,
                bank,
                &recording.y,
                rotation,
                span.clone(),
                &ElevVector::zeros(d),
                &vec![0.0; d],
                &keep,
                false,
            )?;
            Ok((t, run))
        });
        match trained {
            Ok((t, run)) => (
                SegmentOutcome {
                    span: span.clone(),
                    outcome: Ok(t),
                },
                Some(run),
            ),
            Err(e) => (
                SegmentOutcome {
                    span: span.clone(),
                    outcome: Err(e.to_string()),
                },
                None,
            ),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| spans.par_iter().map(run_one).collect());

    let mut result = IdentificationResult::empty("dnn", bank.speakers(), bank.taps(), rotation);
    result.frames = recording.len();
    result.hyperparameters = serde_json::json!({
        "trainer": cfg,
        "segments": segments,
    });
    let mut seg_records = Vec::with_capacity(outcomes.len());
    for (i, (seg, run)) in outcomes.into_iter().enumerate() {
        if i > 0 {
            result.segment_starts.push(seg.span.start);
        }
        match run {
            Some(run) => {
                result.e_trace.extend(run.e_trace);
                result.snapshots.extend(run.snapshots);
            }
            None => {
                result.failed_segments.push(i);
                result
                    .e_trace
                    .extend(std::iter::repeat_n(f64::NAN, seg.span.len()));
            }
        }
        seg_records.push(seg);
    }
    Ok(SegmentedRun {
        result,
        segments: seg_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_cover_range() {
        assert_eq!(segment_spans(176_400, 10).unwrap()[3], 52_920..70_560);
        assert!(segment_spans(176_400, 10)
            .unwrap()
            .iter()
            .all(|r| r.len() == 17_640));
        assert_eq!(segment_spans(10, 3).unwrap(), vec![0..4, 4..8, 8..10]);
        assert_eq!(segment_spans(7, 1).unwrap(), vec![0..7]);
        assert!(segment_spans(3, 4).is_err());
        assert!(segment_spans(3, 0).is_err());
        assert!(segment_spans(0, 2).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            beta1: 1.0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            max_epochs: 0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
