//! The trainable gated recurrent identifier: it maps `∇ISE(n)`, the regressor
//! power and a hidden state to an additive update of `ĥ_n`, and is trained
//! per recording without any labelled data.

mod adam;
mod cell;
mod linalg;
mod params;
mod sequence;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cell::{cell_forward, CellCache, CellInput, CellOutput, POWER_EPS};
pub use params::{init_identity, parameter_count, DnnParams, Field};
pub use sequence::{
    backprop_sequence, identify_sequence, loss_and_gradient, training_loss, RunCache, SequenceRun, LOG_FLOOR,
};
pub use train::{
    segment_and_train, segment_spans, train, EpochRecord, SegmentOutcome, SegmentedRun, StopReason,
    TrainOutcome, TrainerConfig,
};
