//! Training, evaluation, prediction and model accounting for Prior Attention Networks.
//!
//! Files written by `train`:
//!
//! - `<checkpoint_dir>/last.ckpt` after every epoch and `<checkpoint_dir>/best.ckpt`
//!   whenever the mean validation Dice improves (see [`checkpoint`] for the format).
//! - `log_path`, one JSON object per line, tagged by `kind`: `step` (epoch, step,
//!   learning rate, total loss, each loss term, batch case ids, batch Dice), `epoch`
//!   (validation Dice per class), `train-eval` (the epoch training Dice that stopped
//!   the run early) and `checkpoint`.
//! - `<checkpoint_dir>/nonfinite-step<N>.json` describing the batch when the loss stops
//!   being finite; the run then aborts.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod optim;
pub mod predict;
pub mod segment;
pub mod summarize;
pub mod train;

pub use error::{CliError, Result};

/// Backend for evaluation and prediction.
pub type Inner = burn::backend::NdArray<f32>;
/// Backend for training.
pub type TrainBackend = burn::backend::Autodiff<Inner>;
