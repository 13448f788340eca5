//! STLinear: decomposition-based linear traffic forecasting.
//!
//! A self-contained spatio-temporal forecasting engine: each node's history
//! window is split into trend and remainder, encoded by linear layers whose
//! weights are extracted per node from shared parameter pools via learned
//! spatial embeddings, combined with learned time-of-day / day-of-week
//! embeddings, and decoded by a residual linear stack. Training is plain
//! analytic backpropagation with Adam; no framework underneath.
//!
//! The `book/` directory of the repository walks through every concept with
//! runnable snippets; those snippets double as doc-tests of this crate.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod decompose;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use baselines::{evaluate, DLinear, Forecaster, HistoricalAverage, Persistence};
pub use checkpoint::Checkpoint;
pub use data::{
    fit_normalizer, make_windows, split_samples, CalendarIndices, Normalizer, PreparedData,
    SeriesDataset, WindowSample,
};
pub use decompose::{decompose, moving_average, moving_average_adjoint, DecompPair};
pub use error::{Error, Result};
pub use evaluation::{compute_metrics, count_macs, estimate_memory, EvalReport, MacMode, MacReport};
pub use gradcheck::finite_diff_check;
pub use model::{MaterializedNodeWeights, ModelConfig, ParameterSet, StLinear};
pub use optim::{adam_step, AdamState};
pub use tensor::{affine_backward, affine_forward, gelu, gelu_deriv, gelu_tensor, Tensor};
pub use training::{masked_mae_loss, train, EpochStats, TrainConfig, TrainOutcome, Trainable};

#[cfg(doctest)]
mod book;
