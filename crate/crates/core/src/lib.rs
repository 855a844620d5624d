//! Training laboratory for dynamic error-bound regularization of time-series
//! forecasters.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`], [`rng`], [`mlp`], [`adam`]: dense arithmetic, the seeded
//!   random stream, the three-layer forecaster with hand-written
//!   backpropagation, and the Adam optimizer.
//! - [`data`]: synthetic series, CSV ingestion, chronological splits,
//!   standardization, rolling windows and mini-batches.
//! - [`risk`]: per-element empirical risk and every training objective
//!   (plain, flooding, constant flooding, wave bound averaged/individual).
//! - [`ema`]: the exponential-moving-average target network.
//! - [`trainer`] and [`checkpoint`]: the mini-batched training loop, sweeps
//!   and the binary checkpoint format.
//! - [`eval`]: metrics, per-horizon error, generalization gap and 1-D
//!   filter-normalized loss slices.
//! - [`oracle`]: Monte-Carlo check of the MSE-reduction property of the wave
//!   risk estimator and the mini-batch Jensen audits.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod ema;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mlp;
pub mod oracle;
pub mod risk;
pub mod rng;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use data::{SeriesDataset, SplitSpec, WindowPair};
pub use ema::EmaMirror;
pub use error::{Error, Result};
pub use eval::MetricRecord;
pub use linalg::Matrix;
pub use mlp::{Activation, Gradients, Layer, ModelParams};
pub use oracle::{OracleInstance, OracleReport};
pub use risk::{ObjectiveKind, RiskMatrix};
pub use rng::SeededRng;
pub use trainer::{EvalNetwork, TrainConfig, TrainLog};
