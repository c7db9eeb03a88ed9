//! Task-aware local differential privacy.
//!
//! A data owner releases `x̂ = g_d(g_e(x) + w)` instead of `x`, where `w` is
//! Laplace noise calibrated to the ℓ1 sensitivity of the encoder `g_e` so the
//! release is ε-LDP. The encoder/decoder pair is chosen to minimise the loss of
//! a downstream task rather than reconstruction error.
//!
//! * [`linear_solver`] builds the closed-form linear codec for a linear task
//!   with squared loss, plus the two benchmark designs.
//! * [`trainer`] fits neural codecs with alternating sensitivity
//!   recalibration, and the benchmark trainers.
//! * [`harness`] runs end-to-end experiments and emits result tables.

pub mod codec_io;
pub mod data_io;
pub mod error;
pub mod harness;
pub mod linear_solver;
pub mod mechanism;
pub mod neural;
pub mod numerics;
pub mod rng;
pub mod trainer;
pub mod whitening;

pub use data_io::{DataMatrix, ExperimentConfig, NormalizationMode, NormalizationSpec};
pub use error::{Error, Result};
pub use linear_solver::{LinearCodec, SolveReport};
pub use mechanism::{LaplaceMechanism, SensitivityReport};
pub use neural::{Activation, LossFn, Net};
pub use numerics::Matrix;
pub use trainer::{NetCodec, TrainTrace};
pub use whitening::{WhitenedTask, WhiteningModel};
