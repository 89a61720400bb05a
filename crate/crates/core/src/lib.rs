//! Few-shot compression of small residual networks by block dropping.
//!
//! The crate is organized around a handful of independent pieces:
//!
//! * [`tensor`]: dense 64-bit tensors with reverse-mode autodiff and SGD.
//! * [`network`]: stem / residual-stages / head models, parameter flattening,
//!   FLOPs counting, teacher training, JSON checkpoints.
//! * [`compress`]: block zeroing and dropping, L1 filter pruning, adaptor
//!   insertion and exact fusion.
//! * [`landscape`]: linear interpolation probes of the loss surface plus the
//!   convexity-gap and loss-leakage diagnostics.
//! * [`practise`]: latency measurement, recoverability scoring, block
//!   selection, and the finetuning methods (label, distillation,
//!   feature-mimicking).
//! * [`theory`]: Monte Carlo and exact-summation checks of the KL bounds and
//!   estimator-variance formulas that motivate feature mimicking.
//! * [`data`]: synthetic Gaussian-mixture datasets, CSV I/O, tiny-set
//!   sampling.
//! * [`cli`]: configuration and the subcommand implementations behind the
//!   `blockdrop` binary.
//!
//! Everything is deterministic per seed: reruns with the same configuration
//! reproduce all non-timing outputs bit for bit.

pub mod cli;
pub mod compress;
pub mod data;
pub mod error;
pub mod eval;
pub mod landscape;
pub mod network;
pub mod practise;
pub mod presets;
pub mod seed;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
