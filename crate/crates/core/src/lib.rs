//! Regularized fine-tuning of a small GRU encoder-decoder on scarce
//! in-domain data.
//!
//! Three regularizers for continued training of an out-of-domain model:
//!
//! * Bayesian dropout: per-example, per-epoch column masks shared across
//!   the unrolled graph ([`regularization::sample_mask`]),
//! * MAP-L2: `λ‖W − Ŵ‖²` toward the out-of-domain parameters
//!   ([`regularization::map_l2_penalty`]),
//! * tuneout: training `Ŵ + ΔW·M` with zero-initialized differences.
//!
//! Evaluation uses corpus BLEU and paired bootstrap resampling; the
//! [`experiments`] module runs strategy comparisons and data-size learning
//! curves on synthetic two-domain transduction tasks from [`data`].

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod gradcheck;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod regularization;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::{Param, ParamBundle};
pub use tensor::Tensor;
