//! Minimal-perturbation adversarial attacks via augmented Lagrangian methods.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — a small dense `f64` tensor (shape + row-major storage).
//! * [`penalty`] — smooth penalty-Lagrangian functions (PHR, P1, P2, P3) with
//!   closed-form derivatives.
//! * [`constraint`] — misclassification constraint losses (`DLR+` and its
//!   targeted variant) with analytic logit gradients.
//! * [`distance`] — perturbation-size measures (L1, L2, CIEDE2000 colour
//!   difference, structural dissimilarity) with analytic input gradients.
//! * [`nn`] — a micro feed-forward network layer (dense/conv/relu/maxpool)
//!   with reverse-mode input gradients, propagation counters, and a binary
//!   model file format.
//! * [`solver`] — the fused augmented Lagrangian attack: one forward and one
//!   backward pass per iteration, exponential moving average on the
//!   multiplier, distance-calibrated initial step size.
//! * [`baselines`] — a textbook augmented Lagrangian solver for smooth
//!   problems, a penalty-method attack with exponential/binary search on the
//!   penalty weight, and a bisection wrapper that turns budget attacks into
//!   minimal-perturbation attacks.
//! * [`dataset`], [`train`], [`campaign`] — the evaluation harness: a bundled
//!   synthetic image dataset, a deterministic reference-model trainer, and a
//!   campaign runner with per-sample records, aggregate reports, and
//!   robust-accuracy curves. Campaigns parallelise over samples when the
//!   `parallel` feature (default) is enabled and fall back to a sequential
//!   loop otherwise.

pub mod baselines;
pub mod campaign;
pub mod constraint;
pub mod dataset;
pub mod distance;
pub mod error;
mod fileio;
pub mod nn;
pub mod penalty;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
