//! Fairness-aware multi-objective gradient aggregation.
//!
//! The core of the crate is [`fair_moo`]: per-objective gradients are
//! combined into one update direction whose weights minimize the total
//! potential delay, `W = (GGᵀ)^{-2/3}·1`, with a numerical oracle for the
//! underlying fixed-point system, baseline weighting strategies, and Pareto
//! diagnostics.
//!
//! The remaining modules form a small, self-contained testbed:
//!
//! - [`numerics`]: tensors, reverse-mode gradients, Jacobi eigensolver.
//! - [`diffusion`]: synthetic scenes with face/hand boxes, forward noising,
//!   region masks and the three masked denoising losses.
//! - [`adapters`]: low-rank adapters on a frozen toy denoiser.
//! - [`harness`]: configuration, training loop, evaluation, strategy
//!   comparison, persistence and the command-line entry points.
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists
//! them.

pub mod adapters;
pub mod diffusion;
pub mod fair_moo;
pub mod harness;
pub mod numerics;
pub mod seeds;

pub use numerics::{ParamVector, SymMatrix, Tensor};
