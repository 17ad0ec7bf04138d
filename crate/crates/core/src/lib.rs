//! Surrogate-assisted GAN inverse design of ternary free-form metasurface
//! patterns, end to end on a desktop CPU.
//!
//! The crate trains a CNN+attention surrogate that predicts 100-point
//! spectral responses, trains a conditional GAN whose generator is steered by
//! Sinkhorn adversarial losses plus surrogate feedback, and evaluates designs
//! against a deterministic synthetic reflection oracle and a simulated
//! annealing baseline. See the `examples/` directory for one runnable example
//! per capability; the `msdesign` binary exposes the same pipeline as CLI
//! subcommands.

pub mod annealing;
pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod gan;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pattern;
pub mod pipeline;
pub mod sinkhorn;
pub mod surrogate;
