//! Fine-tunes a small conditional caption generator from sparse, quantized human
//! ratings using off-policy policy gradients, and checks every estimator against
//! exact enumeration over the finite caption space.
//!
//! The crate is organized around a synthetic captioning world that is small
//! enough to enumerate: a vocabulary of a dozen tokens, captions of at most a few
//! content tokens, and a programmatic ground-truth rating. That makes expected
//! rewards, policy gradients, and importance-weighted estimates computable to
//! machine precision, so the training code is tested against math instead of
//! against itself.
//!
//! Module map:
//! - [`data`]: vocabulary, contexts, captions, rating quantization, JSONL IO.
//! - [`model`]: single-layer recurrent caption model with exact gradients,
//!   ancestral sampling, beam search, and checkpointing.
//! - [`estimator`]: learned rating predictor used by on-policy training, plus
//!   probe families that expose where it extrapolates badly.
//! - [`trainers`]: MLE, merged-data, on-policy, and off-policy trainers sharing
//!   one Adam loop and a curriculum gradient.
//! - [`oracle`]: exact enumeration of the caption space; reference objective,
//!   gradient, and finite differences.
//! - [`synthworld`]: world generation, true ratings, simulated raters, dataset
//!   construction.
//! - [`eval`]: single-model goodness and side-by-side protocols with bootstrap
//!   confidence intervals.
//! - [`cli`]: the `ratings-pg` binary's subcommands and artifact formats.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod synthworld;
pub mod trainers;

pub use error::{Error, Result};
