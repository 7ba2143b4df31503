//! Prompt-tuning optimizer for small frozen dual encoders.
//!
//! A seeded synthetic world stands in for a pretrained vision-language model
//! and its downstream benchmarks: [`dataset`] generates clustered few-shot
//! data, [`backbone`] provides the frozen towers and learnable prompts, and
//! [`trainer`] tunes prompts with hard-negative batches ([`sampler`]),
//! batch-restricted cross-entropy and pseudo-labelled new-class data
//! ([`pseudo`]). [`evaluator`] runs the base-to-new and cross-dataset
//! protocols.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod numerics;
pub mod par;
pub mod pseudo;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
