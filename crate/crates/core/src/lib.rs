//! Reflective on-policy self-distillation over a tiny autoregressive policy.
//!
//! The crate trains a small decoder-only transformer on synthetic,
//! verifier-checkable reasoning tasks with three methods: GRPO (outcome
//! rewards with group-relative advantages), SDPO (full-response token-level
//! distillation from a context-conditioned self-teacher), and ROSD
//! (reflection-guided, error-localized distillation). Everything is
//! deterministic under a seed: sampling, training, evaluation, and the
//! metrics logs they produce.

pub mod advantage;
pub mod distill;
pub mod error;
pub mod harness;
pub mod locate;
pub mod policy;
pub mod reflect;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
