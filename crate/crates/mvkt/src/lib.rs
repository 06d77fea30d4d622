//! Inter-lead knowledge transfer lab for multi-label ECG classification.
//!
//! Trains a 12-lead teacher network with BCE, then distills it into a
//! single-lead student with two transfer terms: a temperature-softened
//! multi-label distillation loss (MKD) and a symmetric contrastive loss
//! over memory-bank negatives (CLT). Everything runs on a hand-rolled
//! reverse-mode tape whose gradients are certified by a float64
//! finite-difference oracle, on deterministic seeded streams, at desk
//! scale on synthetic multi-lead signals.

pub mod bank;
pub mod diff;
pub mod error;
pub mod loss;
pub mod rng;

pub use error::{Error, Result};

pub mod cli;
