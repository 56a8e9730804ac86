//! Auditing toolkit for gendered correlations in pretrained language models.
//!
//! The crate measures how a model's predictions track gender through four
//! metrics (DisCo fill discovery, STS-B score differences, WinoGender-style
//! coreference, Bias-in-Bios TPR gaps), computes accuracy from prediction
//! logs, and rewrites corpora by counterfactual augmentation. Models are
//! reached through [`backend::Backend`]: a deterministic toy model, recorded
//! offline predictions, or an HTTP scoring service.

pub mod backend;
pub mod cda;
pub mod error;
pub mod lexicon;
pub mod manifest;
pub mod metrics;
pub mod parallel;
pub mod report;
pub mod stats;
pub mod templates;

pub use error::{Error, Result};
