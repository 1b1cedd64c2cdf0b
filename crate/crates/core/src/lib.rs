//! Context-dependent usage estimation for mobile devices.
//!
//! Laplace-corrected MAP estimation over binned context, classifier
//! combination, supervised binning, cost-aware sensor selection
//! (SmartContext), a seeded synthetic trace generator and the evaluation
//! protocols that tie them together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod context;
pub mod discretize;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod smartcontext;
pub mod synth;
pub mod trace;

pub use context::{RawValue, SourceId, SourceShape};
pub use error::{Error, Result};
