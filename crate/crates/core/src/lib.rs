//! Modular multilingual sentence encoders at desk scale.
//!
//! Per-language encoders are initialised from one shared multilingual base
//! through a vocabulary transplant, specialised monolingually (MLM then
//! contrastive training) and aligned to a pivot language with frozen-base
//! parallel adapters. A synthetic language family and an evaluation harness
//! (STS Spearman, multiple-choice QA) make the whole pipeline runnable and
//! checkable on a laptop.

pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod experiment;
pub mod numerics;
pub mod synthlang;
pub mod training;
pub mod tokenizer;
pub mod transplant;

pub use error::{Error, Result};
