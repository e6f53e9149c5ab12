//! Targeted exploration over a concept vocabulary: query sampling, relevance
//! rewards, Gaussian-process concept scoring, tiered Boltzmann scheduling and
//! replay-based training composition, plus the search, audit and analysis
//! tools around them.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod concept_model;
pub mod dedup;
pub mod engine;
pub mod error;
pub mod par;
pub mod relevance;
pub mod replay;
pub mod scheduler;
pub mod search_index;
pub mod seed;
pub mod simulator;
pub mod vector;
pub mod vocabulary;

pub use error::{Error, Result};
pub use par::Execution;
