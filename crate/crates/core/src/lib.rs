//! Entity-agnostic knowledge graph embeddings built from relational
//! contexts and random-walk paths.
//!
//! The pipeline: load a graph ([`kg`]), mine paths ([`paths`]), build the
//! model ([`model`]), train a relation- or link-prediction head ([`train`]),
//! and rank with filtered metrics ([`eval`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod heads;
pub mod kg;
pub mod model;
pub mod negatives;
pub mod paths;
pub mod pca;
pub mod stats;
pub mod synthetic;
pub mod train;

pub use error::{CoreError, Result};
