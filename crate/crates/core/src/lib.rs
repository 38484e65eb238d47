//! Training, evaluation and diagnostics engine for ID-free multimodal
//! recommendation with modality-aware identity construction and
//! popularity-penalized counterfactual item graphs.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod maic;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod sparse;
pub mod synthetic;
pub mod tensorfile;
pub mod train;

pub use error::{Error, Result};
