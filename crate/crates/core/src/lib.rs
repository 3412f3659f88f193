//! Toolkit for measuring how well image explainers locate localized
//! adversarial perturbations.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod image;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod pnm;
pub mod report;
pub mod rng;
pub mod segmentation;
pub mod tensor;

pub use error::{Error, Result};
