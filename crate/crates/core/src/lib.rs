//! MindFormer: a multi-subject fMRI encoder aligned to a frozen
//! vision-language embedding space, built on a small tape-based autodiff.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
