//! Osculating nilpotent groups of manifolds with a distribution.

// index loops mirror the tensor formulas; `!(x <= limit)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod expmaps;
pub mod expr;
pub mod flows;
pub mod geometry;
pub mod groupoid;
pub mod jets;
pub mod linalg;
pub mod nilpotent;

pub use error::{Error, Result};
