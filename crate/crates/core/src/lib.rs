#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod model;
pub mod numeric;
pub mod parametrix;
pub mod proxy;
pub mod simulate;
pub mod stability;
#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
