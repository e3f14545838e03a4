//! Scale-adaptive attention multiple-instance learning over precomputed
//! instance-feature bags.

pub mod data;
pub mod error;
pub mod grad;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
