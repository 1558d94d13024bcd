//! Sensitivity classification and secrecy analytics for diplomatic cable
//! corpora.

pub mod analytics;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod preprocess;
pub mod seed;
pub mod syntheticgen;
pub mod xml;

pub use error::{Error, Result};
