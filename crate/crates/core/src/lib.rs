//! Grain-structure-aware laser scan-path planning.

pub mod config;
pub mod domain;
pub mod drl;
pub mod error;
pub mod harness;
pub mod morphology;
pub mod phasefield;
pub mod reward;
pub mod scanpath;
pub mod thermal;

pub use error::{Error, Result};
