//! Layered probabilistic neural circuits.
//!
//! The crate builds layered partition structures over chains and image
//! grids, evaluates them in log space, answers ordered marginal and
//! conditional queries, and trains plain, quotient and neural sum layers
//! with exact reverse-mode gradients.

pub mod data;
pub mod error;
pub mod exec;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod persistence;
pub mod structure;
pub mod training;

pub use error::{PncError, Result};
