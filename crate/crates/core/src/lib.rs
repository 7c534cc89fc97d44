//! Engagement modelling from player telemetry.
//!
//! The crate covers the whole pipeline: a salience-driven telemetry
//! simulator, feature and target construction, a small deterministic neural
//! core, three estimators of future interaction intensity, Hyperband tuning,
//! and analysis of the learned salience embedding.

pub mod analysis;
pub mod error;
pub mod features;
pub mod models;
pub mod neural;
pub mod seed;
pub mod telemetry;
pub mod tuning;

pub use error::{Error, Result};
