//! Experiment harness: data ingestion, configuration, the end-to-end
//! pipeline and CSV reports.

pub mod error;
pub mod idx;
pub mod synthetic;

pub use error::{BenchError, Result};
pub mod config;
pub mod report;
pub mod trend;
pub mod pipeline;
