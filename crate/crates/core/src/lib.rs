//! Range experts, range ensembles and near-far asynchronous ensembles for
//! bird's-eye-view LiDAR detection, evaluated over synthetic scenarios with a
//! stage latency model and CDS/NDS metrics.

pub mod config;
pub mod detector;
pub mod ensemble;
pub mod eval;
pub mod experiment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod range;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
