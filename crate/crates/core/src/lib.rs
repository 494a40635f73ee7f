//! Intertemporal choice and temporal magnitude estimation: discount and
//! time-mapping models, curve fitting with BIC model selection, the two
//! experimental task engines, synthetic participants and the analysis
//! pipeline that tests whether subjective time explains decreasing
//! impatience.

pub mod analysis;
pub mod api;
pub mod error;
pub mod export;
pub mod fitting;
pub mod magnitude;
pub mod models;
pub mod session_log;
pub mod simulation;
pub mod staircase;

pub use error::{Error, Result};
