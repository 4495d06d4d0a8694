//! Prior-fitted in-context survival prediction.
//!
//! The crate covers the full pipeline: random-MLP table generators
//! ([`tabular`]), identifiable right-censored priors ([`prior`]), context-fitted
//! time transforms and binning ([`timewarp`]), a small transformer with
//! histogram outputs and exact gradients ([`model`]), prior-data training
//! ([`trainer`]), survival metrics ([`metrics`]), prior diagnostics
//! ([`diagnostics`]) and the benchmark protocol ([`bench`]).

pub mod bench;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod prior;
pub mod rng;
pub mod tabular;
pub mod timewarp;
pub mod trainer;

pub use data::SurvivalData;
pub use error::{Error, Result};
pub use rng::RngStream;
