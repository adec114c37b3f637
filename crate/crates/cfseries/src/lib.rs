//! Laboratory for counterfactual inference on event-impacted time series:
//! dataset generators with ground-truth counterfactuals, encoder-decoder
//! counterfactual models and forecasting baselines on a small f64
//! reverse-mode substrate, the abduction-action-prediction engine,
//! ground-truth and proxy evaluation metrics, a synthetic-control donor
//! sweep and a reproducible experiment harness.

pub mod cfengine;
pub mod datasets;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod infotheory;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synthcontrol;

pub use error::{CfError, Result};
