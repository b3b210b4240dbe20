//! Virtual-sensor modelling with single-hidden-layer regression networks.
//!
//! The crate covers the whole modelling flow: ingest or synthesize sensor
//! logs ([`dataset`], [`synthetic`]), train networks with Levenberg-Marquardt
//! or Bayesian regularization ([`net`], [`train`]), score them ([`metrics`]),
//! choose the hidden-layer size over six starting weight sets ([`search`]),
//! and tune the starting coefficients with the adaptive grid search in
//! [`awb`]. [`pipeline`] strings the stages together from a run
//! configuration.

pub mod awb;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod search;
pub mod synthetic;
pub mod train;

pub use awb::{AwbSearch, AwbTrace, Evaluator, Quantity, StepSchedule};
pub use dataset::{Dataset, Scaler, SplitIndices};
pub use error::{Error, Result};
pub use experiment::Experiment;
pub use metrics::Metrics;
pub use net::{MlpParams, SetId, WeightConfig};
pub use train::{TrainOptions, TrainedModel, TrainerKind};
