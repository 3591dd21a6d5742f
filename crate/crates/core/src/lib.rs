//! Multivariate random-effects network meta-analysis with leave-one-trial-out
//! influence diagnostics and parametric bootstrap calibration.

pub mod bootstrap;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod report;

pub use error::{Error, Result};
pub use ingest::{
    ContrastData, Dataset, NetworkSummary, ParseConfig, PrepConfig, Treatment, TreatmentId,
    TreatmentSet, Trial, TrialArm,
};
pub use model::{HeterogeneityStructure, MeanShiftFit, Method, Model, ModelFit};
pub use report::{LeagueTable, OutputFormat, Report, RunConfig};
