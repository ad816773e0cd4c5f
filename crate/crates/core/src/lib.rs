//! Shuffle estimators for signal variance and explainable variance when repeated
//! measurements carry autocorrelated noise, with method-of-moments and REML
//! baselines, noise simulators and Monte Carlo harnesses.

mod band;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod noise;
pub mod optim;
pub mod permutation;
pub mod simulation;

pub use design::{
    contrasts, ms_between, ms_within, treatment_averages, ContrastValue, DesignSchedule,
    MeasurementSeries,
};
pub use error::{Error, Result};
pub use estimators::{
    average_shuffle, mom_estimate, reml_estimate, shuffle_estimate, EstimateFlags, Method,
    RemlFamily, RemlFit, RemlOptions, VarianceEstimate,
};
pub use noise::{CovarianceModel, ExperimentSampler, ExperimentTruth};
pub use permutation::{PermutationFamily, PermutationSpec};
