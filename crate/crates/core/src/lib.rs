//! Regression and causal (steady-state ODE) models for predicting cellular
//! responses to drug combinations, with estimators, simulation fixtures, and
//! cross-validation protocols.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod expm;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod sim;
pub mod types;
pub mod validation;

pub use error::{Error, Result};
pub use estimators::{FitConfig, FitReport, StepSize};
pub use ode::{Envelope, OdeModel, SteadyStateOptions};
pub use types::{
    ConditionMatrix, EdgeMask, InteractionForm, InteractionMatrix, ModelTag, PredictionResult,
    RegressionCoefficients, ResponseMatrix, TargetMap,
};
