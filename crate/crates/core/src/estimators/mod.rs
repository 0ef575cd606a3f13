//! Penalized estimators for both model families.
//!
//! * [`fit_regression`]: `min_R ||X - D R||_F^2 + lambda ||R||_1`.
//! * [`fit_causal_linear`]: `min_W ||X - D B^T (-W^-1)||_F^2 + lambda ||W - diag(W)||_1`.
//! * [`fit_causal_ode`]: the same loss with steady states obtained by integrating
//!   the nonlinear dynamics.

mod causal;
mod ode_fit;
mod regression;

pub use causal::{
    causal_loss_and_gradient, fit_causal_linear, select_lambda_cv, LambdaSelection,
    DEFAULT_LAMBDA_GRID,
};
pub use ode_fit::{fit_causal_ode, OdeFitOptions};
pub use regression::{fit_regression, fit_regression_lodo};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EdgeMask, InteractionMatrix};

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Armijo-style halving with a Barzilai-Borwein first guess.
    Backtracking,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub step_size: StepSize,
    pub mask: Option<EdgeMask>,
    pub w_init: Option<InteractionMatrix>,
    pub ode: OdeFitOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            step_size: StepSize::Backtracking,
            mask: None,
            w_init: None,
            ode: OdeFitOptions::default(),
        }
    }
}

impl FitConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be positive".into()));
        }
        if let StepSize::Fixed(s) = self.step_size {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Invalid(format!("step size must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// False when the unpenalized problem is known to have no unique minimizer.
    pub solution_unique: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl FitReport {
    pub(crate) fn closed_form(objective: f64) -> Self {
        Self {
            final_objective: objective,
            iterations: 1,
            converged: true,
            objective_trace: vec![objective],
            solution_unique: true,
            notes: Vec::new(),
        }
    }
}

/// Proximal operator of `tau * |.|`.
#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Soft-thresholds the off-diagonal entries of `w` by `tau`, leaving the
/// diagonal untouched.
pub fn prox_off_diagonal(w: &mut DMatrix<f64>, tau: f64) {
    let p = w.nrows();
    for j in 0..p {
        for i in 0..p {
            if i != j {
                w[(i, j)] = soft_threshold(w[(i, j)], tau);
            }
        }
    }
}

pub(crate) fn off_diagonal_l1(w: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            if i != j {
                s += w[(i, j)].abs();
            }
        }
    }
    s
}
