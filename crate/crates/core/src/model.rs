//! Forward prediction for the regression and linear causal models, A/W-form
//! conversion, and a matrix-exponential check of the linear steady state.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::linalg::checked_inverse;
use crate::types::{
    ConditionMatrix, InteractionForm, InteractionMatrix, ModelTag, PredictionResult,
    RegressionCoefficients, TargetMap,
};

/// Row-wise `D R`.
pub fn predict_regression(
    r: &RegressionCoefficients,
    d: &ConditionMatrix,
) -> Result<PredictionResult> {
    if r.values().nrows() != d.n_drugs() {
        return Err(Error::dims(
            "regression coefficient rows",
            d.n_drugs(),
            r.values().nrows(),
        ));
    }
    PredictionResult::new(d.values() * r.values(), ModelTag::Regression)
}

/// Total-effect operator `-W^-1` of a W-form matrix, so that predictions are
/// `D B^T (-W^-1)`.
pub fn propagation_operator(w: &InteractionMatrix) -> Result<DMatrix<f64>> {
    expect_form(w, InteractionForm::W)?;
    Ok(-checked_inverse(w.values(), "interaction matrix W")?)
}

/// Linear steady-state prediction. Row `k` is `(-W^-T B d_k)^T`.
pub fn predict_causal_linear(
    w: &InteractionMatrix,
    b: &TargetMap,
    d: &ConditionMatrix,
) -> Result<PredictionResult> {
    check_causal_dims(w, b, d)?;
    let total = propagation_operator(w)?;
    let direct = d.values() * b.values().transpose();
    PredictionResult::new(direct * total, ModelTag::CausalLinear)
}

/// Structural-equation prediction. Row `k` is `((I - A)^-1 B d_k)^T`. The
/// support of `A` may contain cycles as long as `I - A` is invertible.
pub fn predict_causal_dag(
    a: &InteractionMatrix,
    b: &TargetMap,
    d: &ConditionMatrix,
) -> Result<PredictionResult> {
    expect_form(a, InteractionForm::A)?;
    check_causal_dims(a, b, d)?;
    let p = a.dim();
    let i_minus_a = DMatrix::<f64>::identity(p, p) - a.values();
    let inv = checked_inverse(&i_minus_a, "I - A")?;
    let direct = d.values() * b.values().transpose();
    PredictionResult::new(direct * inv.transpose(), ModelTag::CausalLinear)
}

/// `W = (A - I)^T`.
pub fn dag_to_w(a: &InteractionMatrix) -> Result<InteractionMatrix> {
    expect_form(a, InteractionForm::A)?;
    let p = a.dim();
    let w = (a.values() - DMatrix::<f64>::identity(p, p)).transpose();
    InteractionMatrix::w_form(w)
}

/// `A = I + W^T`.
pub fn w_to_dag(w: &InteractionMatrix) -> Result<InteractionMatrix> {
    expect_form(w, InteractionForm::W)?;
    let p = w.dim();
    let a = DMatrix::<f64>::identity(p, p) + w.values().transpose();
    InteractionMatrix::a_form(a)
}

fn expect_form(m: &InteractionMatrix, form: InteractionForm) -> Result<()> {
    if m.form() != form {
        return Err(Error::Invalid(format!(
            "expected a {form:?}-form interaction matrix, got {:?}-form",
            m.form()
        )));
    }
    Ok(())
}

fn check_causal_dims(w: &InteractionMatrix, b: &TargetMap, d: &ConditionMatrix) -> Result<()> {
    if b.n_responses() != w.dim() {
        return Err(Error::dims(
            "target map response count",
            w.dim(),
            b.n_responses(),
        ));
    }
    b.check_compatible(d)
}

/// Augmented generator `[[0, 0], [B, W^T]]` of the linear dynamics with the
/// drug doses carried as constant state.
pub fn augmented_generator(w: &InteractionMatrix, b: &TargetMap) -> DMatrix<f64> {
    let (p, q) = (w.dim(), b.n_drugs());
    let mut g = DMatrix::<f64>::zeros(q + p, q + p);
    g.view_mut((q, 0), (p, q)).copy_from(b.values());
    g.view_mut((q, q), (p, p))
        .copy_from(&w.values().transpose());
    g
}

/// Largest eigenvalue of a symmetric negative definite W-form matrix; errors
/// if `w` is not symmetric or has a nonnegative eigenvalue.
pub fn max_eigenvalue_negative_definite(w: &InteractionMatrix) -> Result<f64> {
    let m = w.values();
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * m.norm().max(1.0) {
        return Err(Error::Invalid(format!(
            "steady-state limit check needs a symmetric W (asymmetry {asym:.3e})"
        )));
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if max >= 0.0 {
        return Err(Error::NotNegativeDefinite {
            max_eigenvalue: max,
        });
    }
    Ok(max)
}

/// Frobenius distance between `exp(G t)` for the augmented generator and its
/// limit `[[I, 0], [-W^-T B, 0]]`. Requires `W` symmetric negative definite.
pub fn verify_steady_state_limit(w: &InteractionMatrix, b: &TargetMap, t: f64) -> Result<f64> {
    expect_form(w, InteractionForm::W)?;
    if b.n_responses() != w.dim() {
        return Err(Error::dims(
            "target map response count",
            w.dim(),
            b.n_responses(),
        ));
    }
    max_eigenvalue_negative_definite(w)?;
    let (p, q) = (w.dim(), b.n_drugs());
    let exp = matrix_exponential(&augmented_generator(w, b), t)?;

    let mut limit = DMatrix::<f64>::zeros(q + p, q + p);
    limit
        .view_mut((0, 0), (q, q))
        .copy_from(&DMatrix::<f64>::identity(q, q));
    let w_inv_t = checked_inverse(&w.values().transpose(), "interaction matrix W")?;
    limit
        .view_mut((q, 0), (p, q))
        .copy_from(&(-(w_inv_t * b.values())));
    Ok((exp - limit).norm())
}
