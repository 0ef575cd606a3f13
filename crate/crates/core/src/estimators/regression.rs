use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{soft_threshold, FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::linalg::rank;
use crate::types::{ConditionMatrix, RegressionCoefficients, ResponseMatrix};

fn regression_objective(d: &DMatrix<f64>, x: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> f64 {
    let resid = x - d * r;
    resid.norm_squared() + lambda * r.iter().map(|v| v.abs()).sum::<f64>()
}

/// Columns that do not increase the rank when added left to right.
fn dependent_columns(d: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..d.ncols() {
        let mut trial = kept.clone();
        trial.push(j);
        if rank(&d.select_columns(&trial)) == trial.len() {
            kept = trial;
        } else {
            dependent.push(j);
        }
    }
    dependent
}

/// Multivariate regression of responses on doses (no intercept).
///
/// With `lambda == 0` this is the normal-equations solution and requires a
/// full-column-rank design. With `lambda > 0` each response column is solved by
/// cyclic coordinate descent on `||x - D r||^2 + lambda ||r||_1`.
pub fn fit_regression(
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    cfg: &FitConfig,
) -> Result<(RegressionCoefficients, FitReport)> {
    cfg.validate()?;
    x.check_paired(d)?;
    let dv = d.values();
    let xv = x.values();

    if cfg.lambda == 0.0 {
        let zero_cols: Vec<usize> = (0..dv.ncols())
            .filter(|&j| dv.column(j).iter().all(|v| *v == 0.0))
            .collect();
        let deficient = if zero_cols.is_empty() && rank(dv) < dv.ncols() {
            dependent_columns(dv)
        } else {
            zero_cols
        };
        if !deficient.is_empty() {
            return Err(Error::RankDeficient {
                columns: deficient
                    .into_iter()
                    .map(|j| d.drug_names()[j].clone())
                    .collect(),
            });
        }
        let gram = dv.transpose() * dv;
        let rhs = dv.transpose() * xv;
        let r = gram
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::RankDeficient {
                columns: d.drug_names().to_vec(),
            })?;
        let obj = regression_objective(dv, xv, &r, 0.0);
        return Ok((RegressionCoefficients::new(r)?, FitReport::closed_form(obj)));
    }

    let gram = dv.transpose() * dv;
    let cross = dv.transpose() * xv;
    let (q, p) = (dv.ncols(), xv.ncols());
    let half_lambda = 0.5 * cfg.lambda;
    let mut r = DMatrix::<f64>::zeros(q, p);
    let mut trace = vec![regression_objective(dv, xv, &r, cfg.lambda)];
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < cfg.max_iter {
        sweeps += 1;
        // Response columns are independent problems.
        let updates: Vec<(DVector<f64>, f64)> = (0..p)
            .into_par_iter()
            .map(|k| {
                let mut coef: DVector<f64> = r.column(k).into_owned();
                let mut max_change = 0.0f64;
                for j in 0..q {
                    let gjj = gram[(j, j)];
                    if gjj == 0.0 {
                        coef[j] = 0.0;
                        continue;
                    }
                    let rho = cross[(j, k)] - gram.column(j).dot(&coef) + gjj * coef[j];
                    let new = soft_threshold(rho, half_lambda) / gjj;
                    max_change = max_change.max((new - coef[j]).abs() * gjj.sqrt());
                    coef[j] = new;
                }
                (coef, max_change)
            })
            .collect();
        let mut max_change = 0.0f64;
        for (k, (coef, change)) in updates.into_iter().enumerate() {
            r.set_column(k, &coef);
            max_change = max_change.max(change);
        }
        trace.push(regression_objective(dv, xv, &r, cfg.lambda));
        let scale = xv.amax().max(1.0);
        if max_change <= cfg.tol * scale {
            converged = true;
            break;
        }
    }

    let report = FitReport {
        final_objective: *trace.last().unwrap(),
        iterations: sweeps,
        converged,
        objective_trace: trace,
        solution_unique: true,
        notes: Vec::new(),
    };
    Ok((RegressionCoefficients::new(r)?, report))
}

/// Leave-one-drug-out regression: fits the remaining drugs and assigns the
/// held-out drug an all-zero coefficient row.
pub fn fit_regression_lodo(
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    held_out_drug: usize,
    cfg: &FitConfig,
) -> Result<(RegressionCoefficients, FitReport)> {
    let q = d.n_drugs();
    if held_out_drug >= q {
        return Err(Error::Invalid(format!(
            "held-out drug index {held_out_drug} out of range for {q} drugs"
        )));
    }
    if let Some(row) = d
        .values()
        .column(held_out_drug)
        .iter()
        .position(|v| *v != 0.0)
    {
        return Err(Error::Invalid(format!(
            "held-out drug `{}` is applied in training condition {row}; the split plan is inconsistent",
            d.drug_names()[held_out_drug]
        )));
    }
    if q == 1 {
        let r = DMatrix::zeros(1, x.n_responses());
        let obj = x.values().norm_squared();
        return Ok((RegressionCoefficients::new(r)?, FitReport::closed_form(obj)));
    }
    let keep: Vec<usize> = (0..q).filter(|&j| j != held_out_drug).collect();
    let names = keep.iter().map(|&j| d.drug_names()[j].clone()).collect();
    let reduced = ConditionMatrix::new(d.values().select_columns(&keep), names)?;
    let (r_reduced, report) = fit_regression(&reduced, x, cfg)?;
    let p = x.n_responses();
    let mut r = DMatrix::zeros(q, p);
    for (src, &dst) in keep.iter().enumerate() {
        r.set_row(dst, &r_reduced.values().row(src));
    }
    Ok((RegressionCoefficients::new(r)?, report))
}
