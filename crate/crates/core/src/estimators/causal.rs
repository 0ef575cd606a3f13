use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{off_diagonal_l1, prox_off_diagonal, FitConfig, FitReport, StepSize};
use crate::error::{Error, Result};
use crate::linalg::{rank, rcond, RCOND_THRESHOLD};
use crate::model::predict_causal_linear;
use crate::types::{ConditionMatrix, InteractionMatrix, ResponseMatrix, TargetMap};

/// Log-spaced grid `10^-3 .. 10^1` in half-decade steps.
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [
    1e-3,
    3.1622776601683794e-3,
    1e-2,
    3.162277660168379e-2,
    1e-1,
    3.1622776601683794e-1,
    1.0,
    3.1622776601683795,
    10.0,
];

/// Smooth part of the causal objective with the direct effects `P = D B^T`
/// precomputed.
struct CausalProblem<'a> {
    direct: DMatrix<f64>,
    x: &'a DMatrix<f64>,
}

impl<'a> CausalProblem<'a> {
    fn new(d: &ConditionMatrix, x: &'a ResponseMatrix, b: &TargetMap) -> Result<Self> {
        x.check_paired(d)?;
        if b.n_drugs() != d.n_drugs() {
            return Err(Error::dims(
                "target map drug count",
                d.n_drugs(),
                b.n_drugs(),
            ));
        }
        if b.n_responses() != x.n_responses() {
            return Err(Error::dims(
                "target map response count",
                x.n_responses(),
                b.n_responses(),
            ));
        }
        Ok(Self {
            direct: d.values() * b.values().transpose(),
            x: x.values(),
        })
    }

    fn inverse(w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if rcond(w) < RCOND_THRESHOLD {
            return None;
        }
        w.clone().try_inverse()
    }

    fn loss_with_inverse(&self, w_inv: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        // X - P (-W^-1) = X + P W^-1
        let resid = self.x + &self.direct * w_inv;
        (resid.norm_squared(), resid)
    }

    /// Loss and gradient `-2 W^-T P^T R W^-T` with `R = X + P W^-1`.
    fn loss_and_gradient(&self, w: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
        let inv = Self::inverse(w)?;
        let (loss, resid) = self.loss_with_inverse(&inv);
        let inv_t = inv.transpose();
        let grad = -2.0 * &inv_t * self.direct.transpose() * resid * &inv_t;
        Some((loss, grad))
    }
}

/// `||X - D B^T (-W^-1)||_F^2` and its gradient with respect to `W`.
pub fn causal_loss_and_gradient(
    w: &InteractionMatrix,
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    b: &TargetMap,
) -> Result<(f64, DMatrix<f64>)> {
    let problem = CausalProblem::new(d, x, b)?;
    if w.dim() != x.n_responses() {
        return Err(Error::dims(
            "interaction matrix size",
            x.n_responses(),
            w.dim(),
        ));
    }
    problem
        .loss_and_gradient(w.values())
        .ok_or_else(|| Error::Singular {
            what: "interaction matrix W",
            rcond: rcond(w.values()),
        })
}

fn initial_w(cfg: &FitConfig, p: usize) -> Result<DMatrix<f64>> {
    let mut w = match &cfg.w_init {
        Some(w0) => {
            if w0.dim() != p {
                return Err(Error::dims("initial W size", p, w0.dim()));
            }
            if w0.form() != crate::types::InteractionForm::W {
                return Err(Error::Invalid(
                    "initial interaction matrix must be W-form".into(),
                ));
            }
            w0.values().clone()
        }
        None => -DMatrix::<f64>::identity(p, p),
    };
    if let Some(mask) = &cfg.mask {
        if mask.dim() != p {
            return Err(Error::dims("edge mask size", p, mask.dim()));
        }
        mask.apply(&mut w);
    }
    let rc = rcond(&w);
    if rc < RCOND_THRESHOLD {
        return Err(Error::Singular {
            what: "initial W",
            rcond: rc,
        });
    }
    Ok(w)
}

/// Penalized causal fit by proximal gradient descent.
///
/// Each iteration takes a gradient step on the smooth loss, soft-thresholds the
/// off-diagonal entries by `step * lambda`, then zeroes masked entries. With
/// [`StepSize::Backtracking`] the step starts from a Barzilai-Borwein guess and
/// is halved until the candidate is well conditioned and satisfies the
/// proximal sufficient-decrease condition, so the objective trace never
/// increases.
pub fn fit_causal_linear(
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    b: &TargetMap,
    cfg: &FitConfig,
) -> Result<(InteractionMatrix, FitReport)> {
    cfg.validate()?;
    let problem = CausalProblem::new(d, x, b)?;
    let p = x.n_responses();
    let mut w = initial_w(cfg, p)?;
    let lambda = cfg.lambda;

    let mut notes = Vec::new();
    let direct_rank = rank(&problem.direct);
    let solution_unique = !(lambda == 0.0 && direct_rank < p);
    if !solution_unique {
        notes.push(format!(
            "D B^T has rank {direct_rank} < p = {p}; the unpenalized causal objective has no unique minimizer"
        ));
    }

    let (mut loss, mut grad) = problem
        .loss_and_gradient(&w)
        .expect("initial W is well conditioned");
    let mut objective = loss + lambda * off_diagonal_l1(&w);
    let mut trace = vec![objective];
    let scale = x.values().norm_squared().max(f64::MIN_POSITIVE);
    let mut step = match cfg.step_size {
        StepSize::Fixed(s) => s,
        StepSize::Backtracking => 1.0 / grad.norm().max(1.0),
    };
    let mut converged = objective <= f64::EPSILON * f64::EPSILON * scale;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let mut t = step;
        let (w_next, loss_next, grad_next) = loop {
            if t < 1e-300 || !t.is_finite() {
                return Err(Error::NoFeasibleStep {
                    iteration: iterations,
                    reason: format!(
                        "no well-conditioned descent step (objective {objective:.6e}, rcond(W) {:.3e})",
                        rcond(&w)
                    ),
                });
            }
            let mut candidate = &w - &grad * t;
            prox_off_diagonal(&mut candidate, t * lambda);
            if let Some(mask) = &cfg.mask {
                mask.apply(&mut candidate);
            }
            let Some((cand_loss, cand_grad)) = problem.loss_and_gradient(&candidate) else {
                t *= 0.5;
                continue;
            };
            if matches!(cfg.step_size, StepSize::Fixed(_)) {
                break (candidate, cand_loss, cand_grad);
            }
            let diff = &candidate - &w;
            let model = loss + grad.dot(&diff) + diff.norm_squared() / (2.0 * t);
            let cand_obj = cand_loss + lambda * off_diagonal_l1(&candidate);
            if cand_loss <= model + 1e-12 * loss.abs() && cand_obj <= objective {
                break (candidate, cand_loss, cand_grad);
            }
            t *= 0.5;
        };

        let s = &w_next - &w;
        let grad_map = s.norm() / t;
        if let StepSize::Backtracking = cfg.step_size {
            let y = &grad_next - &grad;
            let sy = s.dot(&y);
            step = if sy > 0.0 {
                (s.norm_squared() / sy).clamp(1e-12, 1e6)
            } else {
                (t * 2.0).min(1e6)
            };
        }

        w = w_next;
        loss = loss_next;
        grad = grad_next;
        let new_objective = loss + lambda * off_diagonal_l1(&w);
        let rel = (objective - new_objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        objective = new_objective;
        trace.push(objective);

        let small_gradient = grad_map <= cfg.tol.sqrt() * (1.0 + w.norm());
        if (rel < cfg.tol && small_gradient) || objective <= f64::EPSILON * f64::EPSILON * scale {
            converged = true;
        }
    }

    let report = FitReport {
        final_objective: objective,
        iterations,
        converged,
        objective_trace: trace,
        solution_unique,
        notes,
    };
    Ok((InteractionMatrix::w_form(w)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean squared prediction error per grid point (`NaN` when every fold failed).
    pub cv_error: Vec<f64>,
    pub folds: usize,
}

/// Picks `lambda` for [`fit_causal_linear`] by `folds`-fold cross-validation on
/// mean squared prediction error. Folds that fail to fit are skipped.
pub fn select_lambda_cv(
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    b: &TargetMap,
    cfg: &FitConfig,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LambdaSelection> {
    let n = d.n_conditions();
    if folds < 2 || folds > n {
        return Err(Error::Invalid(format!(
            "need 2 <= folds <= n ({n}), got {folds}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<Vec<usize>> = (0..folds)
        .map(|f| order.iter().copied().skip(f).step_by(folds).collect())
        .collect();

    let cv_error: Vec<f64> = grid
        .par_iter()
        .map(|&lambda| {
            let mut sse = 0.0;
            let mut count = 0usize;
            for test in &fold_of {
                let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
                let fold_cfg = FitConfig {
                    lambda,
                    ..cfg.clone()
                };
                let fitted =
                    fit_causal_linear(&d.select_rows(&train), &x.select_rows(&train), b, &fold_cfg);
                let Ok((w, _)) = fitted else { continue };
                let Ok(pred) = predict_causal_linear(&w, b, &d.select_rows(test)) else {
                    continue;
                };
                let obs = x.values().select_rows(test);
                sse += (obs - pred.predicted).norm_squared();
                count += test.len() * x.n_responses();
            }
            if count == 0 {
                f64::NAN
            } else {
                sse / count as f64
            }
        })
        .collect();

    let best = cv_error
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| grid[i])
        .ok_or_else(|| Error::Invalid("every lambda in the grid failed to fit".into()))?;
    Ok(LambdaSelection {
        lambda: best,
        grid: grid.to_vec(),
        cv_error,
        folds,
    })
}
