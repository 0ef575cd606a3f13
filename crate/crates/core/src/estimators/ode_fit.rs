use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{off_diagonal_l1, prox_off_diagonal, FitConfig, FitReport, StepSize};
use crate::error::{Error, Result};
use crate::linalg::{rcond, RCOND_THRESHOLD};
use crate::ode::{newton_refine, steady_state, OdeModel, SteadyStateOptions};
use crate::types::{ConditionMatrix, InteractionMatrix, ResponseMatrix, TargetMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeFitOptions {
    /// Optimize `eps` (through `log eps`) jointly with `W`.
    pub fit_epsilon: bool,
    /// Central-difference step for the gradient.
    pub fd_step: f64,
    /// Steady-state solver settings used inside the objective. The tolerance
    /// is tighter than the prediction default so that finite differences are
    /// not dominated by the stopping rule; Newton polishing makes that cheap.
    pub steady: SteadyStateOptions,
}

impl Default for OdeFitOptions {
    fn default() -> Self {
        Self {
            fit_epsilon: true,
            fd_step: 1e-5,
            steady: SteadyStateOptions {
                tol: 1e-11,
                newton: true,
                ..Default::default()
            },
        }
    }
}

struct OdeProblem<'a> {
    template: &'a OdeModel,
    doses: Vec<DVector<f64>>,
    x: &'a DMatrix<f64>,
    opts: OdeFitOptions,
}

impl OdeProblem<'_> {
    fn model(&self, w: &DMatrix<f64>, log_eps: &DVector<f64>) -> Option<OdeModel> {
        if rcond(w) < RCOND_THRESHOLD {
            return None;
        }
        self.template
            .with_parameters(
                InteractionMatrix::w_form(w.clone()).ok()?,
                log_eps.map(f64::exp),
            )
            .ok()
    }

    /// Squared error over all conditions and the steady states behind it,
    /// `None` when any steady state fails to converge or diverges.
    fn evaluate(
        &self,
        w: &DMatrix<f64>,
        log_eps: &DVector<f64>,
    ) -> Option<(f64, Vec<DVector<f64>>)> {
        let model = self.model(w, log_eps)?;
        let mut total = 0.0;
        let mut states = Vec::with_capacity(self.doses.len());
        for (k, dose) in self.doses.iter().enumerate() {
            let ss = steady_state(&model, dose, &self.opts.steady).ok()?;
            if !ss.converged {
                return None;
            }
            total += (self.x.row(k).transpose() - &ss.state).norm_squared();
            states.push(ss.state);
        }
        Some((total, states))
    }

    /// Loss at a small perturbation of a point whose steady states are
    /// `warm`: Newton from the old equilibria, integrating from zero only
    /// where Newton stalls.
    fn perturbed_loss(
        &self,
        w: &DMatrix<f64>,
        log_eps: &DVector<f64>,
        warm: &[DVector<f64>],
    ) -> Option<f64> {
        let model = self.model(w, log_eps)?;
        let mut total = 0.0;
        for (k, dose) in self.doses.iter().enumerate() {
            let u = model.direct_effect(dose).ok()?;
            let state = match newton_refine(&model, &u, &warm[k], self.opts.steady.tol) {
                Some((state, _)) => state,
                None => {
                    let ss = steady_state(&model, dose, &self.opts.steady).ok()?;
                    if !ss.converged {
                        return None;
                    }
                    ss.state
                }
            };
            total += (self.x.row(k).transpose() - state).norm_squared();
        }
        Some(total)
    }

    /// Central differences over the free entries of `W` (and `log eps`).
    fn gradient(
        &self,
        w: &DMatrix<f64>,
        log_eps: &DVector<f64>,
        warm: &[DVector<f64>],
        free: &[(usize, usize)],
    ) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let h = self.opts.fd_step;
        let p = w.nrows();
        let n_eps = if self.opts.fit_epsilon { p } else { 0 };
        let partials: Vec<Option<f64>> = (0..free.len() + n_eps)
            .into_par_iter()
            .map(|idx| {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                let (mut ep, mut em) = (log_eps.clone(), log_eps.clone());
                if idx < free.len() {
                    wp[free[idx]] += h;
                    wm[free[idx]] -= h;
                } else {
                    ep[idx - free.len()] += h;
                    em[idx - free.len()] -= h;
                }
                let plus = self.perturbed_loss(&wp, &ep, warm)?;
                let minus = self.perturbed_loss(&wm, &em, warm)?;
                Some((plus - minus) / (2.0 * h))
            })
            .collect();
        let mut gw = DMatrix::zeros(p, p);
        let mut ge = DVector::zeros(p);
        for (idx, partial) in partials.into_iter().enumerate() {
            let g = partial?;
            if idx < free.len() {
                gw[free[idx]] = g;
            } else {
                ge[idx - free.len()] = g;
            }
        }
        Some((gw, ge))
    }
}

/// Fits `W` (and optionally `eps`) of the nonlinear model by proximal
/// gradient descent with finite-difference gradients through the steady
/// state. The envelope and target map come from `template`; its `W` and
/// `eps` are the starting point unless `cfg.w_init` is set.
///
/// Candidates whose steady state does not converge are rejected and the step
/// is halved.
pub fn fit_causal_ode(
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    b: &TargetMap,
    template: &OdeModel,
    cfg: &FitConfig,
) -> Result<(OdeModel, FitReport)> {
    cfg.validate()?;
    x.check_paired(d)?;
    let p = x.n_responses();
    if template.dim() != p || b.n_responses() != p {
        return Err(Error::dims("ODE model size", p, template.dim()));
    }
    b.check_compatible(d)?;
    let template = OdeModel::new(
        template.w().clone(),
        template.epsilon().clone(),
        template.envelope(),
        b.clone(),
    )?;
    let opts = cfg.ode;
    if !(opts.fd_step > 0.0) {
        return Err(Error::Invalid("fd_step must be > 0".into()));
    }

    let mut w = match &cfg.w_init {
        Some(w0) => w0.values().clone(),
        None => template.w().values().clone(),
    };
    if w.nrows() != p {
        return Err(Error::dims("initial W size", p, w.nrows()));
    }
    if let Some(mask) = &cfg.mask {
        mask.apply(&mut w);
    }
    let mut log_eps = template.epsilon().map(f64::ln);
    let free: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (0..p).map(move |i| (i, j)))
        .filter(|&(i, j)| cfg.mask.as_ref().is_none_or(|m| m.is_allowed(i, j)))
        .collect();

    let problem = OdeProblem {
        template: &template,
        doses: (0..d.n_conditions())
            .map(|k| d.values().row(k).transpose())
            .collect(),
        x: x.values(),
        opts,
    };

    let lambda = cfg.lambda;
    let (mut loss, mut states) = problem.evaluate(&w, &log_eps).ok_or_else(|| {
        Error::NotConverged(
            "initial model has no convergent steady state for every condition".into(),
        )
    })?;
    let mut objective = loss + lambda * off_diagonal_l1(&w);
    let mut trace = vec![objective];
    let mut converged = objective == 0.0;
    let mut iterations = 0;
    let mut step = match cfg.step_size {
        StepSize::Fixed(s) => s,
        StepSize::Backtracking => 0.0,
    };

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let (gw, ge) = problem
            .gradient(&w, &log_eps, &states, &free)
            .ok_or_else(|| Error::NoFeasibleStep {
                iteration: iterations,
                reason: "finite-difference probe left the convergent region".into(),
            })?;
        let gnorm = (gw.norm_squared() + ge.norm_squared()).sqrt();
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        if step == 0.0 {
            step = 0.1 / gnorm.max(1.0);
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand_w = &w - &gw * t;
            prox_off_diagonal(&mut cand_w, t * lambda);
            if let Some(mask) = &cfg.mask {
                mask.apply(&mut cand_w);
            }
            let cand_eps = if opts.fit_epsilon {
                &log_eps - &ge * t
            } else {
                log_eps.clone()
            };
            if let Some((cand_loss, cand_states)) = problem.evaluate(&cand_w, &cand_eps) {
                let cand_obj = cand_loss + lambda * off_diagonal_l1(&cand_w);
                let dw = &cand_w - &w;
                let de = &cand_eps - &log_eps;
                let model = loss
                    + gw.dot(&dw)
                    + ge.dot(&de)
                    + (dw.norm_squared() + de.norm_squared()) / (2.0 * t);
                if matches!(cfg.step_size, StepSize::Fixed(_))
                    || (cand_loss <= model + 1e-12 * loss && cand_obj <= objective)
                {
                    accepted = Some((cand_w, cand_eps, cand_loss, cand_obj, cand_states));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((new_w, new_eps, new_loss, new_obj, new_states)) = accepted else {
            return Err(Error::NoFeasibleStep {
                iteration: iterations,
                reason: format!("no convergent descent step (objective {objective:.6e})"),
            });
        };
        if let StepSize::Backtracking = cfg.step_size {
            step = (t * 2.0).min(1e3);
        }
        let rel = (objective - new_obj).abs() / objective.abs().max(f64::MIN_POSITIVE);
        w = new_w;
        log_eps = new_eps;
        loss = new_loss;
        states = new_states;
        objective = new_obj;
        trace.push(objective);
        if rel < cfg.tol {
            converged = true;
        }
    }

    let model = template.with_parameters(InteractionMatrix::w_form(w)?, log_eps.map(f64::exp))?;
    let report = FitReport {
        final_objective: objective,
        iterations,
        converged,
        objective_trace: trace,
        solution_unique: true,
        notes: Vec::new(),
    };
    Ok((model, report))
}
