//! Fixed-step RK4 integration of the nonlinear interaction dynamics
//!
//! ```text
//! dx_i/dt = eps_i * phi( sum_{j != i} W[j, i] x_j + u_i ) + W[i, i] x_i,   u = B d
//! ```
//!
//! With the identity envelope and `eps = 1` this reduces to
//! `dx/dt = W^T x + B d`, whose steady state is `-W^-T B d`, the same operator
//! used by [`crate::model::predict_causal_linear`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    ConditionMatrix, InteractionForm, InteractionMatrix, ModelTag, PredictionResult, TargetMap,
};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_T_MAX: f64 = 200.0;
pub const DEFAULT_STEADY_TOL: f64 = 1e-8;
pub const DEFAULT_CLIP_BOUND: f64 = 10.0;
pub const NEWTON_SWITCH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Envelope {
    Identity,
    ClippedLinear {
        bound: f64,
    },
    /// `tanh`.
    Sigmoid,
}

impl Envelope {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Envelope::Identity => v,
            Envelope::ClippedLinear { bound } => v.clamp(-bound, bound),
            Envelope::Sigmoid => v.tanh(),
        }
    }

    /// Derivative; zero outside the clip bound.
    #[inline]
    pub fn slope(&self, v: f64) -> f64 {
        match *self {
            Envelope::Identity => 1.0,
            Envelope::ClippedLinear { bound } => {
                if v.abs() < bound {
                    1.0
                } else {
                    0.0
                }
            }
            Envelope::Sigmoid => 1.0 - v.tanh().powi(2),
        }
    }

    pub fn clipped() -> Self {
        Envelope::ClippedLinear {
            bound: DEFAULT_CLIP_BOUND,
        }
    }
}

impl std::str::FromStr for Envelope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Envelope::Identity),
            "clipped" | "clipped-linear" => Ok(Envelope::clipped()),
            "sigmoid" | "tanh" => Ok(Envelope::Sigmoid),
            other => {
                if let Some(b) = other.strip_prefix("clipped-linear:") {
                    let bound: f64 = b
                        .parse()
                        .map_err(|_| Error::Invalid(format!("bad clip bound `{b}`")))?;
                    if bound > 0.0 {
                        return Ok(Envelope::ClippedLinear { bound });
                    }
                }
                Err(Error::Invalid(format!("unknown envelope `{other}`")))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeModel {
    w: InteractionMatrix,
    epsilon: DVector<f64>,
    envelope: Envelope,
    b: TargetMap,
}

impl OdeModel {
    pub fn new(
        w: InteractionMatrix,
        epsilon: DVector<f64>,
        envelope: Envelope,
        b: TargetMap,
    ) -> Result<Self> {
        if w.form() != InteractionForm::W {
            return Err(Error::Invalid("ODE model needs a W-form matrix".into()));
        }
        let p = w.dim();
        if epsilon.len() != p {
            return Err(Error::dims("epsilon length", p, epsilon.len()));
        }
        if b.n_responses() != p {
            return Err(Error::dims("target map response count", p, b.n_responses()));
        }
        if let Some(e) = epsilon.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::Invalid(format!(
                "epsilon entries must be > 0, got {e}"
            )));
        }
        if let Envelope::ClippedLinear { bound } = envelope {
            if !(bound > 0.0) {
                return Err(Error::Invalid(format!(
                    "clip bound must be > 0, got {bound}"
                )));
            }
        }
        Ok(Self {
            w,
            epsilon,
            envelope,
            b,
        })
    }

    /// Identity envelope with unit saturation: the linear model.
    pub fn linear(w: InteractionMatrix, b: TargetMap) -> Result<Self> {
        let p = w.dim();
        Self::new(w, DVector::from_element(p, 1.0), Envelope::Identity, b)
    }

    pub fn w(&self) -> &InteractionMatrix {
        &self.w
    }

    pub fn epsilon(&self) -> &DVector<f64> {
        &self.epsilon
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    pub fn targets(&self) -> &TargetMap {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn with_parameters(&self, w: InteractionMatrix, epsilon: DVector<f64>) -> Result<Self> {
        Self::new(w, epsilon, self.envelope, self.b.clone())
    }

    /// Direct effect `u = B d`.
    pub fn direct_effect(&self, d: &DVector<f64>) -> Result<DVector<f64>> {
        if d.len() != self.b.n_drugs() {
            return Err(Error::dims("dose vector length", self.b.n_drugs(), d.len()));
        }
        Ok(self.b.values() * d)
    }

    /// Time derivative at `x` given a precomputed direct effect `u`.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>, out: &mut DVector<f64>) {
        let w = self.w.values();
        let p = self.dim();
        for i in 0..p {
            // Column i of W holds the incoming effects on response i.
            let col = w.column(i);
            let incoming = col.dot(x) - col[i] * x[i];
            out[i] = self.epsilon[i] * self.envelope.apply(incoming + u[i]) + col[i] * x[i];
        }
    }

    /// Jacobian of [`Self::derivative`] with respect to `x`.
    pub fn jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let w = self.w.values();
        let p = self.dim();
        let mut jac = DMatrix::zeros(p, p);
        for i in 0..p {
            let col = w.column(i);
            let incoming = col.dot(x) - col[i] * x[i];
            let gain = self.epsilon[i] * self.envelope.slope(incoming + u[i]);
            for j in 0..p {
                jac[(i, j)] = if i == j { col[i] } else { gain * col[j] };
            }
        }
        jac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `m x p`, one row per time point.
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }
}

struct Rk4 {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    tmp: DVector<f64>,
}

impl Rk4 {
    fn new(p: usize) -> Self {
        Self {
            k1: DVector::zeros(p),
            k2: DVector::zeros(p),
            k3: DVector::zeros(p),
            k4: DVector::zeros(p),
            tmp: DVector::zeros(p),
        }
    }

    /// Advances `x` by one step; leaves `k1 = f(x_old)` for convergence checks.
    fn step(&mut self, model: &OdeModel, u: &DVector<f64>, x: &mut DVector<f64>, dt: f64) {
        model.derivative(x, u, &mut self.k1);
        self.tmp.copy_from(x);
        self.tmp.axpy(0.5 * dt, &self.k1, 1.0);
        model.derivative(&self.tmp, u, &mut self.k2);
        self.tmp.copy_from(x);
        self.tmp.axpy(0.5 * dt, &self.k2, 1.0);
        model.derivative(&self.tmp, u, &mut self.k3);
        self.tmp.copy_from(x);
        self.tmp.axpy(dt, &self.k3, 1.0);
        model.derivative(&self.tmp, u, &mut self.k4);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn check_step(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Invalid(format!("dt must be > 0, got {dt}")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Invalid(format!("t_end must be > 0, got {t_end}")));
    }
    Ok((t_end / dt).round().max(1.0) as usize)
}

/// Integrates from `x0` for `round(t_end / dt)` RK4 steps, recording every step.
pub fn integrate(
    model: &OdeModel,
    d: &DVector<f64>,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let steps = check_step(dt, t_end)?;
    let p = model.dim();
    if x0.len() != p {
        return Err(Error::dims("initial state length", p, x0.len()));
    }
    let u = model.direct_effect(d)?;
    let mut rk = Rk4::new(p);
    let mut x = x0.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut data = Vec::with_capacity((steps + 1) * p);
    times.push(0.0);
    data.extend(x.iter());
    for s in 1..=steps {
        rk.step(model, &u, &mut x, dt);
        let t = s as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        data.extend(x.iter());
    }
    Ok(Trajectory {
        times,
        states: DMatrix::from_row_slice(steps + 1, p, &data),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    pub dt: f64,
    pub tol: f64,
    pub t_max: f64,
    /// Once the integration residual drops below [`NEWTON_SWITCH`], finish
    /// with Newton iterations on `f(x) = 0` instead of integrating to `tol`.
    pub newton: bool,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            tol: DEFAULT_STEADY_TOL,
            t_max: DEFAULT_T_MAX,
            newton: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub state: DVector<f64>,
    pub converged: bool,
    pub time: f64,
    /// `max_i |dx_i/dt|` at the returned state.
    pub residual: f64,
}

/// Integrates from `x = 0` until `max_i |dx_i/dt| < tol` or `t_max`.
/// Non-convergence is reported through [`SteadyState::converged`].
pub fn steady_state(
    model: &OdeModel,
    d: &DVector<f64>,
    opts: &SteadyStateOptions,
) -> Result<SteadyState> {
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid(format!("tol must be > 0, got {}", opts.tol)));
    }
    let max_steps = check_step(opts.dt, opts.t_max)?;
    let p = model.dim();
    let u = model.direct_effect(d)?;
    let mut rk = Rk4::new(p);
    let mut x = DVector::zeros(p);
    let mut deriv = DVector::zeros(p);
    let mut try_newton = opts.newton;
    for s in 0..=max_steps {
        model.derivative(&x, &u, &mut deriv);
        let residual = deriv.amax();
        let t = s as f64 * opts.dt;
        if try_newton && residual < NEWTON_SWITCH {
            try_newton = false;
            if let Some((state, residual)) = newton_refine(model, &u, &x, opts.tol) {
                return Ok(SteadyState {
                    state,
                    converged: true,
                    time: t,
                    residual,
                });
            }
        }
        if residual < opts.tol {
            return Ok(SteadyState {
                state: x,
                converged: true,
                time: t,
                residual,
            });
        }
        if s == max_steps {
            return Ok(SteadyState {
                state: x,
                converged: false,
                time: t,
                residual,
            });
        }
        rk.step(model, &u, &mut x, opts.dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: (s + 1) as f64 * opts.dt,
            });
        }
    }
    unreachable!("loop returns at s == max_steps")
}

/// Newton iterations on `f(x) = 0` from `x0` with step halving. Returns the
/// state and its residual once `max |f| < tol`, or `None` if the iteration
/// stalls. Only meaningful when `x0` is already close to a stable
/// equilibrium.
pub fn newton_refine(
    model: &OdeModel,
    u: &DVector<f64>,
    x0: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, f64)> {
    let p = model.dim();
    let mut x = x0.clone();
    let mut f = DVector::zeros(p);
    let mut f_cand = DVector::zeros(p);
    model.derivative(&x, u, &mut f);
    let mut residual = f.amax();
    for _ in 0..30 {
        if residual < tol {
            return Some((x, residual));
        }
        let step = model.jacobian(&x, u).lu().solve(&f)?;
        let mut scale = 1.0;
        loop {
            let cand = &x - &step * scale;
            model.derivative(&cand, u, &mut f_cand);
            let r = f_cand.amax();
            if r < residual {
                x = cand;
                residual = r;
                std::mem::swap(&mut f, &mut f_cand);
                break;
            }
            scale *= 0.5;
            if scale < 1e-4 {
                return None;
            }
        }
    }
    (residual < tol).then_some((x, residual))
}

/// Steady states for every row of `d`, in parallel. Fails on the first
/// condition that does not converge.
pub fn steady_states(
    model: &OdeModel,
    d: &ConditionMatrix,
    opts: &SteadyStateOptions,
) -> Result<DMatrix<f64>> {
    let rows: Vec<DVector<f64>> = (0..d.n_conditions())
        .into_par_iter()
        .map(|k| {
            let dose = d.values().row(k).transpose();
            let ss = steady_state(model, &dose, opts)?;
            if !ss.converged {
                return Err(Error::NotConverged(format!(
                    "steady state for condition {k} did not converge by t = {} (residual {:.3e})",
                    opts.t_max, ss.residual
                )));
            }
            Ok(ss.state)
        })
        .collect::<Result<_>>()?;
    let p = model.dim();
    Ok(DMatrix::from_fn(rows.len(), p, |k, i| rows[k][i]))
}

pub fn predict_causal_ode(
    model: &OdeModel,
    d: &ConditionMatrix,
    opts: &SteadyStateOptions,
) -> Result<PredictionResult> {
    model.targets().check_compatible(d)?;
    PredictionResult::new(steady_states(model, d, opts)?, ModelTag::CausalOde)
}
