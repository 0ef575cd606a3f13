//! Random instance generators and fixed-seed property checks shared by the
//! `properties` and `acceptance` test targets. Each check returns `Err` with a
//! description of the first counterexample.

#![allow(dead_code)]

use cellpred_core::estimators::{
    causal_loss_and_gradient, fit_causal_linear, fit_regression, prox_off_diagonal, soft_threshold,
    FitConfig,
};
use cellpred_core::io::{parse_matrix_csv, write_matrix, LabeledMatrix};
use cellpred_core::model::{
    dag_to_w, predict_causal_dag, predict_causal_linear, predict_regression,
    verify_steady_state_limit, w_to_dag,
};
use cellpred_core::ode::{integrate, steady_state, Envelope, OdeModel, SteadyStateOptions};
use cellpred_core::sim::{
    build_dag, build_design, build_targets, noiseless_responses, run_scenario, NetworkRecovery,
    Scenario, SimSpec, DISPLAY_THRESHOLD,
};
use cellpred_core::validation::{
    averaged_random_fold_eval, lodo_eval, make_lodo_splits, make_random_folds, pearson,
    RegressionFamily,
};
use cellpred_core::{
    ConditionMatrix, EdgeMask, InteractionMatrix, RegressionCoefficients, ResponseMatrix, TargetMap,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> Check {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Symmetric negative definite W with eigenvalues in `[-3, -0.5]` and dense
/// off-diagonals.
pub fn symmetric_nd_w(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let q = gaussian(rng, p, p).qr().q();
    let eig = DVector::from_fn(p, |_, _| -rng.random_range(0.5..3.0));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Non-symmetric W with a strictly dominant negative diagonal, so every
/// eigenvalue has negative real part.
pub fn dominant_stable_w(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let mut w = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0f64..1.0));
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| w[(i, j)].abs()).sum();
        w[(i, i)] = -(off + rng.random_range(0.5..2.0));
    }
    w
}

pub fn random_targets(rng: &mut ChaCha8Rng, p: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, q, |_, _| {
        if rng.random_bool(0.6) {
            rng.random_range(0.1..1.5)
        } else {
            0.0
        }
    })
}

pub fn random_doses(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| rng.random_range(0.0..2.0))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Largest componentwise relative error between the analytic gradient and
/// central differences. Components whose magnitude is below `1e-3` times the
/// gradient's largest entry are compared on that scale instead.
pub fn gradient_error(
    w: &DMatrix<f64>,
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    b: &TargetMap,
) -> f64 {
    let wm = InteractionMatrix::w_form(w.clone()).unwrap();
    let (_, g) = causal_loss_and_gradient(&wm, d, x, b).unwrap();
    let floor = 1e-3 * g.amax().max(1e-12);
    let loss = |m: DMatrix<f64>| {
        causal_loss_and_gradient(&InteractionMatrix::w_form(m).unwrap(), d, x, b)
            .unwrap()
            .0
    };
    let mut worst = 0.0f64;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let h = 1e-6 * w[(i, j)].abs().max(1.0);
            let mut plus = w.clone();
            plus[(i, j)] += h;
            let mut minus = w.clone();
            minus[(i, j)] -= h;
            let fd = (loss(plus) - loss(minus)) / (2.0 * h);
            let err = (g[(i, j)] - fd).abs() / g[(i, j)].abs().max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// A random problem for gradient checks: stable W, random targets, and
/// responses that do not sit at the optimum.
pub fn gradient_instance(
    rng: &mut ChaCha8Rng,
    p: usize,
) -> (DMatrix<f64>, ConditionMatrix, ResponseMatrix, TargetMap) {
    let q = p + 2;
    let n = 12;
    let w = dominant_stable_w(rng, p);
    let d = ConditionMatrix::unnamed(random_doses(rng, n, q)).unwrap();
    let x = ResponseMatrix::unnamed(gaussian(rng, n, p)).unwrap();
    let b = TargetMap::new(random_targets(rng, p, q)).unwrap();
    (w, d, x, b)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn system_strategy() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), prop::sample::select(vec![2usize, 3, 4, 5]))
}

// ---- model-core ----

pub fn dag_equivalence() -> Check {
    run(64, system_strategy(), |(seed, p)| {
        let mut g = rng(seed);
        let w = if seed % 2 == 0 {
            symmetric_nd_w(&mut g, p)
        } else {
            dominant_stable_w(&mut g, p)
        };
        let q = p + 1;
        let b = TargetMap::new(random_targets(&mut g, p, q)).unwrap();
        let d = ConditionMatrix::unnamed(random_doses(&mut g, 7, q)).unwrap();
        let wm = InteractionMatrix::w_form(w).unwrap();
        let lin = predict_causal_linear(&wm, &b, &d).unwrap().predicted;
        let dag = predict_causal_dag(&w_to_dag(&wm).unwrap(), &b, &d)
            .unwrap()
            .predicted;
        let err = max_abs(&(lin - dag));
        ensure(err <= 1e-12, || format!("DAG/linear mismatch {err:e}"))
    })
}

pub fn linearity_in_doses() -> Check {
    run(64, system_strategy(), |(seed, p)| {
        let mut g = rng(seed);
        let w = InteractionMatrix::w_form(dominant_stable_w(&mut g, p)).unwrap();
        let q = p + 2;
        let b = TargetMap::new(random_targets(&mut g, p, q)).unwrap();
        let d1 = random_doses(&mut g, 5, q);
        let d2 = random_doses(&mut g, 5, q);
        let pred = |d: DMatrix<f64>| {
            predict_causal_linear(&w, &b, &ConditionMatrix::unnamed(d).unwrap())
                .unwrap()
                .predicted
        };
        let err = max_abs(&(pred(&d1 + &d2) - pred(d1) - pred(d2)));
        ensure(err <= 1e-12, || format!("additivity error {err:e}"))
    })
}

pub fn steady_state_limit_monotone() -> Check {
    run(20, any::<u64>(), |seed| {
        let mut g = rng(seed);
        let p = 4;
        let w = symmetric_nd_w(&mut g, p);
        let lam = w.symmetric_eigenvalues().max().abs();
        let wm = InteractionMatrix::w_form(w).unwrap();
        let b = TargetMap::new(random_targets(&mut g, p, 3)).unwrap();
        let t_end = 100.0 / lam;
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let t = t_end * k as f64 / 40.0;
            let r = verify_steady_state_limit(&wm, &b, t).unwrap();
            ensure(r <= prev + 1e-12, || {
                format!("residual rose from {prev:e} to {r:e} at t = {t}")
            })?;
            prev = r;
        }
        ensure(prev <= 1e-8, || format!("residual {prev:e} at t = {t_end}"))
    })
}

pub fn regression_identity_rows() -> Check {
    run(32, (1usize..8, 1usize..6, any::<u64>()), |(q, p, seed)| {
        let mut g = rng(seed);
        let r = gaussian(&mut g, q, p);
        let d = ConditionMatrix::unnamed(DMatrix::identity(q, q)).unwrap();
        let pred = predict_regression(&RegressionCoefficients::new(r.clone()).unwrap(), &d)
            .unwrap()
            .predicted;
        ensure(pred == r, || "identity design did not return R".into())
    })
}

// ---- ode-engine ----

pub fn ode_matches_closed_form() -> Check {
    run(24, system_strategy(), |(seed, p)| {
        let mut g = rng(seed);
        let w = if seed % 2 == 0 {
            symmetric_nd_w(&mut g, p)
        } else {
            dominant_stable_w(&mut g, p)
        };
        let q = p + 1;
        let wm = InteractionMatrix::w_form(w).unwrap();
        let b = TargetMap::new(random_targets(&mut g, p, q)).unwrap();
        let d = ConditionMatrix::unnamed(random_doses(&mut g, 3, q)).unwrap();
        let closed = predict_causal_linear(&wm, &b, &d).unwrap().predicted;
        let model = OdeModel::linear(wm, b).unwrap();
        let opts = SteadyStateOptions {
            t_max: 2000.0,
            ..SteadyStateOptions::default()
        };
        for k in 0..3 {
            let ss = steady_state(&model, &d.values().row(k).transpose(), &opts).unwrap();
            ensure(ss.converged, || "steady state did not converge".into())?;
            let err = (ss.state - closed.row(k).transpose()).amax();
            ensure(err <= 1e-5, || format!("ODE/closed-form gap {err:e}"))?;
        }
        Ok(())
    })
}

/// Error ratio between dt and dt/2 against a dt/64 reference, on a damped
/// oscillator driven by a sigmoid envelope.
pub fn rk4_step_halving() -> Check {
    let w = InteractionMatrix::w_form(DMatrix::from_row_slice(
        3,
        3,
        &[-0.5, 1.5, 0.2, -1.5, -0.4, 0.0, 0.3, 0.6, -1.0],
    ))
    .unwrap();
    let b = TargetMap::new(DMatrix::from_row_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
    ))
    .unwrap();
    let model = OdeModel::new(
        w,
        DVector::from_row_slice(&[1.0, 2.0, 0.5]),
        Envelope::Sigmoid,
        b,
    )
    .unwrap();
    let d = DVector::from_row_slice(&[1.0, 0.7]);
    let x0 = DVector::zeros(3);
    let fin = |dt: f64| {
        integrate(&model, &d, &x0, 4.0, dt)
            .map(|t| t.final_state())
            .map_err(|e| e.to_string())
    };
    let reference = fin(0.2 / 64.0)?;
    let e1 = (fin(0.2)? - &reference).amax();
    let e2 = (fin(0.1)? - &reference).amax();
    let ratio = e1 / e2;
    if (8.0..=24.0).contains(&ratio) {
        Ok(())
    } else {
        Err(format!(
            "step-halving error ratio {ratio} outside 16 +/- 50%"
        ))
    }
}

pub fn envelopes_monotone() -> Check {
    for env in [Envelope::Identity, Envelope::clipped(), Envelope::Sigmoid] {
        let mut prev = f64::NEG_INFINITY;
        for k in -4000..=4000 {
            let v = env.apply(k as f64 * 0.01);
            if v < prev {
                return Err(format!("{env:?} decreases at {}", k as f64 * 0.01));
            }
            prev = v;
        }
    }
    Ok(())
}

// ---- estimators ----

pub fn objective_traces_nonincreasing() -> Check {
    run(
        12,
        (any::<u64>(), prop::sample::select(vec![2usize, 3, 4])),
        |(seed, p)| {
            let mut g = rng(seed);
            let (w, d, _, b) = gradient_instance(&mut g, p);
            let truth = InteractionMatrix::w_form(w).unwrap();
            let clean = predict_causal_linear(&truth, &b, &d).unwrap().predicted;
            let x =
                ResponseMatrix::unnamed(&clean + 0.1 * gaussian(&mut g, clean.nrows(), p)).unwrap();
            for lambda in [0.0, 0.05] {
                let cfg = FitConfig::with_lambda(lambda);
                let (_, rep) = fit_causal_linear(&d, &x, &b, &cfg)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                check_trace(&rep.objective_trace, "causal")?;
                let (_, rep) = fit_regression(&d, &x, &FitConfig::with_lambda(lambda + 0.1))
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                check_trace(&rep.objective_trace, "regression")?;
            }
            Ok(())
        },
    )
}

fn check_trace(trace: &[f64], what: &str) -> std::result::Result<(), TestCaseError> {
    for pair in trace.windows(2) {
        ensure(pair[1] <= pair[0] + 1e-10 * pair[0].abs().max(1.0), || {
            format!("{what} objective rose from {} to {}", pair[0], pair[1])
        })?;
    }
    Ok(())
}

/// Compares the prox step with a brute-force scalar minimization of
/// `(z - v)^2 / 2 + tau |z|` on a fine grid.
pub fn soft_threshold_brute_force() -> Check {
    run(200, (-5.0f64..5.0, 0.0f64..3.0), |(v, tau)| {
        let mut best = (f64::INFINITY, 0.0);
        for k in -80_000..=80_000 {
            let z = k as f64 * 1e-4;
            let obj = 0.5 * (z - v).powi(2) + tau * z.abs();
            if obj < best.0 {
                best = (obj, z);
            }
        }
        let s = soft_threshold(v, tau);
        ensure((s - best.1).abs() <= 1e-4, || {
            format!(
                "soft_threshold({v}, {tau}) = {s}, grid minimizer {}",
                best.1
            )
        })?;
        let mut m = DMatrix::from_element(2, 2, v);
        prox_off_diagonal(&mut m, tau);
        ensure(m[(0, 0)] == v && m[(0, 1)] == s, || {
            "prox touched the diagonal".into()
        })
    })
}

pub fn gradient_matches_finite_differences() -> Check {
    let mut g = rng(4);
    for k in 0..24 {
        let p = [2, 3, 5][k % 3];
        let (w, d, x, b) = gradient_instance(&mut g, p);
        let err = gradient_error(&w, &d, &x, &b);
        if err > 1e-5 {
            return Err(format!("instance {k} (p = {p}): relative error {err:e}"));
        }
    }
    Ok(())
}

pub fn regression_normal_equations() -> Check {
    run(
        32,
        (8usize..30, 1usize..6, 1usize..5, any::<u64>()),
        |(n, q, p, seed)| {
            let mut g = rng(seed);
            let d = random_doses(&mut g, n, q);
            let x = gaussian(&mut g, n, p);
            let (r, _) = fit_regression(
                &ConditionMatrix::unnamed(d.clone()).unwrap(),
                &ResponseMatrix::unnamed(x.clone()).unwrap(),
                &FitConfig::default(),
            )
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let lhs = (d.transpose() * (&x - &d * r.values())).amax();
            let scale = (d.transpose() * &x).amax();
            ensure(lhs <= 1e-8 * scale, || {
                format!("normal equation residual {lhs:e}")
            })
        },
    )
}

/// Runs the fitter for `k = 1, 2, ...` iterations; each result is the `k`-th
/// iterate, so the mask is checked at every step.
pub fn mask_respected_every_iterate() -> Check {
    let mut g = rng(11);
    let p = 4;
    let (w, d, _, b) = gradient_instance(&mut g, p);
    let truth = InteractionMatrix::w_form(w).unwrap();
    let x =
        ResponseMatrix::unnamed(predict_causal_linear(&truth, &b, &d).unwrap().predicted).unwrap();
    let mut allowed = DMatrix::from_element(p, p, true);
    allowed[(0, 1)] = false;
    allowed[(2, 0)] = false;
    allowed[(3, 2)] = false;
    let mask = EdgeMask::new(allowed.clone()).unwrap();
    for k in 1..=30 {
        let cfg = FitConfig {
            max_iter: k,
            mask: Some(mask.clone()),
            lambda: 0.01,
            ..FitConfig::default()
        };
        let (fit, _) = fit_causal_linear(&d, &x, &b, &cfg).map_err(|e| e.to_string())?;
        for i in 0..p {
            for j in 0..p {
                if !allowed[(i, j)] && fit.values()[(i, j)] != 0.0 {
                    return Err(format!("iterate {k}: masked entry ({i}, {j}) is nonzero"));
                }
            }
        }
    }
    Ok(())
}

pub fn underdetermined_flagged() -> Check {
    let mut g = rng(12);
    let (p, q) = (4, 2);
    let d = ConditionMatrix::unnamed(random_doses(&mut g, 10, q)).unwrap();
    let x = ResponseMatrix::unnamed(gaussian(&mut g, 10, p)).unwrap();
    let b = TargetMap::new(random_targets(&mut g, p, q).add_scalar(0.1)).unwrap();
    let cfg = FitConfig {
        max_iter: 200,
        ..FitConfig::default()
    };
    match fit_causal_linear(&d, &x, &b, &cfg) {
        Ok((_, rep)) if !rep.solution_unique => Ok(()),
        Ok(_) => Err("q < p fit reported a unique solution".into()),
        Err(e) => Err(format!("q < p fit failed: {e}")),
    }
}

// ---- sim-bench ----

pub fn fixtures_exact() -> Check {
    let d = build_design();
    let first = d.values().row(0);
    let last = d.values().row(104);
    if first[0] != 1.0 || first[1] != 1.0 || first.sum() != 2.0 {
        return Err("first condition is not drugs 1 + 2".into());
    }
    if last[13] != 1.0 || last[14] != 1.0 || last.sum() != 2.0 {
        return Err("last condition is not drugs 14 + 15".into());
    }
    let b = build_targets(false);
    let expected_b_cols: [[f64; 5]; 3] = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.5, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.5, 0.5],
    ];
    for (col, expected) in [0usize, 5, 14].into_iter().zip(expected_b_cols) {
        if b.values().column(col).iter().ne(expected.iter()) {
            return Err(format!("target column {col} differs from fixture"));
        }
    }
    let bm = build_targets(true);
    if bm.values()[(0, 5)] != 1.0 || bm.values()[(0, 0)] != 1.0 {
        return Err("misspecified targets differ from fixture".into());
    }
    let a = build_dag();
    let expected_a = DMatrix::from_row_slice(
        5,
        5,
        &[
            0.0, 0.0, 0.0, 0.0, 0.0, //
            1.6, 0.0, 0.0, 0.0, 0.0, //
            1.2, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 2.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ],
    );
    if a.values() != &expected_a {
        return Err("DAG differs from fixture".into());
    }
    // Drug 1 with the X1/X4 pair drug (0.5 each): x1 = 1.5, x2 = 2.4,
    // x3 = 1.8, x4 = 3.6 + 0.5 = 4.1, x5 = 0.
    let x = noiseless_responses();
    let row = (0..105)
        .find(|&k| d.values()[(k, 0)] == 1.0 && d.values()[(k, 7)] == 1.0)
        .unwrap();
    let expected = [1.5, 2.4, 1.8, 4.1, 0.0];
    for (j, e) in expected.iter().enumerate() {
        if (x[(row, j)] - e).abs() > 1e-12 {
            return Err(format!(
                "noiseless response {j} = {}, expected {e}",
                x[(row, j)]
            ));
        }
    }
    if build_design() != d || build_targets(false) != b || build_dag() != a {
        return Err("fixtures are not deterministic".into());
    }
    Ok(())
}

pub fn regression_invariant_to_targets() -> Check {
    for seed in 0..5 {
        let spec = SimSpec::new(0.2, seed).unwrap();
        let rf = run_scenario(Scenario::RandomFold, &spec).map_err(|e| e.to_string())?;
        let mis =
            run_scenario(Scenario::RandomFoldMisspecifiedB, &spec).map_err(|e| e.to_string())?;
        let same = rf
            .regression
            .predicted
            .iter()
            .zip(&mis.regression.predicted)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("seed {seed}: regression predictions differ"));
        }
    }
    Ok(())
}

/// Counts seeds whose fitted network recovers the true edges. Individual misses
/// are reported, not failed; the returned count feeds the acceptance gate.
pub fn network_recovery_counts(scenario: Scenario, seeds: u64) -> Result<(usize, usize), String> {
    let mut recovered = 0;
    let mut spurious = 0;
    for seed in 0..seeds {
        let spec = SimSpec::new(0.2, seed).unwrap();
        let rep = run_scenario(scenario, &spec).map_err(|e| e.to_string())?;
        let rec = NetworkRecovery::of(&rep.network_matrix());
        if rec.recovered(0.15, DISPLAY_THRESHOLD) {
            recovered += 1;
        }
        if rec.max_spurious >= DISPLAY_THRESHOLD {
            spurious += 1;
        }
    }
    Ok((recovered, spurious))
}

pub fn misspecified_network_has_spurious_edge() -> Check {
    let (_, spurious) = network_recovery_counts(Scenario::RandomFoldMisspecifiedB, 20)?;
    if spurious >= 16 {
        Ok(())
    } else {
        Err(format!(
            "only {spurious}/20 misspecified fits show a spurious edge"
        ))
    }
}

// ---- validation ----

pub fn split_plans_sound() -> Check {
    run(
        64,
        (2usize..200, 0.05f64..0.95, 1usize..20, any::<u64>()),
        |(n, frac, reps, seed)| match make_random_folds(n, frac, reps, seed) {
            Ok(plan) => {
                plan.check(None)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let n_train = (n as f64 * frac).floor() as usize;
                ensure(plan.splits.iter().all(|s| s.train.len() == n_train), || {
                    "wrong training size".into()
                })
            }
            Err(_) => {
                let n_train = (n as f64 * frac).floor() as usize;
                ensure(n_train == 0 || n_train >= n, || {
                    "valid split rejected".into()
                })
            }
        },
    )?;
    let d = build_design();
    for plan in make_lodo_splits(&d).map_err(|e| e.to_string())? {
        plan.check(Some(&d)).map_err(|e| e.to_string())?;
    }
    Ok(())
}

pub fn lodo_monotherapy_predicts_zero() -> Check {
    let q = 4;
    let p = 3;
    let mut rows = Vec::new();
    for i in 0..q {
        let mut r = vec![0.0; q];
        r[i] = 1.0;
        rows.push(r);
    }
    for i in 0..q {
        for j in i + 1..q {
            let mut r = vec![0.0; q];
            r[i] = 1.0;
            r[j] = 0.5;
            rows.push(r);
        }
    }
    let n = rows.len();
    let d = ConditionMatrix::unnamed(DMatrix::from_fn(n, q, |i, j| rows[i][j])).unwrap();
    let mut g = rng(21);
    let x = ResponseMatrix::unnamed(gaussian(&mut g, n, p)).unwrap();
    let labels: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let plans = make_lodo_splits(&d).map_err(|e| e.to_string())?;
    let eval = lodo_eval(&RegressionFamily::default(), &d, &x, &plans, Some(&labels))
        .map_err(|e| e.to_string())?;
    for drug in 0..q {
        let label = format!("c{drug}");
        for pt in eval.points.iter().filter(|pt| pt.condition == label) {
            if pt.predicted != 0.0 {
                return Err(format!("monotherapy {label} predicted {}", pt.predicted));
            }
        }
    }
    Ok(())
}

pub fn pearson_affine_invariant() -> Check {
    run(
        128,
        (
            prop::collection::vec(-10.0f64..10.0, 3..40),
            0.01f64..100.0,
            -50.0f64..50.0,
            any::<u64>(),
        ),
        |(x, slope, shift, seed)| {
            let mut g = rng(seed);
            let y: Vec<f64> = x.iter().map(|v| v + g.random_range(-3.0..3.0)).collect();
            let Ok(r) = pearson(&x, &y) else {
                return Ok(());
            };
            let xs: Vec<f64> = x.iter().map(|v| slope * v + shift).collect();
            let ys: Vec<f64> = y.iter().map(|v| slope * v - shift).collect();
            let r1 = pearson(&xs, &y).unwrap();
            let r2 = pearson(&x, &ys).unwrap();
            ensure((r - r1).abs() <= 1e-12 && (r - r2).abs() <= 1e-12, || {
                format!("r = {r}, rescaled {r1} / {r2}")
            })
        },
    )
}

/// Seed-to-seed spread of the averaged random-fold correlation, for a given
/// repetition count, across five master seeds.
pub fn averaged_metric_sd(reps: usize) -> Result<f64, String> {
    let d = build_design();
    let x = cellpred_core::sim::simulate_responses(&SimSpec::new(0.2, 7).unwrap());
    let values: Vec<f64> = (0..5)
        .map(|seed| {
            let plan = make_random_folds(105, 0.7, reps, 1000 + seed)?;
            averaged_random_fold_eval(&RegressionFamily::default(), &d, &x, &plan, None)
                .map(|e| e.report.pearson_r)
        })
        .collect::<cellpred_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mean = values.iter().sum::<f64>() / 5.0;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt())
}

pub fn averaging_reduces_variance() -> Check {
    let many = averaged_metric_sd(1000)?;
    let few = averaged_metric_sd(10)?;
    if many < few {
        Ok(())
    } else {
        Err(format!(
            "sd with 1000 reps {many:e} not below sd with 10 reps {few:e}"
        ))
    }
}

// ---- cli-io ----

pub fn matrix_round_trip() -> Check {
    run(
        128,
        (1usize..6, 1usize..6, any::<u64>()),
        |(rows, cols, seed)| {
            let mut g = rng(seed);
            let values = DMatrix::from_fn(rows, cols, |_, _| {
                let mantissa: f64 = g.random_range(-1.0..1.0);
                mantissa * 10f64.powi(g.random_range(-300..300))
            });
            let m = LabeledMatrix::with_index_rows(
                (0..cols).map(|j| format!("v{j}")).collect(),
                values,
            )
            .unwrap();
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m, "id").unwrap();
            let back = parse_matrix_csv(buf.as_slice(), "buffer", None).unwrap();
            ensure(back == m, || "round trip changed the matrix".into())
        },
    )
}

pub type Property = (&'static str, fn() -> Check);

/// Every shared property, in module order.
pub fn all_properties() -> Vec<Property> {
    vec![
        ("model-core: DAG equivalence", dag_equivalence),
        ("model-core: linearity in doses", linearity_in_doses),
        (
            "model-core: steady-state limit monotone",
            steady_state_limit_monotone,
        ),
        (
            "model-core: regression identity rows",
            regression_identity_rows,
        ),
        ("model-core: A/W round trip", dag_w_round_trip),
        (
            "ode-engine: ODE matches closed form",
            ode_matches_closed_form,
        ),
        ("ode-engine: RK4 step halving", rk4_step_halving),
        ("ode-engine: envelopes monotone", envelopes_monotone),
        (
            "estimators: objective traces nonincreasing",
            objective_traces_nonincreasing,
        ),
        (
            "estimators: soft threshold brute force",
            soft_threshold_brute_force,
        ),
        (
            "estimators: gradient vs finite differences",
            gradient_matches_finite_differences,
        ),
        (
            "estimators: regression normal equations",
            regression_normal_equations,
        ),
        (
            "estimators: mask respected every iterate",
            mask_respected_every_iterate,
        ),
        (
            "estimators: q < p flagged non-unique",
            underdetermined_flagged,
        ),
        ("sim-bench: fixtures exact", fixtures_exact),
        (
            "sim-bench: regression invariant to targets",
            regression_invariant_to_targets,
        ),
        (
            "sim-bench: misspecified network spurious edge",
            misspecified_network_has_spurious_edge,
        ),
        ("validation: split plans sound", split_plans_sound),
        (
            "validation: LODO monotherapy predicts zero",
            lodo_monotherapy_predicts_zero,
        ),
        (
            "validation: pearson affine invariant",
            pearson_affine_invariant,
        ),
        (
            "validation: averaging reduces variance",
            averaging_reduces_variance,
        ),
        ("cli-io: matrix round trip", matrix_round_trip),
    ]
}

pub fn dag_w_round_trip() -> Check {
    let a = build_dag();
    let back = w_to_dag(&dag_to_w(&a).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if back.values() == a.values() {
        Ok(())
    } else {
        Err("A -> W -> A round trip changed the matrix".into())
    }
}
