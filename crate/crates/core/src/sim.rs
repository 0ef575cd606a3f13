//! The five-response, fifteen-drug benchmark system and its three validation
//! scenarios (random fold, random fold with a misspecified target map, and
//! leave-one-drug-out).
//!
//! * Drugs 1-5 hit one response each with strength 1; drugs 6-15 hit every
//!   unordered pair of responses (lexicographic order) with strength 0.5.
//! * Every unordered pair of drugs is applied once at unit dose, giving 105
//!   conditions in lexicographic pair order.
//! * `X1 -> X2` (1.6), `X1 -> X3` (1.2) and `X3 -> X4` (2.0).
//!
//! Responses are `((I - A)^-1 B d)^T` plus i.i.d. Gaussian noise. Noise is
//! drawn from `ChaCha8Rng::seed_from_u64(seed)` in row-major order; the random
//! fold split uses a separate stream seeded with `seed + 1`, shared by both
//! random-fold scenarios.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_causal_linear, fit_regression, fit_regression_lodo, FitConfig};
use crate::model::{predict_causal_linear, predict_regression, w_to_dag};
use crate::types::{ConditionMatrix, InteractionMatrix, ResponseMatrix, TargetMap};
use crate::validation::{mae, pearson};

pub const SIM_RESPONSES: usize = 5;
pub const SIM_DRUGS: usize = 15;
pub const SIM_CONDITIONS: usize = 105;
pub const DEFAULT_NOISE_SD: f64 = 0.2;
/// Entries below this magnitude are hidden when networks are displayed.
pub const DISPLAY_THRESHOLD: f64 = 0.2;

/// True `(target, source, weight)` edges of the benchmark network, 0-based.
pub const TRUE_EDGES: [(usize, usize, f64); 3] = [(1, 0, 1.6), (2, 0, 1.2), (3, 2, 2.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            noise_sd: DEFAULT_NOISE_SD,
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn new(noise_sd: f64, seed: u64) -> Result<Self> {
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::Invalid(format!(
                "noise sd must be >= 0, got {noise_sd}"
            )));
        }
        Ok(Self { noise_sd, seed })
    }

    pub fn n_responses(&self) -> usize {
        SIM_RESPONSES
    }

    pub fn n_drugs(&self) -> usize {
        SIM_DRUGS
    }

    pub fn n_conditions(&self) -> usize {
        SIM_CONDITIONS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    RandomFold,
    RandomFoldMisspecifiedB,
    /// Leave out one drug (0-based index).
    Lodo {
        drug: usize,
    },
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenario::RandomFold => f.write_str("rf"),
            Scenario::RandomFoldMisspecifiedB => f.write_str("rf-misspecified-b"),
            Scenario::Lodo { drug } => write!(f, "lodo-drug{}", drug + 1),
        }
    }
}

pub fn drug_names() -> Vec<String> {
    (1..=SIM_DRUGS).map(|i| format!("D{i}")).collect()
}

pub fn response_names() -> Vec<String> {
    (1..=SIM_RESPONSES).map(|i| format!("X{i}")).collect()
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// `105 x 15` design: one row per unordered drug pair, both at dose 1.
pub fn build_design() -> ConditionMatrix {
    let mut d = DMatrix::zeros(SIM_CONDITIONS, SIM_DRUGS);
    for (row, (i, j)) in pairs(SIM_DRUGS).enumerate() {
        d[(row, i)] = 1.0;
        d[(row, j)] = 1.0;
    }
    ConditionMatrix::new(d, drug_names()).expect("design is valid")
}

/// `5 x 15` target map. With `misspecified`, the two-target drugs are given
/// strength 1 instead of the true 0.5.
pub fn build_targets(misspecified: bool) -> TargetMap {
    let strength = if misspecified { 1.0 } else { 0.5 };
    let mut b = DMatrix::zeros(SIM_RESPONSES, SIM_DRUGS);
    for i in 0..SIM_RESPONSES {
        b[(i, i)] = 1.0;
    }
    for (k, (i, j)) in pairs(SIM_RESPONSES).enumerate() {
        b[(i, SIM_RESPONSES + k)] = strength;
        b[(j, SIM_RESPONSES + k)] = strength;
    }
    TargetMap::new(b).expect("targets are finite")
}

pub fn build_dag() -> InteractionMatrix {
    let mut a = DMatrix::zeros(SIM_RESPONSES, SIM_RESPONSES);
    for (target, source, weight) in TRUE_EDGES {
        a[(target, source)] = weight;
    }
    InteractionMatrix::a_form(a).expect("dag is finite")
}

/// Noise-free responses `((I - A)^-1 B d_k)^T`.
pub fn noiseless_responses() -> DMatrix<f64> {
    let a = build_dag();
    let inv = (DMatrix::<f64>::identity(SIM_RESPONSES, SIM_RESPONSES) - a.values())
        .try_inverse()
        .expect("I - A is unit lower triangular");
    build_design().values() * build_targets(false).values().transpose() * inv.transpose()
}

pub fn simulate_responses(spec: &SimSpec) -> ResponseMatrix {
    let mut x = noiseless_responses();
    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd).expect("validated sd");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                x[(r, c)] += normal.sample(&mut rng);
            }
        }
    }
    ResponseMatrix::new(x, response_names()).expect("responses are finite")
}

/// `floor(2n/3)` training rows sampled without replacement; both index lists
/// are sorted.
pub fn random_fold_split(spec: &SimSpec) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..SIM_CONDITIONS).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1)));
    let n_train = 2 * SIM_CONDITIONS / 3;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub test_pearson: f64,
    pub test_mae: f64,
    /// Test observations, row-major over (test condition, response).
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl ModelOutcome {
    fn new(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<Self> {
        let obs = row_major(observed);
        let pred = row_major(predicted);
        Ok(Self {
            test_pearson: pearson(&obs, &pred)?,
            test_mae: mae(&obs, &pred)?,
            observed: obs,
            predicted: pred,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub spec: SimSpec,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub regression: ModelOutcome,
    pub causal: ModelOutcome,
    /// Fitted A-form network, row-major `5 x 5`.
    pub network: Vec<Vec<f64>>,
    pub display_threshold: f64,
}

impl ScenarioReport {
    pub fn network_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(SIM_RESPONSES, SIM_RESPONSES, |i, j| self.network[i][j])
    }
}

/// Runs one scenario with `lambda = 0` for both estimators.
pub fn run_scenario(scenario: Scenario, spec: &SimSpec) -> Result<ScenarioReport> {
    let d = build_design();
    let x = simulate_responses(spec);
    let cfg = FitConfig::default();

    let (train, test) = match scenario {
        Scenario::RandomFold | Scenario::RandomFoldMisspecifiedB => random_fold_split(spec),
        Scenario::Lodo { drug } => {
            if drug >= SIM_DRUGS {
                return Err(Error::Invalid(format!(
                    "LODO drug index {drug} out of range (0..{SIM_DRUGS})"
                )));
            }
            (0..SIM_CONDITIONS).partition(|&k| d.values()[(k, drug)] == 0.0)
        }
    };
    let (d_train, x_train) = (d.select_rows(&train), x.select_rows(&train));
    let d_test = d.select_rows(&test);
    let x_test = x.values().select_rows(&test);

    let r = match scenario {
        Scenario::Lodo { drug } => fit_regression_lodo(&d_train, &x_train, drug, &cfg)?.0,
        _ => fit_regression(&d_train, &x_train, &cfg)?.0,
    };
    let reg_pred = predict_regression(&r, &d_test)?.predicted;

    let b = build_targets(matches!(scenario, Scenario::RandomFoldMisspecifiedB));
    let (w, _) = fit_causal_linear(&d_train, &x_train, &b, &cfg)?;
    let causal_pred = predict_causal_linear(&w, &b, &d_test)?.predicted;
    let a_hat = w_to_dag(&w)?;

    Ok(ScenarioReport {
        scenario,
        spec: *spec,
        train_rows: train,
        test_rows: test,
        regression: ModelOutcome::new(&x_test, &reg_pred)?,
        causal: ModelOutcome::new(&x_test, &causal_pred)?,
        network: a_hat
            .values()
            .row_iter()
            .map(|row| row.iter().copied().collect())
            .collect(),
        display_threshold: DISPLAY_THRESHOLD,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodoSummary {
    pub folds: Vec<ScenarioReport>,
    pub regression_mean_pearson: f64,
    pub causal_mean_pearson: f64,
}

/// Runs the leave-one-drug-out scenario for every drug.
pub fn run_lodo_all(spec: &SimSpec) -> Result<LodoSummary> {
    use rayon::prelude::*;
    let folds: Vec<ScenarioReport> = (0..SIM_DRUGS)
        .into_par_iter()
        .map(|drug| run_scenario(Scenario::Lodo { drug }, spec))
        .collect::<Result<_>>()?;
    let k = folds.len() as f64;
    Ok(LodoSummary {
        regression_mean_pearson: folds.iter().map(|f| f.regression.test_pearson).sum::<f64>() / k,
        causal_mean_pearson: folds.iter().map(|f| f.causal.test_pearson).sum::<f64>() / k,
        folds,
    })
}

/// Outcome of comparing a fitted A-form network with the true one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecovery {
    /// Largest `|A_hat - A|` over the true edges.
    pub max_edge_error: f64,
    /// Largest `|A_hat|` over off-diagonal non-edges.
    pub max_spurious: f64,
}

impl NetworkRecovery {
    pub fn of(a_hat: &DMatrix<f64>) -> Self {
        let truth = build_dag();
        let mut max_edge_error = 0.0f64;
        let mut max_spurious = 0.0f64;
        for i in 0..SIM_RESPONSES {
            for j in 0..SIM_RESPONSES {
                if i == j {
                    continue;
                }
                let t = truth.values()[(i, j)];
                if t != 0.0 {
                    max_edge_error = max_edge_error.max((a_hat[(i, j)] - t).abs());
                } else {
                    max_spurious = max_spurious.max(a_hat[(i, j)].abs());
                }
            }
        }
        Self {
            max_edge_error,
            max_spurious,
        }
    }

    pub fn recovered(&self, edge_tol: f64, threshold: f64) -> bool {
        self.max_edge_error <= edge_tol && self.max_spurious < threshold
    }
}
