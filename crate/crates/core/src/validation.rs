//! Split plans, metrics, and the two evaluation protocols: repeated random
//! folds with prediction averaging, and leave-one-drug-out.
//!
//! Pearson correlation and MAE are pooled over every (condition, response)
//! pair; per-response values are reported alongside for diagnostics.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    fit_causal_linear, fit_causal_ode, fit_regression, fit_regression_lodo, FitConfig,
};
use crate::model::{predict_causal_linear, predict_regression};
use crate::ode::{predict_causal_ode, OdeModel, SteadyStateOptions};
use crate::types::{ConditionMatrix, ModelTag, ResponseMatrix, TargetMap};

pub const POOLING: &str = "pooled over all (condition, response) pairs";

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims("pearson inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first pearson argument"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second pearson argument"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn mae(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims("mae inputs", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::Invalid("mae needs at least one point".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitKind {
    RandomFold {
        train_fraction: f64,
        repetitions: usize,
        seed: u64,
    },
    Lodo {
        drug: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub n: usize,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    /// Checks partition soundness, and for LODO plans that the held-out drug
    /// appears in every test row and no training row.
    pub fn check(&self, d: Option<&ConditionMatrix>) -> Result<()> {
        for (k, split) in self.splits.iter().enumerate() {
            let mut seen = vec![0u8; self.n];
            for &i in split.train.iter().chain(&split.test) {
                if i >= self.n {
                    return Err(Error::Invalid(format!("split {k}: row {i} out of range")));
                }
                seen[i] += 1;
            }
            if let Some(i) = seen.iter().position(|&c| c != 1) {
                return Err(Error::Invalid(format!(
                    "split {k}: row {i} appears {} times across train and test",
                    seen[i]
                )));
            }
            if let (SplitKind::Lodo { drug }, Some(d)) = (self.kind, d) {
                let dose = |i: usize| d.values()[(i, drug)];
                if split.train.iter().any(|&i| dose(i) != 0.0)
                    || split.test.iter().any(|&i| dose(i) == 0.0)
                {
                    return Err(Error::Invalid(format!(
                        "LODO split for drug {drug} mixes treated and untreated rows"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `reps` independent splits with `floor(n * train_fraction)` training rows.
pub fn make_random_folds(
    n: usize,
    train_fraction: f64,
    reps: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    if reps == 0 {
        return Err(Error::Invalid("need at least one repetition".into()));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Invalid(format!(
            "degenerate split: {n_train} training rows out of {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = (0..reps)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan {
        kind: SplitKind::RandomFold {
            train_fraction,
            repetitions: reps,
            seed,
        },
        n,
        splits,
    })
}

/// One plan per drug: train on conditions without that drug, test on every
/// condition that uses it.
pub fn make_lodo_splits(d: &ConditionMatrix) -> Result<Vec<SplitPlan>> {
    let n = d.n_conditions();
    (0..d.n_drugs())
        .map(|drug| {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| d.values()[(i, drug)] == 0.0);
            if test.is_empty() {
                return Err(Error::Invalid(format!(
                    "drug `{}` is never applied; cannot hold it out",
                    d.drug_names()[drug]
                )));
            }
            Ok(SplitPlan {
                kind: SplitKind::Lodo { drug },
                n,
                splits: vec![Split { train, test }],
            })
        })
        .collect()
}

/// Something that can be trained on a subset of conditions and predict
/// others.
pub trait ModelFamily: Sync {
    fn tag(&self) -> ModelTag;

    /// Fits on the training rows and predicts `test_d`. `held_out` names the
    /// drug absent from training in a LODO split.
    fn fit_predict(
        &self,
        train_d: &ConditionMatrix,
        train_x: &ResponseMatrix,
        test_d: &ConditionMatrix,
        held_out: Option<usize>,
    ) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Default)]
pub struct RegressionFamily {
    pub cfg: FitConfig,
}

impl ModelFamily for RegressionFamily {
    fn tag(&self) -> ModelTag {
        ModelTag::Regression
    }

    fn fit_predict(
        &self,
        train_d: &ConditionMatrix,
        train_x: &ResponseMatrix,
        test_d: &ConditionMatrix,
        held_out: Option<usize>,
    ) -> Result<DMatrix<f64>> {
        let (r, _) = match held_out {
            Some(drug) => fit_regression_lodo(train_d, train_x, drug, &self.cfg)?,
            None => fit_regression(train_d, train_x, &self.cfg)?,
        };
        Ok(predict_regression(&r, test_d)?.predicted)
    }
}

#[derive(Debug, Clone)]
pub struct CausalLinearFamily {
    pub targets: TargetMap,
    pub cfg: FitConfig,
}

impl ModelFamily for CausalLinearFamily {
    fn tag(&self) -> ModelTag {
        ModelTag::CausalLinear
    }

    fn fit_predict(
        &self,
        train_d: &ConditionMatrix,
        train_x: &ResponseMatrix,
        test_d: &ConditionMatrix,
        _held_out: Option<usize>,
    ) -> Result<DMatrix<f64>> {
        let (w, _) = fit_causal_linear(train_d, train_x, &self.targets, &self.cfg)?;
        Ok(predict_causal_linear(&w, &self.targets, test_d)?.predicted)
    }
}

#[derive(Debug, Clone)]
pub struct CausalOdeFamily {
    pub template: OdeModel,
    pub cfg: FitConfig,
    pub steady: SteadyStateOptions,
}

impl ModelFamily for CausalOdeFamily {
    fn tag(&self) -> ModelTag {
        ModelTag::CausalOde
    }

    fn fit_predict(
        &self,
        train_d: &ConditionMatrix,
        train_x: &ResponseMatrix,
        test_d: &ConditionMatrix,
        _held_out: Option<usize>,
    ) -> Result<DMatrix<f64>> {
        let b = self.template.targets();
        let (model, _) = fit_causal_ode(train_d, train_x, b, &self.template, &self.cfg)?;
        Ok(predict_causal_ode(&model, test_d, &self.steady)?.predicted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub label: String,
    pub pearson_r: Option<f64>,
    pub mae: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMetric {
    pub response: String,
    pub pearson_r: Option<f64>,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: ModelTag,
    pub pearson_r: f64,
    pub mae: f64,
    pub n_points: usize,
    pub folds: Vec<FoldMetric>,
    pub per_response: Vec<ResponseMetric>,
    pub dropped_conditions: Vec<String>,
    pub pooling: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub condition: String,
    pub response: String,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub points: Vec<ScatterPoint>,
}

/// Running sum and count of predictions per (condition, response). Merging
/// is associative; callers that need bitwise reproducibility merge in a fixed
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionAccumulator {
    sum: DMatrix<f64>,
    count: Vec<usize>,
}

impl PredictionAccumulator {
    pub fn new(n: usize, p: usize) -> Self {
        Self {
            sum: DMatrix::zeros(n, p),
            count: vec![0; n],
        }
    }

    pub fn add(&mut self, rows: &[usize], predicted: &DMatrix<f64>) {
        for (k, &row) in rows.iter().enumerate() {
            let mut target = self.sum.row_mut(row);
            target += predicted.row(k);
            self.count[row] += 1;
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.sum += &other.sum;
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        self
    }

    pub fn count(&self, row: usize) -> usize {
        self.count[row]
    }

    /// Averaged prediction for a row, `None` if it was never in a test set.
    pub fn mean(&self, row: usize) -> Option<Vec<f64>> {
        let c = self.count[row];
        (c > 0).then(|| self.sum.row(row).iter().map(|v| v / c as f64).collect())
    }
}

fn check_data(d: &ConditionMatrix, x: &ResponseMatrix, plan: &SplitPlan) -> Result<()> {
    x.check_paired(d)?;
    if plan.n != d.n_conditions() {
        return Err(Error::dims("split plan size", d.n_conditions(), plan.n));
    }
    plan.check(Some(d))
}

fn fold_metric(label: String, obs: &[f64], pred: &[f64]) -> Result<FoldMetric> {
    Ok(FoldMetric {
        label,
        pearson_r: pearson(obs, pred).ok(),
        mae: mae(obs, pred)?,
        n_points: obs.len(),
    })
}

fn per_response(points: &[ScatterPoint], names: &[String]) -> Vec<ResponseMetric> {
    names
        .iter()
        .filter_map(|name| {
            let (obs, pred): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| &p.response == name)
                .map(|p| (p.observed, p.predicted))
                .unzip();
            let m = mae(&obs, &pred).ok()?;
            Some(ResponseMetric {
                response: name.clone(),
                pearson_r: pearson(&obs, &pred).ok(),
                mae: m,
            })
        })
        .collect()
}

fn condition_label(d: &ConditionMatrix, row: usize, labels: Option<&[String]>) -> String {
    let _ = d;
    labels
        .and_then(|l| l.get(row).cloned())
        .unwrap_or_else(|| format!("{}", row + 1))
}

/// Fits on every repetition's training rows, averages each condition's test
/// predictions across the repetitions it was tested in, and scores the
/// averages against the observations.
pub fn averaged_random_fold_eval(
    family: &dyn ModelFamily,
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    plan: &SplitPlan,
    condition_labels: Option<&[String]>,
) -> Result<Evaluation> {
    if !matches!(plan.kind, SplitKind::RandomFold { .. }) {
        return Err(Error::Invalid(
            "averaged evaluation needs a random-fold plan".into(),
        ));
    }
    check_data(d, x, plan)?;
    let (n, p) = (d.n_conditions(), x.n_responses());

    let per_rep: Vec<(DMatrix<f64>, FoldMetric)> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(k, split)| {
            let pred = family.fit_predict(
                &d.select_rows(&split.train),
                &x.select_rows(&split.train),
                &d.select_rows(&split.test),
                None,
            )?;
            let obs = x.values().select_rows(&split.test);
            let metric = fold_metric(
                format!("rep{}", k + 1),
                &obs.transpose().iter().copied().collect::<Vec<_>>(),
                &pred.transpose().iter().copied().collect::<Vec<_>>(),
            )?;
            Ok((pred, metric))
        })
        .collect::<Result<_>>()?;

    let mut acc = PredictionAccumulator::new(n, p);
    let mut folds = Vec::with_capacity(per_rep.len());
    for (split, (pred, metric)) in plan.splits.iter().zip(per_rep) {
        acc.add(&split.test, &pred);
        folds.push(metric);
    }

    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for row in 0..n {
        let label = condition_label(d, row, condition_labels);
        match acc.mean(row) {
            Some(mean) => {
                for (j, pred) in mean.into_iter().enumerate() {
                    points.push(ScatterPoint {
                        condition: label.clone(),
                        response: x.response_names()[j].clone(),
                        observed: x.values()[(row, j)],
                        predicted: pred,
                    });
                }
            }
            None => {
                log::warn!("condition {label} never appeared in a test set; dropped");
                dropped.push(label);
            }
        }
    }

    let obs: Vec<f64> = points.iter().map(|p| p.observed).collect();
    let pred: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let report = MetricReport {
        model: family.tag(),
        pearson_r: pearson(&obs, &pred)?,
        mae: mae(&obs, &pred)?,
        n_points: points.len(),
        folds,
        per_response: per_response(&points, x.response_names()),
        dropped_conditions: dropped,
        pooling: POOLING.to_string(),
    };
    Ok(Evaluation { report, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodoEvaluation {
    /// One report per held-out drug, in drug order.
    pub per_drug: Vec<(String, MetricReport)>,
    /// Unweighted mean of the per-drug correlations.
    pub mean_pearson: f64,
    pub mean_mae: f64,
    pub points: Vec<ScatterPoint>,
}

/// Scores each leave-one-drug-out plan separately.
pub fn lodo_eval(
    family: &dyn ModelFamily,
    d: &ConditionMatrix,
    x: &ResponseMatrix,
    plans: &[SplitPlan],
    condition_labels: Option<&[String]>,
) -> Result<LodoEvaluation> {
    if plans.is_empty() {
        return Err(Error::Invalid("no LODO plans".into()));
    }
    for plan in plans {
        if !matches!(plan.kind, SplitKind::Lodo { .. }) || plan.splits.len() != 1 {
            return Err(Error::Invalid(
                "lodo_eval needs single-split LODO plans".into(),
            ));
        }
        check_data(d, x, plan)?;
    }

    let results: Vec<(String, MetricReport, Vec<ScatterPoint>)> = plans
        .par_iter()
        .map(|plan| {
            let SplitKind::Lodo { drug } = plan.kind else {
                unreachable!("checked above")
            };
            let split = &plan.splits[0];
            let pred = family.fit_predict(
                &d.select_rows(&split.train),
                &x.select_rows(&split.train),
                &d.select_rows(&split.test),
                Some(drug),
            )?;
            let mut points = Vec::with_capacity(split.test.len() * x.n_responses());
            for (k, &row) in split.test.iter().enumerate() {
                let label = condition_label(d, row, condition_labels);
                for j in 0..x.n_responses() {
                    points.push(ScatterPoint {
                        condition: label.clone(),
                        response: x.response_names()[j].clone(),
                        observed: x.values()[(row, j)],
                        predicted: pred[(k, j)],
                    });
                }
            }
            let obs: Vec<f64> = points.iter().map(|p| p.observed).collect();
            let pr: Vec<f64> = points.iter().map(|p| p.predicted).collect();
            let drug_name = d.drug_names()[drug].clone();
            let report = MetricReport {
                model: family.tag(),
                pearson_r: pearson(&obs, &pr)?,
                mae: mae(&obs, &pr)?,
                n_points: points.len(),
                folds: vec![fold_metric(drug_name.clone(), &obs, &pr)?],
                per_response: per_response(&points, x.response_names()),
                dropped_conditions: Vec::new(),
                pooling: POOLING.to_string(),
            };
            Ok((drug_name, report, points))
        })
        .collect::<Result<_>>()?;

    let k = results.len() as f64;
    let mean_pearson = results.iter().map(|r| r.1.pearson_r).sum::<f64>() / k;
    let mean_mae = results.iter().map(|r| r.1.mae).sum::<f64>() / k;
    let mut per_drug = Vec::with_capacity(results.len());
    let mut points = Vec::new();
    for (name, report, pts) in results {
        per_drug.push((name, report));
        points.extend(pts);
    }
    Ok(LodoEvaluation {
        per_drug,
        mean_pearson,
        mean_mae,
        points,
    })
}
