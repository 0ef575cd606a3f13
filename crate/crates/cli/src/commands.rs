use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cellpred_core::estimators::{
    fit_causal_linear, fit_causal_ode, fit_regression, select_lambda_cv, FitConfig,
    DEFAULT_LAMBDA_GRID, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use cellpred_core::io::{
    load_mask, load_matrix_csv, load_targets, write_matrix_csv, write_scatter, LabeledMatrix,
    NetworkExport, RenameMap,
};
use cellpred_core::model::{predict_causal_linear, predict_regression};
use cellpred_core::ode::predict_causal_ode;
use cellpred_core::sim::{
    build_dag, build_design, build_targets, drug_names, response_names, run_lodo_all, run_scenario,
    simulate_responses, Scenario, SimSpec, DEFAULT_NOISE_SD, DISPLAY_THRESHOLD,
};
use cellpred_core::validation::{
    averaged_random_fold_eval, lodo_eval, make_lodo_splits, make_random_folds, CausalLinearFamily,
    CausalOdeFamily, MetricReport, ModelFamily, RegressionFamily,
};
use cellpred_core::{
    ConditionMatrix, Envelope, FitReport, InteractionForm, InteractionMatrix, ModelTag, OdeModel,
    RegressionCoefficients, ResponseMatrix, SteadyStateOptions, TargetMap,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Resolver;
use crate::{CvArgs, DataArgs, ExportArgs, FitArgs, FitOptions, PredictArgs, SimulateArgs};

/// A fit finished without meeting its convergence test. Outputs are still
/// written; the process exits with the non-convergence code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NotConverged(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelArg {
    Regression,
    CausalLinear,
    CausalOde,
}

impl FromStr for ModelArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SchemeArg {
    Rf,
    Lodo,
}

impl FromStr for SchemeArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FormArg {
    /// Rows are sources, columns targets, diagonal is decay.
    W,
    /// Rows are targets, columns sources, zero diagonal for a pure DAG.
    A,
}

impl FromStr for FormArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Value(f64),
    Auto,
}

impl FromStr for LambdaArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(Self::Value(v)),
            _ => Err(format!(
                "expected a nonnegative number or `auto`, got `{s}`"
            )),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    std::io::Write::write_all(&mut out, b"\n")?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_matrix(path: &Path, m: &LabeledMatrix, corner: &str) -> Result<()> {
    write_matrix_csv(path, m, corner)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn labeled(rows: &[String], cols: &[String], values: &DMatrix<f64>) -> Result<LabeledMatrix> {
    Ok(LabeledMatrix::new(
        rows.to_vec(),
        cols.to_vec(),
        values.clone(),
    )?)
}

struct Data {
    condition_labels: Vec<String>,
    d: ConditionMatrix,
    x: ResponseMatrix,
}

fn load_renames(path: Option<PathBuf>) -> Result<Option<RenameMap>> {
    path.map(|p| RenameMap::load(&p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn load_data(data: DataArgs, settings: &mut Resolver) -> Result<(Data, Option<PathBuf>)> {
    let cond_path = settings.path("conditions", data.conditions)?;
    let resp_path = settings.path("responses", data.responses)?;
    let targets = settings.optional("targets", data.targets)?;
    let renames = load_renames(settings.optional("renames", data.renames)?)?;

    let cond = load_matrix_csv(&cond_path, renames.as_ref())?;
    let mut resp = load_matrix_csv(&resp_path, renames.as_ref())?;
    if cond.values.nrows() != resp.values.nrows() {
        return Err(cellpred_core::Error::Dimension {
            context: "condition and response row counts",
            expected: format!("{} condition rows", cond.values.nrows()),
            found: format!("{} response rows", resp.values.nrows()),
        }
        .into());
    }
    let same_ids = {
        let mut a = cond.row_labels.clone();
        let mut b = resp.row_labels.clone();
        a.sort();
        b.sort();
        a == b
    };
    if same_ids {
        let values = resp.aligned(&cond.row_labels, &resp.column_labels.clone())?;
        resp = LabeledMatrix::new(cond.row_labels.clone(), resp.column_labels, values)?;
    } else {
        log::warn!("condition IDs differ between files; pairing rows by position");
    }
    let condition_labels = cond.row_labels.clone();
    let d = cond.into_conditions()?;
    let x = resp.into_responses()?;
    Ok((
        Data {
            condition_labels,
            d,
            x,
        },
        targets,
    ))
}

fn require_targets(path: Option<PathBuf>, data: &Data) -> Result<TargetMap> {
    let Some(path) = path else {
        bail!("causal models need a target map (--targets)");
    };
    Ok(load_targets(
        &path,
        data.x.response_names(),
        data.d.drug_names(),
    )?)
}

struct ResolvedFit {
    model: ModelArg,
    lambda: LambdaArg,
    cfg: FitConfig,
    envelope: Envelope,
    cv_folds: usize,
}

fn resolve_fit(
    opts: FitOptions,
    settings: &mut Resolver,
    responses: &[String],
) -> Result<ResolvedFit> {
    let model = settings.value("model", opts.model, ModelArg::Regression)?;
    let lambda = settings.value("lambda", opts.lambda, LambdaArg::Value(0.0))?;
    let max_iter = settings.value("max-iter", opts.max_iter, DEFAULT_MAX_ITER)?;
    let tol = settings.value("tol", opts.tol, DEFAULT_TOL)?;
    let envelope_text = settings.value("envelope", opts.envelope, "identity".to_string())?;
    let envelope = Envelope::from_str(&envelope_text)?;
    let mask = settings.optional("mask", opts.mask)?;
    let cv_folds = settings.value("cv-folds", opts.cv_folds, 5usize)?;
    let mut cfg = FitConfig {
        max_iter,
        tol,
        ..FitConfig::default()
    };
    if let LambdaArg::Value(v) = lambda {
        cfg.lambda = v;
    }
    if let Some(mask) = mask {
        cfg.mask = Some(load_mask(&mask, responses)?);
    }
    Ok(ResolvedFit {
        model,
        lambda,
        cfg,
        envelope,
        cv_folds,
    })
}

fn ode_template(b: &TargetMap, envelope: Envelope) -> Result<OdeModel> {
    let p = b.n_responses();
    Ok(OdeModel::new(
        InteractionMatrix::w_form(-DMatrix::<f64>::identity(p, p))?,
        DVector::from_element(p, 1.0),
        envelope,
        b.clone(),
    )?)
}

fn check_converged(report: &FitReport, what: &str) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(NotConverged(format!(
            "{what} did not converge within {} iterations (final objective {:.6e})",
            report.iterations, report.final_objective
        ))
        .into())
    }
}

pub fn simulate(args: SimulateArgs, settings: &mut Resolver, out: &Path) -> Result<()> {
    let seed = settings.value("seed", args.seed, 0u64)?;
    let noise_sd = settings.value("noise-sd", args.noise_sd, DEFAULT_NOISE_SD)?;
    settings.log_settings("simulate");
    let spec = SimSpec::new(noise_sd, seed)?;

    let d = build_design();
    let drugs = drug_names();
    let responses = response_names();
    let rows: Vec<String> = (1..=d.n_conditions()).map(|i| format!("C{i}")).collect();
    write_matrix(
        &out.join("conditions.csv"),
        &labeled(&rows, &drugs, d.values())?,
        "condition",
    )?;
    write_matrix(
        &out.join("responses.csv"),
        &labeled(&rows, &responses, simulate_responses(&spec).values())?,
        "condition",
    )?;
    for (name, misspecified) in [("targets.csv", false), ("targets_misspecified.csv", true)] {
        let b = build_targets(misspecified);
        write_matrix(
            &out.join(name),
            &labeled(&responses, &drugs, b.values())?,
            "response",
        )?;
    }
    write_matrix(
        &out.join("dag.csv"),
        &labeled(&responses, &responses, build_dag().values())?,
        "target",
    )?;

    if args.scenarios {
        #[derive(Serialize)]
        struct Scenarios {
            random_fold: cellpred_core::sim::ScenarioReport,
            random_fold_misspecified_b: cellpred_core::sim::ScenarioReport,
            lodo: cellpred_core::sim::LodoSummary,
        }
        let report = Scenarios {
            random_fold: run_scenario(Scenario::RandomFold, &spec)?,
            random_fold_misspecified_b: run_scenario(Scenario::RandomFoldMisspecifiedB, &spec)?,
            lodo: run_lodo_all(&spec)?,
        };
        log::info!(
            "random fold r: regression {:.4}, causal {:.4}; misspecified causal {:.4}; LODO mean r: regression {:.4}, causal {:.4}",
            report.random_fold.regression.test_pearson,
            report.random_fold.causal.test_pearson,
            report.random_fold_misspecified_b.causal.test_pearson,
            report.lodo.regression_mean_pearson,
            report.lodo.causal_mean_pearson,
        );
        write_json(&out.join("scenarios.json"), &report)?;
    }
    Ok(())
}

pub fn fit(args: FitArgs, settings: &mut Resolver, out: &Path) -> Result<()> {
    let (data, targets) = load_data(args.data, settings)?;
    let resolved = resolve_fit(args.fit, settings, data.x.response_names())?;
    let seed = settings.value("seed", args.seed, 0u64)?;
    settings.log_settings("fit");
    let responses = data.x.response_names().to_vec();
    let mut cfg = resolved.cfg;

    let report = match resolved.model {
        ModelArg::Regression => {
            if resolved.lambda == LambdaArg::Auto {
                bail!("`--lambda auto` is available for causal-linear only");
            }
            let (r, report) = fit_regression(&data.d, &data.x, &cfg)?;
            write_matrix(
                &out.join("coefficients.csv"),
                &labeled(data.d.drug_names(), &responses, r.values())?,
                "drug",
            )?;
            report
        }
        ModelArg::CausalLinear => {
            let b = require_targets(targets, &data)?;
            if resolved.lambda == LambdaArg::Auto {
                let sel = select_lambda_cv(
                    &data.d,
                    &data.x,
                    &b,
                    &cfg,
                    &DEFAULT_LAMBDA_GRID,
                    resolved.cv_folds,
                    seed,
                )?;
                log::info!("cross-validated lambda = {}", sel.lambda);
                write_json(&out.join("lambda_selection.json"), &sel)?;
                cfg.lambda = sel.lambda;
            }
            let (w, report) = fit_causal_linear(&data.d, &data.x, &b, &cfg)?;
            write_matrix(
                &out.join("interaction.csv"),
                &labeled(&responses, &responses, w.values())?,
                "source",
            )?;
            report
        }
        ModelArg::CausalOde => {
            if resolved.lambda == LambdaArg::Auto {
                bail!("`--lambda auto` is available for causal-linear only");
            }
            let b = require_targets(targets, &data)?;
            let template = ode_template(&b, resolved.envelope)?;
            let (model, report) = fit_causal_ode(&data.d, &data.x, &b, &template, &cfg)?;
            write_matrix(
                &out.join("interaction.csv"),
                &labeled(&responses, &responses, model.w().values())?,
                "source",
            )?;
            let eps = DMatrix::from_column_slice(responses.len(), 1, model.epsilon().as_slice());
            write_matrix(
                &out.join("epsilon.csv"),
                &labeled(&responses, &["epsilon".to_string()], &eps)?,
                "response",
            )?;
            report
        }
    };
    write_json(&out.join("fit_report.json"), &report)?;
    check_converged(&report, "fit")
}

pub fn predict(args: PredictArgs, settings: &mut Resolver, out: &Path) -> Result<()> {
    let model = settings.value("model", args.model, ModelArg::Regression)?;
    let params_path = settings.path("params", args.params)?;
    let cond_path = settings.path("conditions", args.conditions)?;
    let targets = settings.optional("targets", args.targets)?;
    let epsilon = settings.optional("epsilon", args.epsilon)?;
    let envelope_text = settings.value("envelope", args.envelope, "identity".to_string())?;
    let renames = load_renames(settings.optional("renames", args.renames)?)?;
    settings.log_settings("predict");

    let cond = load_matrix_csv(&cond_path, renames.as_ref())?;
    let params = load_matrix_csv(&params_path, renames.as_ref())?;
    let rows = cond.row_labels.clone();

    let (predicted, responses) = match model {
        ModelArg::Regression => {
            let drugs = params.row_labels.clone();
            let d = ConditionMatrix::new(cond.aligned(&rows, &drugs)?, drugs)?;
            let r = RegressionCoefficients::new(params.values.clone())?;
            (predict_regression(&r, &d)?.predicted, params.column_labels)
        }
        ModelArg::CausalLinear | ModelArg::CausalOde => {
            let responses = params.column_labels.clone();
            if params.row_labels != responses {
                bail!("interaction matrix row and column labels must match");
            }
            let Some(targets) = targets else {
                bail!("causal models need a target map (--targets)");
            };
            let d = cond.into_conditions()?;
            let b = load_targets(&targets, &responses, d.drug_names())?;
            let w = InteractionMatrix::w_form(params.values)?;
            let predicted = if model == ModelArg::CausalLinear {
                predict_causal_linear(&w, &b, &d)?.predicted
            } else {
                let eps = match epsilon {
                    Some(path) => {
                        let m = load_matrix_csv(&path, renames.as_ref())?;
                        DVector::from_column_slice(
                            m.aligned(&responses, &["epsilon".to_string()])?.as_slice(),
                        )
                    }
                    None => DVector::from_element(responses.len(), 1.0),
                };
                let ode = OdeModel::new(w, eps, Envelope::from_str(&envelope_text)?, b)?;
                predict_causal_ode(&ode, &d, &SteadyStateOptions::default())?.predicted
            };
            (predicted, responses)
        }
    };
    write_matrix(
        &out.join("predictions.csv"),
        &labeled(&rows, &responses, &predicted)?,
        "condition",
    )
}

#[derive(Serialize)]
struct DrugMetric<'a> {
    drug: &'a str,
    report: &'a MetricReport,
}

#[derive(Serialize)]
struct LodoReport<'a> {
    model: ModelTag,
    scheme: &'static str,
    mean_pearson_r: f64,
    mean_mae: f64,
    per_drug: Vec<DrugMetric<'a>>,
}

#[derive(Serialize)]
struct RfReport<'a> {
    scheme: &'static str,
    repetitions: usize,
    train_fraction: f64,
    seed: u64,
    #[serde(flatten)]
    report: &'a MetricReport,
}

pub fn cv(args: CvArgs, settings: &mut Resolver, out: &Path) -> Result<()> {
    let (data, targets) = load_data(args.data, settings)?;
    let resolved = resolve_fit(args.fit, settings, data.x.response_names())?;
    let scheme = settings.value("scheme", args.scheme, SchemeArg::Rf)?;
    let reps = settings.value("reps", args.reps, 1000usize)?;
    let frac = settings.value("train-fraction", args.train_fraction, 0.7)?;
    let seed = settings.value("seed", args.seed, 0u64)?;
    settings.log_settings("cv");
    if resolved.lambda == LambdaArg::Auto {
        bail!("`cv` needs a fixed lambda; choose one with `fit --lambda auto` first");
    }

    let family: Box<dyn ModelFamily> = match resolved.model {
        ModelArg::Regression => Box::new(RegressionFamily {
            cfg: resolved.cfg.clone(),
        }),
        ModelArg::CausalLinear => Box::new(CausalLinearFamily {
            targets: require_targets(targets, &data)?,
            cfg: resolved.cfg.clone(),
        }),
        ModelArg::CausalOde => {
            let b = require_targets(targets, &data)?;
            Box::new(CausalOdeFamily {
                template: ode_template(&b, resolved.envelope)?,
                cfg: resolved.cfg.clone(),
                steady: SteadyStateOptions::default(),
            })
        }
    };
    let labels = Some(data.condition_labels.as_slice());

    let points = match scheme {
        SchemeArg::Rf => {
            let plan = make_random_folds(data.d.n_conditions(), frac, reps, seed)?;
            let eval = averaged_random_fold_eval(family.as_ref(), &data.d, &data.x, &plan, labels)?;
            log::info!(
                "random fold ({reps} reps): r = {:.4}, MAE = {:.4}",
                eval.report.pearson_r,
                eval.report.mae
            );
            write_json(
                &out.join("metrics.json"),
                &RfReport {
                    scheme: "rf",
                    repetitions: reps,
                    train_fraction: frac,
                    seed,
                    report: &eval.report,
                },
            )?;
            eval.points
        }
        SchemeArg::Lodo => {
            let plans = make_lodo_splits(&data.d)?;
            let eval = lodo_eval(family.as_ref(), &data.d, &data.x, &plans, labels)?;
            log::info!(
                "leave-one-drug-out: mean r = {:.4}, mean MAE = {:.4}",
                eval.mean_pearson,
                eval.mean_mae
            );
            let report = LodoReport {
                model: family.tag(),
                scheme: "lodo",
                mean_pearson_r: eval.mean_pearson,
                mean_mae: eval.mean_mae,
                per_drug: eval
                    .per_drug
                    .iter()
                    .map(|(drug, report)| DrugMetric { drug, report })
                    .collect(),
            };
            write_json(&out.join("metrics.json"), &report)?;
            eval.points
        }
    };
    let path = out.join("scatter.csv");
    write_scatter(BufWriter::new(File::create(&path)?), &points)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn export_network(args: ExportArgs, settings: &mut Resolver, out: &Path) -> Result<()> {
    let path = settings.path("interaction", args.interaction)?;
    let form = settings.value("form", args.form, FormArg::W)?;
    let threshold = settings.value("threshold", args.threshold, DISPLAY_THRESHOLD)?;
    settings.log_settings("export-network");

    let m = load_matrix_csv(&path, None)?;
    if m.row_labels != m.column_labels {
        bail!("interaction matrix row and column labels must match");
    }
    let form = match form {
        FormArg::W => InteractionForm::W,
        FormArg::A => InteractionForm::A,
    };
    let interaction = InteractionMatrix::new(m.values, form)?;
    let net = NetworkExport::from_interaction(&interaction, &m.column_labels, threshold)?;
    let csv_path = out.join("network.csv");
    net.write_csv(BufWriter::new(File::create(&csv_path)?))?;
    log::info!("wrote {} ({} edges)", csv_path.display(), net.edges.len());
    let dot_path = out.join("network.dot");
    std::fs::write(&dot_path, net.to_dot())?;
    log::info!("wrote {}", dot_path.display());
    Ok(())
}
