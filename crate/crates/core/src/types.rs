//! Domain types shared by every model family.
//!
//! Orientation conventions:
//!
//! * [`ConditionMatrix`] is `n x q` (conditions by drugs), [`ResponseMatrix`] is
//!   `n x p` (conditions by responses).
//! * [`TargetMap`] is `p x q`; entry `(i, j)` is the direct effect of one unit of
//!   drug `j` on response `i`.
//! * An A-form [`InteractionMatrix`] is target-row: `A[(i, j)]` is the causal
//!   effect of response `j` on response `i`, so a condition with dose vector `d`
//!   settles at `(I - A)^-1 B d`.
//! * A W-form [`InteractionMatrix`] is the transposed, decay-shifted form
//!   `W = (A - I)^T`: `W[(i, j)]` for `i != j` is the effect of response `i` on
//!   response `j`, and `W[(i, i)]` is the (negative) decay rate of response `i`.
//!   A condition settles at `-W^-T B d`, or in row form `d^T B^T (-W^-1)`.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::Invalid(format!("duplicate {what} name `{name}`")));
        }
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::Invalid(format!(
            "{what} has a non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Nonnegative drug doses, one row per experimental condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMatrix {
    values: DMatrix<f64>,
    drug_names: Vec<String>,
}

impl ConditionMatrix {
    pub fn new(values: DMatrix<f64>, drug_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Invalid(
                "condition matrix needs at least one row and one drug".into(),
            ));
        }
        if drug_names.len() != values.ncols() {
            return Err(Error::dims("drug names", values.ncols(), drug_names.len()));
        }
        check_finite(&values, "condition matrix")?;
        if let Some(pos) = values.iter().position(|&v| v < 0.0) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Invalid(format!(
                "negative dose {} at condition {r}, drug `{}`",
                values[(r, c)],
                drug_names[c]
            )));
        }
        check_unique(&drug_names, "drug")?;
        Ok(Self { values, drug_names })
    }

    /// Builds a condition matrix with generated drug names `drug1..drugq`.
    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names("drug", values.ncols());
        Self::new(values, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn drug_names(&self) -> &[String] {
        &self.drug_names
    }

    pub fn n_conditions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_drugs(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            drug_names: self.drug_names.clone(),
        }
    }

    pub fn drug_index(&self, name: &str) -> Option<usize> {
        self.drug_names.iter().position(|n| n == name)
    }
}

/// Measured responses (log-normalized change), one row per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
    response_names: Vec<String>,
}

impl ResponseMatrix {
    pub fn new(values: DMatrix<f64>, response_names: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Invalid("response matrix has no columns".into()));
        }
        if response_names.len() != values.ncols() {
            return Err(Error::dims(
                "response names",
                values.ncols(),
                response_names.len(),
            ));
        }
        check_finite(&values, "response matrix")?;
        check_unique(&response_names, "response")?;
        Ok(Self {
            values,
            response_names,
        })
    }

    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names("x", values.ncols());
        Self::new(values, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn n_conditions(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_responses(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            response_names: self.response_names.clone(),
        }
    }

    /// Checks that this matrix pairs row-for-row with `d`.
    pub fn check_paired(&self, d: &ConditionMatrix) -> Result<()> {
        if self.n_conditions() != d.n_conditions() {
            return Err(Error::dims(
                "condition/response row counts",
                format!("{} condition rows", d.n_conditions()),
                format!("{} response rows", self.n_conditions()),
            ));
        }
        Ok(())
    }
}

/// Known direct drug effects, `p x q` (response by drug).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    values: DMatrix<f64>,
}

impl TargetMap {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_finite(&values, "target map")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_responses(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_drugs(&self) -> usize {
        self.values.ncols()
    }

    pub(crate) fn check_compatible(&self, d: &ConditionMatrix) -> Result<()> {
        if self.n_drugs() != d.n_drugs() {
            return Err(Error::dims(
                "target map drug count",
                d.n_drugs(),
                self.n_drugs(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionForm {
    /// ODE parameterization, `W = (A - I)^T`.
    W,
    /// Structural-equation parameterization, `A = I + W^T`.
    A,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    values: DMatrix<f64>,
    form: InteractionForm,
}

impl InteractionMatrix {
    pub fn new(values: DMatrix<f64>, form: InteractionForm) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::dims(
                "interaction matrix",
                "square matrix",
                format!("{}x{}", values.nrows(), values.ncols()),
            ));
        }
        check_finite(&values, "interaction matrix")?;
        Ok(Self { values, form })
    }

    pub fn w_form(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, InteractionForm::W)
    }

    pub fn a_form(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, InteractionForm::A)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn form(&self) -> InteractionForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// True when the support (ignoring the diagonal) has no directed cycle.
    /// Only meaningful for the A-form, where a zero diagonal plus an acyclic
    /// support describes a DAG.
    pub fn is_acyclic(&self) -> bool {
        let p = self.dim();
        // Kahn's algorithm on edges j -> i for A[(i, j)] != 0, i != j.
        let mut indegree = vec![0usize; p];
        for (i, deg) in indegree.iter_mut().enumerate() {
            *deg = (0..p)
                .filter(|&j| j != i && self.values[(i, j)] != 0.0)
                .count();
        }
        let mut queue: Vec<usize> = (0..p).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(j) = queue.pop() {
            visited += 1;
            for (i, deg) in indegree.iter_mut().enumerate() {
                if i != j && self.values[(i, j)] != 0.0 {
                    *deg -= 1;
                    if *deg == 0 {
                        queue.push(i);
                    }
                }
            }
        }
        visited == p
    }
}

/// Regression coefficients `R`, `q x p`; `R[(i, j)]` is the total effect of
/// drug `i` on response `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCoefficients {
    values: DMatrix<f64>,
}

impl RegressionCoefficients {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_finite(&values, "regression coefficients")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Which interaction parameters are free during a causal fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    allowed: DMatrix<bool>,
}

impl EdgeMask {
    /// Builds a mask; diagonal entries are always forced to allowed.
    pub fn new(mut allowed: DMatrix<bool>) -> Result<Self> {
        if !allowed.is_square() {
            return Err(Error::dims(
                "edge mask",
                "square matrix",
                format!("{}x{}", allowed.nrows(), allowed.ncols()),
            ));
        }
        for i in 0..allowed.nrows() {
            allowed[(i, i)] = true;
        }
        Ok(Self { allowed })
    }

    pub fn all_allowed(p: usize) -> Self {
        Self {
            allowed: DMatrix::from_element(p, p, true),
        }
    }

    pub fn allowed(&self) -> &DMatrix<bool> {
        &self.allowed
    }

    pub fn dim(&self) -> usize {
        self.allowed.nrows()
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[(i, j)]
    }

    /// Zeroes every forbidden entry of `w` in place.
    pub fn apply(&self, w: &mut DMatrix<f64>) {
        for (v, &ok) in w.iter_mut().zip(self.allowed.iter()) {
            if !ok {
                *v = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Regression,
    CausalLinear,
    CausalOde,
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::Regression => "regression",
            ModelTag::CausalLinear => "causal-linear",
            ModelTag::CausalOde => "causal-ode",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub predicted: DMatrix<f64>,
    pub model_tag: ModelTag,
}

impl PredictionResult {
    pub(crate) fn new(predicted: DMatrix<f64>, model_tag: ModelTag) -> Result<Self> {
        check_finite(&predicted, "prediction")?;
        Ok(Self {
            predicted,
            model_tag,
        })
    }
}
