//! Delimited-text matrices, network export, and scatter output.
//!
//! Matrix files have a header row whose first cell labels the row-ID column,
//! followed by one column per variable. Numbers are parsed with a period as
//! the decimal separator regardless of locale.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::w_to_dag;
use crate::types::{
    ConditionMatrix, EdgeMask, InteractionForm, InteractionMatrix, ResponseMatrix, TargetMap,
};
use crate::validation::ScatterPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn new(
        row_labels: Vec<String>,
        column_labels: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if row_labels.len() != values.nrows() {
            return Err(Error::dims("row labels", values.nrows(), row_labels.len()));
        }
        if column_labels.len() != values.ncols() {
            return Err(Error::dims(
                "column labels",
                values.ncols(),
                column_labels.len(),
            ));
        }
        Ok(Self {
            row_labels,
            column_labels,
            values,
        })
    }

    /// Rows labelled 1..n.
    pub fn with_index_rows(column_labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let rows = (1..=values.nrows()).map(|i| i.to_string()).collect();
        Self::new(rows, column_labels, values)
    }

    pub fn into_conditions(self) -> Result<ConditionMatrix> {
        ConditionMatrix::new(self.values, self.column_labels)
    }

    pub fn into_responses(self) -> Result<ResponseMatrix> {
        ResponseMatrix::new(self.values, self.column_labels)
    }

    /// Reorders rows and columns to match the given names exactly.
    pub fn aligned(&self, rows: &[String], columns: &[String]) -> Result<DMatrix<f64>> {
        let find = |labels: &[String], name: &str, axis: &str| {
            labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Invalid(format!("{axis} `{name}` not found in file")))
        };
        let ri = rows
            .iter()
            .map(|r| find(&self.row_labels, r, "row"))
            .collect::<Result<Vec<_>>>()?;
        let ci = columns
            .iter()
            .map(|c| find(&self.column_labels, c, "column"))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(rows.len(), columns.len(), |i, j| {
            self.values[(ri[i], ci[j])]
        }))
    }
}

/// Old-name to new-name mapping applied to headers and row labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenameMap(HashMap<String, String>);

impl RenameMap {
    /// Reads a two-column CSV (`from,to`) with a header row.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut map = HashMap::new();
        for (k, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::Parse {
                    source_name: path.display().to_string(),
                    row: k + 2,
                    column: record.len(),
                    message: "rename file rows need exactly two fields".into(),
                });
            }
            map.insert(record[0].to_string(), record[1].to_string());
        }
        Ok(Self(map))
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn apply(&self, name: &str) -> String {
        self.0
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    }
}

fn check_unique(labels: &[String], source: &str, header: bool) -> Result<()> {
    let mut seen = HashSet::new();
    for (k, label) in labels.iter().enumerate() {
        if !seen.insert(label) {
            let (row, column) = if header { (1, k + 2) } else { (k + 2, 1) };
            return Err(Error::Parse {
                source_name: source.to_string(),
                row,
                column,
                message: format!("duplicate label `{label}`"),
            });
        }
    }
    Ok(())
}

/// Parses a matrix table. Row and column positions in errors are 1-based and
/// count the header row and label column.
pub fn parse_matrix_csv<R: Read>(
    input: R,
    source_name: &str,
    renames: Option<&RenameMap>,
) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();
    let parse_err = |row, column, message: String| Error::Parse {
        source_name: source_name.to_string(),
        row,
        column,
        message,
    };

    let header = records
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty file".into()))??;
    if header.len() < 2 {
        return Err(parse_err(
            1,
            header.len().max(1),
            "header needs a label column and at least one value column".into(),
        ));
    }
    let rename = |s: &str| renames.map_or_else(|| s.to_string(), |m| m.apply(s));
    let column_labels: Vec<String> = header.iter().skip(1).map(rename).collect();
    check_unique(&column_labels, source_name, true)?;
    let width = header.len();

    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for (k, record) in records.enumerate() {
        let record = record?;
        let row = k + 2;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(parse_err(
                row,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        row_labels.push(rename(&record[0]));
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("`{cell}` is not a number")))?;
            data.push(v);
        }
    }
    if row_labels.is_empty() {
        return Err(parse_err(2, 1, "no data rows".into()));
    }
    check_unique(&row_labels, source_name, false)?;
    let values = DMatrix::from_row_slice(row_labels.len(), width - 1, &data);
    LabeledMatrix::new(row_labels, column_labels, values)
}

pub fn load_matrix_csv(path: &Path, renames: Option<&RenameMap>) -> Result<LabeledMatrix> {
    let file = std::fs::File::open(path)?;
    parse_matrix_csv(file, &path.display().to_string(), renames)
}

/// Scientific notation with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_matrix<W: Write>(out: W, m: &LabeledMatrix, corner: &str) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![corner.to_string()];
    header.extend(m.column_labels.iter().cloned());
    writer.write_record(&header)?;
    for (i, label) in m.row_labels.iter().enumerate() {
        let mut record = vec![label.clone()];
        record.extend(m.values.row(i).iter().map(|v| format_value(*v)));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_matrix_csv(path: &Path, m: &LabeledMatrix, corner: &str) -> Result<()> {
    write_matrix(std::fs::File::create(path)?, m, corner)
}

/// Loads a target map whose rows are responses and columns are drugs,
/// reordered to the given names.
pub fn load_targets(path: &Path, responses: &[String], drugs: &[String]) -> Result<TargetMap> {
    let m = load_matrix_csv(path, None)?;
    TargetMap::new(m.aligned(responses, drugs)?)
}

/// Loads an edge mask: rows are sources, columns are targets, nonzero means
/// allowed.
pub fn load_mask(path: &Path, responses: &[String]) -> Result<EdgeMask> {
    let m = load_matrix_csv(path, None)?;
    let v = m.aligned(responses, responses)?;
    EdgeMask::new(v.map(|x| x != 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkExport {
    pub edges: Vec<Edge>,
    pub threshold: f64,
}

impl NetworkExport {
    /// Direct effects with magnitude at least `threshold`, excluding
    /// self-loops. Entry `A[i, j]` is the edge `j -> i`.
    pub fn from_interaction(
        m: &InteractionMatrix,
        names: &[String],
        threshold: f64,
    ) -> Result<Self> {
        if names.len() != m.dim() {
            return Err(Error::dims("network node names", m.dim(), names.len()));
        }
        if !(threshold >= 0.0) {
            return Err(Error::Invalid(format!(
                "threshold must be nonnegative, got {threshold}"
            )));
        }
        let a = match m.form() {
            InteractionForm::A => m.clone(),
            InteractionForm::W => w_to_dag(m)?,
        };
        let a = a.values();
        let mut edges = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if i != j && a[(i, j)].abs() >= threshold && a[(i, j)] != 0.0 {
                    edges.push(Edge {
                        source: names[j].clone(),
                        target: names[i].clone(),
                        weight: a[(i, j)],
                    });
                }
            }
        }
        Ok(Self { edges, threshold })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["source", "target", "weight"])?;
        for e in &self.edges {
            writer.write_record([
                e.source.as_str(),
                e.target.as_str(),
                &format_value(e.weight),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Graphviz digraph; pen width scales with |weight|, negative edges are
    /// drawn dashed.
    pub fn to_dot(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut out = String::from("digraph network {\n");
        let mut nodes: Vec<&str> = Vec::new();
        for e in &self.edges {
            for n in [e.source.as_str(), e.target.as_str()] {
                if !nodes.contains(&n) {
                    nodes.push(n);
                }
            }
        }
        for n in nodes {
            let _ = writeln!(out, "  {};", quote(n));
        }
        for e in &self.edges {
            let style = if e.weight < 0.0 { ", style=dashed" } else { "" };
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{:.3}\", penwidth={:.3}{style}];",
                quote(&e.source),
                quote(&e.target),
                e.weight,
                e.weight.abs()
            );
        }
        out.push_str("}\n");
        out
    }
}

pub fn write_scatter<W: Write>(out: W, points: &[ScatterPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["condition", "response", "observed", "predicted"])?;
    for p in points {
        writer.write_record([
            p.condition.as_str(),
            p.response.as_str(),
            &format_value(p.observed),
            &format_value(p.predicted),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
