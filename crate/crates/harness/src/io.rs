//! CSV ingestion and result output.
//!
//! Input CSVs need a header row and numeric cells only; `y` files have exactly one
//! column. Missing or non-numeric cells are hard errors.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use ppsi_core::inference::InferenceResult;
use ppsi_core::pqp::SolutionPath;
use ppsi_core::problems::ProblemSpec;

use crate::error::{HarnessError, Result};
use crate::experiments::ResultRow;

pub const JSON_SCHEMA: u32 = 1;

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a numeric CSV with a header row into a row-major matrix.
pub fn parse_matrix_csv(reader: impl Read, name: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let bad = |msg: String| HarnessError::Input(format!("{name}: {msg}"));
    let width = rdr.headers().map_err(|e| bad(e.to_string()))?.len();
    if width == 0 {
        return Err(bad("missing header row".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != width {
            return Err(bad(format!(
                "row {} has {} fields, expected {width}",
                i + 2,
                record.len()
            )));
        }
        for (k, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(bad(format!(
                    "row {}, column {}: missing value",
                    i + 2,
                    k + 1
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                bad(format!(
                    "row {}, column {}: '{cell}' is not a number",
                    i + 2,
                    k + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(bad(format!(
                    "row {}, column {}: non-finite value",
                    i + 2,
                    k + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(bad("no data rows".into()));
    }
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

pub fn parse_vector_csv(reader: impl Read, name: &str) -> Result<DVector<f64>> {
    let m = parse_matrix_csv(reader, name)?;
    if m.ncols() != 1 {
        return Err(HarnessError::Input(format!(
            "{name}: expected a single column, found {}",
            m.ncols()
        )));
    }
    Ok(m.column(0).into_owned())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(open(path)?, &path.display().to_string())
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    parse_vector_csv(open(path)?, &path.display().to_string())
}

/// `key=value` pairs joined by `;`.
fn format_meta(meta: &std::collections::BTreeMap<String, String>) -> String {
    meta.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_results_csv(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| HarnessError::input(e.to_string());
    w.write_record(["method", "metric", "x", "value", "stderr", "meta"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.metric.clone(),
            r.x.to_string(),
            r.value.to_string(),
            r.stderr.to_string(),
            format_meta(&r.meta),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::input(e.to_string()))?;
    Ok(())
}

/// Reads rows written by [`write_results_csv`].
pub fn parse_results_csv(reader: impl Read) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let bad = |m: String| HarnessError::Input(format!("results: {m}"));
    let mut rows = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(|e| bad(e.to_string()))?;
        if r.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", r.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("'{s}' is not a number")))
        };
        let meta = r[5]
            .split(';')
            .filter(|kv| !kv.is_empty())
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        rows.push(ResultRow {
            method: r[0].to_string(),
            metric: r[1].to_string(),
            x: num(&r[2])?,
            value: num(&r[3])?,
            stderr: num(&r[4])?,
            meta,
        });
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct JsonResult {
    pub j: usize,
    pub selective_p: f64,
    pub naive_p: f64,
    /// `null` when the bound is unbounded.
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_segments: usize,
    pub z_obs: f64,
    pub var: f64,
    pub significant: bool,
    pub region: Vec<[Option<f64>; 2]>,
}

#[derive(Debug, Serialize)]
pub struct JsonReport {
    pub schema: u32,
    pub problem: String,
    pub method: String,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_selected: Option<f64>,
    pub results: Vec<JsonResult>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl JsonResult {
    pub fn from_result(r: &InferenceResult) -> Self {
        JsonResult {
            j: r.j,
            selective_p: r.selective_p,
            naive_p: r.naive_p,
            ci_lo: finite(r.ci.0),
            ci_hi: finite(r.ci.1),
            n_segments: r.n_segments,
            z_obs: r.z_obs,
            var: r.var,
            significant: r.significant,
            region: r
                .region
                .intervals()
                .iter()
                .map(|&(a, b)| [finite(a), finite(b)])
                .collect(),
        }
    }
}

pub fn to_json(report: &JsonReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// One row per path segment: its range and the active set at its midpoint.
pub fn write_path_csv(path: &SolutionPath, spec: &ProblemSpec, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| HarnessError::input(e.to_string());
    w.write_record([
        "segment",
        "z_lo",
        "z_hi",
        "active_set",
        "active_constraints",
    ])
    .map_err(io)?;
    for (k, seg) in path.segments.iter().enumerate() {
        let active = ppsi_core::inference::segment_active_set(spec, seg);
        let join = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        w.write_record([
            k.to_string(),
            seg.z_lo.to_string(),
            seg.z_hi.to_string(),
            join(&active.indices),
            join(&seg.active),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::input(e.to_string()))?;
    Ok(())
}

/// A segment row read back from [`write_path_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub z_lo: f64,
    pub z_hi: f64,
    pub active_set: Vec<usize>,
    pub active_constraints: Vec<usize>,
}

pub fn parse_path_csv(reader: impl Read) -> Result<Vec<PathRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let bad = |m: String| HarnessError::Input(format!("path: {m}"));
    let list = |s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("'{t}' is not an index"))))
            .collect()
    };
    let mut rows = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(|e| bad(e.to_string()))?;
        if r.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", r.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("'{s}' is not a number")))
        };
        rows.push(PathRow {
            z_lo: num(&r[1])?,
            z_hi: num(&r[2])?,
            active_set: list(&r[3])?,
            active_constraints: list(&r[4])?,
        });
    }
    Ok(rows)
}

/// Interior segment boundaries of parsed path rows.
pub fn breakpoints(rows: &[PathRow]) -> Vec<f64> {
    rows.iter().skip(1).map(|r| r.z_lo).collect()
}
