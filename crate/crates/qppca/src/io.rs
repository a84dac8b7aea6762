//! Panel ingestion, run configuration and artifact serialization.
//!
//! Data travels as CSV with header rows; manifests and Monte Carlo
//! aggregates as JSON. Missing or non-numeric cells are rejected with their
//! location rather than imputed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::simulate::{
    DgpSpec, ErrorDistribution, EstimatorKind, FactorProcess, LoadingFunction, MetricsReport,
};

/// Load a panel from two CSV files.
///
/// `returns_csv`: first column is the unit id, remaining columns are one per
/// period (header row carries the period labels).
/// `characteristics_csv`: unit id column followed by one named column per
/// characteristic. Unit ids must match one-to-one; the characteristics file
/// fixes the row order.
pub fn load_panel(returns_csv: &Path, characteristics_csv: &Path) -> Result<PanelData> {
    let chars = read_csv_table(characteristics_csv)?;
    let returns = read_csv_table(returns_csv)?;

    if chars.column_names.is_empty() {
        return Err(Error::Data {
            path: characteristics_csv.display().to_string(),
            row: 0,
            column: "-".into(),
            message: "characteristics file needs at least one characteristic column".into(),
        });
    }
    if returns.column_names.is_empty() {
        return Err(Error::Data {
            path: returns_csv.display().to_string(),
            row: 0,
            column: "-".into(),
            message: "returns file needs at least one period column".into(),
        });
    }

    let mut returns_index: HashMap<&str, usize> = HashMap::new();
    for (i, id) in returns.row_ids.iter().enumerate() {
        if returns_index.insert(id.as_str(), i).is_some() {
            return Err(Error::Data {
                path: returns_csv.display().to_string(),
                row: i + 2,
                column: "unit id".into(),
                message: format!("duplicate unit id '{id}'"),
            });
        }
    }
    let mut seen = vec![false; returns.row_ids.len()];
    let n = chars.row_ids.len();
    let t = returns.column_names.len();
    let d = chars.column_names.len();

    let mut y = DMatrix::zeros(n, t);
    let mut x = DMatrix::zeros(n, d);
    let mut chars_seen = std::collections::HashSet::new();
    for (i, id) in chars.row_ids.iter().enumerate() {
        if !chars_seen.insert(id.as_str()) {
            return Err(Error::Data {
                path: characteristics_csv.display().to_string(),
                row: i + 2,
                column: "unit id".into(),
                message: format!("duplicate unit id '{id}'"),
            });
        }
        let &ri = returns_index.get(id.as_str()).ok_or_else(|| Error::Data {
            path: returns_csv.display().to_string(),
            row: 0,
            column: "unit id".into(),
            message: format!("unit '{id}' has characteristics but no returns"),
        })?;
        seen[ri] = true;
        for tt in 0..t {
            y[(i, tt)] = returns.values[ri][tt];
        }
        for dd in 0..d {
            x[(i, dd)] = chars.values[i][dd];
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Data {
            path: characteristics_csv.display().to_string(),
            row: 0,
            column: "unit id".into(),
            message: format!(
                "unit '{}' has returns but no characteristics",
                returns.row_ids[missing]
            ),
        });
    }

    PanelData::with_labels(y, x, chars.row_ids, returns.column_names)
}

/// Write a panel back out in the same two-file layout accepted by
/// [`load_panel`].
pub fn save_panel(panel: &PanelData, returns_csv: &Path, characteristics_csv: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(returns_csv)?;
    let mut header = vec!["unit_id".to_string()];
    header.extend(panel.time_ids.iter().cloned());
    w.write_record(&header)?;
    for i in 0..panel.num_units() {
        let mut rec = vec![panel.unit_ids[i].clone()];
        for t in 0..panel.num_periods() {
            rec.push(format_float(panel.y[(i, t)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(characteristics_csv)?;
    let mut header = vec!["unit_id".to_string()];
    header.extend((0..panel.num_characteristics()).map(|d| format!("x{d}")));
    w.write_record(&header)?;
    for i in 0..panel.num_units() {
        let mut rec = vec![panel.unit_ids[i].clone()];
        for d in 0..panel.num_characteristics() {
            rec.push(format_float(panel.x[(i, d)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal representation.
fn format_float(v: f64) -> String {
    format!("{v}")
}

struct CsvTable {
    row_ids: Vec<String>,
    column_names: Vec<String>,
    values: Vec<Vec<f64>>,
}

fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Data {
            path: path.display().to_string(),
            row: 1,
            column: "-".into(),
            message: "need a unit id column plus at least one data column".into(),
        });
    }
    let column_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (ri, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = ri + 2; // header is row 1
        if record.len() != headers.len() {
            return Err(Error::Data {
                path: path.display().to_string(),
                row: row_no,
                column: "-".into(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Data {
                path: path.display().to_string(),
                row: row_no,
                column: headers.get(0).unwrap_or("unit id").to_string(),
                message: "empty unit id".into(),
            });
        }
        let mut row = Vec::with_capacity(column_names.len());
        for (ci, field) in record.iter().skip(1).enumerate() {
            if field.is_empty() {
                return Err(Error::Data {
                    path: path.display().to_string(),
                    row: row_no,
                    column: column_names[ci].clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = field.parse().map_err(|_| Error::Data {
                path: path.display().to_string(),
                row: row_no,
                column: column_names[ci].clone(),
                message: format!("non-numeric cell '{field}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    path: path.display().to_string(),
                    row: row_no,
                    column: column_names[ci].clone(),
                    message: format!("non-finite value '{field}'"),
                });
            }
            row.push(v);
        }
        row_ids.push(id);
        values.push(row);
    }
    if row_ids.is_empty() {
        return Err(Error::Data {
            path: path.display().to_string(),
            row: 2,
            column: "-".into(),
            message: "file has no data rows".into(),
        });
    }
    Ok(CsvTable {
        row_ids,
        column_names,
        values,
    })
}

/// Simulation section of the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub num_characteristics: usize,
    pub r_loc: usize,
    pub include_scale_factor: bool,
    /// normal | student_t3 | cauchy
    pub error_dist: String,
    /// iid | ar1
    pub factor_process: String,
    pub ar_coefficient: f64,
    pub noise_scale: f64,
    pub n_reps: usize,
    pub parallel: bool,
    /// Optional explicit loading functions; defaults derived from `r_loc`.
    pub loading_functions: Option<Vec<LoadingFunction>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            t: 10,
            num_characteristics: 2,
            r_loc: 2,
            include_scale_factor: false,
            error_dist: "normal".into(),
            factor_process: "iid".into(),
            ar_coefficient: 0.7,
            noise_scale: 1.0,
            n_reps: 10,
            parallel: true,
            loading_functions: None,
        }
    }
}

impl SimConfig {
    pub fn to_dgp_spec(&self, seed: u64) -> Result<DgpSpec> {
        let error_dist = match self.error_dist.to_ascii_lowercase().as_str() {
            "normal" => ErrorDistribution::Normal,
            "student_t3" | "t3" | "studentt3" => ErrorDistribution::StudentT3,
            "cauchy" => ErrorDistribution::Cauchy,
            other => {
                return Err(Error::Config(format!(
                    "unknown error distribution '{other}'"
                )))
            }
        };
        let factor_process = match self.factor_process.to_ascii_lowercase().as_str() {
            "iid" | "iid_normal" => FactorProcess::IidNormal,
            "ar1" => FactorProcess::Ar1 {
                phi: self.ar_coefficient,
            },
            other => return Err(Error::Config(format!("unknown factor process '{other}'"))),
        };
        let loading_functions = self.loading_functions.clone().unwrap_or_else(|| {
            crate::simulate::default_loading_functions(self.r_loc, self.num_characteristics)
        });
        let spec = DgpSpec {
            n: self.n,
            t: self.t,
            num_characteristics: self.num_characteristics,
            loading_functions,
            include_scale_factor: self.include_scale_factor,
            error_dist,
            factor_process,
            noise_scale: self.noise_scale,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Run configuration shared by the CLI commands. Every field has a
/// documented default; a JSON config file may set any subset and
/// command-line flags override the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Quantile levels, each strictly inside (0, 1).
    pub taus: Vec<f64>,
    /// Basis functions per characteristic; default `max(2, round(n^(1/3)))`.
    pub k_n: Option<usize>,
    /// Number of factors; when absent the rank-minimization rule decides
    /// per quantile.
    pub num_factors: Option<usize>,
    /// Cap on the eigenvalues inspected by the selection rules; default
    /// `min(8, T - 1)`.
    pub r_bar: Option<usize>,
    /// Threshold constant of the rank-minimization rule.
    pub threshold_d: f64,
    /// Sample-size exponent of the threshold rule.
    pub threshold_exponent: f64,
    /// First-stage solver tolerance.
    pub tol: f64,
    /// Seed for simulations.
    pub seed: u64,
    /// Estimators to run: qppca, ppca, pca.
    pub methods: Vec<String>,
    /// Output directory for artifacts.
    pub output_dir: PathBuf,
    /// Demean panel columns before standard PCA.
    pub demean: bool,
    /// Simulation design (used by the simulate command).
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            k_n: None,
            num_factors: None,
            r_bar: None,
            threshold_d: crate::factor_count::DEFAULT_THRESHOLD_D,
            threshold_exponent: crate::factor_count::DEFAULT_THRESHOLD_EXPONENT,
            tol: crate::quantreg::DEFAULT_TOL,
            seed: 20240101,
            methods: vec!["qppca".into(), "ppca".into()],
            output_dir: PathBuf::from("qppca-out"),
            demean: false,
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::Config("need at least one quantile level".into()));
        }
        for &tau in &self.taus {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!(
                    "tau={tau} must lie strictly inside (0, 1)"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("need at least one method".into()));
        }
        for m in &self.methods {
            EstimatorKind::parse(m)?;
        }
        if !(self.threshold_d > 0.0) {
            return Err(Error::Config("threshold_d must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Result<Vec<EstimatorKind>> {
        self.methods
            .iter()
            .map(|m| EstimatorKind::parse(m))
            .collect()
    }
}

/// Run manifest: everything needed to reproduce a run with the same binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub package_version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: Vec<(String, u128)>,
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}

/// Write a matrix as CSV with row labels in the first column.
pub fn write_matrix_csv(
    path: &Path,
    row_label_name: &str,
    row_labels: &[String],
    column_names: &[String],
    matrix: &DMatrix<f64>,
) -> Result<()> {
    if row_labels.len() != matrix.nrows() || column_names.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch(
            "matrix CSV labels do not match the shape".into(),
        ));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![row_label_name.to_string()];
    header.extend(column_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..matrix.nrows() {
        let mut rec = vec![row_labels[i].clone()];
        for j in 0..matrix.ncols() {
            rec.push(format_float(matrix[(i, j)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the Monte Carlo per-replication records as CSV.
pub fn write_replication_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rep",
        "method",
        "tau",
        "trace_r2_f",
        "alignment_error",
        "loading_rmse_max",
        "loading_sup",
        "r_true",
        "r_rank_min",
        "r_eigen_ratio",
    ])?;
    for r in &report.records {
        let rmse_max = r
            .loading_rmse
            .as_ref()
            .map(|v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        w.write_record([
            r.rep.to_string(),
            r.method.name().to_string(),
            format_float(r.tau),
            format_float(r.trace_r2_f),
            format_float(r.alignment_error),
            rmse_max.map(format_float).unwrap_or_default(),
            r.loading_sup.map(format_float).unwrap_or_default(),
            r.r_true.to_string(),
            r.r_rank_min.to_string(),
            r.r_eigen_ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
