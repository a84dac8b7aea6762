//! Comparator estimators: projected PCA with a least-squares first stage, and
//! standard PCA on the raw panel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{fit_basis, standardize_columns, ColumnStandardizer, SieveBasis};
use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::qppca::{
    extract_factors, recover_loading_coefficients, update_factors, EstimateWarning,
};
use crate::quantreg::{fit_least_squares_panel, PeriodDiagnostics, SieveFit};

/// Which baseline produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMethod {
    Ppca,
    Pca,
}

/// Factors and loadings from a baseline estimator. The normalization and
/// sign conventions match the quantile pipeline.
#[derive(Debug, Clone)]
pub struct BaselineEstimate {
    pub method: BaselineMethod,
    /// T x R factors.
    pub f_hat: DMatrix<f64>,
    /// Projected loadings (projected PCA) or raw loadings (standard PCA),
    /// n x R.
    pub g_or_lambda_hat: DMatrix<f64>,
    /// Loading-function coefficients; projected PCA only.
    pub b_hat: Option<DMatrix<f64>>,
    /// Top R eigenvalues of the scaled Gram matrix, descending.
    pub eigenvalues: DVector<f64>,
    /// Updated factors from the cross-sectional regression; projected PCA only.
    pub f_tilde: Option<DMatrix<f64>>,
    /// Panel the eigen-decomposition ran on: the projected panel for
    /// projected PCA, the (optionally demeaned) raw panel for standard PCA.
    pub fitted_panel: DMatrix<f64>,
    /// Basis behind `b_hat`; projected PCA only.
    pub basis: Option<SieveBasis>,
    pub standardizer: Option<ColumnStandardizer>,
    pub warnings: Vec<EstimateWarning>,
}

impl BaselineEstimate {
    /// Evaluate the loading functions at a raw characteristic point
    /// (projected PCA only).
    pub fn loading_at_raw(&self, x_raw: &[f64]) -> Result<DVector<f64>> {
        let (basis, std, b) = match (&self.basis, &self.standardizer, &self.b_hat) {
            (Some(basis), Some(std), Some(b)) => (basis, std, b),
            _ => {
                return Err(Error::InvalidParameter(
                    "loading functions are only available for the projected baseline".into(),
                ))
            }
        };
        let x_std = std.apply(x_raw)?;
        crate::qppca::evaluate_loading_function(basis, b, &x_std)
    }
}

/// Projected PCA: identical to the quantile pipeline with the per-period
/// quantile regressions replaced by least squares.
pub fn ppca_pipeline(
    panel: &PanelData,
    k_n: usize,
    num_factors: usize,
) -> Result<BaselineEstimate> {
    let names: Vec<String> = (0..panel.num_characteristics())
        .map(|d| format!("x{d}"))
        .collect();
    let (standardized, standardizer) =
        standardize_columns(&panel.x, &names).map_err(|e| e.in_stage("standardize"))?;
    let basis = fit_basis(&standardized, k_n).map_err(|e| e.in_stage("fit_basis"))?;
    let design = basis
        .evaluate_matrix(&standardized.values)
        .map_err(|e| e.in_stage("fit_basis"))?;
    let fit =
        fit_least_squares_panel(&panel.y, &design).map_err(|e| e.in_stage("least_squares"))?;
    let extraction =
        extract_factors(&fit, num_factors).map_err(|e| e.in_stage("extract_factors"))?;
    let b_hat = recover_loading_coefficients(&fit, &extraction.f_hat)
        .map_err(|e| e.in_stage("recover_loadings"))?;
    let f_tilde =
        update_factors(&fit, &extraction.g_hat).map_err(|e| e.in_stage("update_factors"))?;
    Ok(BaselineEstimate {
        method: BaselineMethod::Ppca,
        f_hat: extraction.f_hat,
        g_or_lambda_hat: extraction.g_hat,
        b_hat: Some(b_hat),
        eigenvalues: extraction.omega_hat,
        f_tilde: Some(f_tilde),
        fitted_panel: fit.fitted,
        basis: Some(basis),
        standardizer: Some(standardizer),
        warnings: extraction.warnings,
    })
}

/// Standard PCA applied directly to the raw panel (no projection, no
/// demeaning).
pub fn pca_pipeline(panel: &PanelData, num_factors: usize) -> Result<BaselineEstimate> {
    pca_pipeline_with(panel, num_factors, false)
}

/// Standard PCA with optional column demeaning for panels with nonzero means.
pub fn pca_pipeline_with(
    panel: &PanelData,
    num_factors: usize,
    demean_columns: bool,
) -> Result<BaselineEstimate> {
    let mut y = panel.y.clone();
    if demean_columns {
        for t in 0..y.ncols() {
            let mean = y.column(t).sum() / y.nrows() as f64;
            for v in y.column_mut(t).iter_mut() {
                *v -= mean;
            }
        }
    }
    let t = y.ncols();
    let fit = SieveFit {
        coefficients: DMatrix::zeros(0, t),
        fitted: y,
        diagnostics: vec![
            PeriodDiagnostics {
                objective: 0.0,
                iterations: 0,
                kkt_residual: 0.0
            };
            t
        ],
    };
    let extraction = extract_factors(&fit, num_factors)?;
    Ok(BaselineEstimate {
        method: BaselineMethod::Pca,
        f_hat: extraction.f_hat,
        g_or_lambda_hat: extraction.g_hat,
        b_hat: None,
        eigenvalues: extraction.omega_hat,
        f_tilde: None,
        fitted_panel: fit.fitted,
        basis: None,
        standardizer: None,
        warnings: extraction.warnings,
    })
}
