//! Factor extraction and loading-function recovery.
//!
//! Given the fitted panel from the first-stage regressions, the factors are
//! the eigenvectors (scaled by sqrt(T)) of the T x T Gram matrix of the
//! fitted panel, the projected loadings follow by cross-sectional
//! projection, and the loading-function coefficients by time-averaging the
//! first-stage coefficients against the estimated factors. An updated factor
//! estimate re-regresses the fitted panel on the projected loadings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{fit_basis, standardize_columns, ColumnStandardizer, SieveBasis};
use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::quantreg::{fit_quantile_panel, SieveFit, DEFAULT_TOL};

/// Non-fatal conditions attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateWarning {
    /// The requested number of factors exceeds the numerical rank of the
    /// fitted panel.
    RankDeficient,
    /// The relative eigenvalue gap at the retained/discarded boundary is
    /// below 1e-10, so the factor split is numerically fragile.
    DegenerateEigenGap,
}

/// Factors, projected loadings and eigenvalues extracted from a fitted panel.
#[derive(Debug, Clone)]
pub struct FactorExtraction {
    /// T x R factor matrix, `F'F / T = I_R`.
    pub f_hat: DMatrix<f64>,
    /// n x R projected loadings, `G = Y_hat F / T`.
    pub g_hat: DMatrix<f64>,
    /// Top R eigenvalues of `Y_hat' Y_hat / (n T)`, descending.
    pub omega_hat: DVector<f64>,
    pub warnings: Vec<EstimateWarning>,
}

/// Fix eigenvector signs: the entry of largest absolute value in each column
/// is made positive (ties broken by the lowest row index).
pub fn apply_sign_convention(f: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(f.ncols());
    for j in 0..f.ncols() {
        let mut idx = 0;
        let mut best = f[(0, j)].abs();
        for i in 1..f.nrows() {
            let v = f[(i, j)].abs();
            if v > best {
                best = v;
                idx = i;
            }
        }
        let sign = if f[(idx, j)] < 0.0 { -1.0 } else { 1.0 };
        if sign < 0.0 {
            for i in 0..f.nrows() {
                f[(i, j)] = -f[(i, j)];
            }
        }
        signs.push(sign);
    }
    signs
}

/// Eigen-decompose the T x T Gram matrix of the fitted panel and keep the
/// leading `num_factors` eigenpairs.
pub fn extract_factors(fit: &SieveFit, num_factors: usize) -> Result<FactorExtraction> {
    let y_hat = &fit.fitted;
    let n = y_hat.nrows();
    let t = y_hat.ncols();
    if num_factors == 0 {
        return Err(Error::InvalidParameter(
            "number of factors must be at least 1".into(),
        ));
    }
    if num_factors > t {
        return Err(Error::InvalidParameter(format!(
            "number of factors {num_factors} exceeds the number of periods {t}"
        )));
    }

    let gram = y_hat.transpose() * y_hat;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let max_eig = eigenvalues[0];
    let rank = eigenvalues
        .iter()
        .filter(|&&v| v > 1e-12 * max_eig && v > 0.0)
        .count();

    let mut warnings = Vec::new();
    if num_factors > rank {
        warnings.push(EstimateWarning::RankDeficient);
    }
    if num_factors < t {
        let gap = eigenvalues[num_factors - 1] - eigenvalues[num_factors];
        if gap < 1e-10 * max_eig.max(f64::MIN_POSITIVE) {
            warnings.push(EstimateWarning::DegenerateEigenGap);
        }
    }

    let mut f_hat = DMatrix::zeros(t, num_factors);
    for (r, &src) in order.iter().take(num_factors).enumerate() {
        let col = eig.eigenvectors.column(src) * (t as f64).sqrt();
        f_hat.set_column(r, &col);
    }
    apply_sign_convention(&mut f_hat);

    let g_hat = y_hat * &f_hat / t as f64;
    let omega_hat = DVector::from_iterator(
        num_factors,
        eigenvalues
            .iter()
            .take(num_factors)
            .map(|v| v / (n * t) as f64),
    );
    Ok(FactorExtraction {
        f_hat,
        g_hat,
        omega_hat,
        warnings,
    })
}

/// Loading-function coefficients: `B = A F / T`.
pub fn recover_loading_coefficients(fit: &SieveFit, f_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if fit.coefficients.ncols() != f_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients cover {} periods but factors cover {}",
            fit.coefficients.ncols(),
            f_hat.nrows()
        )));
    }
    Ok(&fit.coefficients * f_hat / f_hat.nrows() as f64)
}

/// Evaluate the estimated loading functions at one point of the basis input
/// space: `g_hat(x)' = phi(x)' B`.
pub fn evaluate_loading_function(
    basis: &SieveBasis,
    b_hat: &DMatrix<f64>,
    x: &[f64],
) -> Result<DVector<f64>> {
    if b_hat.nrows() != basis.num_features() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix has {} rows but the basis produces {} features",
            b_hat.nrows(),
            basis.num_features()
        )));
    }
    let phi = basis.evaluate(x)?;
    Ok(b_hat.transpose() * phi)
}

/// Updated factor estimate: cross-sectional regression of each fitted period
/// on the projected loadings, `F_tilde = Y_hat' G (G'G)^{-1}`.
pub fn update_factors(fit: &SieveFit, g_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let y_hat = &fit.fitted;
    if g_hat.nrows() != y_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "loadings have {} rows but the fitted panel has {}",
            g_hat.nrows(),
            y_hat.nrows()
        )));
    }
    let gram = g_hat.transpose() * g_hat;
    let eig = gram.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if !(max_eig > 0.0) || min_eig <= 1e-12 * max_eig {
        return Err(Error::Singular(
            "G'G in the updated factor regression".into(),
        ));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("G'G Cholesky".into()))?;
    let rhs = g_hat.transpose() * y_hat; // R x T
    Ok(chol.solve(&rhs).transpose())
}

/// Full estimate produced by [`qppca_pipeline`].
#[derive(Debug, Clone)]
pub struct QppcaEstimate {
    /// Number of factors used.
    pub num_factors: usize,
    /// Quantile level of the first stage.
    pub tau: f64,
    /// T x R factors from the eigen-decomposition.
    pub f_hat: DMatrix<f64>,
    /// n x R projected loadings.
    pub g_hat: DMatrix<f64>,
    /// p x R loading-function coefficients.
    pub b_hat: DMatrix<f64>,
    /// Top R eigenvalues of `Y_hat'Y_hat/(nT)`, descending.
    pub omega_hat: DVector<f64>,
    /// T x R updated factors.
    pub f_tilde: DMatrix<f64>,
    /// Fitted quantile returns `y_hat_it = a_t' phi(x_i)`, n x T.
    pub fitted_quantile_returns: DMatrix<f64>,
    /// First-stage coefficients (p x T).
    pub coefficients: DMatrix<f64>,
    /// Basis fitted on the standardized characteristics.
    pub basis: SieveBasis,
    /// Standardization replayed on new units or evaluation grids.
    pub standardizer: ColumnStandardizer,
    pub warnings: Vec<EstimateWarning>,
}

impl QppcaEstimate {
    /// Evaluate the loading functions at a point given in standardized
    /// characteristic units.
    pub fn loading_at(&self, x_std: &[f64]) -> Result<DVector<f64>> {
        evaluate_loading_function(&self.basis, &self.b_hat, x_std)
    }

    /// Evaluate the loading functions at a point given in raw characteristic
    /// units (replays the stored standardization first).
    pub fn loading_at_raw(&self, x_raw: &[f64]) -> Result<DVector<f64>> {
        let std = self.standardizer.apply(x_raw)?;
        self.loading_at(&std)
    }
}

/// Options shared by the projected pipelines.
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Relative optimality tolerance of the first-stage solver.
    pub tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL }
    }
}

/// Three-step estimator: standardize characteristics, fit the sieve basis,
/// run per-period quantile regressions, extract factors by PCA on the fitted
/// panel, recover loading-function coefficients and the updated factors.
pub fn qppca_pipeline(
    panel: &PanelData,
    tau: f64,
    k_n: usize,
    num_factors: usize,
) -> Result<QppcaEstimate> {
    qppca_pipeline_with(panel, tau, k_n, num_factors, &PipelineOptions::default())
}

/// As [`qppca_pipeline`] with explicit solver options.
pub fn qppca_pipeline_with(
    panel: &PanelData,
    tau: f64,
    k_n: usize,
    num_factors: usize,
    options: &PipelineOptions,
) -> Result<QppcaEstimate> {
    let (fit, basis, standardizer) = first_stage(panel, tau, k_n, options)?;
    assemble_estimate(&fit, basis, standardizer, tau, num_factors)
}

/// Standardize, fit the basis, and run the per-period quantile regressions.
pub fn first_stage(
    panel: &PanelData,
    tau: f64,
    k_n: usize,
    options: &PipelineOptions,
) -> Result<(SieveFit, SieveBasis, ColumnStandardizer)> {
    let names: Vec<String> = (0..panel.num_characteristics())
        .map(|d| format!("x{d}"))
        .collect();
    let (standardized, standardizer) =
        standardize_columns(&panel.x, &names).map_err(|e| e.in_stage("standardize"))?;
    let basis = fit_basis(&standardized, k_n).map_err(|e| e.in_stage("fit_basis"))?;
    let design = basis
        .evaluate_matrix(&standardized.values)
        .map_err(|e| e.in_stage("fit_basis"))?;
    let fit = fit_quantile_panel(&panel.y, &design, tau, options.tol)
        .map_err(|e| e.in_stage("quantile_regression"))?;
    Ok((fit, basis, standardizer))
}

/// Steps 2 and 3 on a precomputed first-stage fit.
pub fn assemble_estimate(
    fit: &SieveFit,
    basis: SieveBasis,
    standardizer: ColumnStandardizer,
    tau: f64,
    num_factors: usize,
) -> Result<QppcaEstimate> {
    let extraction =
        extract_factors(fit, num_factors).map_err(|e| e.in_stage("extract_factors"))?;
    let b_hat = recover_loading_coefficients(fit, &extraction.f_hat)
        .map_err(|e| e.in_stage("recover_loadings"))?;
    let f_tilde =
        update_factors(fit, &extraction.g_hat).map_err(|e| e.in_stage("update_factors"))?;
    Ok(QppcaEstimate {
        num_factors,
        tau,
        f_hat: extraction.f_hat,
        g_hat: extraction.g_hat,
        b_hat,
        omega_hat: extraction.omega_hat,
        f_tilde,
        fitted_quantile_returns: fit.fitted.clone(),
        coefficients: fit.coefficients.clone(),
        basis,
        standardizer,
        warnings: extraction.warnings,
    })
}
