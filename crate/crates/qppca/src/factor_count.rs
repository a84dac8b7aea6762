//! Selecting the number of factors at a quantile.
//!
//! Two rules operate on the spectrum of the scaled Gram matrix of the fitted
//! panel: counting eigenvalues above a vanishing threshold (rank
//! minimization) and maximizing the ratio of consecutive eigenvalues. Both
//! are always computed; the rank-minimization rule is the default decision.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::SieveFit;

/// Default constant `d` of the threshold rule.
pub const DEFAULT_THRESHOLD_D: f64 = 0.25;

/// Default exponent of the sample-size factor `n^(-exponent)` in the
/// threshold rule.
pub const DEFAULT_THRESHOLD_EXPONENT: f64 = 0.25;

/// Eigenvalues below this fraction of the largest are floored before the
/// ratio rule to avoid division blow-ups on numerically zero tails.
pub const EIGEN_RATIO_FLOOR: f64 = 1e-12;

/// Output of [`select_num_factors`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorCountResult {
    /// Largest `r_bar` eigenvalues of `Y_hat' Y_hat / (n T)`, descending.
    pub eigenvalues: Vec<f64>,
    /// The next eigenvalue (index `r_bar`), kept so the ratio rule is
    /// auditable.
    pub next_eigenvalue: f64,
    /// Threshold used by the rank-minimization rule.
    pub p_n: f64,
    /// Rank-minimization estimate.
    pub r_rank_min: usize,
    /// Eigen-ratio estimate.
    pub r_eigen_ratio: usize,
    /// Threshold constant used.
    pub d: f64,
    /// Cap on the number of factors inspected.
    pub r_bar: usize,
}

/// Count the eigenvalues strictly greater than the threshold.
pub fn rank_min_estimate(eigenvalues: &[f64], p_n: f64) -> usize {
    eigenvalues.iter().filter(|&&v| v > p_n).count()
}

/// Threshold rule `p_n = d * sqrt(rho_1) * n^(-1/4) * ln T`.
pub fn default_threshold(rho_1: f64, n: usize, t: usize, d: f64) -> Result<f64> {
    threshold_with_exponent(rho_1, n, t, d, DEFAULT_THRESHOLD_EXPONENT)
}

/// Threshold rule with a configurable sample-size exponent.
pub fn threshold_with_exponent(
    rho_1: f64,
    n: usize,
    t: usize,
    d: f64,
    exponent: f64,
) -> Result<f64> {
    if !(rho_1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "largest eigenvalue must be positive, got {rho_1}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    if t < 2 {
        return Err(Error::InvalidParameter(format!(
            "threshold rule needs T >= 2 (ln T vanishes at T=1), got {t}"
        )));
    }
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold constant d must be positive, got {d}"
        )));
    }
    Ok(d * rho_1.sqrt() * (n as f64).powf(-exponent) * (t as f64).ln())
}

/// Index maximizing the ratio of consecutive eigenvalues; ties resolve to the
/// smallest index. Requires at least two eigenvalues; values below
/// `EIGEN_RATIO_FLOOR * rho_1` are floored first.
pub fn eigen_ratio_estimate(eigenvalues: &[f64]) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return Err(Error::InvalidParameter(
            "eigen-ratio rule needs at least two eigenvalues".into(),
        ));
    }
    let rho_1 = eigenvalues[0];
    if !(rho_1 > 0.0) {
        return Err(Error::InvalidParameter(
            "degenerate spectrum: largest eigenvalue is zero".into(),
        ));
    }
    let floor = EIGEN_RATIO_FLOOR * rho_1;
    let floored: Vec<f64> = eigenvalues.iter().map(|&v| v.max(floor)).collect();
    let mut best_j = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for j in 1..floored.len() {
        let ratio = floored[j - 1] / floored[j];
        if ratio > best_ratio {
            best_ratio = ratio;
            best_j = j;
        }
    }
    Ok(best_j)
}

/// Compute the spectrum of the fitted panel and apply both selection rules.
pub fn select_num_factors(fit: &SieveFit, r_bar: usize, d: f64) -> Result<FactorCountResult> {
    let spectrum = scaled_spectrum(&fit.fitted);
    select_from_spectrum(&spectrum, fit.num_units(), fit.num_periods(), r_bar, d)
}

/// Both selection rules applied to a precomputed full spectrum of
/// `Y_hat' Y_hat / (n T)` (descending).
pub fn select_from_spectrum(
    spectrum: &[f64],
    n: usize,
    t: usize,
    r_bar: usize,
    d: f64,
) -> Result<FactorCountResult> {
    if r_bar < 1 {
        return Err(Error::InvalidParameter("r_bar must be at least 1".into()));
    }
    if r_bar + 1 > spectrum.len() || r_bar + 1 > n.min(t) {
        return Err(Error::InvalidParameter(format!(
            "r_bar + 1 = {} exceeds min(n, T) = {}",
            r_bar + 1,
            n.min(t)
        )));
    }
    let eigenvalues: Vec<f64> = spectrum[..r_bar].to_vec();
    let next_eigenvalue = spectrum[r_bar];
    let p_n = default_threshold(eigenvalues[0], n, t, d)?;
    let r_rank_min = rank_min_estimate(&eigenvalues, p_n);
    let mut with_next = eigenvalues.clone();
    with_next.push(next_eigenvalue);
    let r_eigen_ratio = eigen_ratio_estimate(&with_next)?;
    Ok(FactorCountResult {
        eigenvalues,
        next_eigenvalue,
        p_n,
        r_rank_min,
        r_eigen_ratio,
        d,
        r_bar,
    })
}

/// Default cap on the number of factors inspected: `min(8, T - 1)`.
pub fn default_r_bar(t: usize) -> usize {
    8.min(t.saturating_sub(1)).max(1)
}

/// Eigenvalues of `M' M / (n T)` for an n x T matrix, descending, clamped at
/// zero. Computed on the T x T Gram matrix; the nonzero eigenvalues agree
/// with those of `M M' / (n T)`.
pub fn scaled_spectrum(fitted: &DMatrix<f64>) -> Vec<f64> {
    let n = fitted.nrows();
    let t = fitted.ncols();
    let gram = fitted.transpose() * fitted;
    let eig = gram.symmetric_eigen();
    let mut values: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| (v / (n * t) as f64).max(0.0))
        .collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_min_table_rows() {
        // published spectra for a 355 x 62 panel of daily excess returns
        let eig = [0.887, 0.094, 0.084, 0.053, 0.043];
        assert_eq!(rank_min_estimate(&eig, 0.224), 1);
        let eig95 = [13.715, 0.567, 0.428, 0.291, 0.246];
        assert_eq!(rank_min_estimate(&eig95, 0.880), 1);
        assert_eq!(rank_min_estimate(&[0.1, 0.05], 0.2), 0);
    }

    #[test]
    fn threshold_plug_in() {
        // ln T = 2 at T = e^2 ~ 7.389; use T = 7389, n = 10^4 scaled variant:
        // with rho_1 = 1, n = 10000, d = 1: p_n = 1 * 1 * 0.1 * ln T
        let p = default_threshold(1.0, 10_000, 7, 1.0).unwrap();
        assert!((p - 0.1 * (7.0f64).ln()).abs() < 1e-15);

        let p_paper = default_threshold(0.887, 355, 62, 0.25).unwrap();
        assert!((p_paper - 0.224).abs() < 0.005, "p_n = {p_paper}");

        let p1 = default_threshold(0.887, 355, 62, 0.25).unwrap();
        let p2 = default_threshold(0.887, 355, 62, 0.5).unwrap();
        assert!((p2 - 2.0 * p1).abs() < 1e-15);
    }

    #[test]
    fn threshold_rejects_degenerate_dims() {
        assert!(default_threshold(1.0, 100, 1, 0.25).is_err());
        assert!(default_threshold(0.0, 100, 10, 0.25).is_err());
        assert!(default_threshold(1.0, 1, 10, 0.25).is_err());
        assert!(default_threshold(1.0, 100, 10, 0.0).is_err());
    }

    #[test]
    fn eigen_ratio_examples() {
        let eig = [0.929, 0.090, 0.081, 0.066, 0.043];
        assert_eq!(eigen_ratio_estimate(&eig).unwrap(), 1);
        // tie resolves to the smallest index
        assert_eq!(eigen_ratio_estimate(&[4.0, 2.0, 1.0]).unwrap(), 1);
        assert!(eigen_ratio_estimate(&[1.0]).is_err());
    }

    #[test]
    fn eigen_ratio_floors_zero_tail() {
        // noiseless rank-2 spectrum
        let eig = [3.0, 1.5, 0.0, 0.0];
        assert_eq!(eigen_ratio_estimate(&eig).unwrap(), 2);
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let eig = [2.0, 1.2, 0.3, 0.1, 0.05];
        let scaled: Vec<f64> = eig.iter().map(|v| v * 7.3).collect();
        assert_eq!(
            eigen_ratio_estimate(&eig).unwrap(),
            eigen_ratio_estimate(&scaled).unwrap()
        );
    }

    #[test]
    fn rank_min_monotone_in_d() {
        let eig = [1.0, 0.4, 0.1, 0.02, 0.001];
        let mut last = usize::MAX;
        for d in [0.05, 0.1, 0.25, 0.5, 1.0, 2.0] {
            let p = default_threshold(eig[0], 500, 20, d).unwrap();
            let r = rank_min_estimate(&eig, p);
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn default_r_bar_rule() {
        assert_eq!(default_r_bar(62), 8);
        assert_eq!(default_r_bar(5), 4);
        assert_eq!(default_r_bar(2), 1);
    }
}
