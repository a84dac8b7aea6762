//! Additive Chebyshev sieve basis over standardized characteristics.
//!
//! The basis expands a D-dimensional characteristic vector into
//! `1 + D * k_n` features: a single global intercept followed, for each
//! characteristic in turn, by the Chebyshev polynomials of the first kind
//! `T_1, ..., T_{k_n}` evaluated on that characteristic after an affine map
//! of its observed range onto `[-1, 1]`. Additive constants per
//! characteristic are not separately identified, so the constant `T_0` is
//! carried once globally rather than once per characteristic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::CharacteristicsMatrix;

/// Basis families. Only Chebyshev polynomials of the first kind are
/// implemented; the enumeration leaves room for B-splines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisFamily {
    Chebyshev,
}

/// Per-column mean/sd transform returned by [`standardize_columns`] so the
/// same standardization can be replayed on evaluation grids or new units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStandardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ColumnStandardizer {
    /// Apply the stored transform to a raw characteristic vector.
    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} characteristics, got {}",
                self.means.len(),
                raw.len()
            )));
        }
        Ok(raw
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply_matrix(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} characteristic columns, got {}",
                self.means.len(),
                raw.ncols()
            )));
        }
        let mut out = raw.clone();
        for d in 0..out.ncols() {
            let (m, s) = (self.means[d], self.sds[d]);
            for v in out.column_mut(d).iter_mut() {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Standardize each column to sample mean 0 and sample standard deviation 1
/// (denominator n - 1). A constant column is an error.
pub fn standardize_columns(
    raw: &DMatrix<f64>,
    column_names: &[String],
) -> Result<(CharacteristicsMatrix, ColumnStandardizer)> {
    let n = raw.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "standardization needs at least two units".into(),
        ));
    }
    if column_names.len() != raw.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} column names for {} columns",
            column_names.len(),
            raw.ncols()
        )));
    }
    let mut values = raw.clone();
    let mut means = Vec::with_capacity(raw.ncols());
    let mut sds = Vec::with_capacity(raw.ncols());
    for (d, name) in column_names.iter().enumerate() {
        let col = raw.column(d);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "characteristic '{name}' contains non-finite values"
            )));
        }
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if sd == 0.0 || !sd.is_finite() {
            return Err(Error::ConstantColumn {
                index: d,
                name: name.clone(),
            });
        }
        for v in values.column_mut(d).iter_mut() {
            *v = (*v - mean) / sd;
        }
        means.push(mean);
        sds.push(sd);
    }
    let matrix = CharacteristicsMatrix::new(values, column_names.to_vec())?;
    Ok((matrix, ColumnStandardizer { means, sds }))
}

/// Fitted sieve basis: the feature map `x -> [1, T_1(x~_1), ..., T_{k_n}(x~_D)]`
/// where `x~_d` is characteristic d affinely mapped from its fitted range onto
/// `[-1, 1]` (and clamped there at evaluation time).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SieveBasis {
    family: BasisFamily,
    k_n: usize,
    /// Per-column affine maps: mapped = shift + scale * x.
    shifts: Vec<f64>,
    scales: Vec<f64>,
    include_intercept: bool,
}

impl SieveBasis {
    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn k_n(&self) -> usize {
        self.k_n
    }

    pub fn num_characteristics(&self) -> usize {
        self.shifts.len()
    }

    /// Output feature dimension: `1 + D * k_n`.
    pub fn num_features(&self) -> usize {
        1 + self.num_characteristics() * self.k_n
    }

    /// Map one characteristic value onto [-1, 1], clamping out-of-range input.
    pub fn map_to_unit(&self, d: usize, x: f64) -> f64 {
        (self.shifts[d] + self.scales[d] * x).clamp(-1.0, 1.0)
    }

    /// The fitted input range of characteristic d (the values mapped to -1
    /// and 1).
    pub fn fitted_range(&self, d: usize) -> (f64, f64) {
        let lo = (-1.0 - self.shifts[d]) / self.scales[d];
        let hi = (1.0 - self.shifts[d]) / self.scales[d];
        (lo, hi)
    }

    /// Evaluate the feature vector at a single D-dimensional point.
    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>> {
        let d_count = self.num_characteristics();
        if x.len() != d_count {
            return Err(Error::DimensionMismatch(format!(
                "basis expects {} characteristics, got {}",
                d_count,
                x.len()
            )));
        }
        let mut features = DVector::zeros(self.num_features());
        features[0] = 1.0;
        for d in 0..d_count {
            let u = self.map_to_unit(d, x[d]);
            // Chebyshev recurrence: T_1 = u, T_{j+1} = 2u T_j - T_{j-1}.
            let mut prev = 1.0;
            let mut cur = u;
            for j in 0..self.k_n {
                features[1 + d * self.k_n + j] = cur;
                let next = 2.0 * u * cur - prev;
                prev = cur;
                cur = next;
            }
        }
        Ok(features)
    }

    /// Evaluate row-wise over a matrix of points, returning the n x (1 + D k_n)
    /// design matrix in the stacking order documented on the type.
    pub fn evaluate_matrix(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xs.ncols() != self.num_characteristics() {
            return Err(Error::DimensionMismatch(format!(
                "basis expects {} characteristics, got {}",
                self.num_characteristics(),
                xs.ncols()
            )));
        }
        let n = xs.nrows();
        let mut design = DMatrix::zeros(n, self.num_features());
        let mut point = vec![0.0; xs.ncols()];
        for i in 0..n {
            for d in 0..xs.ncols() {
                point[d] = xs[(i, d)];
            }
            let row = self.evaluate(&point)?;
            design.row_mut(i).copy_from(&row.transpose());
        }
        Ok(design)
    }
}

/// Fit the sieve basis: record per-column min/max of the (standardized)
/// characteristics and the affine map sending that range onto [-1, 1].
pub fn fit_basis(x: &CharacteristicsMatrix, k_n: usize) -> Result<SieveBasis> {
    if k_n < 1 {
        return Err(Error::InvalidParameter("k_n must be at least 1".into()));
    }
    let mut shifts = Vec::with_capacity(x.num_characteristics());
    let mut scales = Vec::with_capacity(x.num_characteristics());
    for d in 0..x.num_characteristics() {
        let col = x.values.column(d);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(hi > lo) {
            return Err(Error::ConstantColumn {
                index: d,
                name: x.column_names[d].clone(),
            });
        }
        // mapped = -1 + 2 (x - lo) / (hi - lo)
        let scale = 2.0 / (hi - lo);
        shifts.push(-1.0 - scale * lo);
        scales.push(scale);
    }
    Ok(SieveBasis {
        family: BasisFamily::Chebyshev,
        k_n,
        shifts,
        scales,
        include_intercept: true,
    })
}

/// Default number of basis functions per characteristic when the caller does
/// not specify one: `max(2, round(n^(1/3)))`.
pub fn default_k_n(n: usize) -> usize {
    ((n as f64).powf(1.0 / 3.0).round() as usize).max(2)
}
