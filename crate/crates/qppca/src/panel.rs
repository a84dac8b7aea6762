//! Panel containers shared across the estimation pipeline.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observed panel: outcomes `Y` (n units x T periods) together with the raw
/// characteristics `X` (n units x D characteristics).
#[derive(Debug, Clone)]
pub struct PanelData {
    /// Outcomes, one row per unit, one column per period.
    pub y: DMatrix<f64>,
    /// Raw characteristics, one row per unit.
    pub x: DMatrix<f64>,
    /// Unit labels, length n.
    pub unit_ids: Vec<String>,
    /// Period labels, length T.
    pub time_ids: Vec<String>,
}

impl PanelData {
    /// Build a panel from matrices, generating default labels.
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let unit_ids = (0..y.nrows()).map(|i| format!("unit{i}")).collect();
        let time_ids = (0..y.ncols()).map(|t| format!("t{t}")).collect();
        Self::with_labels(y, x, unit_ids, time_ids)
    }

    /// Build a panel with explicit unit/period labels.
    pub fn with_labels(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
    ) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "panel must have n >= 1 and T >= 1".into(),
            ));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "outcomes have {} rows but characteristics have {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "need at least one characteristic".into(),
            ));
        }
        if unit_ids.len() != y.nrows() || time_ids.len() != y.ncols() {
            return Err(Error::DimensionMismatch(
                "label lengths do not match panel shape".into(),
            ));
        }
        for (idx, v) in y.iter().enumerate() {
            if !v.is_finite() {
                let (i, t) = (idx % y.nrows(), idx / y.nrows());
                return Err(Error::InvalidParameter(format!(
                    "outcome for unit {i}, period {t} is not finite"
                )));
            }
        }
        for (idx, v) in x.iter().enumerate() {
            if !v.is_finite() {
                let (i, d) = (idx % x.nrows(), idx / x.nrows());
                return Err(Error::InvalidParameter(format!(
                    "characteristic {d} for unit {i} is not finite"
                )));
            }
        }
        Ok(Self {
            y,
            x,
            unit_ids,
            time_ids,
        })
    }

    pub fn num_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn num_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn num_characteristics(&self) -> usize {
        self.x.ncols()
    }
}

/// Standardized characteristics: every column has sample mean 0 and sample
/// standard deviation 1 (denominator n - 1), all entries finite.
#[derive(Debug, Clone)]
pub struct CharacteristicsMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
}

impl CharacteristicsMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "characteristics must be non-empty".into(),
            ));
        }
        if column_names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "characteristics contain non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            column_names,
        })
    }

    pub fn num_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_characteristics(&self) -> usize {
        self.values.ncols()
    }
}
