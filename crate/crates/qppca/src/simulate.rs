//! Monte Carlo engine: data generating processes with location factors and an
//! optional variance-shifting factor, evaluation metrics, and a reproducible
//! replication runner.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{pca_pipeline, ppca_pipeline};
use crate::error::{Error, Result};
use crate::factor_count::{default_r_bar, select_num_factors, FactorCountResult};
use crate::panel::PanelData;
use crate::qppca::qppca_pipeline;
use crate::quantreg::SieveFit;

/// Idiosyncratic error distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDistribution {
    /// Standard normal.
    Normal,
    /// Student t with 3 degrees of freedom.
    StudentT3,
    /// Standard Cauchy.
    Cauchy,
}

impl ErrorDistribution {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ErrorDistribution::Normal => rng.sample(StandardNormal),
            ErrorDistribution::StudentT3 => StudentT::new(3.0).unwrap().sample(rng),
            ErrorDistribution::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(rng),
        }
    }

    /// Quantile function of the error distribution.
    pub fn quantile(&self, tau: f64) -> f64 {
        assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
        match self {
            ErrorDistribution::Normal => normal_quantile(tau),
            ErrorDistribution::StudentT3 => student_t3_quantile(tau),
            ErrorDistribution::Cauchy => (std::f64::consts::PI * (tau - 0.5)).tan(),
        }
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e-9 — ample for truth values in simulation designs).
pub fn normal_quantile(tau: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if tau < P_LOW {
        let q = (-2.0 * tau.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if tau <= 1.0 - P_LOW {
        let q = tau - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - tau).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Quantile of the t distribution with 3 degrees of freedom, via bisection on
/// the closed-form CDF `F(x) = 1/2 + (atan(u) + u/(1+u^2))/pi`, `u = x/sqrt(3)`.
pub fn student_t3_quantile(tau: f64) -> f64 {
    if (tau - 0.5).abs() < 1e-15 {
        return 0.0;
    }
    let cdf = |x: f64| {
        let u = x / 3.0_f64.sqrt();
        0.5 + (u.atan() + u / (1.0 + u * u)) / std::f64::consts::PI
    };
    let (mut lo, mut hi) = (-1e8, 1e8);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Factor time-series processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorProcess {
    /// Independent standard normal draws.
    IidNormal,
    /// Stationary AR(1) with unit innovation variance scaling.
    Ar1 { phi: f64 },
}

/// One additive loading function `g(x) = scale * base(x_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadingFunction {
    /// `scale * x_d`
    Linear { characteristic: usize, scale: f64 },
    /// `scale * (x_d^2 - 1/3)`, centered under Uniform(-1, 1)
    CenteredQuadratic { characteristic: usize, scale: f64 },
    /// `scale * sin(pi x_d)`, smooth but outside any polynomial span
    Sine { characteristic: usize, scale: f64 },
}

impl LoadingFunction {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match *self {
            LoadingFunction::Linear {
                characteristic,
                scale,
            } => scale * x[characteristic],
            LoadingFunction::CenteredQuadratic {
                characteristic,
                scale,
            } => scale * (x[characteristic] * x[characteristic] - 1.0 / 3.0),
            LoadingFunction::Sine {
                characteristic,
                scale,
            } => scale * (std::f64::consts::PI * x[characteristic]).sin(),
        }
    }

    pub fn characteristic(&self) -> usize {
        match *self {
            LoadingFunction::Linear { characteristic, .. }
            | LoadingFunction::CenteredQuadratic { characteristic, .. }
            | LoadingFunction::Sine { characteristic, .. } => characteristic,
        }
    }
}

/// Default loading functions: `g_1(x) = x_1` and `g_2(x) = x_2^2 - 1/3`,
/// truncated to the requested number of location factors.
pub fn default_loading_functions(r_loc: usize, num_characteristics: usize) -> Vec<LoadingFunction> {
    (0..r_loc)
        .map(|r| {
            let d = r % num_characteristics;
            if r % 2 == 0 {
                LoadingFunction::Linear {
                    characteristic: d,
                    scale: 1.0,
                }
            } else {
                LoadingFunction::CenteredQuadratic {
                    characteristic: d,
                    scale: 1.0,
                }
            }
        })
        .collect()
}

/// Simulation design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    /// Number of characteristics drawn Uniform(-1, 1).
    pub num_characteristics: usize,
    /// Location loading functions, one per location factor.
    pub loading_functions: Vec<LoadingFunction>,
    /// Adds a variance-shifting factor `s(x) h_t` multiplying the errors,
    /// with `s(x) = 0.5 + 0.25 x_1^2` and `h_t` drawn Uniform(0.5, 1.5).
    pub include_scale_factor: bool,
    pub error_dist: ErrorDistribution,
    pub factor_process: FactorProcess,
    /// Multiplier on the idiosyncratic errors; 0 gives a noiseless panel.
    pub noise_scale: f64,
    pub seed: u64,
}

impl DgpSpec {
    /// Location-model defaults for the given dimensions.
    pub fn location_model(n: usize, t: usize, r_loc: usize, seed: u64) -> Self {
        let d = r_loc.max(1);
        Self {
            n,
            t,
            num_characteristics: d,
            loading_functions: default_loading_functions(r_loc, d),
            include_scale_factor: false,
            error_dist: ErrorDistribution::Normal,
            factor_process: FactorProcess::IidNormal,
            noise_scale: 1.0,
            seed,
        }
    }

    pub fn r_loc(&self) -> usize {
        self.loading_functions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.t < 1 {
            return Err(Error::InvalidParameter("need n >= 1 and T >= 1".into()));
        }
        if self.num_characteristics < 1 {
            return Err(Error::InvalidParameter(
                "need at least one characteristic".into(),
            ));
        }
        if self.loading_functions.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one location factor".into(),
            ));
        }
        for lf in &self.loading_functions {
            if lf.characteristic() >= self.num_characteristics {
                return Err(Error::InvalidParameter(format!(
                    "loading function references characteristic {} but only {} exist",
                    lf.characteristic(),
                    self.num_characteristics
                )));
            }
        }
        let r_total = self.r_loc() + usize::from(self.include_scale_factor);
        if self.t < r_total {
            return Err(Error::InvalidParameter(format!(
                "T = {} is smaller than the total number of factors {r_total}",
                self.t
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise scale must be nonnegative".into(),
            ));
        }
        if let FactorProcess::Ar1 { phi } = self.factor_process {
            if !(phi.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "AR(1) coefficient {phi} must satisfy |phi| < 1"
                )));
            }
        }
        Ok(())
    }
}

/// Scale loading `s(x) = 0.5 + 0.25 x_1^2`, bounded inside [0.5, 0.75].
pub fn scale_loading(x: &[f64]) -> f64 {
    0.5 + 0.25 * x[0] * x[0]
}

/// A simulated panel with the quantities needed to evaluate estimators.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    /// Location factors plus, when present, the scale-factor series `h_t`
    /// (T x R_total).
    pub f_true: DMatrix<f64>,
    /// Location loadings plus, when present, the scale loading `s(x_i)`.
    pub g_true: DMatrix<f64>,
    pub spec: DgpSpec,
}

impl SimulatedPanel {
    /// Number of factors in the conditional quantile surface at `tau`.
    /// The variance channel contributes one factor whenever the error
    /// quantile is nonzero; without the scale factor this is the degenerate
    /// constant shift, which still raises the rank of the surface by one.
    pub fn true_num_factors(&self, tau: f64) -> usize {
        let q = self.spec.error_dist.quantile(tau) * self.spec.noise_scale;
        self.spec.r_loc() + usize::from(q != 0.0)
    }

    /// Factors of the conditional quantile surface at `tau`: the location
    /// factors, plus the variance-channel column when its quantile shift is
    /// nonzero.
    pub fn true_factors_at(&self, tau: f64) -> DMatrix<f64> {
        let r_loc = self.spec.r_loc();
        let q = self.spec.error_dist.quantile(tau) * self.spec.noise_scale;
        if q == 0.0 {
            return self.f_true.columns(0, r_loc).into_owned();
        }
        let t = self.spec.t;
        let mut f = DMatrix::zeros(t, r_loc + 1);
        f.columns_mut(0, r_loc)
            .copy_from(&self.f_true.columns(0, r_loc));
        for tt in 0..t {
            let h = if self.spec.include_scale_factor {
                self.f_true[(tt, r_loc)]
            } else {
                1.0
            };
            f[(tt, r_loc)] = h * q;
        }
        f
    }

    /// Loadings of the conditional quantile surface at `tau`.
    pub fn true_loadings_at(&self, tau: f64) -> DMatrix<f64> {
        let r_loc = self.spec.r_loc();
        let q = self.spec.error_dist.quantile(tau) * self.spec.noise_scale;
        if q == 0.0 {
            return self.g_true.columns(0, r_loc).into_owned();
        }
        let n = self.spec.n;
        let mut g = DMatrix::zeros(n, r_loc + 1);
        g.columns_mut(0, r_loc)
            .copy_from(&self.g_true.columns(0, r_loc));
        for i in 0..n {
            g[(i, r_loc)] = if self.spec.include_scale_factor {
                self.g_true[(i, r_loc)]
            } else {
                1.0
            };
        }
        g
    }

    /// True conditional quantile surface at an arbitrary raw characteristic
    /// point.
    pub fn theta_true(&self, tau: f64, x: &[f64], t: usize) -> f64 {
        let mut val = 0.0;
        for (r, lf) in self.spec.loading_functions.iter().enumerate() {
            val += lf.evaluate(x) * self.f_true[(t, r)];
        }
        let q = self.spec.error_dist.quantile(tau) * self.spec.noise_scale;
        if q != 0.0 {
            if self.spec.include_scale_factor {
                let h = self.f_true[(t, self.spec.r_loc())];
                val += scale_loading(x) * h * q;
            } else {
                val += q;
            }
        }
        val
    }
}

/// Draw a panel from the design. Deterministic given (seed, spec); stream 0.
pub fn simulate_panel(spec: &DgpSpec) -> Result<SimulatedPanel> {
    simulate_panel_stream(spec, 0)
}

/// Draw a panel on a counter-derived RNG substream, so replications can run
/// in parallel while agreeing bit-for-bit with serial execution.
pub fn simulate_panel_stream(spec: &DgpSpec, stream: u64) -> Result<SimulatedPanel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);

    let (n, t, d) = (spec.n, spec.t, spec.num_characteristics);
    let r_loc = spec.r_loc();
    let r_total = r_loc + usize::from(spec.include_scale_factor);

    // Draw order is fixed: characteristics, location factors, scale series,
    // then errors (unit-major).
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));

    let mut f_true = DMatrix::zeros(t, r_total);
    match spec.factor_process {
        FactorProcess::IidNormal => {
            for r in 0..r_loc {
                for tt in 0..t {
                    f_true[(tt, r)] = rng.sample(StandardNormal);
                }
            }
        }
        FactorProcess::Ar1 { phi } => {
            let innov_sd = (1.0 - phi * phi).sqrt();
            for r in 0..r_loc {
                let mut prev: f64 = rng.sample(StandardNormal);
                f_true[(0, r)] = prev;
                for tt in 1..t {
                    let e: f64 = rng.sample(StandardNormal);
                    prev = phi * prev + innov_sd * e;
                    f_true[(tt, r)] = prev;
                }
            }
        }
    }
    if spec.include_scale_factor {
        for tt in 0..t {
            f_true[(tt, r_loc)] = rng.random_range(0.5..1.5);
        }
    }

    let mut g_true = DMatrix::zeros(n, r_total);
    let mut point = vec![0.0; d];
    for i in 0..n {
        for dd in 0..d {
            point[dd] = x[(i, dd)];
        }
        for (r, lf) in spec.loading_functions.iter().enumerate() {
            g_true[(i, r)] = lf.evaluate(&point);
        }
        if spec.include_scale_factor {
            g_true[(i, r_loc)] = scale_loading(&point);
        }
    }

    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        for tt in 0..t {
            let mut val = 0.0;
            for r in 0..r_loc {
                val += g_true[(i, r)] * f_true[(tt, r)];
            }
            let u = spec.error_dist.sample(&mut rng) * spec.noise_scale;
            if spec.include_scale_factor {
                val += g_true[(i, r_loc)] * f_true[(tt, r_loc)] * u;
            } else {
                val += u;
            }
            y[(i, tt)] = val;
        }
    }

    let panel = PanelData::new(y, x)?;
    Ok(SimulatedPanel {
        panel,
        f_true,
        g_true,
        spec: spec.clone(),
    })
}

/// Rotation-invariant factor-space fit: the fraction of `tr(F'F)` explained
/// by the projection of `F` onto the column space of `F_hat`.
pub fn trace_r2(f_true: &DMatrix<f64>, f_hat: &DMatrix<f64>) -> Result<f64> {
    if f_true.nrows() != f_hat.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "factor matrices cover {} and {} periods",
            f_true.nrows(),
            f_hat.nrows()
        )));
    }
    let sv = f_hat.clone().singular_values();
    if !(sv.max() > 0.0) || sv.min() < 1e-12 * sv.max() {
        return Err(Error::RankDeficient {
            smallest: sv.min(),
            threshold: 1e-12 * sv.max(),
        });
    }
    let qr = f_hat.clone().qr();
    let q = qr.q();
    let projected = q.transpose() * f_true;
    let total = f_true.norm_squared();
    if total == 0.0 {
        return Err(Error::InvalidParameter("true factor matrix is zero".into()));
    }
    Ok((projected.norm_squared() / total).clamp(0.0, 1.0))
}

/// Alignment matrix `H = (G'G/n) (F'F_hat/T) Omega^{-1}` mapping true factors
/// onto the estimated rotation. Only computable when the true quantities are
/// known, i.e. in simulations.
pub fn rotation_align(
    g_true: &DMatrix<f64>,
    f_true: &DMatrix<f64>,
    f_hat: &DMatrix<f64>,
    omega_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = g_true.nrows();
    let t = f_true.nrows();
    if f_hat.nrows() != t {
        return Err(Error::DimensionMismatch(
            "factor matrices cover different periods".into(),
        ));
    }
    if f_hat.ncols() != omega_hat.len() || g_true.ncols() != f_true.ncols() {
        return Err(Error::DimensionMismatch(
            "rotation alignment shapes disagree".into(),
        ));
    }
    let max_omega = omega_hat.max();
    if omega_hat
        .iter()
        .any(|&w| !(w > 1e-14 * max_omega) || w <= 0.0)
    {
        return Err(Error::Singular(
            "eigenvalue matrix in rotation alignment".into(),
        ));
    }
    let sigma_g = g_true.transpose() * g_true / n as f64;
    let mut h = sigma_g * (f_true.transpose() * f_hat / t as f64);
    for j in 0..h.ncols() {
        for i in 0..h.nrows() {
            h[(i, j)] /= omega_hat[j];
        }
    }
    Ok(h)
}

/// `|| F_hat - F H || / sqrt(T)`.
pub fn factor_alignment_error(
    f_true: &DMatrix<f64>,
    f_hat: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> f64 {
    ((f_hat - f_true * h).norm_squared() / f_hat.nrows() as f64).sqrt()
}

/// Per-factor grid error of estimated loading functions against the
/// rotation-corrected truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadingGridError {
    /// Root mean squared error per factor over the grid.
    pub rmse: Vec<f64>,
    /// Supremum over the grid of the euclidean norm of the loading error.
    pub sup_norm: f64,
}

/// Compare estimated loading functions with the truth on a grid of raw
/// characteristic points: error(x) = g_hat(x) - H^{-1} g(x).
pub fn loading_grid_rmse(
    eval_estimated: &dyn Fn(&[f64]) -> Result<DVector<f64>>,
    h: &DMatrix<f64>,
    eval_true: &dyn Fn(&[f64]) -> DVector<f64>,
    grid: &[Vec<f64>],
) -> Result<LoadingGridError> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty evaluation grid".into()));
    }
    let lu = h.clone().lu();
    let r = h.nrows();
    let mut sum_sq = vec![0.0; r];
    let mut sup: f64 = 0.0;
    for x in grid {
        let g_hat = eval_estimated(x)?;
        let g_rotated = lu
            .solve(&eval_true(x))
            .ok_or_else(|| Error::Singular("alignment matrix in loading grid".into()))?;
        if g_hat.len() != r || g_rotated.len() != r {
            return Err(Error::DimensionMismatch(
                "loading dimensions disagree on the grid".into(),
            ));
        }
        let diff = &g_hat - &g_rotated;
        for j in 0..r {
            sum_sq[j] += diff[j] * diff[j];
        }
        sup = sup.max(diff.norm());
    }
    let m = grid.len() as f64;
    Ok(LoadingGridError {
        rmse: sum_sq.iter().map(|s| (s / m).sqrt()).collect(),
        sup_norm: sup,
    })
}

/// Estimators the Monte Carlo runner can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Qppca,
    Ppca,
    Pca,
}

impl EstimatorKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "qppca" => Ok(EstimatorKind::Qppca),
            "ppca" => Ok(EstimatorKind::Ppca),
            "pca" => Ok(EstimatorKind::Pca),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected qppca, ppca or pca)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Qppca => "qppca",
            EstimatorKind::Ppca => "ppca",
            EstimatorKind::Pca => "pca",
        }
    }
}

/// Monte Carlo configuration beyond the DGP itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub methods: Vec<EstimatorKind>,
    pub taus: Vec<f64>,
    pub n_reps: usize,
    pub parallel: bool,
    /// Basis size used by the projected estimators.
    pub k_n: usize,
}

/// One (replication, method, tau) evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub method: EstimatorKind,
    pub tau: f64,
    pub trace_r2_f: f64,
    pub alignment_error: f64,
    pub loading_rmse: Option<Vec<f64>>,
    pub loading_sup: Option<f64>,
    pub r_true: usize,
    pub r_rank_min: usize,
    pub r_eigen_ratio: usize,
}

/// Aggregates over successful replications for one (method, tau) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub method: EstimatorKind,
    pub tau: f64,
    pub n_ok: usize,
    pub mean_trace_r2: f64,
    pub median_trace_r2: f64,
    pub mean_alignment_error: f64,
    pub median_alignment_error: f64,
    /// Fraction of replications where the rank-minimization rule recovered
    /// the true number of factors.
    pub rank_min_accuracy: f64,
    pub eigen_ratio_accuracy: f64,
    /// Most frequent rank-minimization estimate.
    pub majority_rank_min: usize,
}

/// A failed replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub method: EstimatorKind,
    pub tau: f64,
    pub message: String,
}

/// Full Monte Carlo output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
    pub aggregates: Vec<AggregateRecord>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn evaluate_method(
    sim: &SimulatedPanel,
    method: EstimatorKind,
    tau: f64,
    k_n: usize,
    rep: usize,
) -> Result<ReplicationRecord> {
    let r_true = sim.true_num_factors(tau);
    let f_true = sim.true_factors_at(tau);
    let g_true = sim.true_loadings_at(tau);

    let grid: Vec<Vec<f64>> = (0..41)
        .map(|i| {
            let mut x = vec![0.0; sim.spec.num_characteristics];
            x[0] = -0.95 + 1.9 * i as f64 / 40.0;
            x
        })
        .collect();

    match method {
        EstimatorKind::Qppca => {
            let est = qppca_pipeline(&sim.panel, tau, k_n, r_true)?;
            let fit = SieveFit {
                coefficients: est.coefficients.clone(),
                fitted: est.fitted_quantile_returns.clone(),
                diagnostics: Vec::new(),
            };
            let counts = rank_counts(&fit)?;
            let h = rotation_align(&g_true, &f_true, &est.f_hat, &est.omega_hat)?;
            let grid_err = loading_grid_rmse(
                &|x| est.loading_at_raw(x),
                &h,
                &|x| true_loading_vector(sim, tau, x),
                &grid,
            )?;
            Ok(ReplicationRecord {
                rep,
                method,
                tau,
                trace_r2_f: trace_r2(&f_true, &est.f_hat)?,
                alignment_error: factor_alignment_error(&f_true, &est.f_hat, &h),
                loading_rmse: Some(grid_err.rmse),
                loading_sup: Some(grid_err.sup_norm),
                r_true,
                r_rank_min: counts.r_rank_min,
                r_eigen_ratio: counts.r_eigen_ratio,
            })
        }
        EstimatorKind::Ppca => {
            let est = ppca_pipeline(&sim.panel, k_n, r_true)?;
            let fit = SieveFit {
                coefficients: DMatrix::zeros(0, sim.panel.num_periods()),
                fitted: est.fitted_panel.clone(),
                diagnostics: Vec::new(),
            };
            let counts = rank_counts(&fit)?;
            let h = rotation_align(&g_true, &f_true, &est.f_hat, &est.eigenvalues)?;
            let grid_err = loading_grid_rmse(
                &|x| est.loading_at_raw(x),
                &h,
                &|x| true_loading_vector(sim, tau, x),
                &grid,
            )?;
            Ok(ReplicationRecord {
                rep,
                method,
                tau,
                trace_r2_f: trace_r2(&f_true, &est.f_hat)?,
                alignment_error: factor_alignment_error(&f_true, &est.f_hat, &h),
                loading_rmse: Some(grid_err.rmse),
                loading_sup: Some(grid_err.sup_norm),
                r_true,
                r_rank_min: counts.r_rank_min,
                r_eigen_ratio: counts.r_eigen_ratio,
            })
        }
        EstimatorKind::Pca => {
            let est = pca_pipeline(&sim.panel, r_true)?;
            let fit = SieveFit {
                coefficients: DMatrix::zeros(0, sim.panel.num_periods()),
                fitted: sim.panel.y.clone(),
                diagnostics: Vec::new(),
            };
            let counts = rank_counts(&fit)?;
            let h = rotation_align(&g_true, &f_true, &est.f_hat, &est.eigenvalues)?;
            Ok(ReplicationRecord {
                rep,
                method,
                tau,
                trace_r2_f: trace_r2(&f_true, &est.f_hat)?,
                alignment_error: factor_alignment_error(&f_true, &est.f_hat, &h),
                loading_rmse: None,
                loading_sup: None,
                r_true,
                r_rank_min: counts.r_rank_min,
                r_eigen_ratio: counts.r_eigen_ratio,
            })
        }
    }
}

/// True loading vector at `x` for the quantile-τ structure, matching the
/// column layout of [`SimulatedPanel::true_loadings_at`].
fn true_loading_vector(sim: &SimulatedPanel, tau: f64, x: &[f64]) -> DVector<f64> {
    let q = sim.spec.error_dist.quantile(tau) * sim.spec.noise_scale;
    let extra = usize::from(q != 0.0);
    let r = sim.spec.r_loc() + extra;
    let mut g = DVector::zeros(r);
    for (j, lf) in sim.spec.loading_functions.iter().enumerate() {
        g[j] = lf.evaluate(x);
    }
    if extra == 1 {
        g[r - 1] = if sim.spec.include_scale_factor {
            scale_loading(x)
        } else {
            1.0
        };
    }
    g
}

fn rank_counts(fit: &SieveFit) -> Result<FactorCountResult> {
    let r_bar = default_r_bar(fit.num_periods())
        .min(fit.num_units().saturating_sub(1))
        .max(1);
    select_num_factors(fit, r_bar, crate::factor_count::DEFAULT_THRESHOLD_D)
}

/// Run the full Monte Carlo: per replication, simulate a panel on its own
/// RNG substream, fit every method at every quantile, and aggregate.
/// Replications that fail are recorded; the run errors only if more than 10%
/// of them do.
pub fn run_monte_carlo(spec: &DgpSpec, config: &MonteCarloConfig) -> Result<MetricsReport> {
    if config.n_reps < 1 {
        return Err(Error::InvalidParameter(
            "need at least one replication".into(),
        ));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidParameter("need at least one method".into()));
    }
    for &tau in &config.taus {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidTau(tau));
        }
    }
    spec.validate()?;

    let run_rep = |rep: usize| -> (Vec<ReplicationRecord>, Vec<ReplicationFailure>) {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        match simulate_panel_stream(spec, rep as u64) {
            Ok(sim) => {
                for &method in &config.methods {
                    for &tau in &config.taus {
                        match evaluate_method(&sim, method, tau, config.k_n, rep) {
                            Ok(rec) => records.push(rec),
                            Err(e) => failures.push(ReplicationFailure {
                                rep,
                                method,
                                tau,
                                message: e.to_string(),
                            }),
                        }
                    }
                }
            }
            Err(e) => {
                for &method in &config.methods {
                    for &tau in &config.taus {
                        failures.push(ReplicationFailure {
                            rep,
                            method,
                            tau,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        (records, failures)
    };

    let per_rep: Vec<(Vec<ReplicationRecord>, Vec<ReplicationFailure>)> = if config.parallel {
        (0..config.n_reps).into_par_iter().map(run_rep).collect()
    } else {
        (0..config.n_reps).map(run_rep).collect()
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (recs, fails) in per_rep {
        records.extend(recs);
        failures.extend(fails);
    }

    let total_cells = config.n_reps * config.methods.len() * config.taus.len();
    if failures.len() * 10 > total_cells {
        return Err(Error::InvalidParameter(format!(
            "{} of {} Monte Carlo cells failed (first: {})",
            failures.len(),
            total_cells,
            failures[0].message
        )));
    }

    let mut aggregates = Vec::new();
    for &method in &config.methods {
        for &tau in &config.taus {
            let cell: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.method == method && (r.tau - tau).abs() < 1e-12)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let mut tr: Vec<f64> = cell.iter().map(|r| r.trace_r2_f).collect();
            let mut al: Vec<f64> = cell.iter().map(|r| r.alignment_error).collect();
            let n_ok = cell.len();
            let rank_hits = cell.iter().filter(|r| r.r_rank_min == r.r_true).count();
            let ratio_hits = cell.iter().filter(|r| r.r_eigen_ratio == r.r_true).count();
            let mut counts = std::collections::BTreeMap::new();
            for r in &cell {
                *counts.entry(r.r_rank_min).or_insert(0usize) += 1;
            }
            let majority_rank_min = counts
                .iter()
                .max_by_key(|(_, &c)| c)
                .map(|(&k, _)| k)
                .unwrap_or(0);
            aggregates.push(AggregateRecord {
                method,
                tau,
                n_ok,
                mean_trace_r2: tr.iter().sum::<f64>() / n_ok as f64,
                median_trace_r2: median(&mut tr),
                mean_alignment_error: al.iter().sum::<f64>() / n_ok as f64,
                median_alignment_error: median(&mut al),
                rank_min_accuracy: rank_hits as f64 / n_ok as f64,
                eigen_ratio_accuracy: ratio_hits as f64 / n_ok as f64,
                majority_rank_min,
            });
        }
    }

    Ok(MetricsReport {
        records,
        failures,
        aggregates,
    })
}
