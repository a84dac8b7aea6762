//! Per-period sieve quantile regression.
//!
//! Solves `min_a sum_i rho_tau(y_i - a' z_i)` where `rho_tau` is the check
//! function, via a primal-dual interior point method on the equivalent
//! bounded-variable linear program (Frisch-Newton with a Mehrotra
//! predictor-corrector step), followed by a vertex-polishing pass that
//! recovers an exact basic solution whenever one is certified optimal by the
//! subgradient conditions. Optimality is always reported through
//! `kkt_residual`, so callers can assert it without re-solving.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative threshold under which the smallest singular value of the design
/// flags rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Default relative optimality tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default iteration cap for the interior point loop.
pub const DEFAULT_MAX_ITER: usize = 500;

/// The check function `rho_tau(u) = (tau - 1{u <= 0}) u`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

/// Total check loss of a residual vector.
pub fn check_loss_sum(residuals: &DVector<f64>, tau: f64) -> f64 {
    residuals.iter().map(|&r| check_loss(r, tau)).sum()
}

/// One period's quantile regression problem: design `Z` (n x p), outcomes
/// `y` (n), quantile level `tau` in (0, 1). Construction validates the
/// quantile level and checks the design for full column rank.
#[derive(Debug, Clone)]
pub struct CheckLossProblem {
    z: DMatrix<f64>,
    y: DVector<f64>,
    tau: f64,
}

impl CheckLossProblem {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidTau(tau));
        }
        if z.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but y has {}",
                z.nrows(),
                y.len()
            )));
        }
        if z.ncols() == 0 || z.nrows() < z.ncols() {
            return Err(Error::InvalidParameter(format!(
                "need n >= p >= 1, got n={}, p={}",
                z.nrows(),
                z.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "problem contains non-finite values".into(),
            ));
        }
        check_full_rank(&z)?;
        Ok(Self { z, y, tau })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn outcomes(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Check loss of a candidate coefficient vector.
    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        let r = &self.y - &self.z * a;
        check_loss_sum(&r, self.tau)
    }
}

/// Error if the smallest singular value of `z` falls below
/// `RANK_TOLERANCE` times the largest.
pub fn check_full_rank(z: &DMatrix<f64>) -> Result<()> {
    let sv = z.clone().singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(largest > 0.0) || smallest < RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient {
            smallest,
            threshold: RANK_TOLERANCE * largest,
        });
    }
    Ok(())
}

/// Result of a single quantile regression fit.
#[derive(Debug, Clone)]
pub struct QuantileFitResult {
    /// Coefficient vector, length p.
    pub a_hat: DVector<f64>,
    /// Sum of check losses at `a_hat`.
    pub objective: f64,
    /// Interior point iterations used.
    pub iterations: usize,
    /// Maximum violated subgradient-optimality slack at `a_hat` (0 when the
    /// subgradient conditions hold exactly).
    pub kkt_residual: f64,
    /// Running best objective after each interior point iteration.
    pub objective_trace: Vec<f64>,
}

/// Fit a quantile regression to certified optimality.
pub fn fit_quantile(problem: &CheckLossProblem, tol: f64) -> Result<QuantileFitResult> {
    fit_quantile_capped(problem, tol, DEFAULT_MAX_ITER)
}

/// As [`fit_quantile`] with an explicit iteration cap.
pub fn fit_quantile_capped(
    problem: &CheckLossProblem,
    tol: f64,
    max_iter: usize,
) -> Result<QuantileFitResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let z = &problem.z;
    let y = &problem.y;
    let tau = problem.tau;
    let n = z.nrows();

    // Dual box LP: max y'x  s.t.  Z'x = (1 - tau) Z'1,  0 <= x <= 1.
    // KKT multipliers of the equality constraint are the regression
    // coefficients; complementarity pairs (x, zl) and (s, w) with
    // w - zl = y - Z a at optimality.
    let ones = DVector::from_element(n, 1.0);
    let b = z.transpose() * &ones * (1.0 - tau);

    let mut x = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);

    // Start the multipliers from least squares. Dual feasibility pairs the
    // slacks as w - zl = y - Z a.
    let mut a = least_squares(z, y)?;
    let mut resid = y - z * &a;
    let eps0 = 1e-4 * (1.0 + resid.amax());
    let mut zl = resid.map(|r| (-r).max(0.0) + eps0);
    let mut w = resid.map(|r| r.max(0.0) + eps0);

    let mut best_a = a.clone();
    let mut best_obj = check_loss_sum(&resid, tau);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let offset = (1.0 - tau) * y.sum(); // y'd = y'x - offset
    let step_scale = 0.9995;

    for iter in 0..max_iter {
        iterations = iter + 1;

        // Residual of dual feasibility folded into r_now = y - Z a.
        let gap = zl.dot(&x) + w.dot(&s);
        let dual_obj = y.dot(&x) - offset;
        if best_obj - dual_obj <= tol * (1.0 + dual_obj.abs()) {
            converged = true;
            iterations = iter;
            break;
        }

        let q = DVector::from_fn(n, |i, _| 1.0 / (zl[i] / x[i] + w[i] / s[i]));
        let m = weighted_gram(z, &q);
        let chol = cholesky_with_ridge(m)?;

        // Predictor (affine) direction.
        let r_now = y - z * &a;
        let rp = &b - z.transpose() * &x;
        let qv = q.component_mul(&r_now);
        let da_aff = chol.solve(&(z.transpose() * &qv - &rp));
        let dx_aff = q.component_mul(&(&r_now - z * &da_aff));
        let dz_aff = DVector::from_fn(n, |i, _| -zl[i] - zl[i] / x[i] * dx_aff[i]);
        let dw_aff = DVector::from_fn(n, |i, _| -w[i] + w[i] / s[i] * dx_aff[i]);

        let alpha_p_aff = step_length(&x, &dx_aff, &s, &dx_aff.map(|v| -v), step_scale);
        let alpha_d_aff = step_length(&zl, &dz_aff, &w, &dw_aff, step_scale);
        let gap_aff = (0..n)
            .map(|i| {
                (zl[i] + alpha_d_aff * dz_aff[i]) * (x[i] + alpha_p_aff * dx_aff[i])
                    + (w[i] + alpha_d_aff * dw_aff[i]) * (s[i] - alpha_p_aff * dx_aff[i])
            })
            .sum::<f64>();
        let mu = (gap_aff / gap).powi(3) * gap / (2.0 * n as f64);

        // Corrector, reusing the factorization.
        let v = DVector::from_fn(n, |i, _| {
            r_now[i] + mu / x[i]
                - mu / s[i]
                - dx_aff[i] * dz_aff[i] / x[i]
                - dx_aff[i] * dw_aff[i] / s[i]
        });
        let qv = q.component_mul(&v);
        let da = chol.solve(&(z.transpose() * &qv - &rp));
        let dx = q.component_mul(&(&v - z * &da));
        let dz = DVector::from_fn(n, |i, _| {
            mu / x[i] - zl[i] - dx_aff[i] * dz_aff[i] / x[i] - zl[i] / x[i] * dx[i]
        });
        let dw = DVector::from_fn(n, |i, _| {
            mu / s[i] - w[i] + dx_aff[i] * dw_aff[i] / s[i] + w[i] / s[i] * dx[i]
        });

        let alpha_p = step_length(&x, &dx, &s, &dx.map(|v| -v), step_scale);
        let alpha_d = step_length(&zl, &dz, &w, &dw, step_scale);

        x.axpy(alpha_p, &dx, 1.0);
        s.axpy(-alpha_p, &dx, 1.0);
        a.axpy(alpha_d, &da, 1.0);
        zl.axpy(alpha_d, &dz, 1.0);
        w.axpy(alpha_d, &dw, 1.0);

        resid = y - z * &a;
        let obj = check_loss_sum(&resid, tau);
        if obj < best_obj {
            best_obj = obj;
            best_a = a.clone();
        }
        trace.push(best_obj);
    }

    // Vertex polish: interpolate the p observations with the smallest
    // residuals; accept if the exact subgradient conditions certify the
    // basic solution as optimal.
    let mut final_a = best_a;
    let mut final_obj = best_obj;
    if let Some((a_pol, obj_pol)) = polish(z, y, tau, &final_a) {
        if obj_pol <= final_obj + 1e-12 * (1.0 + final_obj.abs()) {
            final_a = a_pol;
            final_obj = obj_pol;
        }
    }
    let kkt = kkt_residual(z, y, tau, &final_a);
    trace.push(final_obj);

    if !converged {
        let dual_obj = y.dot(&x) - offset;
        let certified = final_obj - dual_obj <= tol * (1.0 + dual_obj.abs());
        let zero_scale = column_scale(z);
        if !certified && kkt > tol * zero_scale {
            return Err(Error::NoConvergence {
                iterations,
                kkt_residual: kkt,
            });
        }
    }

    Ok(QuantileFitResult {
        a_hat: final_a,
        objective: final_obj,
        iterations,
        kkt_residual: kkt,
        objective_trace: trace,
    })
}

fn column_scale(z: &DMatrix<f64>) -> f64 {
    let mut scale: f64 = 1.0;
    for j in 0..z.ncols() {
        scale = scale.max(z.column(j).iter().map(|v| v.abs()).sum());
    }
    scale
}

/// Subgradient-optimality slack of `a`: for every column j of Z,
/// `| sum_{r_i != 0} z_ij (tau - 1{r_i < 0}) | <= sum_{r_i = 0} |z_ij|`
/// must hold at an optimum. Returns the largest violation (0 if none).
pub fn kkt_residual(z: &DMatrix<f64>, y: &DVector<f64>, tau: f64, a: &DVector<f64>) -> f64 {
    let r = y - z * a;
    let zero_tol = 1e-7 * (1.0 + y.amax());
    let mut worst: f64 = 0.0;
    for j in 0..z.ncols() {
        let mut grad = 0.0;
        let mut slack = 0.0;
        for i in 0..z.nrows() {
            if r[i].abs() <= zero_tol {
                slack += z[(i, j)].abs();
            } else if r[i] < 0.0 {
                grad += z[(i, j)] * (tau - 1.0);
            } else {
                grad += z[(i, j)] * tau;
            }
        }
        worst = worst.max(grad.abs() - slack);
    }
    worst.max(0.0)
}

/// Interpolate the p observations with smallest absolute residuals (greedily
/// extended to a full-rank subset) and return the basic solution if it is
/// exactly optimal.
fn polish(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    a: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let n = z.nrows();
    let p = z.ncols();
    let r = y - z * a;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| r[i].abs().partial_cmp(&r[j].abs()).unwrap());

    // Greedy selection of p rows spanning the column space, by modified
    // Gram-Schmidt against the already selected rows.
    let mut selected: Vec<usize> = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    for &i in &order {
        if selected.len() == p {
            break;
        }
        let mut v = z.row(i).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for u in &ortho {
            let proj = u.dot(&v);
            v.axpy(-proj, u, 1.0);
        }
        if v.norm() > 1e-10 * norm0.max(1.0) {
            v /= v.norm();
            ortho.push(v);
            selected.push(i);
        }
    }
    if selected.len() < p {
        return None;
    }

    let zb = DMatrix::from_fn(p, p, |bi, j| z[(selected[bi], j)]);
    let yb = DVector::from_fn(p, |bi, _| y[selected[bi]]);
    let a_pol = zb.lu().solve(&yb)?;
    if a_pol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if kkt_residual(z, y, tau, &a_pol) > 1e-12 * n as f64 * column_scale(z) {
        return None;
    }
    let obj = check_loss_sum(&(y - z * &a_pol), tau);
    Some((a_pol, obj))
}

fn step_length(
    pos1: &DVector<f64>,
    dir1: &DVector<f64>,
    pos2: &DVector<f64>,
    dir2: &DVector<f64>,
    scale: f64,
) -> f64 {
    let mut alpha = 1.0f64 / scale;
    for i in 0..pos1.len() {
        if dir1[i] < 0.0 {
            alpha = alpha.min(-pos1[i] / dir1[i]);
        }
        if dir2[i] < 0.0 {
            alpha = alpha.min(-pos2[i] / dir2[i]);
        }
    }
    (scale * alpha).min(1.0)
}

fn weighted_gram(z: &DMatrix<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let p = z.ncols();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..z.nrows() {
        let qi = q[i];
        for j in 0..p {
            let zij = z[(i, j)] * qi;
            for k in j..p {
                m[(j, k)] += zij * z[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            m[(j, k)] = m[(k, j)];
        }
    }
    m
}

fn cholesky_with_ridge(mut m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let p = m.nrows();
    let mut ridge = 0.0;
    let trace = m.trace().max(f64::MIN_POSITIVE);
    for _ in 0..8 {
        let trial = if ridge == 0.0 {
            m.clone()
        } else {
            let mut t = m.clone();
            for j in 0..p {
                t[(j, j)] += ridge;
            }
            t
        };
        if let Some(c) = trial.cholesky() {
            return Ok(c);
        }
        ridge = if ridge == 0.0 {
            1e-14 * trace
        } else {
            ridge * 100.0
        };
        if ridge > 1e-4 * trace {
            break;
        }
    }
    // last resort: heavy ridge
    for j in 0..p {
        m[(j, j)] += 1e-4 * trace;
    }
    m.cholesky()
        .ok_or_else(|| Error::Singular("interior point normal equations".into()))
}

fn least_squares(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = z.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("least squares triangular solve".into()))
}

/// First-stage fit over a full panel: coefficient matrix `A` (p x T) and the
/// fitted panel `Y_hat = Z A` (n x T).
#[derive(Debug, Clone)]
pub struct SieveFit {
    /// Per-period coefficients, column t solves period t.
    pub coefficients: DMatrix<f64>,
    /// Fitted panel `Z * coefficients`.
    pub fitted: DMatrix<f64>,
    /// Per-period solver diagnostics (objective, iterations, kkt residual).
    pub diagnostics: Vec<PeriodDiagnostics>,
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodDiagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl SieveFit {
    pub fn num_features(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn num_periods(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn num_units(&self) -> usize {
        self.fitted.nrows()
    }
}

/// Run the period-t quantile regressions for every column of `Y` against a
/// shared design. Periods are solved independently (and concurrently); the
/// result does not depend on scheduling order.
pub fn fit_quantile_panel(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tau: f64,
    tol: f64,
) -> Result<SieveFit> {
    if y.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} units but design has {} rows",
            y.nrows(),
            z.nrows()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    check_full_rank(z)?;
    let t_count = y.ncols();
    let columns: Vec<Result<QuantileFitResult>> = (0..t_count)
        .into_par_iter()
        .map(|t| {
            let problem = CheckLossProblem::new(z.clone(), y.column(t).into_owned(), tau)?;
            fit_quantile(&problem, tol)
        })
        .collect();

    let p = z.ncols();
    let mut coefficients = DMatrix::zeros(p, t_count);
    let mut diagnostics = Vec::with_capacity(t_count);
    for (t, res) in columns.into_iter().enumerate() {
        let fit = res.map_err(|e| e.in_period(t))?;
        coefficients.set_column(t, &fit.a_hat);
        diagnostics.push(PeriodDiagnostics {
            objective: fit.objective,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
        });
    }
    let fitted = z * &coefficients;
    Ok(SieveFit {
        coefficients,
        fitted,
        diagnostics,
    })
}

/// Least-squares analogue of [`fit_quantile_panel`]: `A = (Z'Z)^{-1} Z' Y`,
/// computed through a QR factorization of the design.
pub fn fit_least_squares_panel(y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<SieveFit> {
    if y.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} units but design has {} rows",
            y.nrows(),
            z.nrows()
        )));
    }
    check_full_rank(z)?;
    let qr = z.clone().qr();
    let qty = qr.q().transpose() * y;
    let coefficients = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("least squares triangular solve".into()))?;
    let fitted = z * &coefficients;
    let diagnostics = (0..y.ncols())
        .map(|t| {
            let rss = (y.column(t) - fitted.column(t)).norm_squared();
            PeriodDiagnostics {
                objective: rss,
                iterations: 1,
                kkt_residual: 0.0,
            }
        })
        .collect();
    Ok(SieveFit {
        coefficients,
        fitted,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn check_loss_branches() {
        assert_eq!(check_loss(1.0, 0.25), 0.25);
        assert_eq!(check_loss(-1.0, 0.25), 0.75);
        for tau in [0.1, 0.5, 0.9] {
            assert_eq!(check_loss(0.0, tau), 0.0);
        }
    }

    #[test]
    fn rejects_bad_tau() {
        let z = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            CheckLossProblem::new(z.clone(), y.clone(), 0.0),
            Err(Error::InvalidTau(_))
        ));
        assert!(matches!(
            CheckLossProblem::new(z, y, 1.0),
            Err(Error::InvalidTau(_))
        ));
    }

    #[test]
    fn rejects_rank_deficient_design() {
        let z = DMatrix::from_fn(4, 2, |i, _| i as f64); // duplicated columns
        let y = DVector::from_element(4, 1.0);
        assert!(matches!(
            CheckLossProblem::new(z, y, 0.5),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn intercept_only_median() {
        let z = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let problem = CheckLossProblem::new(z, y, 0.5).unwrap();
        let fit = fit_quantile(&problem, 1e-8).unwrap();
        assert!((fit.a_hat[0] - 3.0).abs() < 1e-9, "median {}", fit.a_hat[0]);
        assert_eq!(fit.kkt_residual, 0.0);
    }

    #[test]
    fn zero_residual_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = DMatrix::from_fn(20, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let a0 = DVector::from_column_slice(&[0.5, -1.2, 2.0]);
        let y = &z * &a0;
        for tau in [0.1, 0.5, 0.9] {
            let problem = CheckLossProblem::new(z.clone(), y.clone(), tau).unwrap();
            let fit = fit_quantile(&problem, 1e-8).unwrap();
            assert!(fit.objective < 1e-10, "objective {}", fit.objective);
            assert!((&fit.a_hat - &a0).amax() < 1e-8);
        }
    }

    /// Brute-force oracle: minimize over all basic solutions (interpolating
    /// p-subsets of observations).
    fn brute_force_objective(z: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
        let p = z.ncols();
        let mut best = f64::INFINITY;
        let mut subset = vec![0usize; p];
        fn rec(
            z: &DMatrix<f64>,
            y: &DVector<f64>,
            tau: f64,
            subset: &mut Vec<usize>,
            depth: usize,
            start: usize,
            best: &mut f64,
        ) {
            let p = z.ncols();
            if depth == p {
                let zb = DMatrix::from_fn(p, p, |bi, j| z[(subset[bi], j)]);
                let yb = DVector::from_fn(p, |bi, _| y[subset[bi]]);
                if let Some(a) = zb.lu().solve(&yb) {
                    if a.iter().all(|v| v.is_finite()) {
                        let obj = check_loss_sum(&(y - z * &a), tau);
                        if obj < *best {
                            *best = obj;
                        }
                    }
                }
                return;
            }
            for i in start..z.nrows() {
                subset[depth] = i;
                rec(z, y, tau, subset, depth + 1, i + 1, best);
            }
        }
        rec(z, y, tau, &mut subset, 0, 0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..25 {
            let n = rng.random_range(5..=20);
            let p = rng.random_range(1..=3).min(n);
            let z = DMatrix::from_fn(n, p, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random_range(-2.0..2.0)
                }
            });
            let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let tau = [0.1, 0.5, 0.9][case % 3];
            let problem = match CheckLossProblem::new(z.clone(), y.clone(), tau) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let fit = fit_quantile(&problem, 1e-8).unwrap();
            let oracle = brute_force_objective(&z, &y, tau);
            assert!(
                (fit.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
                "case {case}: solver {} vs oracle {}",
                fit.objective,
                oracle
            );
        }
    }

    #[test]
    fn extreme_quantiles_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        for case in 0..12 {
            let n = rng.random_range(8..=24);
            let z = DMatrix::from_fn(n, 2, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let tau = if case % 2 == 0 { 0.02 } else { 0.98 };
            let problem = CheckLossProblem::new(z.clone(), y.clone(), tau).unwrap();
            let fit = fit_quantile(&problem, 1e-8).unwrap();
            let oracle = brute_force_objective(&z, &y, tau);
            assert!(
                (fit.objective - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
                "tau={tau}: {} vs {}",
                fit.objective,
                oracle
            );
        }
    }

    #[test]
    fn ill_conditioned_design_still_certifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        // nearly collinear second and third columns
        let z = DMatrix::from_fn(40, 3, |i, j| {
            let base: f64 = rng.random_range(-1.0..1.0);
            match j {
                0 => 1.0,
                1 => base,
                _ => base + 1e-4 * ((i % 7) as f64 - 3.0),
            }
        });
        let y = DVector::from_fn(40, |_, _| rng.random_range(-2.0..2.0));
        let problem = CheckLossProblem::new(z.clone(), y.clone(), 0.5).unwrap();
        let fit = fit_quantile(&problem, 1e-8).unwrap();
        let oracle = brute_force_objective(&z, &y, 0.5);
        assert!((fit.objective - oracle).abs() <= 1e-7 * (1.0 + oracle.abs()));
    }

    #[test]
    fn square_design_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(139);
        let z = DMatrix::from_fn(3, 3, |i, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0) + (i == j) as u8 as f64
            }
        });
        let y = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let problem = CheckLossProblem::new(z.clone(), y.clone(), 0.3).unwrap();
        let fit = fit_quantile(&problem, 1e-8).unwrap();
        assert!(fit.objective < 1e-10);
        assert!((&z * &fit.a_hat - &y).amax() < 1e-9);
    }

    #[test]
    fn objective_trace_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z = DMatrix::from_fn(60, 4, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DVector::from_fn(60, |_, _| rng.random_range(-2.0..2.0));
        let problem = CheckLossProblem::new(z, y, 0.3).unwrap();
        let fit = fit_quantile(&problem, 1e-10).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-15,
                "trace increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(fit.iterations > 0);
    }

    #[test]
    fn residual_sign_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = rng.random_range(10..=60);
            let p = rng.random_range(1..=4).min(n);
            let z = DMatrix::from_fn(n, p, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let tau = rng.random_range(0.1..0.9);
            let problem = match CheckLossProblem::new(z.clone(), y.clone(), tau) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let fit = fit_quantile(&problem, 1e-8).unwrap();
            let r = &y - &z * &fit.a_hat;
            let zero_tol = 1e-7 * (1.0 + y.amax());
            let neg = r.iter().filter(|&&v| v < -zero_tol).count();
            let pos = r.iter().filter(|&&v| v > zero_tol).count();
            assert!(neg as f64 <= n as f64 * tau + p as f64 + 1e-9, "neg={neg}");
            assert!(
                pos as f64 <= n as f64 * (1.0 - tau) + p as f64 + 1e-9,
                "pos={pos}"
            );
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let z = DMatrix::from_fn(40, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DVector::from_fn(40, |_, _| rng.random_range(-2.0..2.0));
        let tau = 0.35;
        let base = fit_quantile(
            &CheckLossProblem::new(z.clone(), y.clone(), tau).unwrap(),
            1e-10,
        )
        .unwrap();

        let c = DVector::from_column_slice(&[0.7, -0.4, 1.1]);
        let shifted_y = &y + &z * &c;
        let shifted = fit_quantile(
            &CheckLossProblem::new(z.clone(), shifted_y, tau).unwrap(),
            1e-10,
        )
        .unwrap();
        assert!((&shifted.a_hat - (&base.a_hat + &c)).amax() < 1e-6);

        let lambda = 2.5;
        let scaled = fit_quantile(
            &CheckLossProblem::new(z.clone(), &y * lambda, tau).unwrap(),
            1e-10,
        )
        .unwrap();
        assert!((&scaled.a_hat - &base.a_hat * lambda).amax() < 1e-6);
    }

    #[test]
    fn intercept_monotone_in_tau() {
        let z = DMatrix::from_element(9, 1, 1.0);
        let y = DVector::from_column_slice(&[3.0, -1.0, 4.5, 0.2, 2.2, -0.7, 1.9, 5.1, 0.0]);
        let mut last = f64::NEG_INFINITY;
        for tau in [0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9] {
            let fit = fit_quantile(
                &CheckLossProblem::new(z.clone(), y.clone(), tau).unwrap(),
                1e-9,
            )
            .unwrap();
            assert!(
                fit.a_hat[0] >= last - 1e-9,
                "tau {tau}: {} < {last}",
                fit.a_hat[0]
            );
            last = fit.a_hat[0];
        }
    }

    #[test]
    fn iteration_cap_errors_with_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let z = DMatrix::from_fn(50, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DVector::from_fn(50, |_, _| rng.random_range(-2.0..2.0));
        let problem = CheckLossProblem::new(z, y, 0.5).unwrap();
        match fit_quantile_capped(&problem, 1e-12, 1) {
            Err(Error::NoConvergence {
                iterations,
                kkt_residual,
            }) => {
                assert_eq!(iterations, 1);
                assert!(kkt_residual.is_finite());
            }
            Ok(fit) => {
                // the polish step may still certify optimality after one sweep
                assert_eq!(fit.kkt_residual, 0.0);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn panel_single_column_matches_single_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let z = DMatrix::from_fn(30, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DMatrix::from_fn(30, 1, |_, _| rng.random_range(-2.0..2.0));
        let panel = fit_quantile_panel(&y, &z, 0.5, 1e-8).unwrap();
        let single = fit_quantile(
            &CheckLossProblem::new(z.clone(), y.column(0).into_owned(), 0.5).unwrap(),
            1e-8,
        )
        .unwrap();
        assert!((panel.coefficients.column(0) - single.a_hat).amax() < 1e-12);
    }

    #[test]
    fn panel_noiseless_low_rank_reconstruction() {
        // Y = G F' with G in the span of the design columns.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 50;
        let z = DMatrix::from_fn(n, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let g = &z * &b;
        let f = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = &g * f.transpose();
        let fit = fit_quantile_panel(&y, &z, 0.3, 1e-8).unwrap();
        assert!((&fit.fitted - &y).amax() < 1e-8);
    }

    #[test]
    fn panel_column_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let z = DMatrix::from_fn(25, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DMatrix::from_fn(25, 4, |_, _| rng.random_range(-2.0..2.0));
        let fit = fit_quantile_panel(&y, &z, 0.5, 1e-8).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut y_perm = y.clone();
        for (dst, &src) in perm.iter().enumerate() {
            y_perm.set_column(dst, &y.column(src));
        }
        let fit_perm = fit_quantile_panel(&y_perm, &z, 0.5, 1e-8).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert!(
                (fit_perm.coefficients.column(dst) - fit.coefficients.column(src)).amax() < 1e-12
            );
        }
    }

    #[test]
    fn panel_failure_reports_period() {
        let z = DMatrix::from_element(4, 1, 1.0);
        let mut y = DMatrix::from_element(4, 3, 1.0);
        y[(0, 2)] = f64::NAN;
        let err = fit_quantile_panel(&y, &z, 0.5, 1e-8).unwrap_err();
        // NaN breaks the fit in period 2 only
        match err {
            Error::Period { t, .. } => assert_eq!(t, 2),
            other => panic!("expected period error, got {other}"),
        }
    }

    #[test]
    fn least_squares_exact_on_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let z = DMatrix::from_fn(20, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let a0 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = &z * &a0;
        let fit = fit_least_squares_panel(&y, &z).unwrap();
        assert!((&fit.coefficients - &a0).amax() < 1e-10);
    }

    #[test]
    fn least_squares_intercept_only_is_mean() {
        let z = DMatrix::from_element(4, 1, 1.0);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let fit = fit_least_squares_panel(&y, &z).unwrap();
        assert!((fit.coefficients[(0, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let z = DMatrix::from_fn(30, 4, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-2.0..2.0));
        let fit = fit_least_squares_panel(&y, &z).unwrap();
        // independent route: explicit normal equations by Gaussian elimination
        let ztz = z.transpose() * &z;
        let zty = z.transpose() * &y;
        let oracle = ztz.lu().solve(&zty).unwrap();
        assert!((&fit.coefficients - &oracle).amax() < 1e-10);
    }

    #[test]
    fn least_squares_rejects_rank_deficiency() {
        let z = DMatrix::from_fn(5, 2, |i, _| i as f64 + 1.0);
        let y = DMatrix::from_element(5, 1, 1.0);
        assert!(matches!(
            fit_least_squares_panel(&y, &z),
            Err(Error::RankDeficient { .. })
        ));
    }
}
