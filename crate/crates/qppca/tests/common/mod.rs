//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qppca::quantreg::check_loss_sum;
use qppca::simulate::{DgpSpec, ErrorDistribution, FactorProcess, LoadingFunction};

/// Brute-force oracle for the check-loss problem: enumerate every basic
/// solution (coefficients interpolating p observations) and keep the best
/// objective. Valid because some optimum of the piecewise-linear program is
/// always attained at such a vertex when the design has full column rank.
pub fn brute_force_objective(z: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
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

/// Location loadings scaled to unit variance under Uniform(-1, 1)
/// characteristics, so both factors carry equal signal. `Var(x) = 1/3` and
/// `Var(x^2 - 1/3) = 4/45`.
pub fn unit_variance_loadings() -> Vec<LoadingFunction> {
    vec![
        LoadingFunction::Linear {
            characteristic: 0,
            scale: 3.0_f64.sqrt(),
        },
        LoadingFunction::CenteredQuadratic {
            characteristic: 1,
            scale: (45.0_f64 / 4.0).sqrt(),
        },
    ]
}

/// Two-location-factor design used across the acceptance criteria.
pub fn acceptance_spec(
    n: usize,
    t: usize,
    error_dist: ErrorDistribution,
    include_scale_factor: bool,
    seed: u64,
) -> DgpSpec {
    DgpSpec {
        n,
        t,
        num_characteristics: 2,
        loading_functions: unit_variance_loadings(),
        include_scale_factor,
        error_dist,
        factor_process: FactorProcess::IidNormal,
        noise_scale: 1.0,
        seed,
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}
