//! Integration tests across the estimation pipeline: permutation
//! invariance, paired-method comparisons, sieve-size bias reduction and
//! factor-count behavior on designed panels.

mod common;

use common::*;
use nalgebra::DMatrix;

use qppca::baselines::{pca_pipeline, ppca_pipeline};
use qppca::factor_count::select_num_factors;
use qppca::panel::PanelData;
use qppca::qppca::{first_stage, qppca_pipeline, PipelineOptions};
use qppca::simulate::{
    loading_grid_rmse, rotation_align, simulate_panel, simulate_panel_stream, trace_r2, DgpSpec,
    ErrorDistribution, FactorProcess, LoadingFunction,
};

/// Reordering the units leaves the factors unchanged and permutes the
/// projected loadings identically.
#[test]
fn unit_permutation_invariance() {
    let spec = acceptance_spec(80, 8, ErrorDistribution::Normal, false, 42);
    let sim = simulate_panel(&spec).unwrap();
    let est = qppca_pipeline(&sim.panel, 0.5, 3, 2).unwrap();

    let n = sim.panel.num_units();
    let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
    let mut y_perm = DMatrix::zeros(n, sim.panel.num_periods());
    let mut x_perm = DMatrix::zeros(n, sim.panel.num_characteristics());
    for (dst, &src) in perm.iter().enumerate() {
        y_perm.set_row(dst, &sim.panel.y.row(src));
        x_perm.set_row(dst, &sim.panel.x.row(src));
    }
    let permuted_panel = PanelData::new(y_perm, x_perm).unwrap();
    let est_perm = qppca_pipeline(&permuted_panel, 0.5, 3, 2).unwrap();

    assert!(
        (&est.f_hat - &est_perm.f_hat).amax() < 1e-10,
        "factors changed under unit permutation"
    );
    for (dst, &src) in perm.iter().enumerate() {
        assert!((est_perm.g_hat.row(dst) - est.g_hat.row(src)).amax() < 1e-10);
    }
}

/// The median-fit factor space improves with n in most paired replications.
#[test]
fn trace_r2_improves_with_n() {
    let mut better = 0;
    let reps = 20;
    for rep in 0..reps {
        let mut r2 = [0.0, 0.0];
        for (slot, &n) in [200usize, 2000].iter().enumerate() {
            let spec = acceptance_spec(n, 10, ErrorDistribution::Normal, false, 1313);
            let sim = simulate_panel_stream(&spec, rep).unwrap();
            let est = qppca_pipeline(&sim.panel, 0.5, 4, 2).unwrap();
            r2[slot] = trace_r2(&sim.true_factors_at(0.5), &est.f_hat).unwrap();
        }
        if r2[1] >= r2[0] {
            better += 1;
        }
    }
    assert!(
        better * 100 >= reps * 80,
        "trace-R2 improved in only {better}/{reps} paired replications"
    );
}

/// With Gaussian errors at small T, the projected baseline dominates raw PCA
/// on average.
#[test]
fn projected_baseline_beats_raw_pca_under_gaussian() {
    let mut ppca_sum = 0.0;
    let mut pca_sum = 0.0;
    let reps = 30;
    for rep in 0..reps {
        let spec = acceptance_spec(300, 10, ErrorDistribution::Normal, false, 707);
        let sim = simulate_panel_stream(&spec, rep).unwrap();
        let f_true = sim.true_factors_at(0.5);
        let p = ppca_pipeline(&sim.panel, 4, 2).unwrap();
        let raw = pca_pipeline(&sim.panel, 2).unwrap();
        ppca_sum += trace_r2(&f_true, &p.f_hat).unwrap();
        pca_sum += trace_r2(&f_true, &raw.f_hat).unwrap();
    }
    assert!(
        ppca_sum >= pca_sum,
        "projected PCA {:.4} did not dominate raw PCA {:.4}",
        ppca_sum / reps as f64,
        pca_sum / reps as f64
    );
}

/// A smooth loading function outside every polynomial span is approximated
/// better as the sieve grows.
#[test]
fn loading_error_falls_as_sieve_grows() {
    let spec = DgpSpec {
        n: 3000,
        t: 12,
        num_characteristics: 2,
        loading_functions: vec![
            LoadingFunction::Sine {
                characteristic: 0,
                scale: 1.5,
            },
            LoadingFunction::Linear {
                characteristic: 1,
                scale: 3.0_f64.sqrt(),
            },
        ],
        include_scale_factor: false,
        error_dist: ErrorDistribution::Normal,
        factor_process: FactorProcess::IidNormal,
        noise_scale: 0.3,
        seed: 515,
    };
    let sim = simulate_panel(&spec).unwrap();
    let f_true = sim.true_factors_at(0.5);
    let g_true = sim.true_loadings_at(0.5);

    let mut sup_by_kn = Vec::new();
    for k_n in [2usize, 6] {
        let est = qppca_pipeline(&sim.panel, 0.5, k_n, 2).unwrap();
        let h = rotation_align(&g_true, &f_true, &est.f_hat, &est.omega_hat).unwrap();
        let grid: Vec<Vec<f64>> = (0..101)
            .map(|i| {
                let (lo, hi) = est.basis.fitted_range(0);
                let std_val = lo + (hi - lo) * i as f64 / 100.0;
                vec![
                    est.standardizer.means[0] + est.standardizer.sds[0] * std_val,
                    est.standardizer.means[1],
                ]
            })
            .collect();
        let err = loading_grid_rmse(
            &|x| est.loading_at_raw(x),
            &h,
            &|x| {
                nalgebra::DVector::from_iterator(
                    2,
                    spec.loading_functions.iter().map(|lf| lf.evaluate(x)),
                )
            },
            &grid,
        )
        .unwrap();
        sup_by_kn.push(err.rmse.iter().cloned().fold(0.0f64, f64::max));
    }
    assert!(
        sup_by_kn[1] < sup_by_kn[0],
        "loading RMSE did not fall with k_n: {} -> {}",
        sup_by_kn[0],
        sup_by_kn[1]
    );
}

/// Both selection rules recover the rank of a noiseless two-factor panel,
/// and a cap below the true rank binds.
#[test]
fn factor_count_on_designed_panels() {
    let mut spec = acceptance_spec(1000, 10, ErrorDistribution::Normal, false, 616);
    spec.noise_scale = 0.0;
    let sim = simulate_panel(&spec).unwrap();
    let (fit, _, _) = first_stage(&sim.panel, 0.5, 4, &PipelineOptions::default()).unwrap();
    let counts = select_num_factors(&fit, 8, 0.25).unwrap();
    assert_eq!(counts.r_rank_min, 2);
    assert_eq!(counts.r_eigen_ratio, 2);

    // a cap below the true rank binds
    let capped = select_num_factors(&fit, 1, 0.25).unwrap();
    assert!(capped.r_rank_min <= 1);
    assert!(capped.r_eigen_ratio <= 1);
}

/// On a pure-noise panel the rank-minimization rule reports zero factors in
/// the majority of replications (while the eigen-ratio rule cannot).
#[test]
fn pure_noise_rank_is_zero() {
    let mut zeros = 0;
    let reps = 20;
    for rep in 0..reps {
        let spec = DgpSpec {
            n: 1000,
            t: 10,
            num_characteristics: 2,
            loading_functions: vec![LoadingFunction::Linear {
                characteristic: 0,
                scale: 0.0,
            }],
            include_scale_factor: false,
            error_dist: ErrorDistribution::Normal,
            factor_process: FactorProcess::IidNormal,
            noise_scale: 1.0,
            seed: 818,
        };
        let sim = simulate_panel_stream(&spec, rep).unwrap();
        let (fit, _, _) = first_stage(&sim.panel, 0.5, 4, &PipelineOptions::default()).unwrap();
        let counts = select_num_factors(&fit, 8, 0.25).unwrap();
        if counts.r_rank_min == 0 {
            zeros += 1;
        }
        assert!(counts.r_eigen_ratio >= 1);
    }
    assert!(
        zeros * 2 > reps,
        "rank-min reported zero in only {zeros}/{reps} replications"
    );
}

/// The updated factor estimate stays close to the eigen-decomposition
/// factors on a well-behaved panel.
#[test]
fn updated_factors_agree_on_clean_panels() {
    let spec = acceptance_spec(500, 10, ErrorDistribution::Normal, false, 919);
    let sim = simulate_panel(&spec).unwrap();
    let est = qppca_pipeline(&sim.panel, 0.5, 4, 2).unwrap();
    let r2 = trace_r2(&est.f_hat, &est.f_tilde).unwrap();
    assert!(
        r2 > 0.99,
        "updated factors span a different space: trace-R2 {r2}"
    );
}
