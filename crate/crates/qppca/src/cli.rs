//! Command-line interface: `fit`, `simulate` and `select-rank`.
//!
//! Flags mirror the [`RunConfig`] fields; a JSON config file supplies
//! defaults which individual flags override. On failure a machine-readable
//! error object is written to stderr and the process exits nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::baselines::{pca_pipeline_with, ppca_pipeline};
use crate::basis::default_k_n;
use crate::error::{Error, Result};
use crate::factor_count::{
    default_r_bar, scaled_spectrum, select_from_spectrum, FactorCountResult,
};
use crate::io::{
    load_panel, write_manifest, write_matrix_csv, write_replication_csv, RunConfig, RunManifest,
};
use crate::panel::PanelData;
use crate::qppca::{assemble_estimate, first_stage, PipelineOptions, QppcaEstimate};
use crate::simulate::{run_monte_carlo, EstimatorKind, MonteCarloConfig};

#[derive(Parser)]
#[command(
    name = "qppca",
    version,
    about = "Quantile-projected PCA for characteristics-based factor models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the three-step estimator on a panel and write factor, loading and
    /// quantile-return artifacts.
    Fit(FitArgs),
    /// Run a Monte Carlo study comparing estimators on simulated panels.
    Simulate(SimulateArgs),
    /// Estimate the number of factors per quantile.
    SelectRank(SelectRankArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated quantile levels, e.g. 0.05,0.25,0.5,0.75,0.95
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Basis functions per characteristic.
    #[arg(long = "kn")]
    k_n: Option<usize>,
    /// Forced number of factors (otherwise selected per quantile).
    #[arg(long)]
    num_factors: Option<usize>,
    /// Cap on the eigenvalues inspected by the selection rules.
    #[arg(long)]
    r_bar: Option<usize>,
    /// Threshold constant of the rank-minimization rule.
    #[arg(long)]
    d: Option<f64>,
    /// First-stage solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for simulations.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated estimators: qppca,ppca,pca
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long = "out")]
    output_dir: Option<PathBuf>,
    /// Demean panel columns before standard PCA.
    #[arg(long)]
    demean: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Returns CSV: unit id column plus one column per period.
    #[arg(long)]
    returns: PathBuf,
    /// Characteristics CSV: unit id column plus one named column per
    /// characteristic.
    #[arg(long)]
    characteristics: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cross-section size.
    #[arg(long)]
    n: Option<usize>,
    /// Number of periods.
    #[arg(long)]
    t: Option<usize>,
    /// Number of characteristics.
    #[arg(long = "chars")]
    num_characteristics: Option<usize>,
    /// Number of location factors.
    #[arg(long)]
    r_loc: Option<usize>,
    /// Add a variance-shifting factor.
    #[arg(long)]
    scale_factor: bool,
    /// Error distribution: normal | student_t3 | cauchy
    #[arg(long)]
    error_dist: Option<String>,
    /// Factor process: iid | ar1
    #[arg(long)]
    factor_process: Option<String>,
    /// Multiplier on the idiosyncratic errors.
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Run replications serially.
    #[arg(long)]
    no_parallel: bool,
}

#[derive(Args)]
struct SelectRankArgs {
    #[arg(long)]
    returns: PathBuf,
    #[arg(long)]
    characteristics: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(taus) = &common.taus {
        config.taus = taus.clone();
    }
    if common.k_n.is_some() {
        config.k_n = common.k_n;
    }
    if common.num_factors.is_some() {
        config.num_factors = common.num_factors;
    }
    if common.r_bar.is_some() {
        config.r_bar = common.r_bar;
    }
    if let Some(d) = common.d {
        config.threshold_d = d;
    }
    if let Some(tol) = common.tol {
        config.tol = tol;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(methods) = &common.methods {
        config.methods = methods.clone();
    }
    if let Some(out) = &common.output_dir {
        config.output_dir = out.clone();
    }
    if common.demean {
        config.demean = true;
    }
    config.validate()?;
    Ok(config)
}

/// Entry point used by the binary: parse arguments, run, map errors to a
/// JSON object on stderr and a nonzero exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => load_config(&args.common)
            .and_then(|config| cmd_fit(&config, &args.returns, &args.characteristics).map(|_| ())),
        Command::Simulate(args) => load_config(&args.common).and_then(|mut config| {
            apply_sim_overrides(&mut config, &args);
            cmd_simulate(&config).map(|_| ())
        }),
        Command::SelectRank(args) => load_config(&args.common).and_then(|config| {
            cmd_select_rank(&config, &args.returns, &args.characteristics).map(|_| ())
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
            eprintln!("{payload}");
            1
        }
    }
}

fn apply_sim_overrides(config: &mut RunConfig, args: &SimulateArgs) {
    let sim = &mut config.sim;
    if let Some(n) = args.n {
        sim.n = n;
    }
    if let Some(t) = args.t {
        sim.t = t;
    }
    if let Some(d) = args.num_characteristics {
        sim.num_characteristics = d;
    }
    if let Some(r) = args.r_loc {
        sim.r_loc = r;
        sim.loading_functions = None;
    }
    if args.scale_factor {
        sim.include_scale_factor = true;
    }
    if let Some(dist) = &args.error_dist {
        sim.error_dist = dist.clone();
    }
    if let Some(proc) = &args.factor_process {
        sim.factor_process = proc.clone();
    }
    if let Some(s) = args.noise_scale {
        sim.noise_scale = s;
    }
    if let Some(reps) = args.reps {
        sim.n_reps = reps;
    }
    if args.no_parallel {
        sim.parallel = false;
    }
}

fn tau_label(tau: f64) -> String {
    format!("{tau}")
}

/// Everything `fit` produces for one quantile level.
pub struct TauFit {
    pub tau: f64,
    pub estimate: QppcaEstimate,
    pub counts: FactorCountResult,
}

/// Fit the estimator at every configured quantile and write the artifact
/// files. Returns the paths written.
pub fn cmd_fit(config: &RunConfig, returns: &Path, characteristics: &Path) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let panel = load_panel(returns, characteristics)?;
    fs::create_dir_all(&config.output_dir)?;
    let mut outputs = Vec::new();
    let mut timings = Vec::new();

    let k_n = config.k_n.unwrap_or_else(|| default_k_n(panel.num_units()));
    let r_bar = config
        .r_bar
        .unwrap_or_else(|| default_r_bar(panel.num_periods()))
        .min(panel.num_periods().saturating_sub(1))
        .max(1);
    let options = PipelineOptions { tol: config.tol };
    let methods = config.parsed_methods()?;

    // Per-quantile fits.
    let mut fits: Vec<TauFit> = Vec::new();
    for &tau in &config.taus {
        let stage_start = Instant::now();
        let fit = fit_one_tau(&panel, tau, k_n, r_bar, config, &options)?;
        timings.push((format!("fit tau={tau}"), stage_start.elapsed().as_millis()));
        fits.push(fit);
    }

    // Factor-count table across quantiles (plus a least-squares row when the
    // projected baseline is requested).
    let ppca = if methods.contains(&EstimatorKind::Ppca) {
        let r = config.num_factors.unwrap_or_else(|| {
            fits.iter()
                .map(|f| f.counts.r_rank_min)
                .max()
                .unwrap_or(1)
                .max(1)
        });
        Some(ppca_pipeline(&panel, k_n, r)?)
    } else {
        None
    };

    let counts_path = config.output_dir.join("factor_counts.csv");
    write_factor_count_table(&counts_path, &fits, ppca.as_ref(), &panel, r_bar, config)?;
    outputs.push(counts_path);

    for fit in &fits {
        let label = tau_label(fit.tau);
        let r = fit.estimate.num_factors;

        // factor series (both estimators of the factors)
        let mut columns = Vec::new();
        for j in 0..r {
            columns.push(format!("f_hat_{}", j + 1));
        }
        for j in 0..r {
            columns.push(format!("f_tilde_{}", j + 1));
        }
        let mut series = DMatrix::zeros(panel.num_periods(), 2 * r);
        series.columns_mut(0, r).copy_from(&fit.estimate.f_hat);
        series.columns_mut(r, r).copy_from(&fit.estimate.f_tilde);
        let path = config.output_dir.join(format!("factors_tau_{label}.csv"));
        write_matrix_csv(&path, "time_id", &panel.time_ids, &columns, &series)?;
        outputs.push(path);

        // loading-function grid: vary one standardized characteristic over
        // its observed range, others fixed at 0
        let path = config.output_dir.join(format!("loadings_tau_{label}.csv"));
        write_loading_grid(&path, &fit.estimate, &panel)?;
        outputs.push(path);

        // fitted quantile returns
        let path = config
            .output_dir
            .join(format!("quantile_returns_tau_{label}.csv"));
        write_matrix_csv(
            &path,
            "unit_id",
            &panel.unit_ids,
            &panel.time_ids,
            &fit.estimate.fitted_quantile_returns,
        )?;
        outputs.push(path);
    }

    // Cross-quantile factor correlations and means.
    let corr_path = config.output_dir.join("factor_correlations.csv");
    write_factor_correlations(&corr_path, &fits, ppca.as_ref(), &panel)?;
    outputs.push(corr_path);

    if config.demean || methods.contains(&EstimatorKind::Pca) {
        let r = config.num_factors.unwrap_or(1);
        let pca = pca_pipeline_with(&panel, r.max(1), config.demean)?;
        let mut columns = Vec::new();
        for j in 0..pca.f_hat.ncols() {
            columns.push(format!("f_hat_{}", j + 1));
        }
        let path = config.output_dir.join("factors_pca.csv");
        write_matrix_csv(&path, "time_id", &panel.time_ids, &columns, &pca.f_hat)?;
        outputs.push(path);
    }

    timings.push(("total".into(), started.elapsed().as_millis()));
    let manifest = RunManifest {
        command: "fit".into(),
        package_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        inputs: vec![
            returns.display().to_string(),
            characteristics.display().to_string(),
        ],
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        timings_ms: timings,
    };
    outputs.push(write_manifest(&manifest, &config.output_dir)?);
    Ok(outputs)
}

fn fit_one_tau(
    panel: &PanelData,
    tau: f64,
    k_n: usize,
    r_bar: usize,
    config: &RunConfig,
    options: &PipelineOptions,
) -> Result<TauFit> {
    let (fit, basis, standardizer) = first_stage(panel, tau, k_n, options)?;
    let spectrum = scaled_spectrum(&fit.fitted);
    let counts = select_from_spectrum(
        &spectrum,
        panel.num_units(),
        panel.num_periods(),
        r_bar,
        config.threshold_d,
    )?;
    let num_factors = config
        .num_factors
        .unwrap_or_else(|| counts.r_rank_min.max(1));
    let estimate = assemble_estimate(&fit, basis, standardizer, tau, num_factors)?;
    Ok(TauFit {
        tau,
        estimate,
        counts,
    })
}

fn write_factor_count_table(
    path: &Path,
    fits: &[TauFit],
    ppca: Option<&crate::baselines::BaselineEstimate>,
    panel: &PanelData,
    r_bar: usize,
    config: &RunConfig,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tau".to_string()];
    for j in 0..r_bar {
        header.push(format!("eigenvalue_{}", j + 1));
    }
    header.extend([
        "p_n".to_string(),
        "r_rank_min".to_string(),
        "r_eigen_ratio".to_string(),
    ]);
    w.write_record(&header)?;
    for fit in fits {
        let mut rec = vec![tau_label(fit.tau)];
        for j in 0..r_bar {
            rec.push(format!("{}", fit.counts.eigenvalues[j]));
        }
        rec.push(format!("{}", fit.counts.p_n));
        rec.push(fit.counts.r_rank_min.to_string());
        rec.push(fit.counts.r_eigen_ratio.to_string());
        w.write_record(&rec)?;
    }
    if let Some(est) = ppca {
        let spectrum = scaled_spectrum(&est.fitted_panel);
        let counts = select_from_spectrum(
            &spectrum,
            panel.num_units(),
            panel.num_periods(),
            r_bar,
            config.threshold_d,
        )?;
        let mut rec = vec!["mean".to_string()];
        for j in 0..r_bar {
            rec.push(format!("{}", counts.eigenvalues[j]));
        }
        rec.push(format!("{}", counts.p_n));
        rec.push(counts.r_rank_min.to_string());
        rec.push(counts.r_eigen_ratio.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_loading_grid(path: &Path, estimate: &QppcaEstimate, panel: &PanelData) -> Result<()> {
    let d_count = panel.num_characteristics();
    let r = estimate.num_factors;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["characteristic".to_string(), "x_standardized".to_string()];
    for j in 0..r {
        header.push(format!("g_{}", j + 1));
    }
    w.write_record(&header)?;
    for d in 0..d_count {
        let (lo, hi) = estimate.basis.fitted_range(d);
        for gi in 0..101 {
            let xv = lo + (hi - lo) * gi as f64 / 100.0;
            let mut point = vec![0.0; d_count];
            point[d] = xv;
            let g = estimate.loading_at(&point)?;
            let mut rec = vec![format!("x{d}"), format!("{xv}")];
            for j in 0..r {
                rec.push(format!("{}", g[j]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

fn write_factor_correlations(
    path: &Path,
    fits: &[TauFit],
    ppca: Option<&crate::baselines::BaselineEstimate>,
    panel: &PanelData,
) -> Result<()> {
    // first factor of every estimate, PPCA first
    let mut labels = Vec::new();
    let mut series: Vec<Vec<f64>> = Vec::new();
    if let Some(est) = ppca {
        labels.push("ppca".to_string());
        series.push(est.f_hat.column(0).iter().copied().collect());
    }
    for fit in fits {
        labels.push(format!("qppca_tau_{}", tau_label(fit.tau)));
        series.push(fit.estimate.f_hat.column(0).iter().copied().collect());
    }
    let k = labels.len();
    let mut table = DMatrix::zeros(k, k + 1);
    for i in 0..k {
        for j in 0..k {
            table[(i, j)] = pearson(&series[i], &series[j]);
        }
        table[(i, k)] = series[i].iter().sum::<f64>() / panel.num_periods() as f64;
    }
    let mut columns = labels.clone();
    columns.push("mean".to_string());
    write_matrix_csv(path, "factor", &labels, &columns, &table)
}

/// Run the Monte Carlo study described by the configuration and write the
/// per-replication records plus JSON aggregates.
pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    fs::create_dir_all(&config.output_dir)?;
    let spec = config.sim.to_dgp_spec(config.seed)?;
    let methods = config.parsed_methods()?;
    let mc = MonteCarloConfig {
        methods,
        taus: config.taus.clone(),
        n_reps: config.sim.n_reps,
        parallel: config.sim.parallel,
        k_n: config.k_n.unwrap_or_else(|| default_k_n(spec.n)),
    };
    let report = run_monte_carlo(&spec, &mc)?;

    let mut outputs = Vec::new();
    let rep_path = config.output_dir.join("replications.csv");
    write_replication_csv(&rep_path, &report)?;
    outputs.push(rep_path);

    let agg_path = config.output_dir.join("aggregate.json");
    fs::write(&agg_path, serde_json::to_string_pretty(&report.aggregates)?)?;
    outputs.push(agg_path);

    let manifest = RunManifest {
        command: "simulate".into(),
        package_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        inputs: Vec::new(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        timings_ms: vec![("total".into(), started.elapsed().as_millis())],
    };
    outputs.push(write_manifest(&manifest, &config.output_dir)?);
    Ok(outputs)
}

/// Estimate the number of factors per quantile and write the eigenvalue
/// table.
pub fn cmd_select_rank(
    config: &RunConfig,
    returns: &Path,
    characteristics: &Path,
) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let panel = load_panel(returns, characteristics)?;
    fs::create_dir_all(&config.output_dir)?;

    if panel.num_periods() < 2 {
        return Err(Error::InvalidParameter(
            "rank selection needs at least two periods (the threshold rule uses ln T)".into(),
        ));
    }

    let k_n = config.k_n.unwrap_or_else(|| default_k_n(panel.num_units()));
    let r_bar = config
        .r_bar
        .unwrap_or_else(|| default_r_bar(panel.num_periods()))
        .min(panel.num_periods().saturating_sub(1))
        .max(1);
    let options = PipelineOptions { tol: config.tol };

    let mut fits = Vec::new();
    for &tau in &config.taus {
        fits.push(fit_one_tau(&panel, tau, k_n, r_bar, config, &options)?);
    }
    let methods = config.parsed_methods()?;
    let ppca = if methods.contains(&EstimatorKind::Ppca) {
        Some(ppca_pipeline(&panel, k_n, 1)?)
    } else {
        None
    };

    let counts_path = config.output_dir.join("factor_counts.csv");
    write_factor_count_table(&counts_path, &fits, ppca.as_ref(), &panel, r_bar, config)?;

    let manifest = RunManifest {
        command: "select-rank".into(),
        package_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        inputs: vec![
            returns.display().to_string(),
            characteristics.display().to_string(),
        ],
        outputs: vec![counts_path.display().to_string()],
        timings_ms: vec![("total".into(), started.elapsed().as_millis())],
    };
    let manifest_path = write_manifest(&manifest, &config.output_dir)?;
    Ok(vec![counts_path, manifest_path])
}
