//! Command-line interface: fit models to ensemble tensors, generate
//! surrogate runs, compute diagnostics, compare fitted variants and report
//! compression accounting.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O failure, 4 validation or format
//! failure, 5 numerical failure.

use clap::{Args, Parser, Subcommand};
use evspec::diagnostics::{contrast_variances, landocean_periodograms, model_implied_contrasts};
use evspec::grid::{anomalies, ensemble_mean};
use evspec::io::{
    read_mask_csv, read_model, read_tensor, read_tensor_raw, write_mask_csv, write_model,
    write_tensor, write_tensor_raw, IoError, ModelFile,
};
use evspec::reml::{bic, fit, parameter_count, FitConfig, FitError, Variant};
use evspec::simulation::{
    compression_report, degrade_trend, fit_trend, simulate_surrogates, SimulationError,
    TrendPolicy, DEFAULT_TREND_LAMBDA,
};
use evspec::synthetic::{generate, GeneratorSpec, SyntheticError};
use evspec::temporal::whiten;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_IO: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser)]
#[command(
    name = "evspec",
    about = "Nonstationary sphere-time ensemble modeling: fitting, surrogate generation, diagnostics and compression accounting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model variant to an ensemble tensor.
    Fit(FitArgs),
    /// Generate surrogate runs from a fitted model file.
    Simulate(SimulateArgs),
    /// Export contrast or periodogram diagnostics as CSV.
    Diagnose(DiagnoseArgs),
    /// Compare fitted model files in a summary CSV.
    Compare(CompareArgs),
    /// Generate a synthetic ensemble with known true parameters.
    GenSynthetic(GenSyntheticArgs),
    /// Report storage accounting of a fitted model.
    ReportCompression(ReportCompressionArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Ensemble tensor.
    #[arg(long)]
    data: PathBuf,
    /// Land mask CSV (M rows of N comma-separated 0/1).
    #[arg(long)]
    mask: PathBuf,
    /// Model variant: ind | ax | ev-st | ev-nst.
    #[arg(long)]
    variant: String,
    /// Output model file (JSON).
    #[arg(long)]
    out_model: PathBuf,
    /// Worker threads (EVSP_THREADS overrides).
    #[arg(long)]
    threads: Option<usize>,
    /// Optional fit-configuration JSON overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty weight of the stored trend spline.
    #[arg(long, default_value_t = DEFAULT_TREND_LAMBDA)]
    trend_lambda: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Fitted model file with a stored trend.
    #[arg(long)]
    model: PathBuf,
    /// Trend storage policy: store-full | knots:<count>.
    #[arg(long, default_value = "store-full")]
    trend_policy: String,
    /// Number of surrogate runs.
    #[arg(long)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output tensor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Report kind: contrasts | periodogram.
    #[arg(long)]
    report: String,
    /// Ensemble tensor (both report kinds).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fitted model (contrasts).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Land mask CSV (periodogram).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Optional per-site normalizing standard deviations (tensor, K=R=1).
    #[arg(long)]
    sds: Option<PathBuf>,
    /// Taper range in grid spacings for the periodogram report.
    #[arg(long, default_value_t = 4.0)]
    taper_spacings: f64,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Fitted model files (repeat the flag).
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Generator spec JSON; built-in desk-scale defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportCompressionArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trend storage policy: store-full | knots:<count>.
    #[arg(long, default_value = "store-full")]
    trend_policy: String,
    /// Override the data dimensions as MxNxKxR.
    #[arg(long)]
    data_dims: Option<String>,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self { message: message.into(), code: EXIT_VALIDATION }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::Io(_) => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Self { message: e.to_string(), code }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::NonPositiveDefinite { .. } | FitError::Temporal(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Self { message: e.to_string(), code }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        let code = match e {
            SimulationError::NonStationary { .. } => EXIT_NUMERICAL,
            SimulationError::Fit(inner) => return CliError::from(inner),
            _ => EXIT_VALIDATION,
        };
        Self { message: e.to_string(), code }
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        match e {
            SyntheticError::Simulation(inner) => CliError::from(inner),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { message: e.to_string(), code: EXIT_IO }
    }
}

fn parse_trend_policy(text: &str) -> Result<TrendPolicy, CliError> {
    if text == "store-full" {
        return Ok(TrendPolicy::StoreFull);
    }
    if let Some(count) = text.strip_prefix("knots:") {
        let knots: usize = count
            .parse()
            .map_err(|_| CliError::validation(format!("bad knot count '{count}'")))?;
        return Ok(TrendPolicy::SplineKnots(knots));
    }
    Err(CliError::validation(format!(
        "unknown trend policy '{text}' (expected store-full or knots:<count>)"
    )))
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("EVSP_THREADS") {
        Ok(text) => {
            let t: usize = text.parse().map_err(|_| {
                CliError::validation(format!("EVSP_THREADS='{text}' is not a thread count"))
            })?;
            Ok(Some(t))
        }
        Err(_) => Ok(flag),
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn run_fit(args: &FitArgs) -> Result<(), CliError> {
    let variant: Variant = args.variant.parse().map_err(CliError::validation)?;
    let field = read_tensor(&args.data)?;
    let mask = read_mask_csv(&args.mask)?;
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<FitConfig>(&text)
                .map_err(|e| CliError::validation(format!("bad fit config: {e}")))?
        }
        None => FitConfig::new(variant),
    };
    config.variant = variant;
    config.threads = resolve_threads(args.threads)?;

    let model = fit(&field, &mask, &config)?;
    let trend = fit_trend(ensemble_mean(&field).view(), args.trend_lambda)?;

    let report = &model.fit_report;
    eprintln!(
        "fit {variant}: negloglik {:.6}, {} spatial parameters, {} warnings",
        report.full_negloglik,
        model.parameter_count(),
        report.warnings.len()
    );
    for w in &report.warnings {
        eprintln!("  warning: {w}");
    }
    eprintln!(
        "timings: step1 {:.2}s, step2 {:.2}s, step3 {:.2}s, total {:.2}s",
        report.timings.step1_s,
        report.timings.step2_s,
        report.timings.step3_s,
        report.timings.total_s
    );
    write_model(&args.out_model, &ModelFile::new(model, Some(trend)))?;
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let policy = parse_trend_policy(&args.trend_policy)?;
    let file = read_model(&args.model)?;
    let trend = file
        .trend
        .ok_or_else(|| CliError::validation("model file stores no trend; simulation needs one"))?;
    let trend = degrade_trend(&trend, &policy)?;
    let surrogate = simulate_surrogates(&file.model, &trend, args.runs, args.seed)?;
    write_tensor_raw(&args.out, file.model.grid.latitudes(), &surrogate.values)?;
    eprintln!(
        "simulated {} runs on the {:?} grid (seed {})",
        args.runs,
        file.model.grid.shape(),
        args.seed
    );
    Ok(())
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let mut out = String::new();
    match args.report.as_str() {
        "contrasts" => {
            let data = args
                .data
                .as_ref()
                .ok_or_else(|| CliError::validation("the contrasts report needs --data"))?;
            let model_path = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::validation("the contrasts report needs --model"))?;
            let field = read_tensor(data)?;
            let file = read_model(model_path)?;
            let anoms = anomalies(&field).map_err(FitError::from)?;
            let innov = whiten(&anoms, &file.model.temporal).map_err(FitError::from)?;
            let empirical = contrast_variances(&innov);
            let implied = model_implied_contrasts(&file.model)
                .map_err(|e| CliError { message: e.to_string(), code: EXIT_NUMERICAL })?;
            out.push_str("kind,band,lon,ew_empirical,ns_empirical,ew_model,ns_model\n");
            let (m, n) = empirical.ew.dim();
            for mi in 0..m {
                for ni in 0..n {
                    let _ = writeln!(
                        out,
                        "site,{mi},{ni},{},{},{},{}",
                        format_float(empirical.ew[[mi, ni]]),
                        format_float(empirical.ns[[mi, ni]]),
                        format_float(implied.ew[[mi, ni]]),
                        format_float(implied.ns[[mi, ni]]),
                    );
                }
            }
            for mi in 0..m {
                let _ = writeln!(
                    out,
                    "lat-mean,{mi},,{},{},{},{}",
                    format_float(empirical.ew_lat_mean[mi]),
                    format_float(empirical.ns_lat_mean[mi]),
                    format_float(implied.ew_lat_mean[mi]),
                    format_float(implied.ns_lat_mean[mi]),
                );
            }
            for ni in 0..n {
                let _ = writeln!(
                    out,
                    "lon-mean,,{ni},{},{},{},{}",
                    format_float(empirical.ew_lon_mean[ni]),
                    format_float(empirical.ns_lon_mean[ni]),
                    format_float(implied.ew_lon_mean[ni]),
                    format_float(implied.ns_lon_mean[ni]),
                );
            }
        }
        "periodogram" => {
            let data = args
                .data
                .as_ref()
                .ok_or_else(|| CliError::validation("the periodogram report needs --data"))?;
            let mask_path = args
                .mask
                .as_ref()
                .ok_or_else(|| CliError::validation("the periodogram report needs --mask"))?;
            let field = read_tensor(data)?;
            let mask = read_mask_csv(mask_path)?;
            let sds = match &args.sds {
                Some(path) => {
                    let raw = read_tensor_raw(path)?;
                    let (m, n, k, r) = raw.dims();
                    if k != 1 || r != 1 {
                        return Err(CliError::validation(
                            "normalizer tensors must have K = R = 1",
                        ));
                    }
                    Some(
                        raw.values
                            .into_shape_with_order((m, n))
                            .expect("K = R = 1 collapses to a matrix"),
                    )
                }
                None => None,
            };
            // difference of the first two realizations removes the trend
            let v = field.values();
            let (m, n, k, _) = v.dim();
            let diff = ndarray::Array3::from_shape_fn((m, n, k), |(mi, ni, ki)| {
                v[[mi, ni, ki, 0]] - v[[mi, ni, ki, 1]]
            });
            let reports = landocean_periodograms(
                diff.view(),
                &mask,
                sds.as_ref().map(|s| s.view()),
                args.taper_spacings,
            )
            .map_err(|e| CliError { message: e.to_string(), code: EXIT_NUMERICAL })?;
            out.push_str("band,wavenumber,land,ocean\n");
            for (mi, report) in reports.iter().enumerate() {
                for c in 0..n {
                    let land =
                        report.land.as_ref().map_or(String::new(), |p| format_float(p[c]));
                    let ocean =
                        report.ocean.as_ref().map_or(String::new(), |p| format_float(p[c]));
                    let _ = writeln!(out, "{mi},{c},{land},{ocean}");
                }
            }
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown report '{other}' (expected contrasts or periodogram)"
            )));
        }
    }
    fs::write(&args.out_csv, out)?;
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut best_loglik = f64::NEG_INFINITY;
    let mut first_dims: Option<(usize, usize, usize, usize)> = None;
    for path in &args.model {
        let file = read_model(path)?;
        let model = file.model;
        let dims = model.grid.shape();
        match first_dims {
            None => first_dims = Some(dims),
            Some(d) if d != dims => eprintln!(
                "warning: {} has grid {dims:?}, earlier models have {d:?}",
                path.display()
            ),
            _ => {}
        }
        let loglik = -model.fit_report.full_negloglik;
        best_loglik = best_loglik.max(loglik);
        let p =
            parameter_count(model.variant, model.grid.n_lat(), model.tropical_band_count());
        rows.push((model.variant, p, loglik, model.fit_report.n_obs));
    }
    let mut out =
        String::from("variant,param_count,loglik,delta_loglik_per_obs,bic_larger_is_better\n");
    for (variant, p, loglik, n_obs) in rows {
        let delta = (loglik - best_loglik) / n_obs as f64;
        let b = bic(-loglik, p, n_obs);
        let _ = writeln!(out, "{variant},{p},{loglik},{delta},{b}");
    }
    match &args.out_csv {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn run_gen_synthetic(args: &GenSyntheticArgs) -> Result<(), CliError> {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            GeneratorSpec::from_json(&text)?
        }
        None => GeneratorSpec::default(),
    };
    fs::create_dir_all(&args.out_dir)?;
    let dataset = generate(&spec, args.seed)?;
    let data_path = args.out_dir.join("data.evsp");
    let mask_path = args.out_dir.join("mask.csv");
    let truth_path = args.out_dir.join("truth.json");
    write_tensor(&data_path, &dataset.field)?;
    write_mask_csv(&mask_path, &dataset.mask)?;
    write_model(&truth_path, &ModelFile::new(dataset.truth, Some(dataset.trend)))?;
    println!("{}", data_path.display());
    println!("{}", mask_path.display());
    println!("{}", truth_path.display());
    Ok(())
}

fn run_report_compression(args: &ReportCompressionArgs) -> Result<(), CliError> {
    let policy = parse_trend_policy(&args.trend_policy)?;
    let file = read_model(&args.model)?;
    let dims = match &args.data_dims {
        Some(text) => {
            let parts: Vec<usize> = text
                .split('x')
                .map(|p| p.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    CliError::validation(format!("bad --data-dims '{text}', expected MxNxKxR"))
                })?;
            if parts.len() != 4 {
                return Err(CliError::validation(format!(
                    "bad --data-dims '{text}', expected MxNxKxR"
                )));
            }
            (parts[0], parts[1], parts[2], parts[3])
        }
        None => file.model.grid.shape(),
    };
    let report = compression_report(
        file.model.variant,
        file.model.tropical_band_count(),
        dims,
        &policy,
    );
    println!("variant: {}", file.model.variant);
    println!("spatial parameters: {}", report.spatial_params);
    println!("temporal parameters: {}", report.temporal_params);
    println!("trend values ({}): {}", args.trend_policy, report.trend_values);
    println!("data values: {}", report.data_values);
    println!(
        "parameter ratio: {} ({:.4}:100)",
        report.parameter_ratio,
        report.parameter_ratio * 100.0
    );
    println!(
        "total ratio with trend: {} ({:.4}:100)",
        report.total_ratio,
        report.total_ratio * 100.0
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Diagnose(args) => run_diagnose(args),
        Command::Compare(args) => run_compare(args),
        Command::GenSynthetic(args) => run_gen_synthetic(args),
        Command::ReportCompression(args) => run_report_compression(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
