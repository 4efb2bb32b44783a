//! `gamma-abc`: estimators, rejection ABC, benchmarks and the outlier
//! sensitivity probe from the command line.
//!
//! Exit codes: 0 success, 2 usage/config/input error, 3 estimator failure.

mod config;
mod dataset;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gamma_abc::divergence::{outlier_shift, outlier_shift_limit};
use gamma_abc::{
    calibrate_epsilon, contaminate, energy_distance, gamma_divergence_knn, kde_map,
    kl_divergence_knn, median_heuristic_bandwidth, mmd_u_squared, rejection_abc, run_benchmark,
    run_grid, AbcPosterior, ContaminationSpec, DensityModel, DivergenceParams, Gaussian,
    KdeConfig, ModelId, ModelSpec, PointSet, RngStream, Theta,
};
use serde::Serialize;

use crate::config::{
    AbcRunConfig, BenchmarkRunConfig, CalibrateConfig, ObservedSource, ScConfig, SimulateConfig,
    SCHEMA_VERSION,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input data.
    Config(String),
    /// Reading or writing a file failed.
    Io(String),
    /// An estimator or sampler failed on valid input.
    Estimator(gamma_abc::Error),
}

impl CliError {
    pub fn invalid(err: gamma_abc::Error) -> Self {
        Self::Config(err.to_string())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Io(_) => 2,
            Self::Estimator(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(msg) | Self::Io(msg) => f.write_str(msg),
            Self::Estimator(err) => write!(f, "{err}"),
        }
    }
}

impl From<gamma_abc::Error> for CliError {
    fn from(err: gamma_abc::Error) -> Self {
        Self::Estimator(err)
    }
}

#[derive(Parser)]
#[command(name = "gamma-abc", version, about = "Outlier-robust rejection ABC with k-NN gamma-divergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, env = "GAMMA_ABC_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the discrepancy between two CSV point sets.
    Estimate(EstimateArgs),
    /// Calibrate the ABC tolerance from prior-predictive draws.
    Calibrate(ConfigArgs),
    /// Run rejection ABC and write the accepted parameters.
    Abc(ConfigArgs),
    /// Run a benchmark and write the CSV/JSON report.
    Benchmark(ConfigArgs),
    /// Tabulate the shift caused by one distant outlier.
    Sc(ConfigArgs),
    /// Draw a dataset from one of the benchmark models.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Read and write CSV files with a header row.
    #[arg(long)]
    header: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gamma,
    Kl,
    Mmd,
    Energy,
}

#[derive(Args)]
struct EstimateArgs {
    /// Observed points (CSV).
    x: PathBuf,
    /// Synthetic points (CSV).
    y: PathBuf,
    #[arg(long, value_enum, default_value = "gamma")]
    method: Method,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// MMD kernel bandwidth; the median heuristic on X when absent.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, conflicts_with_all = ["model", "n", "eta"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    model: Option<ModelId>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    header: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = cli.workers;
    match cli.command {
        Command::Estimate(args) => estimate(&args),
        Command::Simulate(args) => simulate(&args, cli.seed),
        Command::Calibrate(args) => calibrate(&args, cli.seed, workers),
        Command::Abc(args) => abc(&args, cli.seed, workers),
        Command::Benchmark(args) => benchmark(&args, cli.seed, workers),
        Command::Sc(args) => sensitivity(&args, cli.seed),
    }
}

/// `%.12g`-style formatting: `digits` significant digits, trailing zeros
/// dropped, exponent form outside `[1e-4, 10^digits)`.
fn format_significant(value: f64, digits: usize) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    if value == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{value:.decimals$}"))
    }
}

fn estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let x = dataset::read_points(&args.x, args.header)?;
    let y = dataset::read_points(&args.y, args.header)?;
    if x.dim() != y.dim() {
        return Err(CliError::Config(format!(
            "dimension mismatch: X has {} columns, Y has {}",
            x.dim(),
            y.dim()
        )));
    }
    let value = match args.method {
        Method::Gamma => {
            let params = DivergenceParams::new(args.gamma, args.k).map_err(CliError::invalid)?;
            gamma_divergence_knn(&x, &y, params)?
        }
        Method::Kl => {
            if args.k == 0 {
                return Err(CliError::invalid(gamma_abc::Error::InvalidK(0)));
            }
            kl_divergence_knn(&x, &y, args.k)?
        }
        Method::Mmd => {
            let h = match args.bandwidth {
                Some(h) if h.is_finite() && h > 0.0 => h,
                Some(h) => return Err(CliError::invalid(gamma_abc::Error::InvalidBandwidth(h))),
                None => median_heuristic_bandwidth(&x)?,
            };
            mmd_u_squared(&x, &y, h)?
        }
        Method::Energy => energy_distance(&x, &y)?,
    };
    println!("{}", format_significant(value, 12));
    Ok(())
}

fn write_output(out: Option<&Path>, write: impl FnOnce(&mut dyn io::Write) -> io::Result<()>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            write(&mut file).map_err(|e| CliError::io(path, e))
        }
        None => write(&mut io::stdout().lock()).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => config::load::<SimulateConfig>(path)?.0,
        None => SimulateConfig {
            schema_version: SCHEMA_VERSION,
            model: args.model.expect("required by clap"),
            n: args.n,
            theta: None,
            eta: args.eta.unwrap_or(0.0),
            outlier_mean: 10.0,
            outlier_var: 1.0,
            seed: 0,
        },
    };
    let spec = cfg.model.spec();
    let theta = cfg.theta.clone().unwrap_or_else(|| spec.theta_star.clone());
    spec.check_theta(&theta).map_err(CliError::invalid)?;
    let contamination = cfg.contamination()?;
    let n = cfg.n.unwrap_or(spec.default_n);
    if n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let root = RngStream::from_seed(seed.unwrap_or(cfg.seed));
    let clean = spec.simulate(&theta, n, &mut root.child(0).rng())?;
    let data = contaminate(&clean, &contamination, &mut root.child(1).rng())?;
    if let Some(out) = &args.out {
        return dataset::write_points(out, &data, args.header);
    }
    let names: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    write_output(None, |w| {
        dataset::write_rows(w, args.header.then_some(names.as_slice()), data.rows())
    })
}

/// Observed data for `calibrate` and `abc`: read from file or simulated at
/// θ* from `stream`.
fn observed_data(
    source: &ObservedSource,
    spec: &ModelSpec,
    config_path: &Path,
    stream: RngStream,
) -> Result<PointSet, CliError> {
    match source {
        ObservedSource::File { path, header } => {
            let path = if path.is_relative() {
                config_path.parent().unwrap_or(Path::new(".")).join(path)
            } else {
                path.clone()
            };
            let data = dataset::read_points(&path, *header)?;
            if data.dim() != spec.data_dim {
                return Err(CliError::Config(format!(
                    "{}: {} columns, model {} needs {}",
                    path.display(),
                    data.dim(),
                    spec.id,
                    spec.data_dim
                )));
            }
            Ok(data)
        }
        ObservedSource::Simulate {
            n,
            eta,
            outlier_mean,
            outlier_var,
        } => {
            let n = n.unwrap_or(spec.default_n);
            let clean = spec.simulate(&spec.theta_star, n, &mut stream.child(0).rng())?;
            let contamination = ContaminationSpec {
                eta: *eta,
                outlier_mean: *outlier_mean,
                outlier_var: *outlier_var,
            };
            Ok(contaminate(&clean, &contamination, &mut stream.child(1).rng())?)
        }
    }
}

#[derive(Serialize)]
struct CalibrationOutput {
    model: ModelId,
    epsilon: f64,
    draws: usize,
    quantile: f64,
    seed: u64,
}

fn calibrate(args: &ConfigArgs, seed: Option<u64>, workers: usize) -> Result<(), CliError> {
    let (cfg, _) = config::load::<CalibrateConfig>(&args.config)?;
    let spec = cfg.model.spec();
    // Validate before touching any data.
    let probe_m = cfg.m.unwrap_or(spec.default_n).max(2);
    cfg.abc_config(probe_m, workers)?;
    let seed = seed.unwrap_or(cfg.seed);
    let root = RngStream::from_seed(seed);
    let observed = observed_data(&cfg.observed, &spec, &args.config, root.child(0))?;
    let abc_cfg = cfg.abc_config(cfg.m.unwrap_or(observed.len()), workers)?;
    // Same stream `abc` uses for its own calibration step.
    let epsilon = calibrate_epsilon(&spec, &observed, &abc_cfg, root.child(1).child(0))?;
    println!("{}", format_significant(epsilon, 12));
    if let Some(out) = &args.out {
        write_json(
            out,
            &CalibrationOutput {
                model: cfg.model,
                epsilon,
                draws: cfg.calibration.draws,
                quantile: cfg.calibration.quantile,
                seed,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    gamma: Option<f64>,
    epsilon_used: f64,
    proposals_used: usize,
    accepted: usize,
    failed_proposals: usize,
    truncated: bool,
    acceptance_rate: f64,
    map_theta: Theta,
    discrepancies: Vec<f64>,
}

impl RunSummary {
    fn new(gamma: Option<f64>, post: &AbcPosterior) -> Result<Self, CliError> {
        Ok(Self {
            gamma,
            epsilon_used: post.epsilon_used,
            proposals_used: post.proposals_used,
            accepted: post.accepted.len(),
            failed_proposals: post.failed_proposals,
            truncated: post.truncated,
            acceptance_rate: post.acceptance_rate(),
            map_theta: kde_map(&post.accepted, KdeConfig::default())?,
            discrepancies: post.discrepancies.clone(),
        })
    }
}

#[derive(Serialize)]
struct AbcOutput {
    model: ModelId,
    seed: u64,
    runs: Vec<RunSummary>,
}

fn abc(args: &ConfigArgs, seed: Option<u64>, workers: usize) -> Result<(), CliError> {
    let (cfg, _) = config::load::<AbcRunConfig>(&args.config)?;
    let spec = cfg.model.spec();
    cfg.abc_config(cfg.m.unwrap_or(spec.default_n).max(2), workers)?;
    let seed = seed.unwrap_or(cfg.seed);
    let root = RngStream::from_seed(seed);
    let observed = observed_data(&cfg.observed, &spec, &args.config, root.child(0))?;
    let abc_cfg = cfg.abc_config(cfg.m.unwrap_or(observed.len()), workers)?;
    let runs: Vec<(Option<f64>, AbcPosterior)> = match &cfg.gamma_grid {
        Some(grid) => run_grid(&spec, &observed, &abc_cfg, grid, root.child(1))?
            .into_iter()
            .map(|(g, p)| (Some(g), p))
            .collect(),
        None => vec![(
            cfg.discrepancy.gamma_value(),
            rejection_abc(&spec, &observed, &abc_cfg, root.child(1))?,
        )],
    };
    let grid = cfg.gamma_grid.is_some();
    let mut header: Vec<String> = Vec::new();
    if grid {
        header.push("gamma".into());
    }
    header.extend(spec.param_names.iter().cloned());
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .flat_map(|(gamma, post)| {
            post.accepted.iter().map(move |theta| {
                let mut row = Vec::with_capacity(theta.len() + 1);
                if grid {
                    row.push(gamma.expect("grid runs carry gamma"));
                }
                row.extend_from_slice(theta.as_slice());
                row
            })
        })
        .collect();
    write_output(args.out.as_deref(), |w| {
        dataset::write_rows(
            w,
            args.header.then_some(header.as_slice()),
            rows.iter().map(Vec::as_slice),
        )
    })?;
    let summary = AbcOutput {
        model: cfg.model,
        seed,
        runs: runs
            .iter()
            .map(|(g, p)| RunSummary::new(*g, p))
            .collect::<Result<_, _>>()?,
    };
    for run in &summary.runs {
        log::info!(
            "gamma {:?}: epsilon {} accepted {}/{} map {:?}",
            run.gamma,
            run.epsilon_used,
            run.accepted,
            run.proposals_used,
            run.map_theta.as_slice()
        );
    }
    if let Some(out) = &args.out {
        write_json(&out.with_extension("json"), &summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    schema_version: u32,
    tool_version: &'a str,
    config_sha256: String,
    seed: u64,
}

fn benchmark(args: &ConfigArgs, seed: Option<u64>, workers: usize) -> Result<(), CliError> {
    let (cfg, hash) = config::load::<BenchmarkRunConfig>(&args.config)?;
    let bench = cfg.benchmark_config(workers)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Config("benchmark needs --out or an 'output' path".into()))?;
    let seed = seed.unwrap_or(cfg.seed);
    let report = run_benchmark(
        &cfg.model.spec(),
        &cfg.etas,
        &cfg.methods(),
        cfg.trials,
        &bench,
        RngStream::from_seed(seed),
    )?;
    fs::write(&out, report.to_csv()).map_err(|e| CliError::io(&out, e))?;
    let mut json = report.to_json();
    json.push('\n');
    let json_path = out.with_extension("json");
    fs::write(&json_path, json).map_err(|e| CliError::io(&json_path, e))?;
    write_json(
        &out.with_extension("meta.json"),
        &RunMetadata {
            command: "benchmark",
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: hash,
            seed,
        },
    )?;
    for s in &report.summaries {
        log::info!(
            "{} eta {} {} gamma {:?}: mse {:.4} ± {:.4}, energy {:.4} ± {:.4} ({} ok, {} failed)",
            s.model,
            s.eta,
            s.method,
            s.gamma,
            s.mse_mean.mean,
            s.mse_mean.std,
            s.energy_distance.mean,
            s.energy_distance.std,
            s.trials,
            s.failed
        );
    }
    Ok(())
}

fn sensitivity(args: &ConfigArgs, seed: Option<u64>) -> Result<(), CliError> {
    let (cfg, _) = config::load::<ScConfig>(&args.config)?;
    cfg.validate()?;
    let params = DivergenceParams::new(cfg.gamma, cfg.k).map_err(CliError::invalid)?;
    let mut rng = RngStream::from_seed(seed.unwrap_or(cfg.seed)).child(0).rng();
    let base = DensityModel::Gaussian(Gaussian::standard(cfg.dim));
    let x = base.sample(&mut rng, cfg.n)?;
    let y = base.sample(&mut rng, cfg.m.unwrap_or(cfg.n))?;
    let limit = outlier_shift_limit(cfg.n, cfg.gamma);
    let mut rows = Vec::with_capacity(cfg.magnitudes.len());
    for &norm in &cfg.magnitudes {
        let x0 = vec![norm / (cfg.dim as f64).sqrt(); cfg.dim];
        let delta = outlier_shift(&x, &y, &x0, params)?;
        rows.push([norm, delta, limit, (delta - limit).abs()]);
    }
    let header: Vec<String> = ["norm", "delta", "limit", "abs_gap"].map(String::from).to_vec();
    write_output(args.out.as_deref(), |w| {
        dataset::write_rows(w, Some(header.as_slice()), rows.iter().map(|r| r.as_slice()))
    })
}
