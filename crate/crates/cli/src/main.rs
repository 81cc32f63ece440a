use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use volwatch::critical_values::{build_cv_table, cv_darling_erdos, CvRequest, CvScheme, RenyiMethod};
use volwatch::experiments::{resolve_critical_values, CvSource};
use volwatch::garch::{simulate_path, GarchParams, InnovationDist, RegimeSwitch};
use volwatch::monitor::{default_trimming, MonitorConfig, SchemeKind};
use volwatch::qmle::QmleOptions;
use volwatch::{monitor_returns, run_experiment, ExperimentPlan, ReturnsFile, VolError};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] VolError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("plan {path}: {source}")]
    Plan { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "volwatch", version, about = "Sequential monitoring of GARCH(1,1) volatility for parameter changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate or look up critical values.
    Cv(CvArgs),
    /// Fit on a training window of a returns file and monitor the rest.
    Monitor(MonitorArgs),
    /// Simulate a GARCH(1,1) path, optionally with a change.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo size/power/delay experiment from a JSON plan.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorScheme {
    Weighted,
    Renyi,
    De,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenyiCv {
    /// Weighted functional at `2 − η` (exact time inversion).
    Inverted,
    /// Direct simulation on `[1, T]`.
    Direct,
    /// Exponent `1 − η` on the unit interval.
    Printed,
}

impl From<RenyiCv> for RenyiMethod {
    fn from(v: RenyiCv) -> Self {
        match v {
            RenyiCv::Inverted => RenyiMethod::TimeInversion,
            RenyiCv::Direct => RenyiMethod::Direct,
            RenyiCv::Printed => RenyiMethod::PrintedExponent,
        }
    }
}

#[derive(clap::Args)]
struct CvArgs {
    /// weighted, renyi, renyi_inverted, renyi_printed or de.
    #[arg(long, default_value = "weighted")]
    scheme: String,
    /// Weight exponents; repeat or separate with commas.
    #[arg(long, required = true, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long = "level", visible_alias = "levels", value_delimiter = ',', default_values_t = [0.10, 0.05, 0.01])]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
    #[arg(long, default_value_t = 20_000)]
    reps: usize,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    #[arg(long, env = "VOLWATCH_CV_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(clap::Args)]
struct MonitorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "weighted")]
    scheme: MonitorScheme,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Trimming for the Rényi scheme (default `⌊√𝓃⌋`) or the
    /// Darling-Erdős scheme (default none).
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Explicit critical value; skips the table lookup.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, value_enum, default_value = "inverted")]
    renyi_cv: RenyiCv,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    tuned: bool,
    #[arg(long = "cv-cache", env = "VOLWATCH_CV_CACHE")]
    cv_cache: Option<PathBuf>,
    /// Seed for the QMLE random restarts; drawn from the OS and recorded in
    /// the report when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// `omega,alpha,beta` before the change.
    #[arg(long)]
    theta0: String,
    /// `omega,alpha,beta` after the change.
    #[arg(long = "thetaA", alias = "theta-a")]
    theta_a: Option<String>,
    /// Change after this many monitoring steps.
    #[arg(long)]
    kstar: Option<usize>,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// `normal` or `t<df>`.
    #[arg(long, default_value = "normal")]
    dist: String,
    /// Drawn from the OS and printed to stderr when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the plan's replication count.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long = "cv-cache", env = "VOLWATCH_CV_CACHE")]
    cv_cache: Option<PathBuf>,
}

fn parse_theta(s: &str) -> CliResult<GarchParams<f64>> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("cannot parse parameters {s:?}; expected omega,alpha,beta")))?;
    match parts[..] {
        [o, a, b] => Ok(GarchParams::new(o, a, b)?),
        _ => Err(CliError::Usage(format!("expected three comma-separated values, got {s:?}"))),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn cmd_cv(a: CvArgs) -> CliResult<()> {
    let scheme = CvScheme::parse(&a.scheme)?;
    let req = CvRequest { grid_points: a.grid, reps: a.reps, seed: a.seed, ..CvRequest::default() };
    if scheme != CvScheme::DarlingErdos {
        req.validate()?;
    }
    let table = build_cv_table(scheme, &a.eta, &a.levels, &req, a.cache.as_deref())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_monitor(a: MonitorArgs) -> CliResult<()> {
    let data = ReturnsFile::load(&a.data).map_err(|e| match e {
        VolError::Io(source) => CliError::File { path: a.data.clone(), source },
        e => e.into(),
    })?;
    let scheme = match a.scheme {
        MonitorScheme::Weighted => SchemeKind::Weighted { eta: a.eta },
        MonitorScheme::Renyi => SchemeKind::Renyi { eta: a.eta, r: a.r.unwrap_or_else(|| default_trimming(a.n)) },
        MonitorScheme::De => SchemeKind::DarlingErdos { r: a.r },
    };
    let (c, level, source) = match (a.c, a.scheme) {
        (Some(c), _) => (c, None, "explicit"),
        (None, MonitorScheme::De) => (cv_darling_erdos(a.level)?, Some(a.level), "closed_form"),
        (None, s) => {
            let cv_scheme = match s {
                MonitorScheme::Renyi => CvScheme::Renyi(a.renyi_cv.into()),
                _ => CvScheme::Weighted,
            };
            let t = build_cv_table(cv_scheme, &[a.eta], &[a.level], &CvRequest::default(), a.cv_cache.as_deref())?;
            (t.entries()[0].c, Some(a.level), "table")
        }
    };
    let config = MonitorConfig { scheme, c, horizon_n: a.n, m: a.m, tuned: a.tuned };
    let seed = a.seed.unwrap_or_else(rand::random);
    let opts = QmleOptions { seed, ..QmleOptions::default() };
    let report = monitor_returns(&data, &config, level, source, &opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let before = parse_theta(&a.theta0)?;
    let dist = InnovationDist::parse(&a.dist)?;
    if a.m + a.n == 0 {
        return Err(CliError::Usage("m + n must be positive".into()));
    }
    let switch = match (&a.theta_a, a.kstar) {
        (Some(t), Some(k)) => Some(RegimeSwitch { params: parse_theta(t)?, at: a.m + k }),
        (None, None) => None,
        _ => return Err(CliError::Usage("--thetaA and --kstar go together".into())),
    };
    let seed = a.seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    });
    let path = simulate_path(&before, switch, a.m + a.n, dist, seed, None)?;
    write_file(&a.out, &ReturnsFile::from_values(&path.y).to_csv())?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.plan).map_err(|source| CliError::File { path: a.plan.clone(), source })?;
    let mut plan: ExperimentPlan =
        serde_json::from_str(&text).map_err(|source| CliError::Plan { path: a.plan.clone(), source })?;
    if let Some(r) = a.reps {
        plan.reps = r;
    }
    plan.validate()?;
    let src = CvSource { request: CvRequest::default(), cache: a.cv_cache };
    let cvs = resolve_critical_values(&plan, &src)?;
    let result = run_experiment(&plan, &cvs)?;
    result.write_outputs(&a.out)?;
    print!("{}", result.results_csv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Cv(a) => cmd_cv(a),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    let _ = std::io::stdout().flush();
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
