//! Command-line front end: merges a flat JSON config file with flags,
//! validates parameters, dispatches the requested experiment, and writes
//! the report as JSON or CSV. Progress goes to standard error; `--output -`
//! streams the report to standard output.

use std::io::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpl_core::experiments::{
    self, ExperimentReport, DEFAULT_ENV_REPLICAS, DEFAULT_N, DEFAULT_THETA_REPLICAS,
};
use gpl_core::lattice::LatticePoint;
use gpl_core::special::ModelParams;
use serde::Deserialize;

const EXIT_USAGE: u8 = 1;
const EXIT_IDENTITY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gpl", about = "Inverse-gamma directed polymer laboratory", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Options shared by every experiment; unset flags fall back to the config
/// file, then to the desk-scale defaults.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat JSON config file mirroring the flags; flags override it
    #[arg(long, value_name = "FILE")]
    config: Option<String>,
    /// Bulk weight shape parameter
    #[arg(long)]
    mu: Option<f64>,
    /// Boundary direction parameter, 0 < rho < mu
    #[arg(long)]
    rho: Option<f64>,
    /// Path length scale
    #[arg(long = "N")]
    n: Option<u64>,
    /// Number of environment replicas
    #[arg(long)]
    env_replicas: Option<usize>,
    /// Number of path replicas per environment
    #[arg(long)]
    theta_replicas: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output path, or '-' for standard output
    #[arg(long)]
    output: Option<String>,
    /// Report format
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Quenched non-coalescence probability at separations delta * N^(2/3)
    CoalesceSlow {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of delta values
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
    },
    /// Quenched coalescence probability at separations r * N^(2/3)
    CoalesceFast {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of r values
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<f64>>,
    },
    /// Exit-time tail and small-window probabilities of the stationary polymer
    ExitTail {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<f64>>,
    },
    /// Total-variation distance between boundary hitting laws
    Tv {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        r: Option<Vec<f64>>,
    },
    /// Midpoint small-ball probability of the point-to-point path
    Transversal {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        delta: Option<Vec<f64>>,
    },
    /// Distributional checks of the boundary-augmented model
    Stationarity {
        #[command(flatten)]
        common: Common,
        /// Square box side length
        #[arg(long)]
        side: Option<i64>,
    },
    /// Exact identity suite on small boxes; exits 2 on any failure
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of seeds to sweep
        #[arg(long)]
        seeds: Option<u64>,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::CoalesceSlow { common, .. }
            | Cmd::CoalesceFast { common, .. }
            | Cmd::ExitTail { common, .. }
            | Cmd::Tv { common, .. }
            | Cmd::Transversal { common, .. }
            | Cmd::Stationarity { common, .. }
            | Cmd::Verify { common, .. } => common,
        }
    }
}

/// Flat JSON config file: every key optional, mirroring the flags.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mu: Option<f64>,
    rho: Option<f64>,
    #[serde(rename = "N")]
    n: Option<u64>,
    env_replicas: Option<usize>,
    theta_replicas: Option<usize>,
    seed: Option<u64>,
    output: Option<String>,
    format: Option<String>,
    delta: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    side: Option<i64>,
    seeds: Option<u64>,
}

/// Fully resolved run configuration: flags override file values, file
/// values override defaults.
#[derive(Debug)]
struct RunConfig {
    mu: f64,
    rho: f64,
    n: u64,
    env_replicas: usize,
    theta_replicas: usize,
    seed: u64,
    output: String,
    format: Format,
    delta: Vec<f64>,
    r: Vec<f64>,
    side: i64,
    seeds: u64,
}

enum CliError {
    Usage(String),
    Io(String),
}

impl From<gpl_core::Error> for CliError {
    fn from(e: gpl_core::Error) -> Self {
        match e {
            gpl_core::Error::Io(msg) => CliError::Io(msg.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn load_file_config(path: Option<&str>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {path}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed config {path}: {e}")))
}

fn resolve(cmd: &Cmd) -> Result<RunConfig, CliError> {
    let common = cmd.common();
    let file = load_file_config(common.config.as_deref())?;
    let format = match (&common.format, file.format.as_deref()) {
        (Some(f), _) => *f,
        (None, Some("json")) => Format::Json,
        (None, Some("csv")) => Format::Csv,
        (None, Some(other)) => {
            return Err(CliError::Usage(format!("unknown format {other:?} in config file")))
        }
        (None, None) => Format::Json,
    };
    let (flag_delta, flag_r, flag_side, flag_seeds) = match cmd {
        Cmd::CoalesceSlow { delta, .. } | Cmd::Transversal { delta, .. } => {
            (delta.clone(), None, None, None)
        }
        Cmd::CoalesceFast { r, .. } => (None, r.clone(), None, None),
        Cmd::ExitTail { delta, r, .. } | Cmd::Tv { delta, r, .. } => {
            (delta.clone(), r.clone(), None, None)
        }
        Cmd::Stationarity { side, .. } => (None, None, *side, None),
        Cmd::Verify { seeds, .. } => (None, None, None, *seeds),
    };
    let cfg = RunConfig {
        mu: common.mu.or(file.mu).unwrap_or(2.0),
        rho: common.rho.or(file.rho).unwrap_or(1.0),
        n: common.n.or(file.n).unwrap_or(DEFAULT_N),
        env_replicas: common.env_replicas.or(file.env_replicas).unwrap_or(DEFAULT_ENV_REPLICAS),
        theta_replicas: common
            .theta_replicas
            .or(file.theta_replicas)
            .unwrap_or(DEFAULT_THETA_REPLICAS),
        seed: common.seed.or(file.seed).unwrap_or(1),
        output: common.output.clone().or(file.output).unwrap_or_else(|| "-".to_string()),
        format,
        delta: flag_delta.or(file.delta).unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]),
        r: flag_r.or(file.r).unwrap_or_else(|| vec![0.8, 1.2, 1.8, 2.6]),
        side: flag_side.or(file.side).unwrap_or(30),
        seeds: flag_seeds.or(file.seeds).unwrap_or(50),
    };
    // validate shared preconditions up front so bad configs fail before any
    // work starts
    ModelParams::new(cfg.mu, cfg.rho).map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.n == 0 {
        return Err(CliError::Usage("N must be positive".to_string()));
    }
    if cfg.env_replicas == 0 {
        return Err(CliError::Usage("env_replicas must be positive".to_string()));
    }
    for &d in cfg.delta.iter().chain(cfg.r.iter()) {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(CliError::Usage(format!("grid values must be finite and >= 0, got {d}")));
        }
    }
    Ok(cfg)
}

fn write_report(report: &ExperimentReport, cfg: &RunConfig) -> Result<(), CliError> {
    let body = match cfg.format {
        Format::Json => {
            let mut s = report.to_json()?;
            s.push('\n');
            s
        }
        Format::Csv => report.to_csv(),
    };
    if cfg.output == "-" {
        std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    } else {
        std::fs::write(&cfg.output, body)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", cfg.output)))?;
        eprintln!("wrote {}", cfg.output);
    }
    Ok(())
}

fn run(cmd: &Cmd) -> Result<u8, CliError> {
    let cfg = resolve(cmd)?;
    if let Ok(threads) = std::env::var("GPL_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| CliError::Usage(format!("GPL_THREADS must be a number, got {threads:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let started = Instant::now();
    let report = match cmd {
        Cmd::CoalesceSlow { .. } => {
            eprintln!(
                "coalesce-slow: mu={} rho={} N={} deltas={:?} envs={} thetas={} seed={}",
                cfg.mu, cfg.rho, cfg.n, cfg.delta, cfg.env_replicas, cfg.theta_replicas, cfg.seed
            );
            experiments::run_coalescence_slow(
                cfg.mu,
                cfg.rho,
                cfg.n,
                &cfg.delta,
                cfg.env_replicas,
                cfg.theta_replicas,
                cfg.seed,
            )?
        }
        Cmd::CoalesceFast { .. } => {
            eprintln!(
                "coalesce-fast: mu={} rho={} N={} r={:?} envs={} thetas={} seed={}",
                cfg.mu, cfg.rho, cfg.n, cfg.r, cfg.env_replicas, cfg.theta_replicas, cfg.seed
            );
            experiments::run_coalescence_fast(
                cfg.mu,
                cfg.rho,
                cfg.n,
                &cfg.r,
                cfg.env_replicas,
                cfg.theta_replicas,
                cfg.seed,
            )?
        }
        Cmd::ExitTail { .. } => {
            eprintln!(
                "exit-tail: mu={} rho={} N={} r={:?} deltas={:?} envs={} seed={}",
                cfg.mu, cfg.rho, cfg.n, cfg.r, cfg.delta, cfg.env_replicas, cfg.seed
            );
            experiments::run_exit_tail(
                cfg.mu,
                cfg.rho,
                cfg.n,
                &cfg.r,
                &cfg.delta,
                cfg.env_replicas,
                cfg.seed,
            )?
        }
        Cmd::Tv { .. } => {
            eprintln!(
                "tv: mu={} rho={} N={} deltas={:?} r={:?} envs={} thetas={} seed={}",
                cfg.mu, cfg.rho, cfg.n, cfg.delta, cfg.r, cfg.env_replicas, cfg.theta_replicas, cfg.seed
            );
            experiments::run_tv(
                cfg.mu,
                cfg.rho,
                cfg.n,
                &cfg.delta,
                &cfg.r,
                cfg.env_replicas,
                cfg.theta_replicas,
                cfg.seed,
            )?
        }
        Cmd::Transversal { .. } => {
            eprintln!(
                "transversal: mu={} rho={} N={} deltas={:?} envs={} seed={}",
                cfg.mu, cfg.rho, cfg.n, cfg.delta, cfg.env_replicas, cfg.seed
            );
            experiments::run_transversal(cfg.mu, cfg.rho, cfg.n, &cfg.delta, cfg.env_replicas, cfg.seed)?
        }
        Cmd::Stationarity { .. } => {
            if cfg.side < 20 {
                return Err(CliError::Usage(format!("side must be >= 20, got {}", cfg.side)));
            }
            eprintln!(
                "stationarity: mu={} rho={} side={} envs={} seed={}",
                cfg.mu, cfg.rho, cfg.side, cfg.env_replicas, cfg.seed
            );
            experiments::stationarity_suite(
                cfg.mu,
                cfg.rho,
                LatticePoint::new(cfg.side, cfg.side),
                cfg.env_replicas,
                cfg.seed,
            )?
        }
        Cmd::Verify { .. } => {
            eprintln!("verify: {} seeds", cfg.seeds);
            experiments::identity_suite(cfg.seeds)?
        }
    };
    eprintln!("elapsed: {:.2}s", started.elapsed().as_secs_f64());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_report(&report, &cfg)?;
    if matches!(cmd, Cmd::Verify { .. }) && !report.all_checks_pass() {
        eprintln!("identity suite failed");
        return Ok(EXIT_IDENTITY);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
