//! `mempca`: clean prices, build panels and select components from the command line.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mempca_core::baselines::PressRegression;

use config::{ConfigError, Format, RunConfig};
use run::Run;

#[derive(Parser)]
#[command(name = "mempca", version, about = "Memory-based principal component selection")]
struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts and manifest.json [default: mempca-out]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Format of reports and tables; panels are always CSV [default: csv]
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Source {
    /// Price file (date,ticker,close) or wide panel CSV
    #[arg(long)]
    input: Option<PathBuf>,
    /// Synthetic market spec (TOML), used when there is no input
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Kind of a wide panel input: returns, log-volatility or residuals
    #[arg(long)]
    kind: Option<String>,
    /// Cleaning fraction applied to price inputs
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Args, Default)]
struct Selection {
    #[arg(long)]
    q_min: Option<f64>,
    #[arg(long)]
    q_max: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    mp_rounds: Option<usize>,
    #[arg(long)]
    lasso_folds: Option<usize>,
    #[arg(long)]
    grid_len: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    /// Use this many components instead of the fitted outlier count
    #[arg(long)]
    m_max: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Drop short tickers, align dates and forward-fill gaps
    Clean {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Keep tickers with at least p times the longest series
        #[arg(long)]
        p: Option<f64>,
    },
    /// Standardized log-returns and log-volatility from cleaned prices
    Transform {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Detrended spectrum and Marchenko-Pastur fit
    Spectrum {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        selection: Selection,
    },
    /// Full memory-based selection of the number of components
    Select {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        selection: Selection,
    },
    /// Synthetic clustered long-memory panel with ground truth
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Memory-based selection against cumulative variance and PRESS
    Compare {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        selection: Selection,
        /// Comma-separated subset of memory,cumvar,press
        #[arg(long)]
        methods: Option<String>,
        /// Cross-validation folds for PRESS
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_enum)]
        press_regression: Option<PressArg>,
        /// Noise levels to sweep, comma-separated
        #[arg(long, value_delimiter = ',')]
        phis: Option<Vec<f64>>,
        /// Number of consecutive seeds per noise level, starting at --seed
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Eigen-portfolios, Markowitz weights and sector projections
    Portfolio {
        /// Cleaned prices (date,ticker,close)
        #[arg(long)]
        input: Option<PathBuf>,
        /// ticker,group file
        #[arg(long)]
        groups: Option<PathBuf>,
        /// ticker,expected_return file; mean log-returns otherwise
        #[arg(long)]
        expected_returns: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        /// Number of leading eigen-portfolios to report
        #[arg(long)]
        components: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PressArg {
    Ols,
    Lasso,
}

impl Source {
    fn apply(self, c: &mut RunConfig) {
        c.input = self.input;
        c.spec = self.spec;
        c.kind = self.kind;
        c.p = self.p;
    }
}

impl Selection {
    fn apply(self, c: &mut RunConfig) {
        c.q_min = self.q_min;
        c.q_max = self.q_max;
        c.sigma_min = self.sigma_min;
        c.sigma_max = self.sigma_max;
        c.mp_rounds = self.mp_rounds;
        c.lasso_folds = self.lasso_folds;
        c.grid_len = self.grid_len;
        c.l_max = self.l_max;
        c.m_max = self.m_max;
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Clean { .. } => "clean",
            Command::Transform { .. } => "transform",
            Command::Spectrum { .. } => "spectrum",
            Command::Select { .. } => "select",
            Command::Simulate { .. } => "simulate",
            Command::Compare { .. } => "compare",
            Command::Portfolio { .. } => "portfolio",
        }
    }

    /// Flag values as a config layer.
    fn into_flags(self, c: &mut RunConfig) {
        match self {
            Command::Clean { input, p } => {
                c.input = input;
                c.p = p;
            }
            Command::Transform { input } => c.input = input,
            Command::Spectrum { source, selection } | Command::Select { source, selection } => {
                source.apply(c);
                selection.apply(c);
            }
            Command::Simulate { spec } => c.spec = spec,
            Command::Compare {
                source,
                selection,
                methods,
                folds,
                press_regression,
                phis,
                seeds,
            } => {
                source.apply(c);
                selection.apply(c);
                c.methods = methods;
                c.folds = folds;
                c.press_regression = press_regression.map(|r| match r {
                    PressArg::Ols => PressRegression::Ols,
                    PressArg::Lasso => PressRegression::Lasso,
                });
                c.phis = phis;
                c.seeds = seeds;
            }
            Command::Portfolio {
                input,
                groups,
                expected_returns,
                delta,
                components,
            } => {
                c.input = input;
                c.groups = groups;
                c.expected_returns = expected_returns;
                c.delta = delta;
                c.components = components;
            }
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<mempca_core::Error>() {
            return if err.is_data_error() { 2 } else { 1 };
        }
    }
    1
}

/// Error chain as one line; causes already spelled out by their parent are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn build_config(cli: Cli) -> Result<(&'static str, RunConfig)> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut flags = RunConfig {
        seed: cli.seed,
        out_dir: cli.out_dir,
        threads: cli.threads,
        format: cli.format,
        ..Default::default()
    };
    cli.command.into_flags(&mut flags);
    let config = file.overlay(flags);
    config.check_files()?;
    Ok((name, config))
}

fn dispatch(name: &str, run: &mut Run) -> Result<()> {
    if let Some(n) = run.config().threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    match name {
        "clean" => commands::clean(run),
        "transform" => commands::transform(run),
        "spectrum" => commands::spectrum(run),
        "select" => commands::select(run),
        "simulate" => commands::simulate(run),
        "compare" => commands::compare(run),
        "portfolio" => commands::portfolio(run),
        _ => unreachable!("clap only yields known subcommands"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out_dir = cli.out_dir.clone();
    let command = cli.command.name();

    let (name, config) = match build_config(cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let code = exit_code(&e);
            // Still leave a manifest behind when the output directory is known.
            let config = RunConfig {
                out_dir,
                ..Default::default()
            };
            if let Ok(run) = Run::new(command, config) {
                let _ = run.finish(&Err(e), code as i32);
            }
            return ExitCode::from(code);
        }
    };
    let mut run = match Run::new(name, config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            return ExitCode::from(1);
        }
    };
    let outcome = dispatch(name, &mut run);
    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(e));
            exit_code(e)
        }
    };
    if let Err(e) = run.finish(&outcome, code as i32) {
        eprintln!("error: writing manifest: {e:#}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
