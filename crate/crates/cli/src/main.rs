use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridtopo::ci_test::{Decision, KernelParams};
use gridtopo::power_flow::PfModel;
use gridtopo::sampling::{Distribution, InjectionConfig};
use gridtopo_cli::config::{parse_bandwidth, parse_outer};
use gridtopo_cli::{
    cmd_gmcheck, cmd_learn, cmd_simulate, cmd_spur, load_grid, load_measurements, run_sweep, write_file, CliError,
    ExperimentConfig, LearnSettings, Method,
};

#[derive(Parser)]
#[command(name = "gridtopo", version, about = "Recover radial grid topology from nodal voltage samples")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Injection {
    /// Active-power law, e.g. `gaussian(0,1)` or `uniform(-1,1)`.
    #[arg(long, default_value = "gaussian(0,1)")]
    p_law: Distribution,
    /// Reactive-power law.
    #[arg(long, default_value = "gaussian(0,1)")]
    q_law: Distribution,
}

impl Injection {
    fn config(&self) -> InjectionConfig {
        InjectionConfig { default_p: self.p_law, default_q: self.q_law, ..Default::default() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Add open lines between random unconnected load pairs of a pure tree.
    Spur {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample injections and write the resulting voltage measurements as CSV.
    Simulate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "dc")]
        model: PfModel,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        injection: Injection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the operational tree among the grid's candidate lines.
    Learn {
        #[arg(long)]
        grid: PathBuf,
        /// Measurement CSV from `simulate` (not needed by `oracle`).
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long, default_value = "kci")]
        method: Method,
        /// Kernel test: call a quartet independent when its statistic is at
        /// most this value. Without it the permutation test is used.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Significance level of the permutation and partial-correlation tests.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 200)]
        permutations: usize,
        /// `median` or a fixed kernel width on standardized columns.
        #[arg(long, default_value = "median")]
        bandwidth: String,
        #[arg(long, default_value_t = 1e-3)]
        ridge: f64,
        /// Components of the outer nodes entering kernel tests: `scalar` or `full`.
        #[arg(long, default_value = "scalar")]
        outer: String,
        /// Seed of the permutation test.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model assumed by `oracle` when no measurements are given.
        #[arg(long, default_value = "dc")]
        model: PfModel,
        #[command(flatten)]
        injection: Injection,
        #[arg(long)]
        prune_to_tree: bool,
        /// Treat line statuses as unknown: no depth check and no scoring.
        #[arg(long)]
        blind: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sample-size and tolerance sweep described by a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the precision-matrix sparsity pattern with the Markov graph.
    Gmcheck {
        #[arg(long)]
        grid: PathBuf,
        /// Use the empirical precision of these measurements instead of the exact one.
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long, default_value = "dc")]
        model: PfModel,
        /// Relative coupling below which an entry counts as zero
        /// (default 1e-9 exact, 0.05 empirical).
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        injection: Injection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, doc: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, doc),
        None => std::io::stdout()
            .write_all(doc.as_bytes())
            .map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Spur { grid, count, seed, out } => emit(out.as_deref(), &cmd_spur(&load_grid(&grid)?, count, seed)?),
        Command::Simulate { grid, model, samples, seed, injection, out } => {
            let mm = cmd_simulate(&load_grid(&grid)?, model, &injection.config(), samples, seed)?;
            emit(out.as_deref(), &mm.to_csv())
        }
        Command::Learn {
            grid,
            measurements,
            method,
            tolerance,
            alpha,
            permutations,
            bandwidth,
            ridge,
            outer,
            seed,
            model,
            injection,
            prune_to_tree,
            blind,
            out,
        } => {
            let decision = match tolerance {
                Some(tau) => Decision::Tolerance(tau),
                None => Decision::Permutation { permutations, alpha },
            };
            let kernel = KernelParams {
                bandwidth: parse_bandwidth(&bandwidth)?,
                ridge,
                decision,
                seed,
                ..KernelParams::default()
            };
            kernel.validate()?;
            let settings = LearnSettings {
                method,
                kernel,
                outer: parse_outer(&outer)?,
                alpha,
                injection: injection.config(),
                model,
                prune_to_tree,
                blind,
            };
            let mm = measurements.as_deref().map(load_measurements).transpose()?;
            emit(out.as_deref(), &cmd_learn(&load_grid(&grid)?, mm.as_ref(), &settings)?)
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let target = out.or_else(|| cfg.output.clone());
            match run_sweep(&cfg) {
                Ok(r) => emit(target.as_deref(), &r.to_csv()),
                Err(f) => {
                    emit(target.as_deref(), &f.partial.to_csv())?;
                    Err(f.error)
                }
            }
        }
        Command::Gmcheck { grid, measurements, model, tolerance, injection, out } => {
            let mm = measurements.as_deref().map(load_measurements).transpose()?;
            let tol = tolerance.unwrap_or(if mm.is_some() { 0.05 } else { 1e-9 });
            let report = cmd_gmcheck(&load_grid(&grid)?, mm.as_ref(), model, &injection.config(), tol)?;
            emit(out.as_deref(), &report.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
