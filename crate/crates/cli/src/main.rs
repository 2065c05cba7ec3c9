use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adatrack::harness::regret::{gc_sweep, interval_regret, parse_intervals, RegretReport, MIN_SWEEP_LEN};
use adatrack::harness::{run, write_run, RunOptions, Trace};
use adatrack::sim::{make_experiment, ExperimentConfig, EXPERIMENT_NAMES};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "adatrack", version, about = "Run adaptive tracking experiments and measure interval regret")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its trace, summary and config.
    Run {
        /// Experiment name; optional when --config is given.
        #[arg(required_unless_present = "config")]
        name: Option<String>,
        /// Horizon override.
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Check every invariant each round; exit nonzero on any violation.
        #[arg(long)]
        audit: bool,
        /// Comparator grid points per axis used by the audit.
        #[arg(long)]
        audit_grid: Option<usize>,
        /// Output directory for this run [default: $ADATRACK_OUT/<name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON experiment configuration; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root directory for run outputs when --out is absent.
        #[arg(long, env = "ADATRACK_OUT", default_value = "runs")]
        out_root: PathBuf,
    },
    /// Regret of a traced run on explicit intervals `a:b,c:d,…`.
    Regret {
        trace: PathBuf,
        #[arg(long)]
        intervals: String,
        /// Experiment configuration [default: config.json next to the trace].
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comparator grid points per axis.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Regret on every GC interval of a traced run.
    Sweep {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = MIN_SWEEP_LEN)]
        min_len: usize,
    },
    /// List the named experiments.
    List,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn trace_config(trace: &Path, config: Option<PathBuf>) -> Result<ExperimentConfig> {
    let path = config.unwrap_or_else(|| trace.with_file_name("config.json"));
    load_config(&path)
}

fn print_report(report: &RegretReport) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { name, horizon, seed, audit, audit_grid, out, config, out_root } => {
            let mut cfg = match (&config, &name) {
                (Some(path), _) => load_config(path)?,
                (None, Some(name)) => make_experiment(name)?,
                (None, None) => bail!("an experiment name or --config is required"),
            };
            if let (Some(_), Some(name)) = (&config, name) {
                cfg.name = name;
            }
            if let Some(t) = horizon {
                cfg.set_horizon(t);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| out_root.join(&cfg.name));
            info!("running {} for {} rounds", cfg.name, cfg.horizon);
            let output = run(&cfg, &RunOptions { audit, audit_grid })?;
            write_run(&dir, &cfg, &output)?;
            println!("{}", serde_json::to_string_pretty(&output.summary)?);
            if let Some(log) = &output.audit {
                if let Some(v) = log.first() {
                    eprintln!("audit failed with {} violation(s); first: {v}", log.count());
                    return Ok(ExitCode::from(2));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Regret { trace, intervals, config, grid } => {
            let cfg = trace_config(&trace, config)?;
            let tr = Trace::read_csv(&trace)?;
            print_report(&interval_regret(&tr, &cfg, &parse_intervals(&intervals)?, grid)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { trace, config, grid, min_len } => {
            let cfg = trace_config(&trace, config)?;
            let tr = Trace::read_csv(&trace)?;
            print_report(&gc_sweep(&tr, &cfg, min_len, grid)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::List => {
            for name in EXPERIMENT_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
