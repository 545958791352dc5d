//! `centaur` command-line interface.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use centaur::accountant::{account, AccountDescriptor};
use centaur::harness::{
    calibrate_constants, emit_calibration, emit_run_reports, emit_sweep_reports, run_experiment, run_sweep,
    ExperimentConfig, SweepSpec,
};
use centaur::CentaurError;

/// Environment variable read for the worker count when `--threads` is absent.
const THREADS_ENV: &str = "CENTAUR_THREADS";

#[derive(Parser)]
#[command(name = "centaur", version, about = "Differentially private federated representation learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override `problem.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a configuration and write trace.csv, dist.svg and run.json.
    Run(Common),
    /// Run one experiment per value of a field and write tradeoff.csv, tradeoff.svg and run.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `field.path=V1,V2,...`
        #[arg(long)]
        sweep: String,
    },
    /// Privacy spend of a run described by {T_g, sigma_g, p_g, delta, init}.
    Account {
        /// Descriptor file; `-` or absent reads standard input.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Measure c_zeta and c_T and write a reusable run.json.
    Calibrate(Common),
}

fn exit_code(err: &CentaurError) -> u8 {
    match err {
        CentaurError::Config { .. } | CentaurError::Parameter(_) | CentaurError::Serde(_) => 2,
        CentaurError::Numeric(_) | CentaurError::Selection(_) | CentaurError::Input(_) => 3,
        CentaurError::Io { .. } | CentaurError::Csv(_) => 1,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CentaurError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| CentaurError::Config {
        path: common.config.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.problem.seed = seed;
    }
    Ok(cfg)
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CentaurError>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CentaurError::Config {
                path: "--threads".into(),
                message: "need at least one thread".into(),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CentaurError::Config {
        path: "--threads".into(),
        message: e.to_string(),
    })?;
    Ok(pool.install(f))
}

fn print(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    // A closed pipe downstream is not an error of the run.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn paths(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn read_descriptor(path: Option<&Path>) -> Result<String, CentaurError> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::read_to_string(p).map_err(|e| CentaurError::Config {
            path: p.display().to_string(),
            message: format!("cannot read descriptor: {e}"),
        }),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| CentaurError::Config {
                path: "<stdin>".into(),
                message: e.to_string(),
            })?;
            Ok(s)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CentaurError> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let out = with_pool(common.threads, || run_experiment(&cfg))??;
            let files = emit_run_reports(&common.out, &out)?;
            let trials: Vec<_> = out
                .trials
                .iter()
                .map(|t| {
                    json!({
                        "trial": t.trial,
                        "final_dist": t.final_dist,
                        "eps_dp_final": if t.eps_dp_final.is_finite() { json!(t.eps_dp_final) } else { json!("inf") },
                        "wall_ms": t.wall_ms,
                    })
                })
                .collect();
            print(&json!({ "trials": trials, "files": paths(&files) }));
        }
        Command::Sweep { common, sweep } => {
            let cfg = load(&common)?;
            let spec = SweepSpec::parse(&sweep)?;
            let table = with_pool(common.threads, || run_sweep(&cfg, &spec))??;
            let files = emit_sweep_reports(&common.out, &cfg, &table)?;
            print(&json!({ "sweep": table, "files": paths(&files) }));
        }
        Command::Account { config } => {
            let text = read_descriptor(config.as_deref())?;
            let desc: AccountDescriptor = serde_json::from_str(&text)?;
            let report = account(&desc)?;
            print(&json!({
                "eps_dp": report.eps_dp,
                "best_alpha": report.best_alpha,
                "eps_init_dp_share": report.eps_init_dp_share,
                "closed_form_eps_dp": report.closed_form_eps_dp,
            }));
        }
        Command::Calibrate(common) => {
            let cfg = load(&common)?;
            let cal = with_pool(common.threads, || calibrate_constants(&cfg))??;
            let file = emit_calibration(&common.out, &cfg, &cal)?;
            print(&json!({ "calibration": cal, "files": [file.display().to_string()] }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
