use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adaptexp::analysis::{
    aggregate_means, wave_sizes, win_matrix_avg, win_matrix_per_trial, write_aggregate_csv,
    write_figures_data, write_winmatrix_csv, WinMatrix, WinMode,
};
use adaptexp::harness::{default_threads, ExperimentConfig, TrialRecord};
use adaptexp::loss::BaseMeasure;
use adaptexp::store::{lint_store, read_store, run_to_store};
use adaptexp::validate::{run_oracles, OracleConfig};
use adaptexp::Error;

#[derive(Parser)]
#[command(
    name = "adaptexp",
    version,
    about = "Adaptive experiment simulator and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replication study into a line-delimited run store.
    Run {
        /// TOML config; defaults are used for missing keys (or entirely, if omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `replications`.
        #[arg(long)]
        replications: Option<u64>,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Mean and 95% CI per mechanism and wave size.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// A base measure name, or `all`.
        #[arg(long, default_value = "all")]
        measure: String,
    },
    /// Win matrices over the fifteen base and hybrid measures.
    Winmatrix {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::PerTrial)]
        mode: ModeArg,
    },
    /// Run the oracle suite.
    Validate {
        #[arg(long, default_value_t = OracleConfig::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = OracleConfig::default().quadrature_nodes)]
        quad_nodes: usize,
    },
    /// Write every CSV the figure renderer reads into a directory.
    FiguresData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a run store against count-conservation and loss-range invariants.
    Lint {
        #[arg(long = "in")]
        input: PathBuf,
        /// Config the store was produced with (defaults if omitted).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PerTrial,
    Avg,
}

impl From<ModeArg> for WinMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PerTrial => WinMode::PerTrial,
            ModeArg::Avg => WinMode::Avg,
        }
    }
}

/// Failure with its exit code: 1 for validation/analysis failures, 2 for
/// usage and config errors.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) if !p.is_file() => Err(usage(format!("config file {} not found", p.display()))),
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure {
            code: 2,
            message: e.to_string(),
        }),
    }
}

fn load_records(path: &Path) -> Result<Vec<TrialRecord>, Failure> {
    let records = read_store(path)?;
    if records.is_empty() {
        return Err(Failure {
            code: 1,
            message: format!("run store {} is empty", path.display()),
        });
    }
    Ok(records)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            replications,
            threads,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            cfg.validate()?;
            let threads = threads.unwrap_or_else(default_threads);
            if threads == 0 {
                return Err(usage("--threads must be at least 1"));
            }
            eprintln!(
                "running {} experiments ({} trials x {} cells) on {threads} threads",
                cfg.expected_records(),
                cfg.replications,
                cfg.cells_per_trial()
            );
            let m = run_to_store(&cfg, &out, threads)?;
            eprintln!(
                "wrote {} records to {} in {:.1}s (config {})",
                m.record_count,
                out.display(),
                m.wall_time_secs,
                &m.config_hash[..12]
            );
        }
        Command::Aggregate {
            input,
            out,
            measure,
        } => {
            let measures: Vec<BaseMeasure> = if measure == "all" {
                BaseMeasure::ALL.to_vec()
            } else {
                vec![measure
                    .parse()
                    .map_err(|e: Error| usage(format!("{e}, all")))?]
            };
            let records = load_records(&input)?;
            let mut rows = Vec::new();
            for m in measures {
                let (r, warnings) = aggregate_means(&records, m);
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                rows.extend(r);
            }
            write_aggregate_csv(&rows, &out)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Winmatrix { input, out, mode } => {
            let records = load_records(&input)?;
            let mode = WinMode::from(mode);
            let matrices = wave_sizes(&records)
                .into_iter()
                .map(|w| match mode {
                    WinMode::PerTrial => win_matrix_per_trial(&records, w),
                    WinMode::Avg => win_matrix_avg(&records, w),
                })
                .collect::<Result<Vec<WinMatrix>, _>>()?;
            for m in &matrices {
                if m.excluded_trials > 0 {
                    eprintln!(
                        "warning: wave size {}: {} trial(s) missing a mechanism were excluded",
                        m.wave_size, m.excluded_trials
                    );
                }
                for c in m.cells.iter().filter(|c| c.tied) {
                    eprintln!(
                        "warning: wave size {}: {} has tied mean losses; {} chosen by lowest id",
                        m.wave_size, c.spec, c.winner
                    );
                }
            }
            write_winmatrix_csv(&matrices, &out)?;
            eprintln!("wrote {} rows to {}", matrices.len() * 15, out.display());
        }
        Command::Validate { seed, quad_nodes } => {
            let report = run_oracles(&OracleConfig {
                seed,
                quadrature_nodes: quad_nodes,
                ..OracleConfig::default()
            });
            emit(&report);
            if !report.all_passed() {
                return Err(Failure {
                    code: 1,
                    message: "oracle suite failed".into(),
                });
            }
        }
        Command::FiguresData { input, out_dir } => {
            let records = load_records(&input)?;
            for w in write_figures_data(&records, &out_dir)? {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote figure inputs to {}", out_dir.display());
        }
        Command::Lint { input, config } => {
            let cfg = load_config(config.as_deref())?;
            let report = lint_store(&input, &cfg)?;
            for (i, p) in report.problems.iter().take(50) {
                eprintln!("record {i}: {p}");
            }
            emit(format_args!(
                "{} records, {} problems",
                report.records,
                report.problems.len()
            ));
            if !report.is_clean() {
                return Err(Failure {
                    code: 1,
                    message: "store failed lint".into(),
                });
            }
        }
    }
    Ok(())
}

/// Prints to stdout, tolerating a closed pipe (e.g. `adaptexp validate | head`).
fn emit(value: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{value}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
