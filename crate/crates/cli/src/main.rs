use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zdc::runner::describe;
use zdc::{emit_plot_data, load_policy, run_experiment, run_train, CliError, ExperimentConfig, TrainJob};
use zdc_core::evaluation::{evaluate_policy, EvalOptions};
use zdc_core::{DistortionSpec, SourceSpec};

#[derive(Parser)]
#[command(name = "zdc", version, about = "Zero-delay coding of finite Markov sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy from a training job file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved policy on a source.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// JSON source description.
        #[arg(long)]
        source: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lattice parameter the policy must have been trained with.
        #[arg(long)]
        n: Option<u32>,
    },
    /// Run an experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Turn a results CSV into a rate/SNR table.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Columns to emit, in order; defaults to every method in the file.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => {
            let job = TrainJob::load(&config)?;
            let stats = run_train(&job)?;
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            eprintln!("policy written to {}", job.policy_out.display());
        }
        Command::Eval { policy, source, samples, seed, n } => {
            let policy = load_policy(&policy)?;
            let text = std::fs::read_to_string(&source).map_err(|e| CliError::io(&source, e))?;
            let spec: SourceSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::ConfigParse(format!("{}: {e}", source.display())))?;
            let source = spec.build()?;
            let dist = DistortionSpec::squared_error_for(&source);
            let opts = EvalOptions { expected_n: n, ..EvalOptions::new(samples, seed) };
            let report = evaluate_policy(&source, &policy, &dist, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            eprintln!("SNR {} at {} bits", describe(&report.snr_db), report.rate_bits);
        }
        Command::Experiment { config, workers, out_dir } => {
            let config = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&config, out_dir.as_deref(), workers)?;
            if !summary.gains.is_empty() {
                println!("{:<16} {:>9} {:>6} {:>10}", "method", "rate", "seed", "gain_dB");
                for g in &summary.gains {
                    println!("{:<16} {:>9.4} {:>6} {:>+10.3}", g.method, g.rate_bits, g.seed, g.gain_db);
                }
            }
            if summary.failed > 0 {
                log::warn!("{} of {} cells failed", summary.failed, summary.rows.len());
            }
            eprintln!("results written to {}", summary.results_path.display());
        }
        Command::Plot { results, out_dir, methods } => {
            let path = emit_plot_data(&results, &out_dir, methods.as_deref())?;
            eprintln!("plot data written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ZDC_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
