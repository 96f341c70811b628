use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eot_cli::config::{parse_config, ExperimentConfig, ExperimentKind};
use eot_cli::runner::{eval_experiment, load_checkpoint, run_experiment, ResultRecord};
use eot_core::sampler::CostFunction;
use eot_core::trainer::infer_conditional;
use eot_core::EotError;
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "eot", about = "Train and evaluate entropic optimal transport plans", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (training + evaluation + artifacts).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-evaluate an existing checkpoint under a config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw conditional samples y | x from a checkpointed potential.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conditioning point as a comma-separated vector, e.g. "0.5,-1".
        #[arg(long)]
        x: String,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 700)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the 1D solver self-checks (duality gap, semi-dual spread).
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code_for(err: &EotError) -> u8 {
    match err {
        EotError::Config(_)
        | EotError::Shape(_)
        | EotError::Format(_)
        | EotError::InsufficientSamples { .. } => 1,
        EotError::DivergedChain { .. }
        | EotError::SinkhornNonConvergence { .. }
        | EotError::Matrix(_) => 2,
        EotError::Io { .. } => 3,
    }
}

fn init_threads() -> Result<(), EotError> {
    if let Ok(v) = std::env::var("EOT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| EotError::Config(format!("EOT_THREADS must be a positive integer, got \"{v}\"")))?;
        if n == 0 {
            return Err(EotError::Config("EOT_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| EotError::Config(format!("failed to configure thread pool: {e}")))?;
    }
    Ok(())
}

fn print_records(records: &[ResultRecord]) {
    println!("{}", eot_cli::runner::RESULTS_HEADER);
    print!("{}", eot_cli::runner::results_csv(records).lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
}

fn parse_vector(text: &str) -> Result<DVector<f64>, EotError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let values =
        values.map_err(|e| EotError::Config(format!("cannot parse --x \"{text}\": {e}")))?;
    if values.is_empty() {
        return Err(EotError::Config("--x must contain at least one coordinate".into()));
    }
    Ok(DVector::from_vec(values))
}

fn run(cli: Cli) -> Result<(), EotError> {
    init_threads()?;
    match cli.command {
        Command::Train { config, output, seed } => {
            let mut cfg: ExperimentConfig = parse_config(&config)?;
            if let Some(out) = output {
                cfg.output_dir = out;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if cfg.experiment == ExperimentKind::OracleCheck {
                return Err(EotError::Config(
                    "oracle_check configs run under `eot oracle-check`, not `eot train`".into(),
                ));
            }
            let records = run_experiment(&cfg)?;
            print_records(&records);
            eprintln!("artifacts written to {}", cfg.output_dir.display());
        }
        Command::Eval { checkpoint, config } => {
            let cfg = parse_config(&config)?;
            let net = load_checkpoint(&checkpoint)?;
            let records = eval_experiment(&cfg, &net)?;
            print_records(&records);
        }
        Command::Sample { checkpoint, x, n, epsilon, steps, eta, sigma0, seed } => {
            if !(epsilon > 0.0 && eta > 0.0 && sigma0 > 0.0) {
                return Err(EotError::Config(
                    "--epsilon, --eta and --sigma0 must be positive".into(),
                ));
            }
            let net = load_checkpoint(&checkpoint)?;
            let x = parse_vector(&x)?;
            let samples = infer_conditional(
                &net,
                &CostFunction::QuadraticHalvedL2,
                &x,
                epsilon,
                steps,
                eta,
                sigma0,
                n,
                seed,
            )?;
            for i in 0..samples.nrows() {
                let row: Vec<String> =
                    (0..samples.ncols()).map(|j| samples[(i, j)].to_string()).collect();
                println!("{}", row.join(","));
            }
        }
        Command::OracleCheck { config } => {
            let cfg = parse_config(&config)?;
            if cfg.experiment != ExperimentKind::OracleCheck {
                return Err(EotError::Config(
                    "`eot oracle-check` expects a config with experiment = \"oracle_check\"".into(),
                ));
            }
            let records = run_experiment(&cfg)?;
            print_records(&records);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
