//! `nat`: verification, gradient checking, cost reporting, forward
//! inference, and micro-benchmarks for the neighborhood attention crate.
//!
//! Machine-readable JSON goes to stdout; human summaries to stderr. Exit
//! codes: 0 success / all checks passed, 1 check failure, 2 usage error,
//! 3 I/O or format error.

mod alloc;
mod bench;
mod flops;
mod forward;
mod gradcheck;
mod report;
mod verify;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use report::{RunReport, EXIT_USAGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

#[derive(Parser)]
#[command(name = "nat", version, about = "Neighborhood attention toolkit")]
struct Cli {
    /// RNG seed shared by every randomized fixture.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker thread count; defaults to the machine's parallelism.
    /// Results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite (oracle equivalence, SA equivalence,
    /// neighborhood geometry, cost parity, determinism).
    Verify {
        /// Compute precision; the suite defaults to double.
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Check analytic attention gradients against central differences.
    Gradcheck {
        /// Finite-difference step.
        #[arg(long = "step", visible_alias = "h", default_value_t = 1e-5)]
        step: f64,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        #[arg(long, default_value_t = 4)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        width: usize,
        #[arg(long, default_value_t = 6)]
        head_dim: usize,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        /// Backpropagate a zero cotangent (grads must come back zero).
        #[arg(long)]
        zero_cotangent: bool,
    },
    /// Print analytic parameter and MAC counts for a model config.
    Flops {
        /// Registered variant: mini | tiny | small | base | desk.
        #[arg(long)]
        preset: Option<String>,
        /// JSON config path (alternative to --preset).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Square input resolution.
        #[arg(long, default_value_t = 224)]
        res: usize,
    },
    /// Run the model on an NTSR image and write logits as NTSR.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
    },
    /// Time one kernel; correctness and allocation accounting run first.
    Bench {
        #[arg(long, value_enum)]
        op: BenchOpArg,
        #[arg(long, default_value_t = 56)]
        height: usize,
        #[arg(long, default_value_t = 56)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 7)]
        kernel: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, value_enum, default_value_t = Precision::F32)]
        precision: Precision,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchOpArg {
    #[value(name = "na")]
    Na,
    #[value(name = "na_reference")]
    NaReference,
    #[value(name = "self_attention")]
    SelfAttention,
    #[value(name = "conv")]
    Conv,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn run(cli: Cli) -> i32 {
    let pool = match build_pool(cli.threads) {
        Ok(pool) => pool,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_USAGE;
        }
    };
    let seed = cli.seed;
    let threads = cli.threads;

    match cli.command {
        Command::Verify {
            precision,
            inject_fault,
        } => in_pool(&pool, || {
            let start = Instant::now();
            let mut report = RunReport::new("verify", seed, precision.as_str(), threads);
            verify::run(&mut report, seed, inject_fault);
            report.time("total_ms", start.elapsed().as_secs_f64() * 1e3);
            report.emit()
        }),
        Command::Gradcheck {
            step,
            precision,
            height,
            width,
            head_dim,
            kernel,
            zero_cotangent,
        } => {
            if precision == Precision::F32 {
                eprintln!(
                    "error: gradcheck requires double precision; finite differences drown in f32 rounding"
                );
                return EXIT_USAGE;
            }
            in_pool(&pool, || {
                let start = Instant::now();
                let mut report = RunReport::new("gradcheck", seed, precision.as_str(), threads);
                let args = gradcheck::GradcheckArgs {
                    step,
                    height,
                    width,
                    head_dim,
                    kernel,
                    zero_cotangent,
                };
                match gradcheck::run(&mut report, seed, &args) {
                    Ok(()) => {
                        report.time("total_ms", start.elapsed().as_secs_f64() * 1e3);
                        report.emit()
                    }
                    Err(message) => {
                        eprintln!("error: {message}");
                        EXIT_USAGE
                    }
                }
            })
        }
        Command::Flops {
            preset,
            config,
            res,
        } => flops::run(preset.as_deref(), config.as_ref(), res),
        Command::Forward {
            config,
            weights,
            input,
            output,
            precision,
        } => in_pool(&pool, || {
            forward::run(&config, &weights, &input, &output, precision.as_str())
        }),
        Command::Bench {
            op,
            height,
            width,
            channels,
            kernel,
            iters,
            precision,
        } => in_pool(&pool, || {
            let start = Instant::now();
            let mut report = RunReport::new("bench", seed, precision.as_str(), threads);
            let args = bench::BenchArgs {
                op: match op {
                    BenchOpArg::Na => bench::BenchOp::Na,
                    BenchOpArg::NaReference => bench::BenchOp::NaReference,
                    BenchOpArg::SelfAttention => bench::BenchOp::SelfAttention,
                    BenchOpArg::Conv => bench::BenchOp::Conv,
                },
                height,
                width,
                channels,
                kernel,
                iters,
            };
            match bench::run(&mut report, seed, &args) {
                Ok(()) => {
                    report.time("total_ms", start.elapsed().as_secs_f64() * 1e3);
                    report.emit()
                }
                Err(message) => {
                    eprintln!("error: {message}");
                    EXIT_USAGE
                }
            }
        }),
    }
}

fn in_pool<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn build_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>, String> {
    match threads {
        None => Ok(None),
        Some(0) => Err("--threads must be at least 1".to_string()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| e.to_string()),
    }
}
