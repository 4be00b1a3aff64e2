use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpsketch::Variant;
use dpsketch_cli::{
    run_calibrate, run_frequency, run_quantile, run_topk, write_csv, Dataset, ExperimentConfig,
    RunError, DEFAULT_SPACE_KB,
};

#[derive(Parser)]
#[command(
    name = "dpsketch",
    version,
    about = "Private linear sketch experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average relative error of frequency estimates.
    Frequency(CommonArgs),
    /// F1 score of the estimated top-k items.
    Topk(CommonArgs),
    /// Average rank error of dyadic quantile sketches.
    Quantile(CommonArgs),
    /// Print rows, columns, sigma, E, sensitivity and epsilon for given parameters.
    Calibrate(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Zipf,
    File,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum VariantArg {
    Cm,
    Cs,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Cm => Variant::CountMin,
            VariantArg::Cs => Variant::CountSketch,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long, value_enum, default_value = "zipf")]
    dataset: DatasetArg,
    /// Stream file with one `<id>,<+1|-1>` per line (with --dataset file).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Inserts drawn per repeat.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    universe_bits: u32,
    #[arg(long, default_value_t = dpsketch::workload::DEFAULT_ZIPF_S)]
    zipf_s: f64,
    /// Fraction of deletions interleaved into the stream.
    #[arg(long, default_value_t = 0.0)]
    p_del: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// zCDP budget of a private cell; repeat for several cells.
    #[arg(long)]
    rho: Vec<f64>,
    /// Delta used to report epsilon.
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Sketch size in KiB; repeat for several cells.
    #[arg(long)]
    space_kb: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Number of evenly spaced quantiles; repeat for several cells.
    #[arg(long)]
    m: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sketch variant; repeat for several. Defaults to both (cs for quantile).
    #[arg(long, value_enum)]
    variant: Vec<VariantArg>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Quantile runs: exact per-level counters instead of sketches.
    #[arg(long)]
    exact_mode: bool,
}

impl CommonArgs {
    fn into_config(self, default_variants: &[Variant]) -> Result<ExperimentConfig, RunError> {
        let dataset = match (self.dataset, self.file) {
            (DatasetArg::Zipf, None) => Dataset::Zipf,
            (DatasetArg::File, Some(path)) => Dataset::File(path),
            (DatasetArg::File, None) => {
                return Err(RunError::Config("--dataset file needs --file PATH".into()))
            }
            (DatasetArg::Zipf, Some(_)) => {
                return Err(RunError::Config(
                    "--file is only used with --dataset file".into(),
                ))
            }
        };
        let mut variants: Vec<Variant> = self.variant.into_iter().map(Variant::from).collect();
        variants.dedup();
        if variants.is_empty() {
            variants = default_variants.to_vec();
        }
        Ok(ExperimentConfig {
            dataset,
            n: self.n,
            universe_bits: self.universe_bits,
            zipf_s: self.zipf_s,
            p_del: self.p_del,
            gamma: self.gamma,
            beta: self.beta,
            rhos: self.rho,
            delta: self.delta,
            space_kb: if self.space_kb.is_empty() {
                DEFAULT_SPACE_KB.to_vec()
            } else {
                self.space_kb
            },
            k: self.k,
            ms: if self.m.is_empty() {
                (1..=10).collect()
            } else {
                self.m
            },
            repeats: self.repeats,
            seed: self.seed,
            variants,
            exact_mode: self.exact_mode,
        })
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let both = [Variant::CountMin, Variant::CountSketch];
    let (args, rows) = match cli.command {
        Command::Frequency(args) => {
            let output = args.output.clone();
            (output, run_frequency(&args.into_config(&both)?)?)
        }
        Command::Topk(args) => {
            let output = args.output.clone();
            (output, run_topk(&args.into_config(&both)?)?)
        }
        Command::Quantile(args) => {
            let output = args.output.clone();
            (
                output,
                run_quantile(&args.into_config(&[Variant::CountSketch])?)?,
            )
        }
        Command::Calibrate(args) => {
            let output = args.output.clone();
            (output, run_calibrate(&args.into_config(&both)?)?)
        }
    };
    match args {
        Some(path) => {
            let file = File::create(&path)?;
            write_csv(&rows, BufWriter::new(file))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(&rows, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
