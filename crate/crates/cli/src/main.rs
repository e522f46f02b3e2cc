use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod options;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "diffem", version, about = "Blind deconvolution with Diffusion EM")]
struct Cli {
    /// Worker threads (falls back to DIFFEM_THREADS, then all cores).
    #[arg(long, global = true, env = "DIFFEM_THREADS")]
    threads: Option<usize>,

    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Blur and noise a directory of images into a dataset with a manifest.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise level, e.g. 0.02 or 5/255.
        #[arg(long, default_value = "5/255")]
        sigma: String,
        #[arg(long, default_value_t = 11)]
        ksize: usize,
    },
    /// Non-blind posterior sampling with a known kernel.
    Sample(options::SampleArgs),
    /// Kernel estimation from sharp images (one M-step).
    EstimateKernel(options::EstimateArgs),
    /// Train the kernel denoiser used by the pnp regularizer.
    TrainDenoiser(options::TrainArgs),
    /// Blind deblurring with Diffusion EM or Fast Diffusion EM.
    Deblur(options::DeblurArgs),
    /// Kernel error of several regularizers across noise levels.
    SweepReg(options::SweepArgs),
    /// Run a deblurring configuration over a dataset manifest.
    Benchmark(options::BenchmarkArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Degrade { input, out, sigma, ksize } => commands::degrade(&input, &out, &sigma, ksize, seed),
        Command::Sample(a) => commands::sample(&a, seed),
        Command::EstimateKernel(a) => commands::estimate_kernel(&a, seed),
        Command::TrainDenoiser(a) => commands::train_denoiser(&a, seed),
        Command::Deblur(a) => commands::deblur(&a, seed),
        Command::SweepReg(a) => commands::sweep_reg(&a, seed),
        Command::Benchmark(a) => commands::benchmark(&a, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
