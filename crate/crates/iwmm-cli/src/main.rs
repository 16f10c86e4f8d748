use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "iwmm",
    version,
    about = "Infinite warped mixture model: dataset generation, fitting, density grids, prior simulation, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a named synthetic dataset as CSV
    Generate {
        /// two-curve, three-semi, two-circle or pinwheel
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model, writing a self-contained sample archive
    Fit {
        /// Input dataset CSV
        #[arg(long)]
        data: PathBuf,
        /// key=value config file (defaults apply when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Name of the label column (auto-detects a column named "label")
        #[arg(long)]
        label_col: Option<String>,
        /// Output archive directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the posterior predictive density of a fit on a 2-D grid
    Density {
        /// Archive directory produced by `fit`
        #[arg(long)]
        archive: PathBuf,
        /// x0,x1,y0,y1 (defaults to the data range padded by 5 sd)
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw one sample from the generative process, writing X, Z and Y
    PriorSample {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated clustering and density benchmarks
    Benchmark {
        /// Dataset CSV (repeatable)
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Comma-separated methods: iwmm-q<N>, iwmm-qd, igmm, kde
        #[arg(long)]
        methods: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        label_col: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_bounds(s: &str) -> Result<[f64; 4], iwmm::Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(iwmm::Error::Usage(format!(
            "--bounds wants x0,x1,y0,y1, got '{s}'"
        )));
    }
    let mut out = [0.0; 4];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| iwmm::Error::Usage(format!("--bounds: '{p}' is not numeric")))?;
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), iwmm::Error> {
    match cli.command {
        Command::Generate { name, seed, out } => iwmm::cli::cmd_generate(&name, seed, &out),
        Command::Fit {
            data,
            config,
            label_col,
            out,
        } => iwmm::cli::cmd_fit(&data, config.as_deref(), label_col.as_deref(), &out),
        Command::Density {
            archive,
            bounds,
            resolution,
            out,
        } => {
            let bounds = bounds.map(|b| parse_bounds(&b)).transpose()?;
            iwmm::cli::cmd_density(&archive, bounds, resolution, &out)
        }
        Command::PriorSample {
            n,
            q,
            d,
            seed,
            config,
            out,
        } => iwmm::cli::cmd_prior_sample(n, q, d, seed, config.as_deref(), &out),
        Command::Benchmark {
            data,
            methods,
            config,
            label_col,
            out,
        } => {
            let methods: Vec<String> = methods
                .split(',')
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect();
            iwmm::cli::cmd_benchmark(
                &data,
                &methods,
                config.as_deref(),
                label_col.as_deref(),
                &out,
            )
        }
    }
}

fn main() -> ExitCode {
    iwmm::init_thread_pool_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
