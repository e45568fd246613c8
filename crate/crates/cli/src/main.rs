use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod data;
mod plot;

#[derive(Parser, Debug)]
#[command(name = "police", version, about = "Train and verify networks that are exactly affine on a polytope")]
struct Cli {
    /// Seed for data generation, initialization and batch sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one of the synthetic 2-D data sets as CSV.
    Demo(DemoArgs),
    /// Train a network under the region constraint.
    Train(TrainArgs),
    /// Certify that a model is affine on a region (exit 0 pass, 2 fail, 3 inconclusive).
    Verify(VerifyArgs),
    /// Fold the region shifts into the biases of a model.
    Fold(FoldArgs),
    /// Evaluate a 2-D model on a grid and write CSV, PGM and overlays.
    Plot(PlotArgs),
    /// Time forward+backward steps with and without the constraint.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// classification or regression
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// fig1, fig2 or fig3; supplies architecture, hyperparameters, data and region defaults.
    #[arg(long)]
    preset: Option<String>,
    /// Training config JSON; overrides the preset's hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data CSV (targets in the last columns). Presets generate their own when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Region JSON. Presets default to the box (-1,1)^2.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Layer sizes, e.g. 2,64,64,1.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// relu, leaky_relu or abs.
    #[arg(long)]
    activation: Option<String>,
    /// Negative slope for leaky_relu.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides the number of steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Folded model output.
    #[arg(long)]
    out: PathBuf,
    /// Unfolded parameters, as trained.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// History CSV: step, loss, certificate_residual.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Write a resumable checkpoint at the end.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    region: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = police::verify::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    probes: usize,
    /// Certify the constrained function of unfolded parameters instead of the model as stored.
    #[arg(long)]
    policed: bool,
    /// Also write the certificate JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FoldArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    region: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    /// Region to fold against and to echo as an overlay.
    #[arg(long)]
    region: Option<PathBuf>,
    /// x_min,x_max,y_min,y_max
    #[arg(long, default_value = "-3,3,-3,3", allow_hyphen_values = true)]
    domain: plot::Domain,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    /// Also trace the zero-logit boundary.
    #[arg(long)]
    classification: bool,
    /// Output prefix: <prefix>.csv, <prefix>.pgm, <prefix>_region.csv, <prefix>_boundary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Only `table1` is available.
    #[arg(long)]
    suite: Option<String>,
    /// A single configuration D,L,width instead of a suite.
    #[arg(long, value_delimiter = ',')]
    config: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 1024)]
    repeats: usize,
    #[arg(long, default_value_t = 8)]
    warmup: usize,
    /// Skip configurations estimated above the memory or work limits.
    #[arg(long)]
    skip_large: bool,
    /// Memory limit in MiB (implies skipping).
    #[arg(long)]
    max_mem_mb: Option<f64>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
