use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "rankforge", version, about = "Coarse-to-fine learning-to-rank experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with latent qualities.
    Generate(GenerateArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and print its metrics.
    Eval(EvalArgs),
    /// k-fold cross-validation report.
    Cv(CvArgs),
    /// Cross-validation repeated over consecutive seeds.
    Variance(VarianceArgs),
    /// MC-dropout confidence profiles of anchor items against all others.
    Uncertainty(UncertaintyArgs),
    /// Simulated noisy annotation swept over beta and sub-list size.
    AnnotateSim(AnnotateSimArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

/// Where the items come from. Without `--dataset` a synthetic set is drawn
/// from `--seed`.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset file (JSON Lines).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Synthetic set size.
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Synthetic feature dimension.
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Synthetic feature noise sigma.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Synthetic basis: linear or polynomial.
    #[arg(long, default_value = "linear")]
    basis: String,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Number of ordinal bins.
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Disable data-parallel execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, default_value = "orbnet")]
    method: String,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data seed when no dataset file is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the metrics as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, default_value = "orbnet")]
    method: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, default_value = "orbnet")]
    method: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UncertaintyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// ORBNet checkpoint; trained on the dataset when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    /// Anchor positions in the ranking, best first; `last` is the worst item.
    #[arg(long, value_delimiter = ',', default_value = "1,10,20,30,40,50,last")]
    anchors: Vec<String>,
    /// MC-dropout passes.
    #[arg(long, default_value_t = 10)]
    passes: usize,
    /// Output directory for one CSV per anchor.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnnotateSimArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Oracle sharpness values; `inf` is error-free.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4,8,inf")]
    beta: Vec<String>,
    #[arg(long = "n-sub", value_delimiter = ',', default_value = "2,3,6,8,12")]
    n_sub: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "RANKFORGE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: std::net::SocketAddr,
    #[arg(long, env = "RANKFORGE_DATA_DIR", default_value = "rankforge-data")]
    data_dir: PathBuf,
    /// Directory of `<item id>.<ext>` images.
    #[arg(long, env = "RANKFORGE_IMAGE_SOURCE")]
    image_source: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
