//! `irfuse`: batch front end for degradation, decomposition, training,
//! fusion, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "irfuse",
    version,
    about = "Degradation-aware infrared/visible image fusion"
)]
struct Cli {
    /// Worker threads for per-image work in degrade, fuse and evaluate.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic set of aligned pairs as <out>/ir/*.png and <out>/vi/*.png.
    Synth(SynthArgs),
    /// Apply seeded synthetic degradations and record each draw in manifest.json.
    Degrade(DegradeArgs),
    /// Split one image into two components and write them as rescaled PNGs.
    Decompose(DecomposeArgs),
    /// Run training stage 1, stage 2 or both.
    Train(TrainArgs),
    /// Fuse every aligned pair with a trained checkpoint.
    Fuse(FuseArgs),
    /// Compute the six fusion metrics for every aligned triple.
    Evaluate(EvaluateArgs),
    /// Run finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DegradeArgs {
    /// Directory of PNGs; `ir/` and `vi/` subdirectories select the protocol per modality.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Project config supplying default ranges, orientation, gamma and seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian sigma range on the 0-255 scale, `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    sigma_range: Option<[f64; 2]>,
    /// Stripe amplitude range on the 0-255 scale, `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    stripe_range: Option<[f64; 2]>,
    #[arg(long, value_enum)]
    orientation: Option<Orientation>,
    /// Low-light gamma for visible images (1 leaves them unchanged).
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Orientation {
    Vertical,
    Horizontal,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Dct,
    Retinex,
}

#[derive(Args)]
struct DecomposeArgs {
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Dct)]
    mode: Mode,
    #[arg(long, default_value_t = irfuse_core::decomposition::DEFAULT_TAU)]
    tau: f64,
    /// Retinex illumination blur.
    #[arg(long, default_value_t = irfuse_core::decomposition::DEFAULT_RETINEX_SIGMA)]
    sigma: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    /// Continue from the stage's existing checkpoint and log.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    vi: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    vi: PathBuf,
    #[arg(long)]
    fused: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct GradcheckArgs {
    #[arg(long)]
    all: bool,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    block: Option<String>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected lo,hi, got {s:?}"));
    }
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs as usize;
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(&a),
        Command::Degrade(a) => commands::degrade::run(&a, jobs),
        Command::Decompose(a) => commands::decompose::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Fuse(a) => commands::fuse::run(&a, jobs),
        Command::Evaluate(a) => commands::evaluate::run(&a, jobs),
        Command::Gradcheck(a) => commands::gradcheck::run(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
