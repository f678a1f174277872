//! `fairtrack` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage and validation failures, 2 for I/O and
//! malformed input files.

mod eval;
mod io;
mod maps;
mod sim;
mod track;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fairtrack::decode::Sampling;
use fairtrack::sim::Motion;

#[derive(Debug, Parser)]
#[command(
    name = "fairtrack",
    version,
    about = "Anchor-free tracking-by-detection toolkit"
)]
struct Cli {
    /// Worker threads for per-frame work.
    #[arg(long, global = true, env = "FAIRTRACK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence directory.
    Sim(SimArgs),
    /// Encode MOTChallenge ground truth into per-frame target maps.
    Encode(EncodeArgs),
    /// Decode per-frame predicted maps into detections.
    Decode(DecodeArgs),
    /// Run the online tracker over detections.
    Track(TrackArgs),
    /// Score tracking results against ground truth.
    Eval(EvalArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Verification TPR at a fixed false accept rate on a sequence's embeddings.
    ReidEval(ReidEvalArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub targets: Option<usize>,
    /// cv or crossing.
    #[arg(long)]
    pub motion: Option<Motion>,
    #[arg(long)]
    pub image_w: Option<usize>,
    #[arg(long)]
    pub image_h: Option<usize>,
    /// Box corner noise in pixels.
    #[arg(long)]
    pub box_noise: Option<f64>,
    /// Embedding noise norm.
    #[arg(long)]
    pub emb_noise: Option<f64>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Probability of dropping a detection.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Mean false positives per frame.
    #[arg(long)]
    pub fp_rate: Option<f64>,
    /// Also write decodable maps under `maps/`.
    #[arg(long)]
    pub maps: bool,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// MOTChallenge ground-truth file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `seqinfo.ini` next to the ground truth, else 1088.
    #[arg(long)]
    pub image_w: Option<usize>,
    /// Defaults to `seqinfo.ini` next to the ground truth, else 608.
    #[arg(long)]
    pub image_h: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Directory of `{frame:06}.heat.ften`, `.off.ften`, `.size.ften` and optional `.emb.ften`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// center or center-bi.
    #[arg(long)]
    pub sampling: Option<Sampling>,
    #[arg(long)]
    pub image_w: Option<usize>,
    #[arg(long)]
    pub image_h: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Sequence directory with `det.txt` and `emb/`.
    #[arg(long = "in", conflicts_with = "dets")]
    pub input: Option<PathBuf>,
    /// Detection file (MOTChallenge or decoder output).
    #[arg(long)]
    pub dets: Option<PathBuf>,
    /// Directory of `{frame:06}.dets.ften` embeddings.
    #[arg(long)]
    pub emb_dir: Option<PathBuf>,
    /// Result file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of frames; defaults to `seqinfo.ini` or the last detection frame.
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub no_reid: bool,
    #[arg(long)]
    pub no_iou: bool,
    #[arg(long)]
    pub no_kalman: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Comma-separated subset of clear, idf1, ap.
    #[arg(long, default_value = "clear,idf1")]
    pub metrics: String,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Append a single-line JSON summary.
    #[arg(long)]
    pub json: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub start_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub max_side: usize,
    #[arg(long, default_value_t = 8)]
    pub max_identities: usize,
    #[arg(long, default_value_t = fairtrack::gradcheck::TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReidEvalArgs {
    /// Sequence directory with `gt.txt`, `det.txt` and `emb/`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub far: f64,
    /// Minimum overlap for a detection to inherit a ground-truth identity.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Sim(_) => "sim",
        Command::Encode(_) => "encode",
        Command::Decode(_) => "decode",
        Command::Track(_) => "track",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::ReidEval(_) => "reid-eval",
        Command::Replay(_) => "replay",
    }
}

/// Runs one parsed command; `Ok(false)` means a check failed.
fn dispatch(cli: Cli, args: Vec<String>, depth: usize) -> Result<bool> {
    let info = io::RunInfo {
        subcommand: subcommand_name(&cli.command),
        args,
        started: Instant::now(),
    };
    match &cli.command {
        Command::Sim(a) => sim::run(a, &info).map(|_| true),
        Command::Encode(a) => maps::run_encode(a, &info).map(|_| true),
        Command::Decode(a) => maps::run_decode(a, &info).map(|_| true),
        Command::Track(a) => track::run(a, &info).map(|_| true),
        Command::Eval(a) => eval::run_eval(a, &info).map(|_| true),
        Command::Gradcheck(a) => eval::run_gradcheck(a, &info),
        Command::ReidEval(a) => eval::run_reid_eval(a, &info).map(|_| true),
        Command::Replay(a) => {
            if depth > 0 {
                bail!("a manifest cannot replay another replay");
            }
            let m = io::read_manifest(&a.manifest)?;
            std::env::set_current_dir(&m.cwd)
                .with_context(|| format!("entering {}", m.cwd.display()))?;
            let argv = std::iter::once("fairtrack".to_string()).chain(m.args.iter().cloned());
            let inner = Cli::try_parse_from(argv)
                .map_err(|e| anyhow::anyhow!("manifest arguments: {e}"))?;
            dispatch(inner, m.args, depth + 1)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(cli, args, 0) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(io::exit_code(&e))
        }
    }
}
