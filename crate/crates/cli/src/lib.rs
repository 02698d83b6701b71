//! `jigsaw` command-line tool: dataset generation, offline scoring,
//! verification, statistics and the HTTP scoring service.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use jigsaw_core::manifest::{read_dataset, stats};
use jigsaw_core::pipeline::{generate_images, generate_rgbd, generate_videos, GenerationReport, RunOptions};
use jigsaw_core::scoring::{read_responses, score_responses};
use jigsaw_core::verify::{verify_dataset, VerifyOptions};

pub mod config;
pub mod serve;

use config::{parse_grid, FileConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<jigsaw_core::Error> for CliError {
    fn from(e: jigsaw_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn config_err(e: jigsaw_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "jigsaw", version, about = "Visual jigsaw datasets and verifiable permutation rewards")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut images into shuffled grids.
    GenImage {
        #[command(flatten)]
        common: GenArgs,
        /// Grid as ROWSxCOLS.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Split videos into shuffled temporal clips.
    GenVideo {
        #[command(flatten)]
        common: GenArgs,
        /// Number of clips.
        #[arg(long)]
        clips: Option<usize>,
        /// External decoder program for video files (frame directories need none).
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
    /// Annotate RGB-D frames with depth-ordering points.
    #[command(name = "gen-3d")]
    Gen3d {
        #[command(flatten)]
        common: GenArgs,
        /// Number of points.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Score a responses JSONL file against a manifest.
    Score(ScoreArgs),
    /// Re-check every invariant of an existing dataset.
    Verify(VerifyArgs),
    /// Summarize a dataset.
    Stats {
        /// Dataset directory or manifest file.
        dataset: PathBuf,
    },
    /// Serve tasks and score submissions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Corpus directory, single file, or `.txt` list of paths.
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Records per manifest shard.
    #[arg(long)]
    pub shard_size: Option<usize>,
    /// Timestamp written to every record.
    #[arg(long, env = "SOURCE_DATE_EPOCH")]
    pub created_at: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub format_bonus: Option<String>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSONL of `{task_id, response_text}`.
    #[arg(long)]
    pub responses: PathBuf,
    /// Breakdowns JSONL destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the aggregate JSON here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub reward: RewardArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    /// Write reassembled previews under `previews/`.
    #[arg(long)]
    pub render: bool,
    /// Corpus root, to re-check against the original inputs.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Score log (defaults to `scores.jsonl` in the dataset directory).
    #[arg(long)]
    pub score_log: Option<PathBuf>,
    #[command(flatten)]
    pub reward: RewardArgs,
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("JIGSAW_LOG", "warn")).try_init();
}

fn run_options(args: &GenArgs, file: &FileConfig) -> Result<RunOptions, CliError> {
    let jobs = args
        .jobs
        .or(file.run.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let shard_size = args.shard_size.or(file.run.shard_size).unwrap_or(usize::MAX);
    if jobs == 0 {
        return Err(CliError::Config("--jobs: must be >= 1".into()));
    }
    if shard_size == 0 {
        return Err(CliError::Config("--shard-size: must be >= 1".into()));
    }
    Ok(RunOptions {
        global_seed: args.seed.or(file.run.seed).unwrap_or(0),
        jobs,
        shard_size,
        created_unix_s: args.created_at.or(file.run.created_unix_s).unwrap_or(0),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn report(r: GenerationReport) -> Result<(), CliError> {
    print_json(&r)
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("--input: {} does not exist", path.display())))
    }
}

fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Runtime(e.to_string());
    match path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p).map_err(io)?);
            for l in lines {
                writeln!(f, "{l}").map_err(io)?;
            }
            f.flush().map_err(io)
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for l in lines {
                writeln!(out, "{l}").map_err(io)?;
            }
            Ok(())
        }
    }
}

fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.reward.config.as_deref())?;
    let spec = file.reward_spec(args.reward.gamma.as_deref(), args.reward.format_bonus.as_deref())?;
    let records = read_dataset(&args.manifest)?;
    let responses = read_responses(&args.responses)?;
    let (lines, aggregate) = score_responses(&records, &responses, &spec)?;
    let lines: Vec<String> = lines.iter().map(|l| l.to_json()).collect();
    write_lines(args.out.as_deref(), &lines)?;
    let agg = serde_json::to_string(&aggregate).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = &args.summary {
        std::fs::write(p, format!("{agg}\n")).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    // keep stdout pure JSONL when it carries the breakdowns
    if args.out.is_some() {
        println!("{agg}");
    } else {
        eprintln!("{agg}");
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let opts = VerifyOptions {
        render: args.render,
        input_root: args.input.clone(),
    };
    let report = verify_dataset(&args.dataset, &opts)?;
    for f in &report.failures {
        println!("FAIL {}: {}", f.task_id, f.message);
    }
    println!("checked {} tasks, {} failed", report.checked, report.failures.len());
    if report.ok() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} tasks failed verification", report.failures.len())))
    }
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.reward.config.as_deref())?;
    let spec = file.reward_spec(args.reward.gamma.as_deref(), args.reward.format_bonus.as_deref())?;
    let state = Arc::new(serve::ServeState::open(&args.dataset, spec, args.score_log.as_deref())?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(serve::run_server(state, &format!("{}:{}", args.host, args.port)))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenImage { common, grid } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut cfg = file.image.clone();
            if let Some(g) = grid {
                (cfg.rows, cfg.cols) = parse_grid(&g)?;
            }
            cfg.validate().map_err(config_err)?;
            let opts = run_options(&common, &file)?;
            check_input(&common.input)?;
            report(generate_images(&common.input, &common.out, &cfg, &opts)?)
        }
        Command::GenVideo { common, clips, decoder } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut cfg = file.video.clone();
            if let Some(k) = clips {
                cfg.clips = k;
            }
            cfg.validate().map_err(config_err)?;
            let opts = run_options(&common, &file)?;
            check_input(&common.input)?;
            report(generate_videos(&common.input, &common.out, &cfg, decoder.as_deref(), &opts)?)
        }
        Command::Gen3d { common, points } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut cfg = file.rgbd.clone();
            if let Some(k) = points {
                cfg.points = k;
            }
            cfg.validate().map_err(config_err)?;
            let opts = run_options(&common, &file)?;
            check_input(&common.input)?;
            report(generate_rgbd(&common.input, &common.out, &cfg, &opts)?)
        }
        Command::Score(args) => score(&args),
        Command::Verify(args) => verify(&args),
        Command::Stats { dataset } => print_json(&stats(&dataset)?),
        Command::Serve(args) => serve(&args),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("jigsaw: {e}");
            e.exit_code()
        }
    }
}
