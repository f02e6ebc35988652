mod commands;
mod config;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "framelens", version, about = "Per-frame person detections from video via a vision-language model")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a video, run batched inference and write a detections artifact.
    Analyze(AnalyzeArgs),
    /// Draw an artifact's detections over its video.
    Annotate(AnnotateArgs),
    /// Re-run validation over an existing artifact.
    Validate(ValidateArgs),
    /// Guess cross-frame tracks by box overlap (heuristic, opt-in).
    Link(LinkArgs),
    /// Serve the interactive single-frame inspection API.
    InspectServe(InspectArgs),
}

/// Endpoint selection shared by commands that talk to a model.
#[derive(Debug, Clone, Args)]
struct EndpointArgs {
    /// Chat-completions base URL; requests go to `<url>/chat/completions`.
    #[arg(long)]
    endpoint_url: Option<String>,
    /// Model identifier sent with every request.
    #[arg(long)]
    model: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    /// Retries for rate limits, timeouts and server errors.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Serve a scripted mock provider in-process and use it instead of a
    /// real endpoint.
    #[arg(long, value_name = "SCRIPT")]
    mock_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    video: PathBuf,
    /// Seconds between sampled frames.
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// warn, clamp or drop.
    #[arg(long)]
    geometry_policy: Option<String>,
    /// Batches in flight at once.
    #[arg(long)]
    parallel_batches: Option<usize>,
    /// Comma-separated attribute names, each optionally `name:instruction`.
    #[arg(long)]
    attributes: Option<String>,
    /// Custom prompt template file.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Encoding for frames sent to the model: jpeg or png.
    #[arg(long)]
    still_format: Option<String>,
    /// Output directory (default: the video's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `key = value` file providing defaults for any of these options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    artifact: PathBuf,
    /// Output file (default: `<stem>.annotated.mp4` next to the video).
    #[arg(long)]
    output: Option<PathBuf>,
    /// hold-until-next or sampled-only.
    #[arg(long, default_value = "hold-until-next")]
    hold_policy: String,
    /// `palette` or a hex color such as `#ff0000`.
    #[arg(long, default_value = "palette")]
    box_color: String,
    #[arg(long, default_value_t = 2)]
    box_thickness: u32,
    /// Placeholders: {person_id} {confidence} {attributes} {<attribute>}.
    #[arg(long)]
    label_template: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    font_scale: f64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    artifact: PathBuf,
    /// Geometry policy to evaluate under (default: the artifact's own).
    #[arg(long)]
    geometry_policy: Option<String>,
}

#[derive(Debug, Args)]
struct LinkArgs {
    artifact: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Output directory (default: the artifact's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Register a video for frame fetching; repeatable.
    #[arg(long)]
    video: Vec<PathBuf>,
    /// Grid interval for frame fetching, in seconds.
    #[arg(long, default_value_t = framelens_core::media::DEFAULT_INTERVAL_S)]
    interval: f64,
    #[arg(long, default_value_t = framelens_inspect::DEFAULT_MAX_TOKENS)]
    max_tokens: u32,
    /// Built UI assets to serve at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

/// Exit status categories.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Fatal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Fatal(e)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing_subscriber::filter::LevelFilter::WARN,
        1 => tracing_subscriber::filter::LevelFilter::INFO,
        _ => tracing_subscriber::filter::LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .init();
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a).await,
        Command::Annotate(a) => commands::annotate(a).await,
        Command::Validate(a) => commands::validate(a),
        Command::Link(a) => commands::link(a),
        Command::InspectServe(a) => commands::inspect_serve(a).await,
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run `framelens --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Fatal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
