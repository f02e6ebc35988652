use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use framelens_core::annotate::{annotate_video, default_output_path, AnnotationStyle, BoxColor, HoldPolicy};
use framelens_core::artifact::{load_artifact, FrameStatus};
use framelens_core::contract::{AttributeSpec, BatchDetections, PromptTemplate};
use framelens_core::gateway::mock::{FailureScript, MockProvider};
use framelens_core::gateway::{ApiKey, EndpointConfig, HttpGateway};
use framelens_core::linker::{link_ids_heuristic, linked_file_name, IouThreshold, HEURISTIC_DISCLAIMER};
use framelens_core::media::{MediaTool, StillFormat};
use framelens_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use framelens_core::validate::{detection_to_value, validate_geometric, validate_structural, GeometryPolicy};
use framelens_inspect::{InspectOptions, InspectState};

use crate::config::FileConfig;
use crate::{AnalyzeArgs, AnnotateArgs, EndpointArgs, Failure, InspectArgs, LinkArgs, ValidateArgs};

type CmdResult = Result<ExitCode, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// A gateway plus the in-process mock it may point at. The mock stops when
/// this is dropped.
struct Backend {
    gateway: HttpGateway,
    _mock: Option<MockProvider>,
}

async fn backend(args: &EndpointArgs) -> Result<Backend, Failure> {
    let defaults = EndpointConfig::default();
    let mock = match &args.mock_script {
        Some(path) => {
            let script = FailureScript::load(path).map_err(|e| usage(e.to_string()))?;
            let mock = MockProvider::serve(script, 0)
                .await
                .context("starting the mock provider")?;
            Some(mock)
        }
        None => None,
    };
    let base_url = match &mock {
        Some(m) => m.base_url(),
        None => args.endpoint_url.clone().unwrap_or(defaults.base_url),
    };
    let config = EndpointConfig {
        base_url,
        api_key: ApiKey::from_env(),
        model_id: args.model.clone().unwrap_or(defaults.model_id),
        timeout_s: args.timeout.unwrap_or(defaults.timeout_s),
        max_retries: args.max_retries.unwrap_or(defaults.max_retries),
        ..defaults
    };
    if mock.is_none() && config.api_key.is_none() {
        eprintln!(
            "warning: {} is not set; requests are sent without credentials",
            framelens_core::gateway::API_KEY_ENV
        );
    }
    let gateway = HttpGateway::new(config).map_err(|e| usage(e.to_string()))?;
    Ok(Backend { gateway, _mock: mock })
}

fn parse_still_format(s: &str) -> Result<StillFormat, Failure> {
    match s {
        "jpeg" | "jpg" => Ok(StillFormat::default()),
        "png" => Ok(StillFormat::Png),
        other => Err(usage(format!("unknown still format {other:?} (expected jpeg or png)"))),
    }
}

fn parse_policy(s: &str) -> Result<GeometryPolicy, Failure> {
    s.parse().map_err(|e: String| usage(e))
}

pub async fn analyze(args: AnalyzeArgs) -> CmdResult {
    let file = match &args.config {
        Some(p) => FileConfig::load(p).map_err(usage)?,
        None => FileConfig::default(),
    };
    let endpoint = EndpointArgs {
        endpoint_url: args.endpoint.endpoint_url.clone().or(file.endpoint_url),
        model: args.endpoint.model.clone().or(file.model),
        timeout: args.endpoint.timeout.or(file.timeout),
        max_retries: args.endpoint.max_retries.or(file.max_retries),
        mock_script: args.endpoint.mock_script.clone().or(file.mock_script),
    };
    let out_dir = args.out_dir.or(file.out_dir).unwrap_or_else(|| {
        match args.video.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    });

    let mut config = PipelineConfig::new(&args.video, out_dir);
    if let Some(v) = args.interval.or(file.interval) {
        config.interval_s = v;
    }
    config.max_frames = args.max_frames.or(file.max_frames);
    if let Some(v) = args.batch_size.or(file.batch_size) {
        config.batch_size = v;
    }
    if let Some(v) = args.parallel_batches.or(file.parallel_batches) {
        config.parallel_batches = v;
    }
    if let Some(p) = args.geometry_policy.or(file.geometry_policy) {
        config.geometry_policy = parse_policy(&p)?;
    }
    if let Some(list) = args.attributes.or(file.attributes) {
        let items: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
        config.attributes = AttributeSpec::parse_list(&items).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(t) = args.template.or(file.template) {
        config.template = PromptTemplate::load(&t).map_err(|e| Failure::Fatal(e.into()))?;
    }
    if let Some(f) = args.still_format.or(file.still_format) {
        config.still_format = parse_still_format(&f)?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    let backend = backend(&endpoint).await?;
    config.retry = backend.gateway.config().retry_policy();
    let run = match run_pipeline(&config, &MediaTool::from_env(), &backend.gateway).await {
        Ok(run) => run,
        Err(PipelineError::Config(m)) => return Err(usage(m)),
        Err(e) => return Err(Failure::Fatal(e.into())),
    };
    let a = &run.artifact;
    println!("frames ok/failed: {}/{}", a.ok_count(), a.failed_count());
    if !a.sampling.skipped.is_empty() {
        println!("frames skipped (undecodable): {}", a.sampling.skipped.len());
    }
    println!("detections: {}", a.detection_count());
    println!("artifact: {}", run.artifact_path.display());
    println!("report: {}", run.report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_box_color(s: &str) -> Result<BoxColor, Failure> {
    if s == "palette" {
        return Ok(BoxColor::Palette);
    }
    let hex = s.trim_start_matches('#');
    let bad = || usage(format!("box color {s:?} is neither `palette` nor a #rrggbb hex color"));
    if hex.len() != 6 {
        return Err(bad());
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
    Ok(BoxColor::Solid([channel(0)?, channel(2)?, channel(4)?]))
}

pub async fn annotate(args: AnnotateArgs) -> CmdResult {
    let hold: HoldPolicy = args.hold_policy.parse().map_err(|e: String| usage(e))?;
    let mut style = AnnotationStyle {
        box_color: parse_box_color(&args.box_color)?,
        box_thickness: args.box_thickness,
        font_scale: args.font_scale,
        ..AnnotationStyle::default()
    };
    if let Some(t) = args.label_template {
        style.label_template = t;
    }
    let artifact = load_artifact(&args.artifact)
        .with_context(|| format!("loading {}", args.artifact.display()))?;
    let output = args.output.unwrap_or_else(|| default_output_path(&args.video));
    let video = args.video.clone();
    let summary = tokio::task::spawn_blocking(move || {
        annotate_video(&MediaTool::from_env(), &video, &artifact, &style, hold, &output)
    })
    .await
    .context("annotation task")?
    .context("annotating video")?;
    println!(
        "annotated video: {} ({} frames)",
        summary.output.display(),
        summary.frames_written
    );
    Ok(ExitCode::SUCCESS)
}

pub fn validate(args: ValidateArgs) -> CmdResult {
    let artifact = load_artifact(&args.artifact)
        .with_context(|| format!("loading {}", args.artifact.display()))?;
    let policy = match &args.geometry_policy {
        Some(p) => parse_policy(p)?,
        None => artifact.geometry_policy,
    };
    let spec = if artifact.inference.attributes.is_empty() {
        AttributeSpec::default()
    } else {
        AttributeSpec::parse_list(&artifact.inference.attributes)
            .context("artifact lists invalid attribute names")?
    };

    let mut structural = 0usize;
    let mut geometric = 0usize;
    for frame in artifact.frames.iter().filter(|f| f.status == FrameStatus::Ok) {
        let batch = BatchDetections {
            entries: [(frame.frame_index, frame.detections.iter().map(detection_to_value).collect())].into(),
            warnings: Vec::new(),
        };
        for e in validate_structural(&batch, &spec, 0).structural_errors {
            println!("frame {}: {}", e.frame_index, e.summary());
            structural += 1;
        }
        let outcome = validate_geometric(
            frame.frame_index,
            &frame.detections,
            artifact.video.width,
            artifact.video.height,
            GeometryPolicy::Warn,
        );
        for w in outcome.warnings {
            println!(
                "frame {} person {}: {} {}",
                w.frame_index, w.person_id, w.violation, w.original
            );
            geometric += 1;
        }
    }
    println!(
        "frames ok/failed: {}/{}",
        artifact.ok_count(),
        artifact.failed_count()
    );
    println!("structural errors: {structural}");
    println!("geometric violations: {geometric} (policy {policy})");
    let valid = structural == 0 && (policy == GeometryPolicy::Warn || geometric == 0);
    println!("{}", if valid { "artifact valid" } else { "artifact invalid" });
    Ok(if valid { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn output_dir(explicit: Option<PathBuf>, next_to: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| match next_to.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    })
}

pub fn link(args: LinkArgs) -> CmdResult {
    let threshold = IouThreshold::new(args.iou_threshold).map_err(usage)?;
    let artifact = load_artifact(&args.artifact)
        .with_context(|| format!("loading {}", args.artifact.display()))?;
    if artifact.ok_count() == 0 {
        return Err(Failure::Fatal(anyhow::anyhow!("artifact has no ok frames to link")));
    }
    let linked = link_ids_heuristic(&artifact, threshold);
    let dir = output_dir(args.out_dir, &args.artifact);
    let path = dir.join(linked_file_name(&artifact));
    let mut bytes = serde_json::to_vec_pretty(&linked).context("serializing linked artifact")?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    println!("{HEURISTIC_DISCLAIMER}");
    println!(
        "tracks: {} (memberships {}, iou threshold {})",
        linked.tracks.len(),
        linked.membership_count(),
        threshold
    );
    println!("linked: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub async fn inspect_serve(args: InspectArgs) -> CmdResult {
    if !(args.interval.is_finite() && args.interval > 0.0) {
        return Err(usage("--interval must be > 0"));
    }
    let backend = backend(&args.endpoint).await?;
    let options = InspectOptions {
        retry: backend.gateway.config().retry_policy(),
        max_tokens: args.max_tokens,
        interval_s: args.interval,
        static_dir: args.static_dir,
        ..InspectOptions::default()
    };
    let state = InspectState::new(Arc::new(backend.gateway.clone()), MediaTool::from_env(), options);
    for v in &args.video {
        let id = state
            .register_video(v)
            .with_context(|| format!("registering {}", v.display()))?;
        println!("video {id}: {}", v.display());
    }
    println!("listening on http://{}:{}", args.host, args.port);
    framelens_inspect::serve(state, &args.host, args.port, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .context("inspect service")?;
    drop(backend);
    Ok(ExitCode::SUCCESS)
}
