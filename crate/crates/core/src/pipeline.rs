//! End-to-end analysis run: sample, batch, infer, extract, validate, persist.
//!
//! Runs are best-effort. A batch that fails after retries, yields no usable
//! JSON, or has frames rejected by structural validation marks only the
//! affected frames failed; the artifact is still written. Credential errors,
//! unreadable video and an unwritable output directory abort the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use thiserror::Error;
use tracing::{info, warn};

use crate::artifact::{
    self, AbortStub, ArtifactError, DetectionsArtifact, FailureRecord, FrameRecord, FrameStatus,
    InferenceRecord, RunReport, SamplingRecord,
};
use crate::contract::{
    build_batch_request, extract_json_payload, parse_batch_detections, AttributeSpec,
    ContractError, PromptTemplate, RequestLimits,
};
use crate::detection::Detection;
use crate::gateway::{send_with_retry, ChatBackend, ProviderError, ProviderErrorKind, RetryPolicy};
use crate::media::{FrameSample, MediaError, MediaTool, StillFormat, DEFAULT_INTERVAL_S};
use crate::validate::{validate_and_type, validate_geometric, GeometryPolicy, ValidationReport};

pub const STRUCTURAL_REJECTION: &str = "structural_rejection";

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub video: PathBuf,
    pub interval_s: f64,
    pub max_frames: Option<usize>,
    pub batch_size: usize,
    pub geometry_policy: GeometryPolicy,
    pub attributes: AttributeSpec,
    pub template: PromptTemplate,
    /// Token budget, temperature and payload ceiling for each request. The
    /// batch size limit is taken from `batch_size`.
    pub limits: RequestLimits,
    pub retry: RetryPolicy,
    pub parallel_batches: usize,
    pub still_format: StillFormat,
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    pub fn new(video: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            video: video.into(),
            interval_s: DEFAULT_INTERVAL_S,
            max_frames: None,
            batch_size: crate::contract::DEFAULT_BATCH_SIZE,
            geometry_policy: GeometryPolicy::default(),
            attributes: AttributeSpec::default(),
            template: PromptTemplate::builtin(),
            limits: RequestLimits::default(),
            retry: RetryPolicy::default(),
            parallel_batches: 1,
            still_format: StillFormat::default(),
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.parallel_batches == 0 {
            return bad("parallel_batches must be >= 1".into());
        }
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return bad(format!("interval must be > 0, got {}", self.interval_s));
        }
        if self.max_frames == Some(0) {
            return bad("max_frames must be >= 1".into());
        }
        Ok(())
    }

    fn request_limits(&self) -> RequestLimits {
        RequestLimits {
            max_batch_size: self.batch_size,
            ..self.limits.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("provider rejected the credentials; run aborted ({0})")]
    AuthFailed(ProviderError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifact: DetectionsArtifact,
    pub artifact_path: PathBuf,
    pub report_path: PathBuf,
}

struct BatchOutcome {
    index: usize,
    /// Detections for frames that made it through, keyed by frame index.
    accepted: BTreeMap<u32, Vec<Detection>>,
    failures: Vec<FailureRecord>,
    report: ValidationReport,
}

enum BatchError {
    Contract(ContractError),
    Provider(ProviderError),
}

impl BatchError {
    fn kind(&self) -> &'static str {
        match self {
            BatchError::Contract(e) => e.kind(),
            BatchError::Provider(e) => e.kind.as_str(),
        }
    }

    fn detail(&self) -> String {
        match self {
            BatchError::Contract(e) => e.to_string(),
            BatchError::Provider(e) => e.to_string(),
        }
    }
}

fn ensure_writable(dir: &Path) -> Result<(), PipelineError> {
    let fail = |source| PipelineError::OutputDir {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(format!(".framelens-write-check-{}", std::process::id()));
    std::fs::write(&probe, b"").map_err(fail)?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

async fn infer_batch(
    config: &PipelineConfig,
    backend: &dyn ChatBackend,
    frames: &[FrameSample],
) -> Result<crate::contract::BatchDetections, BatchError> {
    let request = build_batch_request(
        frames,
        &config.attributes,
        &config.template,
        backend.model_id(),
        &config.request_limits(),
    )
    .map_err(BatchError::Contract)?;
    let text = send_with_retry(backend, &request, &config.retry)
        .await
        .map_err(BatchError::Provider)?;
    let raw = extract_json_payload(&text).map_err(BatchError::Contract)?;
    let expected: Vec<u32> = frames.iter().map(|f| f.frame_index).collect();
    parse_batch_detections(raw, &expected).map_err(BatchError::Contract)
}

async fn process_batch(
    config: &PipelineConfig,
    backend: &dyn ChatBackend,
    index: usize,
    frames: &[FrameSample],
) -> Result<BatchOutcome, ProviderError> {
    let frame_indices: Vec<u32> = frames.iter().map(|f| f.frame_index).collect();
    let batch = match infer_batch(config, backend, frames).await {
        Ok(batch) => batch,
        Err(BatchError::Provider(e)) if e.kind == ProviderErrorKind::AuthFailed => return Err(e),
        Err(e) => {
            warn!(batch = index, kind = e.kind(), detail = %e.detail(), "batch failed");
            return Ok(BatchOutcome {
                index,
                accepted: BTreeMap::new(),
                failures: vec![FailureRecord {
                    batch_index: index,
                    frame_indices,
                    error_kind: e.kind().to_string(),
                    detail: e.detail(),
                }],
                report: ValidationReport::new(index),
            });
        }
    };

    let (mut report, typed) = validate_and_type(&batch, &config.attributes, index);
    let mut accepted = BTreeMap::new();
    for f in frames {
        if let Some(dets) = typed.get(&f.frame_index) {
            let geo = validate_geometric(f.frame_index, dets, f.width, f.height, config.geometry_policy);
            report.geometric_warnings.extend(geo.warnings);
            accepted.insert(f.frame_index, geo.detections);
        }
    }
    let rejected = report.rejected_frames();
    let mut failures = Vec::new();
    if !rejected.is_empty() {
        let detail = report
            .structural_errors
            .iter()
            .map(|e| format!("frame {}: {}", e.frame_index, e.summary()))
            .collect::<Vec<_>>()
            .join("; ");
        warn!(batch = index, frames = ?rejected, "frames failed structural validation");
        failures.push(FailureRecord {
            batch_index: index,
            frame_indices: rejected.into_iter().collect(),
            error_kind: STRUCTURAL_REJECTION.to_string(),
            detail,
        });
    }
    Ok(BatchOutcome {
        index,
        accepted,
        failures,
        report,
    })
}

/// Runs the whole pipeline against `backend` and writes
/// `<stem>.detections.json` and `<stem>.report.json` into the output
/// directory. On a credential failure a `<stem>.abort.json` stub is written
/// instead and no artifact is produced.
pub async fn run_pipeline(
    config: &PipelineConfig,
    tool: &MediaTool,
    backend: &dyn ChatBackend,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    ensure_writable(&config.out_dir)?;

    let meta = tool.probe(&config.video)?;
    let sampling = {
        let (tool, meta, interval, max, format) = (
            tool.clone(),
            meta.clone(),
            config.interval_s,
            config.max_frames,
            config.still_format,
        );
        tokio::task::spawn_blocking(move || tool.sample_frames(&meta, interval, max, format))
            .await
            .expect("sampling task panicked")?
    };
    info!(
        frames = sampling.frames.len(),
        skipped = sampling.skipped.len(),
        "sampled video"
    );

    let chunks: Vec<&[FrameSample]> = sampling.frames.chunks(config.batch_size).collect();
    let mut results = stream::iter(chunks.iter().enumerate())
        .map(|(i, chunk)| process_batch(config, backend, i, chunk))
        .buffered(config.parallel_batches);

    let mut outcomes: Vec<BatchOutcome> = Vec::with_capacity(chunks.len());
    while let Some(result) = results.next().await {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(err) => {
                drop(results);
                let stub = AbortStub {
                    schema_version: artifact::SCHEMA_VERSION.into(),
                    created_at: artifact::utc_now(),
                    status: "aborted".into(),
                    error_kind: err.kind.as_str().into(),
                    detail: err.to_string(),
                };
                let path = artifact::write_abort_stub(&stub, &config.out_dir, &config.video)?;
                warn!(stub = %path.display(), "run aborted on credential failure");
                return Err(PipelineError::AuthFailed(err));
            }
        }
    }
    outcomes.sort_by_key(|o| o.index);

    let mut accepted: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for o in outcomes {
        accepted.extend(o.accepted);
        failures.extend(o.failures);
        reports.push(o.report);
    }
    let failed: std::collections::BTreeSet<u32> = failures
        .iter()
        .flat_map(|f: &FailureRecord| f.frame_indices.iter().copied())
        .collect();
    let frames: Vec<FrameRecord> = sampling
        .frames
        .iter()
        .map(|f| {
            let ok = !failed.contains(&f.frame_index);
            FrameRecord {
                frame_index: f.frame_index,
                timestamp_s: f.timestamp_s,
                status: if ok { FrameStatus::Ok } else { FrameStatus::Failed },
                detections: if ok {
                    accepted.remove(&f.frame_index).unwrap_or_default()
                } else {
                    Vec::new()
                },
                extra: Default::default(),
            }
        })
        .collect();

    let artifact = DetectionsArtifact {
        schema_version: artifact::SCHEMA_VERSION.into(),
        created_at: artifact::utc_now(),
        video: meta,
        sampling: SamplingRecord {
            interval_s: config.interval_s,
            frame_count: frames.len(),
            max_frames: config.max_frames,
            still_format: config.still_format,
            skipped: sampling.skipped,
        },
        contract: config.template.version().clone(),
        inference: InferenceRecord {
            model_id: backend.model_id().to_string(),
            attributes: config.attributes.names().map(str::to_string).collect(),
            batch_size: config.batch_size,
        },
        geometry_policy: config.geometry_policy,
        frames,
        failures,
        extra: Default::default(),
    };
    let artifact_path = artifact::write_artifact(&artifact, &config.out_dir)?;
    let report = RunReport {
        schema_version: artifact::SCHEMA_VERSION.into(),
        batches: reports,
    };
    let report_path = artifact::write_report(&report, &config.out_dir, &config.video)?;
    info!(
        artifact = %artifact_path.display(),
        ok = artifact.ok_count(),
        failed = artifact.failed_count(),
        "run complete"
    );
    Ok(RunOutcome {
        artifact,
        artifact_path,
        report_path,
    })
}
