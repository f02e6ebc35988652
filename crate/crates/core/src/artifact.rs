//! The on-disk detections record and its companion validation report.
//!
//! `<video-stem>.detections.json` is pretty-printed JSON. Unknown fields at
//! the top level and on frame records are preserved across load/write so
//! files written by newer versions survive a round trip.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::contract::ContractVersion;
use crate::detection::Detection;
use crate::media::{SkippedFrame, StillFormat, VideoMeta};
use crate::validate::{GeometryPolicy, ValidationReport};

pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: &str = "1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("unsupported schema_version {0:?} (this build reads 1.x)")]
    SchemaVersionUnsupported(String),
    #[error("invalid artifact: {0}")]
    Invalid(String),
    #[error("artifact JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("artifact I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub status: FrameStatus,
    pub detections: Vec<Detection>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub batch_index: usize,
    pub frame_indices: Vec<u32>,
    pub error_kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    pub interval_s: f64,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
    pub still_format: StillFormat,
    /// Grid timestamps that could not be decoded; not part of `frames`.
    #[serde(default)]
    pub skipped: Vec<SkippedFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub model_id: String,
    pub attributes: Vec<String>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsArtifact {
    pub schema_version: String,
    /// UTC ISO-8601 creation time; the only field that differs between
    /// otherwise identical runs.
    pub created_at: String,
    pub video: VideoMeta,
    pub sampling: SamplingRecord,
    pub contract: ContractVersion,
    pub inference: InferenceRecord,
    pub geometry_policy: GeometryPolicy,
    pub frames: Vec<FrameRecord>,
    pub failures: Vec<FailureRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DetectionsArtifact {
    pub fn ok_count(&self) -> usize {
        self.frames.iter().filter(|f| f.status == FrameStatus::Ok).count()
    }

    pub fn failed_count(&self) -> usize {
        self.frames.len() - self.ok_count()
    }

    pub fn detection_count(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.status == FrameStatus::Ok)
            .map(|f| f.detections.len())
            .sum()
    }

    /// Checks the record-level invariants; the message names the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), ArtifactError> {
        let invalid = |m: String| Err(ArtifactError::Invalid(m));
        for pair in self.frames.windows(2) {
            if pair[0].frame_index >= pair[1].frame_index {
                return invalid(format!(
                    "frames not sorted: {} precedes {}",
                    pair[0].frame_index, pair[1].frame_index
                ));
            }
            if pair[0].timestamp_s >= pair[1].timestamp_s {
                return invalid(format!(
                    "timestamps not increasing at frame {}",
                    pair[1].frame_index
                ));
            }
        }
        for (pos, f) in self.frames.iter().enumerate() {
            if f.frame_index as usize != pos {
                return invalid(format!(
                    "frames not dense: position {pos} holds frame {}",
                    f.frame_index
                ));
            }
        }
        if self.sampling.frame_count != self.frames.len() {
            return invalid(format!(
                "sampling.frame_count {} but {} frames recorded",
                self.sampling.frame_count,
                self.frames.len()
            ));
        }
        let failed_in_records: BTreeSet<u32> = self
            .failures
            .iter()
            .flat_map(|r| r.frame_indices.iter().copied())
            .collect();
        for f in &self.frames {
            match f.status {
                FrameStatus::Failed => {
                    if !f.detections.is_empty() {
                        return invalid(format!("failed frame {} has detections", f.frame_index));
                    }
                    if !failed_in_records.contains(&f.frame_index) {
                        return invalid(format!(
                            "failed frame {} has no failures entry",
                            f.frame_index
                        ));
                    }
                }
                FrameStatus::Ok => self.check_detections(f)?,
            }
        }
        Ok(())
    }

    fn check_detections(&self, f: &FrameRecord) -> Result<(), ArtifactError> {
        let mut ids: Vec<u32> = Vec::with_capacity(f.detections.len());
        for d in &f.detections {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(ArtifactError::Invalid(format!(
                    "frame {} person {} confidence {} outside [0, 1]",
                    f.frame_index, d.person_id, d.confidence
                )));
            }
            if self.geometry_policy != GeometryPolicy::Warn
                && !(d.bbox.is_ordered() && d.bbox.fits_within(self.video.width, self.video.height))
            {
                return Err(ArtifactError::Invalid(format!(
                    "frame {} person {} box {} violates geometry under {} policy",
                    f.frame_index, d.person_id, d.bbox, self.geometry_policy
                )));
            }
            ids.push(d.person_id);
        }
        let unique: BTreeSet<u32> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(ArtifactError::Invalid(format!(
                "frame {} has duplicate person_id",
                f.frame_index
            )));
        }
        Ok(())
    }
}

/// `<video-stem>.detections.json`
pub fn artifact_file_name(video: &Path) -> String {
    format!("{}.detections.json", video_stem(video))
}

/// `<video-stem>.report.json`
pub fn report_file_name(video: &Path) -> String {
    format!("{}.report.json", video_stem(video))
}

pub fn video_stem(video: &Path) -> String {
    video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ArtifactError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `<video-stem>.detections.json` into `dir`.
pub fn write_artifact(artifact: &DetectionsArtifact, dir: &Path) -> Result<PathBuf, ArtifactError> {
    artifact.check_invariants()?;
    let path = dir.join(artifact_file_name(&artifact.video.path));
    write_json(artifact, &path)?;
    Ok(path)
}

pub fn load_artifact(path: &Path) -> Result<DetectionsArtifact, ArtifactError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let value: Value = serde_json::from_slice(&bytes)?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_str)
        .ok_or_else(|| ArtifactError::Invalid("missing schema_version".into()))?;
    if version.split('.').next() != Some(SUPPORTED_MAJOR) {
        return Err(ArtifactError::SchemaVersionUnsupported(version.to_string()));
    }
    let artifact: DetectionsArtifact = serde_json::from_value(value)?;
    artifact.check_invariants()?;
    Ok(artifact)
}

/// Per-batch validation reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub batches: Vec<ValidationReport>,
}

pub fn write_report(report: &RunReport, dir: &Path, video: &Path) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(report_file_name(video));
    write_json(report, &path)?;
    Ok(path)
}

pub fn load_report(path: &Path) -> Result<RunReport, ArtifactError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Written instead of an artifact when a run aborts on a fatal error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortStub {
    pub schema_version: String,
    pub created_at: String,
    pub status: String,
    pub error_kind: String,
    pub detail: String,
}

pub fn abort_file_name(video: &Path) -> String {
    format!("{}.abort.json", video_stem(video))
}

pub fn write_abort_stub(stub: &AbortStub, dir: &Path, video: &Path) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(abort_file_name(video));
    write_json(stub, &path)?;
    Ok(path)
}

pub fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
