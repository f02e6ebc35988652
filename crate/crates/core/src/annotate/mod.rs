//! Rendering detections onto frames and re-encoding an annotated video.
//!
//! The overlay visualizes model hypotheses. Boxes from a sample are held on
//! later native frames purely as a rendering convention; nothing here tracks
//! people, and palette colors are keyed by frame-local ids.

mod render;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::artifact::{DetectionsArtifact, FrameRecord, FrameStatus};
use crate::detection::BoundingBox;
use crate::media::{MediaError, MediaTool, VideoMeta};
use crate::validate::{validate_geometric, GeometryPolicy};

pub use render::{
    draw_no_data_marker, label_rect, no_data_rect, render_frame, AnnotationStyle, BoxColor,
    PixelRect, NO_DATA_TEXT, PALETTE,
};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("detection {person_id} box {bbox} is not a valid box inside {width}x{height}")]
    InvalidGeometry {
        person_id: u32,
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("artifact does not match the video: {0}")]
    MetadataMismatch(String),
    #[error("encoder failure: {0}")]
    EncoderFailure(String),
    #[error(transparent)]
    Media(#[from] MediaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldPolicy {
    /// Each native frame shows the latest sample at or before it.
    #[default]
    HoldUntilNext,
    /// Only native frames within one frame duration of a sample show boxes.
    SampledOnly,
}

impl FromStr for HoldPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hold-until-next" => Ok(HoldPolicy::HoldUntilNext),
            "sampled-only" => Ok(HoldPolicy::SampledOnly),
            other => Err(format!(
                "unknown hold policy {other:?} (expected hold-until-next or sampled-only)"
            )),
        }
    }
}

/// Default output path: `<dir>/<stem>.annotated.mp4` next to the input.
pub fn default_output_path(video: &Path) -> PathBuf {
    let stem = video
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    video.with_file_name(format!("{stem}.annotated.mp4"))
}

/// Checks that the artifact was produced from a video with these properties.
pub fn check_metadata(recorded: &VideoMeta, probed: &VideoMeta) -> Result<(), AnnotateError> {
    if (recorded.width, recorded.height) != (probed.width, probed.height) {
        return Err(AnnotateError::MetadataMismatch(format!(
            "artifact is {}x{}, video is {}x{}",
            recorded.width, recorded.height, probed.width, probed.height
        )));
    }
    if (recorded.fps - probed.fps).abs() > 0.01 {
        return Err(AnnotateError::MetadataMismatch(format!(
            "artifact fps {} vs video fps {}",
            recorded.fps, probed.fps
        )));
    }
    if (recorded.duration_s - probed.duration_s).abs() > probed.frame_duration_s() + 0.01 {
        return Err(AnnotateError::MetadataMismatch(format!(
            "artifact duration {}s vs video duration {}s",
            recorded.duration_s, probed.duration_s
        )));
    }
    Ok(())
}

/// Picks the sampled frame whose detections appear on the native frame at
/// `t`. Samples were decoded from the native frame nearest their timestamp,
/// so a sample applies from half a native frame before its timestamp.
pub fn frame_for_time(
    frames: &[FrameRecord],
    t: f64,
    frame_duration: f64,
    policy: HoldPolicy,
) -> Option<&FrameRecord> {
    match policy {
        HoldPolicy::HoldUntilNext => frames
            .iter()
            .take_while(|f| f.timestamp_s - 0.5 * frame_duration <= t)
            .last(),
        HoldPolicy::SampledOnly => frames
            .iter()
            .filter(|f| (t - f.timestamp_s).abs() < frame_duration)
            .min_by(|a, b| {
                (t - a.timestamp_s)
                    .abs()
                    .total_cmp(&(t - b.timestamp_s).abs())
            }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotateSummary {
    pub output: PathBuf,
    pub frames_written: usize,
}

/// Renders the artifact's detections over every native frame of `video` and
/// encodes the result as H.264 (yuv420p) MP4 at the source frame rate.
pub fn annotate_video(
    tool: &MediaTool,
    video: &Path,
    artifact: &DetectionsArtifact,
    style: &AnnotationStyle,
    hold: HoldPolicy,
    output: &Path,
) -> Result<AnnotateSummary, AnnotateError> {
    let meta = tool.probe(video)?;
    check_metadata(&artifact.video, &meta)?;

    let mut samples: Vec<FrameRecord> = artifact.frames.clone();
    samples.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    // Render-time sanitization so artifacts kept under `warn` still draw.
    for f in &mut samples {
        f.detections =
            validate_geometric(f.frame_index, &f.detections, meta.width, meta.height, GeometryPolicy::Clamp)
                .detections;
    }

    let reader = tool.read_frames(&meta)?;
    let mut writer = tool
        .write_video(output, meta.width, meta.height, meta.fps)
        .map_err(|e| AnnotateError::EncoderFailure(e.to_string()))?;
    let frame_duration = meta.frame_duration_s();
    for (n, frame) in reader.enumerate() {
        let frame = frame?;
        let t = n as f64 * frame_duration;
        let annotated = match frame_for_time(&samples, t, frame_duration, hold) {
            Some(rec) if rec.status == FrameStatus::Failed => {
                let mut img = frame;
                draw_no_data_marker(&mut img);
                img
            }
            Some(rec) => render_frame(&frame, &rec.detections, style)?,
            None => frame,
        };
        writer
            .write_frame(&annotated)
            .map_err(|e| AnnotateError::EncoderFailure(e.to_string()))?;
    }
    let frames_written = writer
        .finish()
        .map_err(|e| AnnotateError::EncoderFailure(e.to_string()))?;
    info!(output = %output.display(), frames_written, "annotated video written");
    Ok(AnnotateSummary {
        output: output.to_path_buf(),
        frames_written,
    })
}
