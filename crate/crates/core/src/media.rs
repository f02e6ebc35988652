//! Frame sampling and video I/O through an external `ffmpeg` binary.
//!
//! Every interaction with the toolchain is a subprocess with an explicit
//! argument vector. The binary defaults to `ffmpeg` on `PATH` and can be
//! overridden with the `FRAMELENS_MEDIA_TOOL` environment variable.
//!
//! Probing parses the stream banner `ffmpeg -i` prints on stderr, so a single
//! binary is all that is required (no `ffprobe`).

use std::ffi::OsString;
use std::io::{self, Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::OnceLock;
use std::thread::JoinHandle;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

/// Environment variable naming the media toolchain binary.
pub const MEDIA_TOOL_ENV: &str = "FRAMELENS_MEDIA_TOOL";

/// Default still-image quality for JPEG re-encoding of sampled frames.
pub const DEFAULT_JPEG_QUALITY: u8 = 90;

/// Default sampling interval in seconds.
pub const DEFAULT_INTERVAL_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unreadable media {path}: {detail}")]
    UnreadableMedia { path: PathBuf, detail: String },
    #[error("media toolchain not found: {0}")]
    ToolchainMissing(String),
    #[error("invalid sampling interval {0} (must be a positive finite number of seconds)")]
    InvalidInterval(f64),
    #[error("decode failure at {timestamp_s:.3}s: {detail}")]
    DecodeFailure { timestamp_s: f64, detail: String },
    #[error("encoder failure: {0}")]
    EncoderFailure(String),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Container-level metadata of a probed video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub path: PathBuf,
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

impl VideoMeta {
    pub fn frame_duration_s(&self) -> f64 {
        1.0 / self.fps
    }
}

/// Encoding applied to sampled stills before they are sent for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "format")]
pub enum StillFormat {
    Png,
    Jpeg { quality: u8 },
}

impl Default for StillFormat {
    fn default() -> Self {
        StillFormat::Jpeg {
            quality: DEFAULT_JPEG_QUALITY,
        }
    }
}

impl StillFormat {
    pub fn media_type(&self) -> &'static str {
        match self {
            StillFormat::Png => "image/png",
            StillFormat::Jpeg { .. } => "image/jpeg",
        }
    }

    pub fn encode(&self, image: &RgbImage) -> Result<Vec<u8>, MediaError> {
        let mut out = Vec::new();
        let (w, h) = image.dimensions();
        match *self {
            StillFormat::Png => {
                PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
                    .write_image(image.as_raw(), w, h, image::ExtendedColorType::Rgb8)?;
            }
            StillFormat::Jpeg { quality } => {
                JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100))
                    .write_image(image.as_raw(), w, h, image::ExtendedColorType::Rgb8)?;
            }
        }
        Ok(out)
    }
}

/// An encoded still image plus its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// One sampled frame: the unit of inference input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub width: u32,
    pub height: u32,
    pub image: EncodedImage,
}

/// A grid timestamp whose frame could not be decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub timestamp_s: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SamplingOutcome {
    pub frames: Vec<FrameSample>,
    pub skipped: Vec<SkippedFrame>,
}

/// Timestamps `k * interval_s` for every `k` with `k * interval_s < duration_s`,
/// truncated to `max_frames`.
pub fn sampling_grid(
    duration_s: f64,
    interval_s: f64,
    max_frames: Option<usize>,
) -> Result<Vec<f64>, MediaError> {
    if !(interval_s.is_finite() && interval_s > 0.0) {
        return Err(MediaError::InvalidInterval(interval_s));
    }
    let limit = max_frames.unwrap_or(usize::MAX);
    let mut grid = Vec::new();
    let mut k: u64 = 0;
    while grid.len() < limit {
        let t = k as f64 * interval_s;
        if t >= duration_s {
            break;
        }
        grid.push(t);
        k += 1;
    }
    Ok(grid)
}

/// Handle on the external media binary.
#[derive(Debug, Clone)]
pub struct MediaTool {
    program: OsString,
}

impl Default for MediaTool {
    fn default() -> Self {
        Self::from_env()
    }
}

impl MediaTool {
    pub fn new(program: impl Into<OsString>) -> Self {
        Self {
            program: program.into(),
        }
    }

    pub fn from_env() -> Self {
        match std::env::var_os(MEDIA_TOOL_ENV) {
            Some(p) if !p.is_empty() => Self::new(p),
            _ => Self::new("ffmpeg"),
        }
    }

    pub fn program(&self) -> &OsString {
        &self.program
    }

    /// Whether the binary can be spawned at all.
    pub fn is_available(&self) -> bool {
        Command::new(&self.program)
            .arg("-version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.arg("-nostdin").arg("-hide_banner");
        cmd
    }

    fn spawn_error(&self, err: io::Error) -> MediaError {
        if err.kind() == io::ErrorKind::NotFound {
            MediaError::ToolchainMissing(self.program.to_string_lossy().into_owned())
        } else {
            MediaError::Io(err)
        }
    }

    pub fn probe(&self, path: &Path) -> Result<VideoMeta, MediaError> {
        if !path.exists() {
            return Err(MediaError::FileNotFound(path.to_path_buf()));
        }
        let output = self
            .command()
            .arg("-i")
            .arg(path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| self.spawn_error(e))?;
        // `ffmpeg -i` without an output always exits non-zero; the banner is what matters.
        let banner = String::from_utf8_lossy(&output.stderr);
        parse_probe_banner(path, &banner)
    }

    /// Decodes the native frame nearest `timestamp_s` as packed RGB.
    pub fn extract_frame_rgb(
        &self,
        meta: &VideoMeta,
        timestamp_s: f64,
    ) -> Result<RgbImage, MediaError> {
        // Input-side seeking is frame accurate and trims frames before the
        // seek point; backing off half a native frame selects the nearest one.
        let seek = (timestamp_s - 0.5 * meta.frame_duration_s()).max(0.0);
        let output = self
            .command()
            .args(["-v", "error", "-ss"])
            .arg(format!("{seek:.6}"))
            .arg("-i")
            .arg(&meta.path)
            .args(["-frames:v", "1", "-an", "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| self.spawn_error(e))?;
        let expected = frame_bytes(meta.width, meta.height);
        if !output.status.success() || output.stdout.len() != expected {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(MediaError::DecodeFailure {
                timestamp_s,
                detail: format!(
                    "decoder returned {} of {} bytes (status {}): {}",
                    output.stdout.len(),
                    expected,
                    output.status,
                    stderr.trim()
                ),
            });
        }
        RgbImage::from_raw(meta.width, meta.height, output.stdout).ok_or_else(|| {
            MediaError::DecodeFailure {
                timestamp_s,
                detail: "frame buffer size mismatch".into(),
            }
        })
    }

    /// Samples frames on the fixed grid. Frames that fail to decode are skipped
    /// and recorded; the remaining frames are indexed densely from 0.
    pub fn sample_frames(
        &self,
        meta: &VideoMeta,
        interval_s: f64,
        max_frames: Option<usize>,
        format: StillFormat,
    ) -> Result<SamplingOutcome, MediaError> {
        let grid = sampling_grid(meta.duration_s, interval_s, max_frames)?;
        let mut outcome = SamplingOutcome::default();
        for t in grid {
            match self.extract_frame_rgb(meta, t) {
                Ok(rgb) => {
                    let bytes = format.encode(&rgb)?;
                    outcome.frames.push(FrameSample {
                        frame_index: outcome.frames.len() as u32,
                        timestamp_s: t,
                        width: meta.width,
                        height: meta.height,
                        image: EncodedImage {
                            media_type: format.media_type().to_string(),
                            bytes,
                        },
                    });
                }
                Err(MediaError::DecodeFailure { timestamp_s, detail }) => {
                    warn!(timestamp_s, %detail, "skipping undecodable frame");
                    outcome.skipped.push(SkippedFrame { timestamp_s, detail });
                }
                Err(other) => return Err(other),
            }
        }
        debug!(
            frames = outcome.frames.len(),
            skipped = outcome.skipped.len(),
            "sampling complete"
        );
        Ok(outcome)
    }

    /// Streams every native frame of a video as RGB buffers.
    pub fn read_frames(&self, meta: &VideoMeta) -> Result<FrameReader, MediaError> {
        let mut child = self
            .command()
            .args(["-v", "error", "-i"])
            .arg(&meta.path)
            .args([
                "-an", "-fps_mode", "passthrough", "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1",
            ])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.spawn_error(e))?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = drain_stderr(&mut child);
        Ok(FrameReader {
            child,
            stdout,
            stderr: Some(stderr),
            width: meta.width,
            height: meta.height,
            done: false,
        })
    }

    /// Counts decodable native frames.
    pub fn count_frames(&self, meta: &VideoMeta) -> Result<usize, MediaError> {
        let mut n = 0;
        for frame in self.read_frames(meta)? {
            frame?;
            n += 1;
        }
        Ok(n)
    }

    /// Opens an H.264/yuv420p MP4 encoder fed with raw RGB frames.
    pub fn write_video(
        &self,
        path: &Path,
        width: u32,
        height: u32,
        fps: f64,
    ) -> Result<FrameWriter, MediaError> {
        let mut child = self
            .command()
            .args(["-v", "error", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24", "-s"])
            .arg(format!("{width}x{height}"))
            .arg("-framerate")
            .arg(format!("{fps}"))
            .args(["-i", "pipe:0", "-an", "-c:v", "libx264", "-preset", "veryfast"])
            .args(["-pix_fmt", "yuv420p", "-movflags", "+faststart"])
            .arg(path)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.spawn_error(e))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stderr = drain_stderr(&mut child);
        Ok(FrameWriter {
            child,
            stdin: Some(stdin),
            stderr: Some(stderr),
            width,
            height,
            written: 0,
        })
    }

    /// Renders a synthetic test clip with known parameters.
    pub fn generate_test_video(
        &self,
        path: &Path,
        pattern: TestPattern,
        duration_s: f64,
        fps: u32,
        width: u32,
        height: u32,
    ) -> Result<(), MediaError> {
        let source = match pattern {
            TestPattern::Bars => {
                format!("testsrc2=size={width}x{height}:rate={fps}:duration={duration_s}")
            }
            TestPattern::Solid([r, g, b]) => format!(
                "color=c=0x{r:02x}{g:02x}{b:02x}:size={width}x{height}:rate={fps}:duration={duration_s}"
            ),
        };
        let output = self
            .command()
            .args(["-v", "error", "-y", "-f", "lavfi", "-i"])
            .arg(source)
            .args(["-c:v", "libx264", "-preset", "ultrafast", "-pix_fmt", "yuv420p"])
            .arg(path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| self.spawn_error(e))?;
        if !output.status.success() {
            return Err(MediaError::EncoderFailure(
                String::from_utf8_lossy(&output.stderr).trim().to_string(),
            ));
        }
        Ok(())
    }
}

/// Synthetic clip content for [`MediaTool::generate_test_video`].
#[derive(Debug, Clone, Copy)]
pub enum TestPattern {
    Bars,
    Solid([u8; 3]),
}

pub fn probe_video(path: &Path) -> Result<VideoMeta, MediaError> {
    MediaTool::from_env().probe(path)
}

pub fn sample_frames(
    meta: &VideoMeta,
    interval_s: f64,
    max_frames: Option<usize>,
) -> Result<SamplingOutcome, MediaError> {
    MediaTool::from_env().sample_frames(meta, interval_s, max_frames, StillFormat::default())
}

fn frame_bytes(width: u32, height: u32) -> usize {
    width as usize * height as usize * 3
}

fn drain_stderr(child: &mut Child) -> JoinHandle<String> {
    let mut stderr = child.stderr.take().expect("stderr piped");
    std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    })
}

fn banner_regexes() -> &'static (Regex, Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"Duration: (\d+):(\d{2}):(\d{2}(?:\.\d+)?)").unwrap(),
            Regex::new(r"Stream #\d+:\d+.*: Video: (.*)").unwrap(),
            Regex::new(r", (\d{1,5})x(\d{1,5})[ ,\[]").unwrap(),
            Regex::new(r"(\d+(?:\.\d+)?)(k?) (?:fps|tbr)").unwrap(),
        )
    })
}

/// Parses the stream banner `ffmpeg -i` writes to stderr.
pub fn parse_probe_banner(path: &Path, banner: &str) -> Result<VideoMeta, MediaError> {
    let (duration_re, video_re, dims_re, rate_re) = banner_regexes();
    let unreadable = |detail: &str| MediaError::UnreadableMedia {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let first_error = banner
        .lines()
        .find(|l| l.contains("Invalid data") || l.contains("Error opening"))
        .unwrap_or("no duration in stream banner");

    let d = duration_re
        .captures(banner)
        .ok_or_else(|| unreadable(first_error.trim()))?;
    let duration_s = d[1].parse::<f64>().unwrap_or(0.0) * 3600.0
        + d[2].parse::<f64>().unwrap_or(0.0) * 60.0
        + d[3].parse::<f64>().unwrap_or(0.0);

    let video = video_re
        .captures(banner)
        .ok_or_else(|| unreadable("no video stream"))?;
    let desc = format!("{} ", &video[1]);
    let dims = dims_re
        .captures(&desc)
        .ok_or_else(|| unreadable("video stream has no dimensions"))?;
    let width: u32 = dims[1].parse().unwrap_or(0);
    let height: u32 = dims[2].parse().unwrap_or(0);
    let fps = rate_re
        .captures(&desc)
        .and_then(|c| {
            let v: f64 = c[1].parse().ok()?;
            Some(if &c[2] == "k" { v * 1000.0 } else { v })
        })
        .ok_or_else(|| unreadable("video stream has no frame rate"))?;

    if !(duration_s > 0.0 && fps > 0.0 && width > 0 && height > 0) {
        return Err(unreadable("degenerate stream metadata"));
    }
    Ok(VideoMeta {
        path: path.to_path_buf(),
        duration_s,
        fps,
        width,
        height,
    })
}

/// Iterator over raw decoded frames.
pub struct FrameReader {
    child: Child,
    stdout: ChildStdout,
    stderr: Option<JoinHandle<String>>,
    width: u32,
    height: u32,
    done: bool,
}

impl FrameReader {
    fn finish(&mut self) -> Option<MediaError> {
        self.done = true;
        let status = self.child.wait();
        let stderr = self
            .stderr
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_default();
        match status {
            Ok(s) if s.success() => None,
            Ok(s) => Some(MediaError::DecodeFailure {
                timestamp_s: f64::NAN,
                detail: format!("decoder exited with {s}: {}", stderr.trim()),
            }),
            Err(e) => Some(MediaError::Io(e)),
        }
    }
}

impl Iterator for FrameReader {
    type Item = Result<RgbImage, MediaError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = vec![0u8; frame_bytes(self.width, self.height)];
        let mut filled = 0;
        while filled < buf.len() {
            match self.stdout.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    self.done = true;
                    return Some(Err(MediaError::Io(e)));
                }
            }
        }
        if filled == 0 {
            return self.finish().map(Err);
        }
        if filled < buf.len() {
            let _ = self.finish();
            return Some(Err(MediaError::DecodeFailure {
                timestamp_s: f64::NAN,
                detail: format!("truncated frame: {filled} of {} bytes", buf.len()),
            }));
        }
        Some(Ok(RgbImage::from_raw(self.width, self.height, buf).expect("sized buffer")))
    }
}

impl Drop for FrameReader {
    fn drop(&mut self) {
        if !self.done {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Sink feeding raw RGB frames to the encoder in order.
pub struct FrameWriter {
    child: Child,
    stdin: Option<ChildStdin>,
    stderr: Option<JoinHandle<String>>,
    width: u32,
    height: u32,
    written: usize,
}

impl FrameWriter {
    pub fn write_frame(&mut self, frame: &RgbImage) -> Result<(), MediaError> {
        if frame.dimensions() != (self.width, self.height) {
            return Err(MediaError::EncoderFailure(format!(
                "frame is {:?}, encoder expects {}x{}",
                frame.dimensions(),
                self.width,
                self.height
            )));
        }
        let stdin = self.stdin.as_mut().expect("writer open");
        stdin
            .write_all(frame.as_raw())
            .map_err(|e| MediaError::EncoderFailure(format!("encoder pipe closed: {e}")))?;
        self.written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<usize, MediaError> {
        drop(self.stdin.take());
        let status = self.child.wait()?;
        let stderr = self
            .stderr
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_default();
        if !status.success() {
            return Err(MediaError::EncoderFailure(format!(
                "encoder exited with {status}: {}",
                stderr.trim()
            )));
        }
        Ok(self.written)
    }
}

impl Drop for FrameWriter {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            drop(self.stdin.take());
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Decodes an encoded still back to RGB.
pub fn decode_still(bytes: &[u8]) -> Result<RgbImage, MediaError> {
    Ok(image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()?
        .decode()?
        .to_rgb8())
}
