use std::collections::BTreeMap;
use std::path::Path;

use framelens_core::media::{sampling_grid, MediaError, MediaTool, VideoMeta};
use serde::Serialize;

/// A video the service can serve frames from.
#[derive(Debug, Clone, Serialize)]
pub struct RegisteredVideo {
    pub video_id: String,
    pub meta: VideoMeta,
    pub interval_s: f64,
    /// Sampling grid timestamps, same law as the analysis pipeline.
    pub grid: Vec<f64>,
}

impl RegisteredVideo {
    pub fn probe(tool: &MediaTool, video_id: String, path: &Path, interval_s: f64) -> Result<Self, MediaError> {
        let meta = tool.probe(path)?;
        let grid = sampling_grid(meta.duration_s, interval_s, None)?;
        Ok(Self {
            video_id,
            meta,
            interval_s,
            grid,
        })
    }

    /// Index of the grid point nearest `t`, or `None` past the end of the
    /// video. Halfway points round up.
    pub fn nearest_grid_index(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.meta.duration_s).contains(&t) || self.grid.is_empty() {
            return None;
        }
        let k = (t / self.interval_s + 0.5).floor() as usize;
        Some(k.min(self.grid.len() - 1))
    }
}

/// Registered videos keyed by id.
#[derive(Debug, Default)]
pub struct VideoTable {
    videos: BTreeMap<String, RegisteredVideo>,
}

impl VideoTable {
    /// Id derived from the file stem, suffixed `-2`, `-3`, ... on collision.
    pub fn next_id(&self, path: &Path) -> String {
        let stem: String = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into())
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        if !self.videos.contains_key(&stem) {
            return stem;
        }
        (2..)
            .map(|n| format!("{stem}-{n}"))
            .find(|id| !self.videos.contains_key(id))
            .expect("unbounded suffixes")
    }

    pub fn insert(&mut self, video: RegisteredVideo) {
        self.videos.insert(video.video_id.clone(), video);
    }

    pub fn get(&self, id: &str) -> Option<&RegisteredVideo> {
        self.videos.get(id)
    }

    pub fn list(&self) -> Vec<&RegisteredVideo> {
        self.videos.values().collect()
    }
}
