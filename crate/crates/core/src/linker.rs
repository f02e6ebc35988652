//! Optional cross-frame id linking by box overlap.
//!
//! `person_id` values are frame-local. This module guesses which detections
//! in neighbouring sampled frames might be the same person, using nothing but
//! IoU. It is never run as part of analysis and its output always carries
//! [`HEURISTIC_DISCLAIMER`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::artifact::{DetectionsArtifact, FrameStatus};

pub const HEURISTIC_DISCLAIMER: &str = "HEURISTIC: tracks are guessed from box overlap between \
consecutive sampled frames. They are not identity tracking and may be wrong.";

pub const LINK_METHOD: &str = "greedy-iou";

/// IoU acceptance threshold in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct IouThreshold(f64);

impl IouThreshold {
    pub fn new(value: f64) -> Result<Self, String> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(format!("IoU threshold must be in (0, 1], got {value}"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for IouThreshold {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<IouThreshold> for f64 {
    fn from(t: IouThreshold) -> f64 {
        t.0
    }
}

impl fmt::Display for IouThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One (frame_index, person_id) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackMember {
    pub frame_index: u32,
    pub person_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u32,
    pub members: Vec<TrackMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedArtifact {
    pub heuristic_disclaimer: String,
    pub method: String,
    pub iou_threshold: IouThreshold,
    pub tracks: Vec<Track>,
    pub base: DetectionsArtifact,
}

impl LinkedArtifact {
    pub fn membership_count(&self) -> usize {
        self.tracks.iter().map(|t| t.members.len()).sum()
    }
}

/// `<video-stem>.linked.json`
pub fn linked_file_name(artifact: &DetectionsArtifact) -> String {
    format!("{}.linked.json", crate::artifact::video_stem(&artifact.video.path))
}

/// Links detections across consecutive ok frames. Candidate pairs are taken
/// in descending IoU order (ties by previous then current person_id); a pair
/// is accepted iff its IoU reaches the threshold and neither side is already
/// matched. Unmatched detections open new tracks. Failed frames are skipped,
/// so the frames on either side of one count as consecutive.
pub fn link_ids_heuristic(artifact: &DetectionsArtifact, threshold: IouThreshold) -> LinkedArtifact {
    let mut tracks: Vec<Track> = Vec::new();
    // Track index for each detection of the previous ok frame, by position.
    let mut prev: Option<(u32, Vec<usize>)> = None;

    let ok_frames = artifact
        .frames
        .iter()
        .filter(|f| f.status == FrameStatus::Ok);
    for frame in ok_frames {
        let dets = &frame.detections;
        let mut assigned: Vec<Option<usize>> = vec![None; dets.len()];

        if let Some((prev_index, prev_tracks)) = &prev {
            let prev_frame = artifact
                .frames
                .iter()
                .find(|f| f.frame_index == *prev_index)
                .expect("previous frame exists");
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for (a, pd) in prev_frame.detections.iter().enumerate() {
                for (b, cd) in dets.iter().enumerate() {
                    let iou = pd.bbox.iou(&cd.bbox);
                    if iou >= threshold.get() {
                        pairs.push((iou, a, b));
                    }
                }
            }
            pairs.sort_by(|x, y| {
                y.0.total_cmp(&x.0)
                    .then(prev_frame.detections[x.1].person_id.cmp(&prev_frame.detections[y.1].person_id))
                    .then(dets[x.2].person_id.cmp(&dets[y.2].person_id))
            });
            let mut used_prev = BTreeSet::new();
            for (_, a, b) in pairs {
                if assigned[b].is_none() && used_prev.insert(a) {
                    assigned[b] = Some(prev_tracks[a]);
                }
            }
        }

        // New tracks are opened in person_id order for stable numbering.
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by_key(|&i| dets[i].person_id);
        for i in order {
            let t = *assigned[i].get_or_insert_with(|| {
                tracks.push(Track {
                    track_id: tracks.len() as u32,
                    members: Vec::new(),
                });
                tracks.len() - 1
            });
            tracks[t].members.push(TrackMember {
                frame_index: frame.frame_index,
                person_id: dets[i].person_id,
            });
        }
        let track_of = assigned.into_iter().map(|t| t.expect("assigned")).collect();
        prev = Some((frame.frame_index, track_of));
    }

    LinkedArtifact {
        heuristic_disclaimer: HEURISTIC_DISCLAIMER.to_string(),
        method: LINK_METHOD.to_string(),
        iou_threshold: threshold,
        tracks,
        base: artifact.clone(),
    }
}
