use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::detection::{BoundingBox, Detection};

/// How geometric violations are handled. Enforcement is opt-in: `warn`
/// reports and leaves detections untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryPolicy {
    #[default]
    Warn,
    Clamp,
    Drop,
}

impl FromStr for GeometryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "warn" => Ok(GeometryPolicy::Warn),
            "clamp" => Ok(GeometryPolicy::Clamp),
            "drop" => Ok(GeometryPolicy::Drop),
            other => Err(format!("unknown geometry policy {other:?} (expected warn, clamp or drop)")),
        }
    }
}

impl fmt::Display for GeometryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryPolicy::Warn => "warn",
            GeometryPolicy::Clamp => "clamp",
            GeometryPolicy::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricViolation {
    /// `x_min >= x_max`
    InvertedX,
    /// `y_min >= y_max`
    InvertedY,
    /// A horizontal coordinate exceeds the frame width.
    OutOfBoundsX,
    /// A vertical coordinate exceeds the frame height.
    OutOfBoundsY,
}

impl fmt::Display for GeometricViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometricViolation::InvertedX => "inverted x",
            GeometricViolation::InvertedY => "inverted y",
            GeometricViolation::OutOfBoundsX => "out of bounds x",
            GeometricViolation::OutOfBoundsY => "out of bounds y",
        })
    }
}

/// What became of a box after the policy ran. Serializes as the box object
/// or the string `"dropped"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SanitizedBox {
    Kept(BoundingBox),
    Dropped,
}

impl Serialize for SanitizedBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SanitizedBox::Kept(b) => b.serialize(s),
            SanitizedBox::Dropped => s.serialize_str("dropped"),
        }
    }
}

impl<'de> Deserialize<'de> for SanitizedBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Kept(BoundingBox),
            Marker(String),
        }
        match Repr::deserialize(d)? {
            Repr::Kept(b) => Ok(SanitizedBox::Kept(b)),
            Repr::Marker(m) if m == "dropped" => Ok(SanitizedBox::Dropped),
            Repr::Marker(m) => Err(serde::de::Error::custom(format!("unexpected marker {m:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometricWarning {
    pub frame_index: u32,
    pub person_id: u32,
    pub violation: GeometricViolation,
    pub original: BoundingBox,
    pub sanitized: SanitizedBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometricOutcome {
    pub detections: Vec<Detection>,
    pub warnings: Vec<GeometricWarning>,
}

/// Geometric invariants violated by `bbox` in a `width`×`height` frame.
pub fn violations(bbox: &BoundingBox, width: u32, height: u32) -> Vec<GeometricViolation> {
    let mut out = Vec::new();
    if bbox.x_min >= bbox.x_max {
        out.push(GeometricViolation::InvertedX);
    }
    if bbox.y_min >= bbox.y_max {
        out.push(GeometricViolation::InvertedY);
    }
    if bbox.x_min > width || bbox.x_max > width {
        out.push(GeometricViolation::OutOfBoundsX);
    }
    if bbox.y_min > height || bbox.y_max > height {
        out.push(GeometricViolation::OutOfBoundsY);
    }
    out
}

/// Clips coordinates into `[0, width]`×`[0, height]`; `None` when the clipped
/// box is degenerate.
pub fn clamp_box(bbox: &BoundingBox, width: u32, height: u32) -> Option<BoundingBox> {
    let clipped = BoundingBox::new(
        bbox.x_min.min(width),
        bbox.y_min.min(height),
        bbox.x_max.min(width),
        bbox.y_max.min(height),
    );
    clipped.is_ordered().then_some(clipped)
}

/// Checks box ordering and bounds for one frame and applies `policy`.
/// Under `clamp` and `drop` every surviving box satisfies all four geometric
/// invariants; under `warn` detections pass through unchanged.
pub fn validate_geometric(
    frame_index: u32,
    detections: &[Detection],
    width: u32,
    height: u32,
    policy: GeometryPolicy,
) -> GeometricOutcome {
    let mut outcome = GeometricOutcome::default();
    for det in detections {
        let found = violations(&det.bbox, width, height);
        if found.is_empty() {
            outcome.detections.push(det.clone());
            continue;
        }
        let sanitized = match policy {
            GeometryPolicy::Warn => SanitizedBox::Kept(det.bbox),
            GeometryPolicy::Drop => SanitizedBox::Dropped,
            GeometryPolicy::Clamp => match clamp_box(&det.bbox, width, height) {
                Some(b) => SanitizedBox::Kept(b),
                None => SanitizedBox::Dropped,
            },
        };
        if let SanitizedBox::Kept(bbox) = sanitized {
            outcome.detections.push(Detection {
                bbox,
                ..det.clone()
            });
        }
        outcome
            .warnings
            .extend(found.into_iter().map(|violation| GeometricWarning {
                frame_index,
                person_id: det.person_id,
                violation,
                original: det.bbox,
                sanitized,
            }));
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn det(pid: u32, b: [u32; 4]) -> Detection {
        Detection {
            person_id: pid,
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
            confidence: 0.5,
            analysis_result: BTreeMap::from([("emotion".to_string(), "unknown".to_string())]),
        }
    }

    #[test]
    fn inverted_box_under_warn() {
        let input = [det(0, [50, 10, 40, 100])];
        let out = validate_geometric(0, &input, 640, 480, GeometryPolicy::Warn);
        assert_eq!(out.detections, input);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].violation.to_string(), "inverted x");
    }

    #[test]
    fn clamp_clips_to_frame() {
        let out = validate_geometric(2, &[det(0, [600, 100, 700, 200])], 640, 480, GeometryPolicy::Clamp);
        assert_eq!(out.detections[0].bbox, BoundingBox::new(600, 100, 640, 200));
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].violation, GeometricViolation::OutOfBoundsX);
        assert_eq!(
            out.warnings[0].sanitized,
            SanitizedBox::Kept(BoundingBox::new(600, 100, 640, 200))
        );
    }

    #[test]
    fn clamp_drops_degenerate_and_inverted() {
        let out = validate_geometric(
            0,
            &[det(0, [700, 0, 800, 10]), det(1, [50, 10, 40, 100])],
            640,
            480,
            GeometryPolicy::Clamp,
        );
        assert!(out.detections.is_empty());
        assert!(out.warnings.iter().all(|w| w.sanitized == SanitizedBox::Dropped));
    }

    #[test]
    fn valid_boxes_pass_every_policy() {
        for policy in [GeometryPolicy::Warn, GeometryPolicy::Clamp, GeometryPolicy::Drop] {
            let input = [det(0, [10, 20, 110, 220]), det(1, [0, 0, 640, 480])];
            let out = validate_geometric(0, &input, 640, 480, policy);
            assert_eq!(out.detections, input);
            assert!(out.warnings.is_empty());
        }
    }

    #[test]
    fn drop_removes_violators_only() {
        let out = validate_geometric(
            0,
            &[det(0, [10, 20, 110, 220]), det(1, [600, 100, 700, 200])],
            640,
            480,
            GeometryPolicy::Drop,
        );
        assert_eq!(out.detections.len(), 1);
        assert_eq!(out.detections[0].person_id, 0);
    }

    #[test]
    fn sanitized_box_serialization() {
        assert_eq!(serde_json::to_string(&SanitizedBox::Dropped).unwrap(), "\"dropped\"");
        let kept = SanitizedBox::Kept(BoundingBox::new(1, 2, 3, 4));
        let s = serde_json::to_string(&kept).unwrap();
        assert_eq!(serde_json::from_str::<SanitizedBox>(&s).unwrap(), kept);
    }

    fn independent_ok(b: &BoundingBox, w: u32, h: u32) -> bool {
        b.x_min < b.x_max && b.y_min < b.y_max && b.x_max <= w && b.y_max <= h
    }

    proptest! {
        #[test]
        fn clamp_output_is_geometrically_valid(
            boxes in prop::collection::vec(prop::array::uniform4(0u32..1000), 0..8),
            w in 1u32..800, h in 1u32..800,
        ) {
            let dets: Vec<_> = boxes.iter().enumerate().map(|(i, b)| det(i as u32, *b)).collect();
            for policy in [GeometryPolicy::Clamp, GeometryPolicy::Drop] {
                let out = validate_geometric(0, &dets, w, h, policy);
                for d in &out.detections {
                    prop_assert!(independent_ok(&d.bbox, w, h), "{:?} in {}x{}", d.bbox, w, h);
                }
            }
            let warned = validate_geometric(0, &dets, w, h, GeometryPolicy::Warn);
            prop_assert_eq!(serde_json::to_vec(&warned.detections).unwrap(), serde_json::to_vec(&dets).unwrap());
        }
    }
}
