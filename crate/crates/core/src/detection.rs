use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Pixel-space box. Coordinates are non-negative by construction; ordering and
/// in-bounds placement are geometric properties checked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub const fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    /// Area of the box, zero for inverted or degenerate boxes.
    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    /// Intersection over union. Zero when the union is empty.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let iy = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        let inter = ix as f64 * iy as f64;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x_max <= width && self.y_max <= height
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{{{},{},{},{}}}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// One person hypothesis within a single frame. `person_id` is frame-local:
/// it restarts at 0 for every frame and carries no identity across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub person_id: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub analysis_result: BTreeMap<String, String>,
}
