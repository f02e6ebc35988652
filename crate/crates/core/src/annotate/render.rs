use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::AnnotateError;
use crate::detection::Detection;

/// Fixed palette cycled by frame-local `person_id`. Colors say nothing about
/// identity across frames.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

const GLYPH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxColor {
    /// Cycle [`PALETTE`] by `person_id`.
    Palette,
    Solid([u8; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStyle {
    pub box_color: BoxColor,
    pub box_thickness: u32,
    /// Placeholders: `{person_id}`, `{confidence}`, `{attributes}`, and
    /// `{<attribute name>}` for any single attribute.
    pub label_template: String,
    pub label_color: [u8; 3],
    pub label_background: [u8; 3],
    /// Glyph scale; the 8×8 bitmap font is scaled by `round(font_scale)`.
    pub font_scale: f64,
}

impl Default for AnnotationStyle {
    fn default() -> Self {
        Self {
            box_color: BoxColor::Palette,
            box_thickness: 2,
            label_template: "#{person_id} {confidence} {attributes}".into(),
            label_color: [255, 255, 255],
            label_background: [0, 0, 0],
            font_scale: 1.0,
        }
    }
}

impl AnnotationStyle {
    pub fn color_for(&self, person_id: u32) -> [u8; 3] {
        match self.box_color {
            BoxColor::Palette => PALETTE[person_id as usize % PALETTE.len()],
            BoxColor::Solid(c) => c,
        }
    }

    fn scale(&self) -> u32 {
        (self.font_scale.round() as u32).max(1)
    }

    pub fn label_for(&self, det: &Detection) -> String {
        let attributes = det
            .analysis_result
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let mut label = self
            .label_template
            .replace("{person_id}", &det.person_id.to_string())
            .replace("{confidence}", &format!("{:.2}", det.confidence))
            .replace("{attributes}", &attributes);
        for (k, v) in &det.analysis_result {
            label = label.replace(&format!("{{{k}}}"), v);
        }
        label
    }
}

/// Pixel rectangle `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// Where the label for a detection lands: directly above the box, pushed
/// inside the image at the top and right edges.
pub fn label_rect(det: &Detection, style: &AnnotationStyle, width: u32, height: u32) -> PixelRect {
    let text = style.label_for(det);
    let s = style.scale();
    let pad = s;
    let w = (text.chars().count() as u32 * GLYPH * s + 2 * pad).min(width);
    let h = (GLYPH * s + 2 * pad).min(height);
    let x = det.bbox.x_min.min(width - w);
    let y = det.bbox.y_min.saturating_sub(h);
    PixelRect { x, y, w, h }
}

fn fill(img: &mut RgbImage, r: PixelRect, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for y in r.y..(r.y + r.h).min(h) {
        for x in r.x..(r.x + r.w).min(w) {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x0: u32, y0: u32, scale: u32, color: [u8; 3], clip: PixelRect) {
    for (i, ch) in text.chars().enumerate() {
        let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
        let glyph = BASIC_LEGACY[code];
        let gx = x0 + i as u32 * GLYPH * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = gx + col * scale + dx;
                        let y = y0 + row as u32 * scale + dy;
                        if clip.contains(x, y) {
                            img.put_pixel(x, y, Rgb(color));
                        }
                    }
                }
            }
        }
    }
}

fn draw_label(img: &mut RgbImage, text: &str, rect: PixelRect, style: &AnnotationStyle) {
    fill(img, rect, style.label_background);
    let s = style.scale();
    draw_text(img, text, rect.x + s, rect.y + s, s, style.label_color, rect);
}

fn draw_box(img: &mut RgbImage, det: &Detection, style: &AnnotationStyle) {
    let b = det.bbox;
    let t = style.box_thickness.max(1);
    let color = Rgb(style.color_for(det.person_id));
    for y in b.y_min..b.y_max {
        for x in b.x_min..b.x_max {
            let on_edge = x < b.x_min + t || x + t >= b.x_max || y < b.y_min + t || y + t >= b.y_max;
            if on_edge {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Draws a box and label for each detection onto a copy of `image`.
///
/// Boxes are drawn inward from the box edges (`[x_min, x_max)` columns), so a
/// box spanning the whole frame stays inside it. Every detection must already
/// be ordered and inside the frame.
pub fn render_frame(
    image: &RgbImage,
    detections: &[Detection],
    style: &AnnotationStyle,
) -> Result<RgbImage, AnnotateError> {
    let (w, h) = image.dimensions();
    for d in detections {
        if !d.bbox.is_ordered() || !d.bbox.fits_within(w, h) {
            return Err(AnnotateError::InvalidGeometry {
                person_id: d.person_id,
                bbox: d.bbox,
                width: w,
                height: h,
            });
        }
    }
    let mut out = image.clone();
    for d in detections {
        draw_box(&mut out, d, style);
    }
    for d in detections {
        let rect = label_rect(d, style, w, h);
        draw_label(&mut out, &style.label_for(d), rect, style);
    }
    Ok(out)
}

pub const NO_DATA_TEXT: &str = "NO DATA";

/// Region of the "no data" marker (top-right corner).
pub fn no_data_rect(width: u32, height: u32) -> PixelRect {
    let w = (NO_DATA_TEXT.len() as u32 * GLYPH + 4).min(width);
    let h = (GLYPH + 4).min(height);
    PixelRect {
        x: width - w,
        y: 0,
        w,
        h,
    }
}

pub fn draw_no_data_marker(img: &mut RgbImage) {
    let (w, h) = img.dimensions();
    let rect = no_data_rect(w, h);
    fill(img, rect, [200, 0, 0]);
    draw_text(img, NO_DATA_TEXT, rect.x + 2, rect.y + 2, 1, [255, 255, 255], rect);
}
