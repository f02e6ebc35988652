// Naive reference checkers shared by integration and acceptance tests. They
// are written independently of the library code and kept deliberately plain.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

const U32_MAX: f64 = 4294967295.0;

fn as_whole(v: &Value) -> Option<f64> {
    let f = v.as_f64()?;
    if f == f.floor() {
        Some(f)
    } else {
        None
    }
}

fn check_uint(v: &Value, name: &str, out: &mut BTreeSet<String>) {
    if !v.is_number() {
        out.insert(format!("type: {name}"));
        return;
    }
    match as_whole(v) {
        None => {
            out.insert(format!("type: {name}"));
        }
        Some(f) if !(0.0..=U32_MAX).contains(&f) => {
            out.insert(format!("range: {name}"));
        }
        Some(_) => {}
    }
}

/// Error summaries per frame for a parsed payload; a frame with an empty set
/// is structurally acceptable.
pub fn reference_check(payload: &Value, attributes: &[String]) -> BTreeMap<u32, BTreeSet<String>> {
    let mut result = BTreeMap::new();
    let frames = payload.as_object().expect("fixture payload is an object");
    for (key, items) in frames {
        let frame: u32 = key.parse().expect("fixture keys are frame indices");
        let mut errs = BTreeSet::new();
        let mut ids: Vec<f64> = Vec::new();
        for item in items.as_array().expect("fixture frames are arrays") {
            let Some(obj) = item.as_object() else {
                errs.insert("type: detection".to_string());
                continue;
            };
            match obj.get("person_id") {
                None => {
                    errs.insert("missing: person_id".into());
                }
                Some(v) => {
                    check_uint(v, "person_id", &mut errs);
                    if let Some(f) = as_whole(v) {
                        if v.is_number() && (0.0..=U32_MAX).contains(&f) {
                            ids.push(f);
                        }
                    }
                }
            }
            match obj.get("bbox") {
                None => {
                    errs.insert("missing: bbox".into());
                }
                Some(Value::Object(b)) => {
                    for c in ["x_min", "y_min", "x_max", "y_max"] {
                        match b.get(c) {
                            None => {
                                errs.insert(format!("missing: bbox.{c}"));
                            }
                            Some(v) => check_uint(v, &format!("bbox.{c}"), &mut errs),
                        }
                    }
                }
                Some(_) => {
                    errs.insert("type: bbox".into());
                }
            }
            match obj.get("confidence") {
                None => {
                    errs.insert("missing: confidence".into());
                }
                Some(v) => match v.as_f64() {
                    None => {
                        errs.insert("type: confidence".into());
                    }
                    Some(c) if !(0.0..=1.0).contains(&c) => {
                        errs.insert("range: confidence".into());
                    }
                    Some(_) => {}
                },
            }
            match obj.get("analysis_result") {
                None => {
                    errs.insert("missing: analysis_result".into());
                }
                Some(Value::Object(a)) => {
                    for name in attributes {
                        if !a.contains_key(name) {
                            errs.insert(format!("missing: analysis_result.{name}"));
                        }
                    }
                    for (k, v) in a {
                        if !v.is_string() {
                            errs.insert(format!("type: analysis_result.{k}"));
                        }
                    }
                }
                Some(_) => {
                    errs.insert("type: analysis_result".into());
                }
            }
        }
        let mut sorted = ids.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut has_dup = false;
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                has_dup = true;
            }
        }
        if has_dup {
            errs.insert("duplicate person_id".into());
        } else {
            for (i, id) in sorted.iter().enumerate() {
                if *id != i as f64 {
                    errs.insert("non-dense person_id".into());
                }
            }
        }
        result.insert(frame, errs);
    }
    result
}

/// Area-arithmetic IoU of two `[x_min, y_min, x_max, y_max]` boxes.
pub fn iou_by_area(a: [u32; 4], b: [u32; 4]) -> f64 {
    let area = |r: [u32; 4]| -> f64 {
        let w = r[2] as f64 - r[0] as f64;
        let h = r[3] as f64 - r[1] as f64;
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    };
    let ix = (a[2].min(b[2]) as f64 - a[0].max(b[0]) as f64).max(0.0);
    let iy = (a[3].min(b[3]) as f64 - a[1].max(b[1]) as f64).max(0.0);
    let inter = ix * iy;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Whether a box is ordered and inside a `width` x `height` frame.
pub fn geometrically_valid(b: [u32; 4], width: u32, height: u32) -> bool {
    b[0] < b[2] && b[1] < b[3] && b[2] <= width && b[3] <= height
}

/// Expected sampled frame count for a duration, interval and cap.
pub fn expected_frame_count(duration: f64, interval: f64, max_frames: Option<usize>) -> usize {
    let n = (duration / interval).ceil() as usize;
    match max_frames {
        Some(m) => n.min(m),
        None => n,
    }
}

/// Requests a client following the retry law makes for a status schedule
/// (`0` means success) when every later request succeeds.
pub fn expected_attempts(schedule: &[u16], max_retries: u32) -> usize {
    let mut attempts = 0;
    for (i, &code) in schedule.iter().chain(std::iter::repeat(&0)).enumerate() {
        attempts += 1;
        let retryable = code == 429 || code >= 500;
        if code == 0 || !retryable || i as u32 >= max_retries {
            break;
        }
    }
    attempts
}
