use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ValidationReport;
use crate::contract::{AttributeSpec, BatchDetections, ContractWarning};
use crate::detection::{BoundingBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralErrorKind {
    Missing,
    Type,
    Range,
    DuplicatePersonId,
    NonDensePersonIds,
}

impl fmt::Display for StructuralErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StructuralErrorKind::Missing => "missing",
            StructuralErrorKind::Type => "type",
            StructuralErrorKind::Range => "range",
            StructuralErrorKind::DuplicatePersonId => "duplicate person_id",
            StructuralErrorKind::NonDensePersonIds => "non-dense person_id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralError {
    pub frame_index: u32,
    /// JSON path into the batch payload, e.g. `$["0"][1].bbox.x_min`.
    pub path: String,
    pub kind: StructuralErrorKind,
    pub detail: String,
}

impl StructuralError {
    /// Short form such as `range: confidence`.
    pub fn summary(&self) -> String {
        match self.kind {
            StructuralErrorKind::DuplicatePersonId | StructuralErrorKind::NonDensePersonIds => {
                self.kind.to_string()
            }
            _ => {
                let field = self
                    .path
                    .rsplit_once(']')
                    .map(|(_, f)| f.trim_start_matches('.'))
                    .filter(|f| !f.is_empty())
                    .unwrap_or("detection");
                format!("{}: {field}", self.kind)
            }
        }
    }
}

struct Walker<'a> {
    spec: &'a AttributeSpec,
    frame_index: u32,
    errors: Vec<StructuralError>,
    warnings: Vec<ContractWarning>,
}

/// Integer value of a JSON number, accepting integral floats.
fn integral(n: &serde_json::Number) -> Option<f64> {
    if let Some(u) = n.as_u64() {
        Some(u as f64)
    } else if let Some(i) = n.as_i64() {
        Some(i as f64)
    } else {
        n.as_f64().filter(|f| f.fract() == 0.0)
    }
}

enum Int<T> {
    Ok(T),
    Bad,
}

impl Walker<'_> {
    fn error(&mut self, path: String, kind: StructuralErrorKind, detail: impl Into<String>) {
        self.errors.push(StructuralError {
            frame_index: self.frame_index,
            path,
            kind,
            detail: detail.into(),
        });
    }

    fn field<'v>(&mut self, obj: &'v Map<String, Value>, path: &str, key: &str) -> Option<&'v Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.error(
                format!("{path}.{key}"),
                StructuralErrorKind::Missing,
                format!("required field {key:?} is absent"),
            );
        }
        v
    }

    /// Non-negative integer no larger than `max`. Integral floats are accepted.
    fn uint(&mut self, v: &Value, path: String, max: u64) -> Int<u64> {
        let Value::Number(n) = v else {
            self.error(path, StructuralErrorKind::Type, format!("expected integer, found {}", crate::contract::type_name(v)));
            return Int::Bad;
        };
        let Some(x) = integral(n) else {
            self.error(path, StructuralErrorKind::Type, format!("expected integer, found {n}"));
            return Int::Bad;
        };
        if x < 0.0 || x > max as f64 {
            self.error(path, StructuralErrorKind::Range, format!("{n} outside [0, {max}]"));
            return Int::Bad;
        }
        Int::Ok(x as u64)
    }

    fn detection(&mut self, v: &Value, path: &str) -> Option<Detection> {
        let Value::Object(obj) = v else {
            self.error(
                path.to_string(),
                StructuralErrorKind::Type,
                format!("expected object, found {}", crate::contract::type_name(v)),
            );
            return None;
        };
        let before = self.errors.len();

        let person_id = self
            .field(obj, path, "person_id")
            .and_then(|v| match self.uint(v, format!("{path}.person_id"), u32::MAX as u64) {
                Int::Ok(x) => Some(x as u32),
                Int::Bad => None,
            });

        let bbox = self.field(obj, path, "bbox").and_then(|v| self.bbox(v, &format!("{path}.bbox")));

        let confidence = self.field(obj, path, "confidence").and_then(|v| {
            let p = format!("{path}.confidence");
            match v.as_f64() {
                Some(c) if v.is_number() && (0.0..=1.0).contains(&c) => Some(c),
                Some(c) if v.is_number() => {
                    self.error(p, StructuralErrorKind::Range, format!("{c} outside [0, 1]"));
                    None
                }
                _ => {
                    self.error(p, StructuralErrorKind::Type, format!("expected number, found {}", crate::contract::type_name(v)));
                    None
                }
            }
        });

        let analysis = self
            .field(obj, path, "analysis_result")
            .and_then(|v| self.analysis(v, &format!("{path}.analysis_result"), person_id));

        if self.errors.len() != before {
            return None;
        }
        Some(Detection {
            person_id: person_id?,
            bbox: bbox?,
            confidence: confidence?,
            analysis_result: analysis?,
        })
    }

    fn bbox(&mut self, v: &Value, path: &str) -> Option<BoundingBox> {
        let Value::Object(obj) = v else {
            self.error(
                path.to_string(),
                StructuralErrorKind::Type,
                format!("expected object, found {}", crate::contract::type_name(v)),
            );
            return None;
        };
        let mut coords = [0u32; 4];
        let mut ok = true;
        for (slot, key) in coords.iter_mut().zip(["x_min", "y_min", "x_max", "y_max"]) {
            match self.field(obj, path, key) {
                Some(c) => match self.uint(c, format!("{path}.{key}"), u32::MAX as u64) {
                    Int::Ok(x) => *slot = x as u32,
                    Int::Bad => ok = false,
                },
                None => ok = false,
            }
        }
        ok.then(|| BoundingBox::new(coords[0], coords[1], coords[2], coords[3]))
    }

    fn analysis(
        &mut self,
        v: &Value,
        path: &str,
        person_id: Option<u32>,
    ) -> Option<BTreeMap<String, String>> {
        let Value::Object(obj) = v else {
            self.error(
                path.to_string(),
                StructuralErrorKind::Type,
                format!("expected object, found {}", crate::contract::type_name(v)),
            );
            return None;
        };
        let mut ok = true;
        let mut out = BTreeMap::new();
        for name in self.spec.names() {
            if !obj.contains_key(name) {
                self.error(
                    format!("{path}.{name}"),
                    StructuralErrorKind::Missing,
                    format!("requested attribute {name:?} is absent"),
                );
                ok = false;
            }
        }
        for (key, value) in obj {
            match value {
                Value::String(s) => {
                    out.insert(key.clone(), s.clone());
                }
                other => {
                    self.error(
                        format!("{path}.{key}"),
                        StructuralErrorKind::Type,
                        format!("expected string, found {}", crate::contract::type_name(other)),
                    );
                    ok = false;
                }
            }
            if !self.spec.names().any(|n| n == key) {
                self.warnings.push(ContractWarning::ExtraAttribute {
                    frame_index: self.frame_index,
                    person_id: person_id.map(u64::from),
                    key: key.clone(),
                });
            }
        }
        ok.then_some(out)
    }

    fn frame(&mut self, items: &[Value]) -> Option<Vec<Detection>> {
        let base = format!("$[\"{}\"]", self.frame_index);
        let before = self.errors.len();
        let mut detections = Vec::with_capacity(items.len());
        let mut ids = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let path = format!("{base}[{i}]");
            if let Some(Value::Number(n)) = item.get("person_id") {
                if let Some(pid) = integral(n).filter(|&p| (0.0..=u32::MAX as f64).contains(&p)) {
                    ids.push(pid as u64);
                }
            }
            if let Some(d) = self.detection(item, &path) {
                detections.push(d);
            }
        }
        let mut seen = BTreeSet::new();
        let mut duplicates = BTreeSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                duplicates.insert(id);
            }
        }
        for id in &duplicates {
            self.error(
                format!("{base}[*].person_id"),
                StructuralErrorKind::DuplicatePersonId,
                format!("person_id {id} appears more than once in frame"),
            );
        }
        if duplicates.is_empty() && !seen.iter().copied().eq(0..seen.len() as u64) {
            self.error(
                format!("{base}[*].person_id"),
                StructuralErrorKind::NonDensePersonIds,
                format!("person_ids {seen:?} do not form 0..{}", seen.len()),
            );
        }
        (self.errors.len() == before).then_some(detections)
    }
}

/// Runs the structural layer, returning the report plus typed detections for
/// every frame that passed. Frames with errors are absent from the map.
pub fn validate_and_type(
    batch: &BatchDetections,
    spec: &AttributeSpec,
    batch_index: usize,
) -> (ValidationReport, BTreeMap<u32, Vec<Detection>>) {
    let mut report = ValidationReport::new(batch_index);
    report.contract_warnings = batch.warnings.clone();
    let mut accepted = BTreeMap::new();
    for (&frame_index, items) in &batch.entries {
        let mut walker = Walker {
            spec,
            frame_index,
            errors: Vec::new(),
            warnings: Vec::new(),
        };
        if let Some(dets) = walker.frame(items) {
            accepted.insert(frame_index, dets);
        }
        report.structural_errors.extend(walker.errors);
        report.contract_warnings.extend(walker.warnings);
    }
    (report, accepted)
}

/// Structural validation of a parsed batch. Never mutates the batch; every
/// violation becomes a report entry.
pub fn validate_structural(
    batch: &BatchDetections,
    spec: &AttributeSpec,
    batch_index: usize,
) -> ValidationReport {
    validate_and_type(batch, spec, batch_index).0
}

/// JSON form of a typed detection, as the model would have emitted it.
pub fn detection_to_value(d: &Detection) -> Value {
    serde_json::to_value(d).expect("detection serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn det(pid: Value, conf: Value) -> Value {
        json!({"person_id": pid, "bbox": {"x_min": 10, "y_min": 20, "x_max": 110, "y_max": 220},
               "confidence": conf, "analysis_result": {"emotion": "neutral"}})
    }

    fn batch(frames: Vec<(u32, Vec<Value>)>) -> BatchDetections {
        BatchDetections {
            entries: frames.into_iter().collect(),
            warnings: vec![],
        }
    }

    fn run(b: &BatchDetections) -> ValidationReport {
        validate_structural(b, &AttributeSpec::default(), 0)
    }

    #[test]
    fn confidence_out_of_range() {
        let r = run(&batch(vec![(0, vec![det(json!(0), json!(1.2))])]));
        assert!(!r.accepted());
        assert_eq!(r.structural_errors.len(), 1);
        assert_eq!(r.structural_errors[0].summary(), "range: confidence");
    }

    #[test]
    fn closed_confidence_interval() {
        let r = run(&batch(vec![(
            0,
            vec![det(json!(0), json!(0)), det(json!(1), json!(1.0))],
        )]));
        assert!(r.accepted(), "{:?}", r.structural_errors);
    }

    #[test]
    fn empty_batch_is_accepted() {
        let r = run(&batch(vec![(0, vec![]), (1, vec![])]));
        assert!(r.accepted());
        assert_eq!(r, ValidationReport::new(0));
    }

    #[test]
    fn duplicate_and_sparse_ids() {
        let r = run(&batch(vec![(0, vec![det(json!(0), json!(0.5)), det(json!(0), json!(0.5))])]));
        assert_eq!(r.structural_errors.len(), 1);
        assert_eq!(r.structural_errors[0].summary(), "duplicate person_id");

        let r = run(&batch(vec![(0, vec![det(json!(0), json!(0.5)), det(json!(2), json!(0.5))])]));
        assert_eq!(r.structural_errors[0].kind, StructuralErrorKind::NonDensePersonIds);

        let r = run(&batch(vec![(0, vec![det(json!(1), json!(0.5))])]));
        assert!(!r.accepted());
    }

    #[test]
    fn missing_and_mistyped_fields() {
        let mut d = det(json!(0), json!(0.5));
        d.as_object_mut().unwrap().remove("bbox");
        d["analysis_result"] = json!({"emotion": 3});
        let r = run(&batch(vec![(4, vec![d])]));
        let summaries: Vec<_> = r.structural_errors.iter().map(|e| e.summary()).collect();
        assert_eq!(summaries, ["missing: bbox", "type: analysis_result.emotion"]);
        assert!(r.structural_errors.iter().all(|e| e.frame_index == 4));
    }

    #[test]
    fn missing_requested_attribute_and_extra_key() {
        let mut d = det(json!(0), json!(0.5));
        d["analysis_result"] = json!({"mood": "calm"});
        let r = run(&batch(vec![(0, vec![d])]));
        assert_eq!(r.structural_errors[0].summary(), "missing: analysis_result.emotion");
        assert!(matches!(
            r.contract_warnings[0],
            ContractWarning::ExtraAttribute { ref key, .. } if key == "mood"
        ));
    }

    #[test]
    fn coordinates_must_be_non_negative_integers() {
        let mut d = det(json!(0), json!(0.5));
        d["bbox"]["x_min"] = json!(-3);
        d["bbox"]["y_max"] = json!(10.5);
        let r = run(&batch(vec![(0, vec![d])]));
        let summaries: Vec<_> = r.structural_errors.iter().map(|e| e.summary()).collect();
        assert_eq!(summaries, ["range: bbox.x_min", "type: bbox.y_max"]);

        let mut d = det(json!(0), json!(0.5));
        d["bbox"]["x_max"] = json!(110.0);
        assert!(run(&batch(vec![(0, vec![d])])).accepted());
    }

    #[test]
    fn invalid_frame_does_not_reject_siblings() {
        let b = batch(vec![
            (0, vec![det(json!(0), json!(0.5))]),
            (1, vec![det(json!(0), json!(7))]),
        ]);
        let (report, accepted) = validate_and_type(&b, &AttributeSpec::default(), 3);
        assert_eq!(report.batch_index, 3);
        assert_eq!(report.rejected_frames().into_iter().collect::<Vec<_>>(), [1]);
        assert_eq!(accepted.keys().copied().collect::<Vec<_>>(), [0]);
        assert_eq!(accepted[&0][0].bbox, BoundingBox::new(10, 20, 110, 220));
    }

    #[test]
    fn typed_round_trip() {
        let v = det(json!(0), json!(0.25));
        let (_, accepted) = validate_and_type(&batch(vec![(0, vec![v.clone()])]), &AttributeSpec::default(), 0);
        assert_eq!(detection_to_value(&accepted[&0][0]), v);
    }
}
