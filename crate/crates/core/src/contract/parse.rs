use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ContractError;

/// Non-fatal observations made while mapping the payload onto expected frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractWarning {
    /// An expected frame had no key in the payload; it was filled with no detections.
    MissingFrame { frame_index: u32 },
    /// A payload key that is not an expected frame index was dropped.
    UnexpectedKey { key: String },
    /// A detection carried an attribute key that was not requested.
    ExtraAttribute {
        frame_index: u32,
        person_id: Option<u64>,
        key: String,
    },
}

/// One batch's payload, keyed by frame index. Detections stay as raw JSON
/// values until structural validation types them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchDetections {
    pub entries: BTreeMap<u32, Vec<Value>>,
    pub warnings: Vec<ContractWarning>,
}

impl BatchDetections {
    pub fn frame_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }
}

/// Parses an extracted payload into per-frame detection lists covering exactly
/// `expected_frames`.
pub fn parse_batch_detections(
    raw: &str,
    expected_frames: &[u32],
) -> Result<BatchDetections, ContractError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| ContractError::MalformedJson(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(ContractError::WrongShape(format!(
            "top level is {}, expected an object keyed by frame index",
            type_name(&value)
        )));
    };

    let mut batch = BatchDetections::default();
    let mut found: BTreeMap<u32, Vec<Value>> = BTreeMap::new();
    for (key, v) in map {
        let index = key
            .trim()
            .parse::<u32>()
            .ok()
            .filter(|i| expected_frames.contains(i));
        match index {
            Some(i) => match v {
                Value::Array(items) => {
                    found.insert(i, items);
                }
                other => {
                    return Err(ContractError::WrongShape(format!(
                        "frame {key:?} maps to {}, expected an array",
                        type_name(&other)
                    )))
                }
            },
            None => batch.warnings.push(ContractWarning::UnexpectedKey { key }),
        }
    }
    for &i in expected_frames {
        let items = found.remove(&i).unwrap_or_else(|| {
            batch
                .warnings
                .push(ContractWarning::MissingFrame { frame_index: i });
            Vec::new()
        });
        batch.entries.insert(i, items);
    }
    Ok(batch)
}

pub(crate) fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"0":[{"person_id":0,"bbox":{"x_min":10,"y_min":20,"x_max":110,"y_max":220},"confidence":0.9,"analysis_result":{"emotion":"neutral"}}]}"#;

    #[test]
    fn parses_single_detection() {
        let batch = parse_batch_detections(ONE, &[0]).unwrap();
        assert_eq!(batch.entries.len(), 1);
        let dets = &batch.entries[&0];
        assert_eq!(dets.len(), 1);
        // independent parse of the same fixture
        let oracle: Value = serde_json::from_str(ONE).unwrap();
        assert_eq!(dets[0], oracle["0"][0]);
        assert!(batch.warnings.is_empty());
    }

    #[test]
    fn missing_frames_are_filled_and_flagged() {
        let batch = parse_batch_detections(r#"{"0":[]}"#, &[0, 1]).unwrap();
        assert_eq!(batch.entries.len(), 2);
        assert!(batch.entries[&1].is_empty());
        assert_eq!(
            batch.warnings,
            vec![ContractWarning::MissingFrame { frame_index: 1 }]
        );
    }

    #[test]
    fn unexpected_keys_are_dropped() {
        let batch = parse_batch_detections(r#"{"0":[],"7":[],"note":"x"}"#, &[0]).unwrap();
        assert_eq!(batch.frame_indices().collect::<Vec<_>>(), [0]);
        assert_eq!(batch.warnings.len(), 2);
    }

    #[test]
    fn malformed_and_wrong_shape() {
        assert!(matches!(
            parse_batch_detections("{", &[0]),
            Err(ContractError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_batch_detections("[]", &[0]),
            Err(ContractError::WrongShape(_))
        ));
        assert!(matches!(
            parse_batch_detections(r#"{"0": {"person_id": 0}}"#, &[0]),
            Err(ContractError::WrongShape(_))
        ));
    }
}
