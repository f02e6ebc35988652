//! The batch output contract: versioned prompt templates, request assembly,
//! and tolerant extraction + parsing of the model's JSON reply.

mod extract;
mod parse;
mod request;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use extract::extract_json_payload;
pub use parse::{parse_batch_detections, BatchDetections, ContractWarning};
pub(crate) use parse::type_name;
pub use request::{build_batch_request, frame_tag, RequestLimits};

/// Literal the model is asked to emit for attributes it cannot determine.
pub const UNKNOWN_VALUE: &str = "unknown";

pub const DEFAULT_BATCH_SIZE: usize = 4;

const BUILTIN_TEMPLATE: &str = include_str!("../../templates/batch_detect_v1.txt");
const BUILTIN_VERSION: &str = "batch-detect-v1";

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("batch contains no frames")]
    EmptyBatch,
    #[error("batch of {len} frames exceeds the configured batch size {max}")]
    BatchTooLarge { len: usize, max: usize },
    #[error("request payload of {estimated} bytes exceeds the limit of {limit} bytes")]
    OversizedPayload { estimated: usize, limit: usize },
    #[error("invalid attribute spec: {0}")]
    InvalidAttributeSpec(String),
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("wrong payload shape: {0}")]
    WrongShape(String),
    #[error("cannot read prompt template: {0}")]
    Template(#[from] std::io::Error),
}

impl ContractError {
    /// Stable snake_case identifier used in artifacts.
    pub fn kind(&self) -> &'static str {
        match self {
            ContractError::EmptyBatch => "empty_batch",
            ContractError::BatchTooLarge { .. } => "batch_too_large",
            ContractError::OversizedPayload { .. } => "oversized_payload",
            ContractError::InvalidAttributeSpec(_) => "invalid_attribute_spec",
            ContractError::NoJsonFound => "no_json_found",
            ContractError::MalformedJson(_) => "malformed_json",
            ContractError::WrongShape(_) => "wrong_shape",
            ContractError::Template(_) => "template",
        }
    }
}

/// One attribute requested inside `analysis_result`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRequest {
    pub name: String,
    pub instruction: String,
}

/// The ordered, user-chosen attribute keys. Values are free strings; no
/// taxonomy is imposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    attributes: Vec<AttributeRequest>,
}

impl Default for AttributeSpec {
    fn default() -> Self {
        Self {
            attributes: vec![AttributeRequest {
                name: "emotion".into(),
                instruction: "the person's apparent emotion as a short lowercase word".into(),
            }],
        }
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl AttributeSpec {
    pub fn new(attributes: Vec<AttributeRequest>) -> Result<Self, ContractError> {
        if attributes.is_empty() {
            return Err(ContractError::InvalidAttributeSpec(
                "at least one attribute is required".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &attributes {
            if !is_identifier(&a.name) {
                return Err(ContractError::InvalidAttributeSpec(format!(
                    "attribute name {:?} is not a lowercase identifier",
                    a.name
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(ContractError::InvalidAttributeSpec(format!(
                    "duplicate attribute {:?}",
                    a.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    /// Parses `name` or `name:instruction` items, e.g. `emotion,posture:body posture`.
    pub fn parse_list(items: &[String]) -> Result<Self, ContractError> {
        let attrs = items
            .iter()
            .map(|item| match item.split_once(':') {
                Some((name, instr)) => AttributeRequest {
                    name: name.trim().to_string(),
                    instruction: instr.trim().to_string(),
                },
                None => {
                    let name = item.trim().to_string();
                    let default = AttributeSpec::default();
                    let instruction = default
                        .attributes
                        .iter()
                        .find(|a| a.name == name)
                        .map(|a| a.instruction.clone())
                        .unwrap_or_else(|| format!("a short lowercase description of the person's {name}"));
                    AttributeRequest { name, instruction }
                }
            })
            .collect();
        Self::new(attrs)
    }

    pub fn attributes(&self) -> &[AttributeRequest] {
        &self.attributes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }
}

/// Identifies the exact prompt text a batch was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractVersion {
    pub version_id: String,
    /// Hex SHA-256 of the template file bytes.
    pub template_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    version: ContractVersion,
    text: String,
}

impl PromptTemplate {
    pub fn new(version_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let template_hash = hex::encode(Sha256::digest(text.as_bytes()));
        Self {
            version: ContractVersion {
                version_id: version_id.into(),
                template_hash,
            },
            text,
        }
    }

    /// The template shipped in `templates/batch_detect_v1.txt`.
    pub fn builtin() -> Self {
        Self::new(BUILTIN_VERSION, BUILTIN_TEMPLATE)
    }

    /// Loads a template file; the version id is the file stem.
    pub fn load(path: &Path) -> Result<Self, ContractError> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, e.utf8_error())
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Ok(Self::new(id, text))
    }

    pub fn version(&self) -> &ContractVersion {
        &self.version
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Fills the attribute placeholders.
    pub fn render(&self, spec: &AttributeSpec) -> String {
        let keys = spec
            .names()
            .map(|n| format!("\"{n}\""))
            .collect::<Vec<_>>()
            .join(", ");
        let lines = spec
            .attributes()
            .iter()
            .map(|a| format!("  - \"{}\": {}.", a.name, a.instruction.trim_end_matches('.')))
            .collect::<Vec<_>>()
            .join("\n");
        let example = format!(
            "{{{}}}",
            spec.names()
                .map(|n| format!("\"{n}\": \"{UNKNOWN_VALUE}\""))
                .collect::<Vec<_>>()
                .join(", ")
        );
        self.text
            .replace("{{attribute_keys}}", &keys)
            .replace("{{attribute_lines}}", &lines)
            .replace("{{attribute_example}}", &example)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_names_are_validated() {
        let mk = |n: &str| AttributeRequest {
            name: n.into(),
            instruction: "x".into(),
        };
        assert!(AttributeSpec::new(vec![mk("emotion"), mk("posture_2")]).is_ok());
        for bad in ["", "Emotion", "2x", "with space", "dash-ed"] {
            assert!(AttributeSpec::new(vec![mk(bad)]).is_err(), "{bad:?}");
        }
        assert!(AttributeSpec::new(vec![mk("a"), mk("a")]).is_err());
        assert!(AttributeSpec::new(vec![]).is_err());
    }

    #[test]
    fn parse_list_keeps_order_and_instructions() {
        let spec =
            AttributeSpec::parse_list(&["emotion".into(), "posture:standing or seated".into()])
                .unwrap();
        let names: Vec<_> = spec.names().collect();
        assert_eq!(names, ["emotion", "posture"]);
        assert_eq!(spec.attributes()[1].instruction, "standing or seated");
    }

    #[test]
    fn template_hash_is_digest_of_bytes() {
        let t = PromptTemplate::builtin();
        assert_eq!(
            t.version().template_hash,
            hex::encode(Sha256::digest(BUILTIN_TEMPLATE.as_bytes()))
        );
        assert_eq!(t.version().template_hash.len(), 64);
        let other = PromptTemplate::new(BUILTIN_VERSION, format!("{BUILTIN_TEMPLATE} "));
        assert_ne!(other.version().template_hash, t.version().template_hash);
    }

    #[test]
    fn render_fills_every_placeholder() {
        let text = PromptTemplate::builtin().render(&AttributeSpec::default());
        assert!(!text.contains("{{"));
        assert!(text.contains(r#"{"emotion": "unknown"}"#));
    }
}
