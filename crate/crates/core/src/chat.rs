//! Chat-completions request shape shared by the batch contract, the gateway and
//! the inspection service.
//!
//! Wire form (OpenAI-compatible):
//!
//! ```json
//! {"model": "...", "messages": [{"role": "system", "content": [{"type": "text", "text": "..."}]},
//!   {"role": "user", "content": [{"type": "text", "text": "..."},
//!     {"type": "image_url", "image_url": {"url": "data:image/jpeg;base64,..."}}]}],
//!  "max_tokens": 4096, "temperature": 0.0}
//! ```

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WirePart", into = "WirePart")]
pub enum ContentPart {
    Text(String),
    /// Inline image carried as a base64 data URL.
    Image { media_type: String, data: Vec<u8> },
}

impl ContentPart {
    pub fn text(s: impl Into<String>) -> Self {
        ContentPart::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContentPart::Text(t) => Some(t),
            ContentPart::Image { .. } => None,
        }
    }

    pub fn data_url(media_type: &str, data: &[u8]) -> String {
        format!("data:{media_type};base64,{}", BASE64.encode(data))
    }

    /// Splits a `data:<type>;base64,<payload>` URL.
    pub fn parse_data_url(url: &str) -> Result<(String, Vec<u8>), String> {
        let rest = url
            .strip_prefix("data:")
            .ok_or_else(|| "image url is not an inline data url".to_string())?;
        let (header, payload) = rest
            .split_once(',')
            .ok_or_else(|| "data url has no payload separator".to_string())?;
        let media_type = header
            .strip_suffix(";base64")
            .ok_or_else(|| "data url is not base64 encoded".to_string())?;
        let data = BASE64
            .decode(payload.trim())
            .map_err(|e| format!("invalid base64 image payload: {e}"))?;
        Ok((media_type.to_string(), data))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart {
    Text { text: String },
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Serialize, Deserialize)]
struct WireImageUrl {
    url: String,
}

impl From<ContentPart> for WirePart {
    fn from(part: ContentPart) -> Self {
        match part {
            ContentPart::Text(text) => WirePart::Text { text },
            ContentPart::Image { media_type, data } => WirePart::ImageUrl {
                image_url: WireImageUrl {
                    url: ContentPart::data_url(&media_type, &data),
                },
            },
        }
    }
}

impl TryFrom<WirePart> for ContentPart {
    type Error = String;

    fn try_from(part: WirePart) -> Result<Self, Self::Error> {
        match part {
            WirePart::Text { text } => Ok(ContentPart::Text(text)),
            WirePart::ImageUrl { image_url } => {
                let (media_type, data) = ContentPart::parse_data_url(&image_url.url)?;
                Ok(ContentPart::Image { media_type, data })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn new(role: Role, content: Vec<ContentPart>) -> Self {
        Self { role, content }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn to_wire(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat request serializes")
    }

    pub fn system_text(&self) -> Option<String> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| {
                m.content
                    .iter()
                    .filter_map(ContentPart::as_text)
                    .collect::<Vec<_>>()
                    .join("\n")
            })
    }

    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| &m.content)
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }
}
