use serde::{Deserialize, Serialize};

use super::{AttributeSpec, ContractError, PromptTemplate};
use crate::chat::{ChatMessage, ChatRequest, ContentPart, Role};
use crate::media::FrameSample;

/// Size and sampling knobs for batch requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLimits {
    pub max_batch_size: usize,
    /// Upper bound on the serialized request body in bytes.
    pub max_payload_bytes: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for RequestLimits {
    fn default() -> Self {
        Self {
            max_batch_size: super::DEFAULT_BATCH_SIZE,
            max_payload_bytes: 10 * 1024 * 1024,
            max_tokens: 4096,
            temperature: 0.0,
        }
    }
}

/// The text line introducing each image in a batch request.
pub fn frame_tag(frame_index: u32, width: u32, height: u32) -> String {
    format!("Frame frame_index={frame_index} width={width} height={height}")
}

/// Assembles the chat request for one batch: the rendered contract as the
/// single system message, then one user message with every frame tagged by
/// index and dimensions, in frame order.
pub fn build_batch_request(
    frames: &[FrameSample],
    spec: &AttributeSpec,
    template: &PromptTemplate,
    model_id: &str,
    limits: &RequestLimits,
) -> Result<ChatRequest, ContractError> {
    if frames.is_empty() {
        return Err(ContractError::EmptyBatch);
    }
    if frames.len() > limits.max_batch_size {
        return Err(ContractError::BatchTooLarge {
            len: frames.len(),
            max: limits.max_batch_size,
        });
    }
    let mut ordered: Vec<&FrameSample> = frames.iter().collect();
    ordered.sort_by_key(|f| f.frame_index);

    let index_list = ordered
        .iter()
        .map(|f| format!("\"{}\"", f.frame_index))
        .collect::<Vec<_>>()
        .join(", ");
    let mut user = vec![ContentPart::text(format!(
        "{} frame(s) follow. Reply with one JSON object with exactly the keys {index_list}.",
        ordered.len()
    ))];
    for f in &ordered {
        user.push(ContentPart::text(frame_tag(f.frame_index, f.width, f.height)));
        user.push(ContentPart::Image {
            media_type: f.image.media_type.clone(),
            data: f.image.bytes.clone(),
        });
    }

    let request = ChatRequest {
        model: model_id.to_string(),
        messages: vec![
            ChatMessage::new(Role::System, vec![ContentPart::text(template.render(spec))]),
            ChatMessage::new(Role::User, user),
        ],
        max_tokens: limits.max_tokens,
        temperature: limits.temperature,
    };
    let estimated = request.to_wire().len();
    if estimated > limits.max_payload_bytes {
        return Err(ContractError::OversizedPayload {
            estimated,
            limit: limits.max_payload_bytes,
        });
    }
    Ok(request)
}
