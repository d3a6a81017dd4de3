//! Chat Completions wire format.

use serde::{Deserialize, Serialize};

use super::{Message, RoleConfig, Usage};

/// Sampling temperature for every request. Greedy decoding only.
pub const GREEDY_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

/// vLLM forwards these to the chat template; Qwen3 reads `enable_thinking`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTemplateKwargs {
    pub enable_thinking: bool,
}

/// Body of a `POST /v1/chat/completions` request.
///
/// Only [`build_request`] constructs one, so the temperature is always
/// [`GREEDY_TEMPERATURE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    temperature: f64,
    pub max_tokens: u32,
    pub chat_template_kwargs: ChatTemplateKwargs,
}

impl WireRequest {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

pub fn build_request(config: &RoleConfig, messages: &[Message]) -> WireRequest {
    WireRequest {
        model: config.model_name.clone(),
        messages: messages
            .iter()
            .map(|m| WireMessage {
                role: m.speaker.as_str().to_string(),
                content: m.text.clone(),
            })
            .collect(),
        temperature: GREEDY_TEMPERATURE,
        max_tokens: config.max_output_tokens,
        chat_template_kwargs: ChatTemplateKwargs {
            enable_thinking: config.thinking_enabled,
        },
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Extracts `choices[0].message.content` and usage from a response body.
///
/// A `null` or missing content field yields an empty string; the caller
/// decides whether that is an error.
pub fn parse_response(body: &str) -> Result<(String, Usage), String> {
    let parsed: WireResponse = serde_json::from_str(body).map_err(|e| format!("invalid response body: {e}"))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "response has no choices".to_string())?;
    let usage = parsed
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok((choice.message.content.unwrap_or_default(), usage))
}

/// Renders a minimal, well-formed response body. Used by scripted endpoints.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "id": "chatcmpl-scripted",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0}
    })
    .to_string()
}
