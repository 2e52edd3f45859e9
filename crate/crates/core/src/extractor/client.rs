use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{build_prompt, ExtractionResult};
use crate::error::{Error, Result};
use crate::remote::{EndpointConfig, JsonEndpoint};

/// A completed chat request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub correlation_id: String,
    pub attempts: u32,
}

/// Anything that turns a prompt into a model response.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion>;

    /// Stable description of the model configuration, used in cache keys.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub model: String,
    pub temperature: f64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig::default(),
            model: "llama-2-7b-chat".into(),
            temperature: 0.0,
        }
    }
}

/// Client for OpenAI-style `chat/completions` endpoints.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: JsonEndpoint,
    model: String,
    temperature: f64,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self> {
        Ok(Self {
            endpoint: JsonEndpoint::new(config.endpoint)?,
            model: config.model,
            temperature: config.temperature,
        })
    }

    fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

impl LlmClient for ChatClient {
    fn complete(&self, prompt: &str) -> Result<Completion> {
        let reply = self.endpoint.post(&self.request_body(prompt))?;
        let choice = &reply.body["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .ok_or_else(|| Error::Remote {
                status: 200,
                message: format!("no completion text in response: {}", reply.body),
            })?;
        Ok(Completion {
            text: text.to_string(),
            correlation_id: reply.correlation_id,
            attempts: reply.attempts,
        })
    }

    fn fingerprint(&self) -> String {
        format!(
            "chat:{}:{}:{}",
            self.endpoint.config().url(),
            self.model,
            self.temperature
        )
    }
}

/// Sends the extraction prompt for `text` and parses whatever comes back.
/// Garbage responses are not errors; they surface as malformed spans.
pub fn extract_remote(text: &str, client: &dyn LlmClient) -> Result<ExtractionResult> {
    let prompt = build_prompt(text)?;
    let completion = client.complete(&prompt)?;
    log::debug!(
        "{}: extraction answered after {} attempt(s)",
        completion.correlation_id,
        completion.attempts
    );
    Ok(ExtractionResult::from_raw(completion.text))
}
