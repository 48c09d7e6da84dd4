use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use super::{ChatClient, ChatRequest, TransportError};

pub const ENV_URL: &str = "BLOCKLOOP_LLM_URL";
pub const ENV_KEY: &str = "BLOCKLOOP_LLM_KEY";

/// Blocking JSON chat-completion client. One agent is shared by all
/// callers; ureq agents are safe to use from several threads at once.
pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    agent: Agent,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, key: Option<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            key,
            agent,
        }
    }

    /// Reads the endpoint from `BLOCKLOOP_LLM_URL` and the optional bearer
    /// token from `BLOCKLOOP_LLM_KEY`.
    pub fn from_env() -> Result<Self, TransportError> {
        let url = std::env::var(ENV_URL).map_err(|_| TransportError::Config(format!("{ENV_URL} is not set")))?;
        let key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(url, key, Duration::from_secs(120)))
    }
}

/// Pulls the assistant text out of the common response shapes.
fn extract_content(v: &Value) -> Option<&str> {
    v.pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/message/content"))
        .or_else(|| v.get("content"))
        .and_then(Value::as_str)
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(request)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status });
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        extract_content(&body)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Protocol(format!("no assistant message in {body}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn response_shapes() {
        let openai = json!({"choices": [{"message": {"role": "assistant", "content": "a"}}]});
        assert_eq!(extract_content(&openai), Some("a"));
        assert_eq!(extract_content(&json!({"message": {"content": "b"}})), Some("b"));
        assert_eq!(extract_content(&json!({"content": "c"})), Some("c"));
        assert_eq!(extract_content(&json!({"choices": []})), None);
    }
}
