//! Chat-completion providers.
//!
//! [`OpenAiCompatible`] talks to any endpoint implementing the OpenAI chat
//! completions API. [`MockProvider`] answers from fixture files keyed by the
//! SHA-256 of the serialized prompt, so whole pipelines run offline and
//! deterministically.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::prompt::{PromptBundle, Role};

/// Sampling temperature for every request.
pub const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    MalformedResponse(String),
    #[error("no fixture for prompt sha256 {0}")]
    FixtureMissing(String),
    #[error("fixture file {path}: {message}")]
    Fixture { path: String, message: String },
}

pub trait ChatProvider: Send + Sync {
    /// Sends the whole prompt and returns the assistant text.
    fn complete(&self, prompt: &PromptBundle) -> Result<String, ProviderError>;

    fn model(&self) -> &str;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, ProviderError> {
        (**self).complete(prompt)
    }

    fn model(&self) -> &str {
        (**self).model()
    }
}

pub const ENV_BASE_URL: &str = "PF_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "PF_LLM_API_KEY";
pub const ENV_LLM_MODEL: &str = "PF_LLM_MODEL";
pub const ENV_MLLM_MODEL: &str = "PF_MLLM_MODEL";

pub struct OpenAiCompatible {
    base_url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl OpenAiCompatible {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into(),
            api_key,
            model: model.into(),
            agent,
        }
    }

    /// Reads `PF_LLM_BASE_URL`, `PF_LLM_API_KEY` and the given model variable.
    pub fn from_env(model_var: &str) -> Result<Self, ProviderError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let base = var(ENV_BASE_URL).ok_or_else(|| ProviderError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = var(model_var).ok_or_else(|| ProviderError::Config(format!("{model_var} is not set")))?;
        Ok(Self::new(base, var(ENV_API_KEY), model))
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Request body in the chat-completions wire format. Images travel as
    /// base64 data URLs.
    pub fn request_body(&self, prompt: &PromptBundle) -> Value {
        let messages: Vec<Value> = prompt
            .messages
            .iter()
            .map(|m| {
                let content = if m.attachments.is_empty() || m.role != Role::User {
                    Value::String(m.text.clone())
                } else {
                    let mut parts = vec![json!({"type": "text", "text": m.text})];
                    parts.extend(
                        m.attachments
                            .iter()
                            .map(|a| json!({"type": "image_url", "image_url": {"url": a.data_url()}})),
                    );
                    Value::Array(parts)
                };
                json!({"role": m.role.as_str(), "content": content})
            })
            .collect();
        json!({
            "model": self.model,
            "temperature": TEMPERATURE,
            "messages": messages,
        })
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl ChatProvider for OpenAiCompatible {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, ProviderError> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http { status, body });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::MalformedResponse("no choices[0].message.content".into()))
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Answers from canned responses keyed by prompt SHA-256.
#[derive(Debug, Default)]
pub struct MockProvider {
    fixtures: BTreeMap<String, String>,
    calls: Mutex<Vec<String>>,
}

impl MockProvider {
    pub fn new(fixtures: BTreeMap<String, String>) -> Self {
        Self {
            fixtures,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Loads and merges every `*.json` file in `dir`; each holds an object
    /// mapping prompt hashes to response strings.
    pub fn load_dir(dir: &Path) -> Result<Self, ProviderError> {
        let fixture_err = |path: &Path, message: String| ProviderError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| fixture_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        let mut fixtures = BTreeMap::new();
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(|e| fixture_err(&path, e.to_string()))?;
            let map: BTreeMap<String, String> =
                serde_json::from_str(&text).map_err(|e| fixture_err(&path, e.to_string()))?;
            fixtures.extend(map);
        }
        Ok(Self::new(fixtures))
    }

    /// Prompt hashes seen so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, ProviderError> {
        let hash = prompt.sha256();
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).push(hash.clone());
        self.fixtures
            .get(&hash)
            .cloned()
            .ok_or(ProviderError::FixtureMissing(hash))
    }

    fn model(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::prompt::{Attachment, Message};

    fn prompt() -> PromptBundle {
        let mut p = PromptBundle::default();
        p.push_component(1, "Role", Message::new(Role::System, "sys"));
        let mut m = Message::new(Role::User, "describe");
        m.attachments.push(Attachment::png("shot", vec![0xde, 0xad]));
        p.push_component(2, "Input", m);
        p
    }

    #[test]
    fn mock_answers_by_hash() {
        let p = prompt();
        let mock = MockProvider::new(BTreeMap::from([(p.sha256(), "ok".to_string())]));
        assert_eq!(mock.complete(&p).unwrap(), "ok");
        let other = p.with_followup("a", "b");
        assert!(matches!(mock.complete(&other), Err(ProviderError::FixtureMissing(_))));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn mock_loads_fixture_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), r#"{"h1": "one"}"#).unwrap();
        std::fs::write(dir.path().join("b.json"), r#"{"h2": "two"}"#).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mock = MockProvider::load_dir(dir.path()).unwrap();
        assert_eq!(mock.fixtures.len(), 2);
    }

    #[test]
    fn wire_format_and_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = Vec::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
                head.push(line);
            }
            let mut body = vec![0; content_length];
            reader.read_exact(&mut body).unwrap();
            let reply = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            (head, String::from_utf8(body).unwrap())
        });

        let provider = OpenAiCompatible::new(format!("http://{addr}/v1/"), Some("sk-test".into()), "m1");
        assert_eq!(provider.complete(&prompt()).unwrap(), "hello");
        let (head, body) = server.join().unwrap();
        assert!(head[0].starts_with("POST /v1/chat/completions"));
        assert!(head
            .iter()
            .any(|h| h.trim() == "authorization: Bearer sk-test" || h.trim() == "Authorization: Bearer sk-test"));
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "m1");
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(
            body["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,3q0="
        );
    }

    #[test]
    fn http_errors_surface_status() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            let _ = stream
                .write_all(b"HTTP/1.1 429 Too Many Requests\r\nContent-Length: 4\r\nConnection: close\r\n\r\nslow");
        });
        let provider = OpenAiCompatible::new(format!("http://{addr}"), None, "m");
        match provider.complete(&prompt()) {
            Err(ProviderError::Http { status, body }) => {
                assert_eq!(status, 429);
                assert_eq!(body, "slow");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
