//! Language-model backends: a chat-completion HTTP client, deterministic
//! mocks, and an offline stub for replay runs.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::PromptTemplate;
use super::{GroundingError, Result};
use crate::label;

pub const ENV_API_KEY: &str = "CARTIER_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "CARTIER_LLM_BASE_URL";
pub const ENV_MODEL: &str = "CARTIER_LLM_MODEL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_MAX_TOKENS: u32 = 128;

/// Sampling parameters. Temperature defaults to 0 and no stop sequences are
/// ever sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmParams {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GroundingError::InvalidParameter(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GroundingError::InvalidParameter("max_tokens must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GroundingError::InvalidParameter("model name is empty".into()));
        }
        Ok(())
    }
}

pub trait LlmBackend: Send + Sync {
    /// Where requests go, e.g. a base URL or `mock:oracle`.
    fn endpoint(&self) -> String;

    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String>;
}

/// What a [`MockBackend`] answers.
#[derive(Debug, Clone)]
pub enum MockStrategy {
    /// The first object listed in the prompt.
    FirstObject,
    /// The longest listed object whose words appear in the query, else the
    /// first object.
    Keyword,
    /// Per query text, the acceptable labels in preference order; answers
    /// the first one that is listed in the prompt. Unknown queries are a
    /// backend error.
    Oracle(HashMap<String, Vec<String>>),
    /// A verbatim response per query text. Unknown queries are a backend
    /// error.
    Scripted(HashMap<String, String>),
    /// The same response for every prompt.
    Fixed(String),
}

/// Deterministic offline backend. Prompts are decoded with `template`.
#[derive(Debug, Clone)]
pub struct MockBackend {
    strategy: MockStrategy,
    template: PromptTemplate,
}

impl MockBackend {
    pub fn new(strategy: MockStrategy) -> Self {
        Self { strategy, template: PromptTemplate::default() }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    fn decode<'a>(&self, prompt: &'a str) -> Result<(Vec<&'a str>, &'a str)> {
        let (objects, query) = self.template.extract(prompt).ok_or_else(|| {
            GroundingError::Backend(format!("mock backend cannot decode prompt with template {}", self.template.id()))
        })?;
        Ok((objects.split(", ").filter(|o| !o.is_empty()).collect(), query))
    }
}

impl LlmBackend for MockBackend {
    fn endpoint(&self) -> String {
        let name = match self.strategy {
            MockStrategy::FirstObject => "first-object",
            MockStrategy::Keyword => "keyword",
            MockStrategy::Oracle(_) => "oracle",
            MockStrategy::Scripted(_) => "scripted",
            MockStrategy::Fixed(_) => "fixed",
        };
        format!("mock:{name}")
    }

    fn complete(&self, prompt: &str, _params: &LlmParams) -> Result<String> {
        match &self.strategy {
            MockStrategy::Fixed(r) => Ok(r.clone()),
            MockStrategy::FirstObject => {
                let (objects, _) = self.decode(prompt)?;
                Ok(objects.first().copied().unwrap_or_default().to_string())
            }
            MockStrategy::Keyword => {
                let (objects, query) = self.decode(prompt)?;
                let q = format!(" {} ", label::normalize(query));
                let hit = objects
                    .iter()
                    .filter(|o| q.contains(&format!(" {} ", label::normalize(o))))
                    .max_by_key(|o| label::normalize(o).len());
                Ok(hit.or(objects.first()).copied().unwrap_or_default().to_string())
            }
            MockStrategy::Oracle(answers) => {
                let (objects, query) = self.decode(prompt)?;
                let wanted = answers
                    .get(query)
                    .ok_or_else(|| GroundingError::Backend(format!("oracle has no answer for query {query:?}")))?;
                let listed: Vec<String> = objects.iter().map(|o| label::normalize(o)).collect();
                let pick = wanted.iter().find_map(|w| {
                    let key = label::normalize(w);
                    listed.iter().position(|l| *l == key).map(|i| objects[i])
                });
                Ok(pick.or(wanted.first().map(String::as_str)).unwrap_or_default().to_string())
            }
            MockStrategy::Scripted(answers) => {
                let (_, query) = self.decode(prompt)?;
                answers
                    .get(query)
                    .cloned()
                    .ok_or_else(|| GroundingError::Backend(format!("no scripted response for query {query:?}")))
            }
        }
    }
}

/// Stands in for a real backend when every answer must come from the cache.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineBackend;

impl LlmBackend for OfflineBackend {
    fn endpoint(&self) -> String {
        "offline".into()
    }

    fn complete(&self, _prompt: &str, _params: &LlmParams) -> Result<String> {
        Err(GroundingError::Network("offline backend cannot contact a model".into()))
    }
}

/// Chat-completion client: `POST {base_url}/chat/completions` with a single
/// user message.
#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Result<Self> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(GroundingError::AuthFailure(format!("{ENV_API_KEY} is not set")));
        }
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, agent })
    }

    /// Reads the key and base URL from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Self::new(base, key, timeout)
    }
}

/// Model name from the environment, or the default.
pub fn model_from_env() -> String {
    std::env::var(ENV_MODEL).ok().filter(|m| !m.trim().is_empty()).unwrap_or_else(|| DEFAULT_MODEL.into())
}

impl LlmBackend for HttpBackend {
    fn endpoint(&self) -> String {
        self.base_url.clone()
    }

    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String> {
        let body = ChatRequest {
            model: &params.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut resp = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| GroundingError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(GroundingError::AuthFailure(format!("endpoint returned HTTP {status}"))),
            429 => {
                let retry_after = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|s| s.is_finite() && *s >= 0.0)
                    .map(Duration::from_secs_f64);
                return Err(GroundingError::RateLimited { retry_after });
            }
            500..=599 => return Err(GroundingError::Network(format!("endpoint returned HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(GroundingError::Backend(format!(
                    "HTTP {status}: {}",
                    text.chars().take(300).collect::<String>()
                )));
            }
        }
        let parsed: ChatResponse =
            resp.body_mut().read_json().map_err(|e| GroundingError::Backend(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GroundingError::Backend("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::build_prompt;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn prompt(vocab: &[&str], q: &str) -> String {
        build_prompt(&PromptTemplate::default(), vocab, q).unwrap()
    }

    #[test]
    fn params_default_to_zero_temperature() {
        let p = LlmParams::new("m");
        assert_eq!(p.temperature, 0.0);
        p.validate().unwrap();
        assert!(LlmParams { temperature: -0.1, ..p.clone() }.validate().is_err());
    }

    #[test]
    fn mock_strategies() {
        let params = LlmParams::new("m");
        let p = prompt(&["bed", "sofa", "coffee machine"], "I need a coffee machine");
        assert_eq!(MockBackend::new(MockStrategy::FirstObject).complete(&p, &params).unwrap(), "bed");
        assert_eq!(MockBackend::new(MockStrategy::Keyword).complete(&p, &params).unwrap(), "coffee machine");
        let scripted = MockBackend::new(MockStrategy::Scripted(HashMap::from([(
            "I need a coffee machine".to_string(),
            "the sofa".to_string(),
        )])));
        assert_eq!(scripted.complete(&p, &params).unwrap(), "the sofa");
        assert!(scripted.complete(&prompt(&["bed"], "other"), &params).is_err());
        let oracle = MockBackend::new(MockStrategy::Oracle(HashMap::from([(
            "I need a coffee machine".to_string(),
            vec!["kettle".to_string(), "Coffee_Machine".to_string()],
        )])));
        assert_eq!(oracle.complete(&p, &params).unwrap(), "coffee machine");
        assert!(MockBackend::new(MockStrategy::FirstObject).complete("free text", &params).is_err());
    }

    /// Serves one canned HTTP response and returns the request it saw.
    fn serve_once(status: &str, headers: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let reply =
            format!("HTTP/1.1 {status}\r\n{headers}Content-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn http_request_shape_and_reply() {
        let (url, h) = serve_once(
            "200 OK",
            "Content-Type: application/json\r\n",
            r#"{"choices":[{"message":{"role":"assistant","content":"bed"}}]}"#,
        );
        let b = HttpBackend::new(url, "k123", Duration::from_secs(5)).unwrap();
        assert_eq!(b.complete("hello", &LlmParams::new("gpt-x")).unwrap(), "bed");
        let req = h.join().unwrap();
        assert!(req.starts_with("POST /v1/chat/completions"));
        assert!(req.contains("Bearer k123"));
        let body: serde_json::Value = serde_json::from_str(req.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-x");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
        assert!(body.get("stop").is_none());
    }

    #[test]
    fn http_status_mapping() {
        type Case = (&'static str, &'static str, fn(&GroundingError) -> bool);
        let cases: [Case; 3] = [
            ("401 Unauthorized", "", |e| matches!(e, GroundingError::AuthFailure(_))),
            (
                "429 Too Many Requests",
                "Retry-After: 2\r\n",
                |e| matches!(e, GroundingError::RateLimited { retry_after: Some(d) } if *d == Duration::from_secs(2)),
            ),
            ("503 Service Unavailable", "", |e| matches!(e, GroundingError::Network(_))),
        ];
        for (status, headers, check) in cases {
            let (url, h) = serve_once(status, headers, "{}");
            let err = HttpBackend::new(url, "k", Duration::from_secs(5))
                .unwrap()
                .complete("p", &LlmParams::new("m"))
                .unwrap_err();
            h.join().unwrap();
            assert!(check(&err), "{status}: {err:?}");
        }
    }

    #[test]
    fn missing_key_is_auth_failure() {
        assert!(matches!(
            HttpBackend::new("http://localhost", "", Duration::from_secs(1)),
            Err(GroundingError::AuthFailure(_))
        ));
    }
}
