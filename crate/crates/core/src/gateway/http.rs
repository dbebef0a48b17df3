//! OpenAI-compatible chat-completions client with bounded retries.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;
use tracing::warn;

use super::{Backend, ChatRequest, ChatResponse, GatewayError, API_KEY_ENV};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub path: String,
    pub api_key: String,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            path: "/chat/completions".into(),
            api_key: api_key.into(),
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the bearer token from `COGDEBIAS_API_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, GatewayError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(HttpConfig::new(base_url, key)),
            _ => Err(GatewayError::MissingApiKey(API_KEY_ENV)),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct OpenAiBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    id: String,
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fail(GatewayError),
}

impl OpenAiBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let id = format!("http:{}", config.base_url);
        OpenAiBackend { config, agent, id }
    }

    fn attempt(&self, body: &serde_json::Value, attempt: u32) -> Attempt {
        let result = self
            .agent
            .post(&self.config.endpoint())
            .set("Authorization", &format!("Bearer {}", self.config.api_key))
            .set("Content-Type", "application/json")
            .send_json(body.clone());
        match result {
            Ok(resp) => {
                let text = match resp.into_string() {
                    Ok(t) => t,
                    Err(e) => {
                        return Attempt::Retry(GatewayError::Transport { attempts: attempt, message: e.to_string() })
                    }
                };
                match serde_json::from_str::<WireResponse>(&text) {
                    Ok(wire) => match wire.choices.into_iter().next() {
                        // null or missing content is a refusal, surfaced as empty text
                        Some(choice) => Attempt::Done(choice.message.content.unwrap_or_default()),
                        None => Attempt::Fail(GatewayError::MalformedUpstream("response has no choices".into())),
                    },
                    Err(e) => Attempt::Fail(GatewayError::MalformedUpstream(e.to_string())),
                }
            }
            Err(ureq::Error::Status(429, _)) => Attempt::Retry(GatewayError::RateLimited { attempts: attempt }),
            Err(ureq::Error::Status(code, resp)) if code >= 500 => Attempt::Retry(GatewayError::Transport {
                attempts: attempt,
                message: format!("HTTP {code}: {}", resp.into_string().unwrap_or_default()),
            }),
            Err(ureq::Error::Status(code, resp)) => Attempt::Fail(GatewayError::Transport {
                attempts: attempt,
                message: format!("HTTP {code}: {}", resp.into_string().unwrap_or_default()),
            }),
            Err(ureq::Error::Transport(t)) => {
                Attempt::Retry(GatewayError::Transport { attempts: attempt, message: t.to_string() })
            }
        }
    }
}

impl Backend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let started = Instant::now();
        let max_attempts = self.config.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt) {
                Attempt::Done(content) => {
                    return Ok(ChatResponse {
                        content,
                        backend_id: self.id.clone(),
                        cached: false,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= max_attempts => return Err(e),
                Attempt::Retry(e) => {
                    let wait = self.config.base_backoff * 2u32.saturating_pow(attempt - 1);
                    warn!(attempt, error = %e, "retrying chat completion in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves canned (status, body) pairs in order, then repeats the last one.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, Arc<std::sync::Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = h.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                b.lock().unwrap().push(format!("{auth}\n{}", String::from_utf8_lossy(&body)));
                let (status, reply) = &replies[n.min(replies.len() - 1)];
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits, bodies)
    }

    fn backend(url: &str) -> OpenAiBackend {
        let mut cfg = HttpConfig::new(url, "sk-test");
        cfg.base_backoff = Duration::from_millis(1);
        OpenAiBackend::new(cfg)
    }

    fn ok_body(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn req() -> ChatRequest {
        ChatRequest::new("gpt-4o", vec![ChatMessage::user("Which option?")])
    }

    #[test]
    fn posts_wire_payload_and_reads_first_choice() {
        let (url, hits, bodies) = serve(vec![(200, ok_body("Answer: Option B"))]);
        let resp = backend(&url).complete(&req()).unwrap();
        assert_eq!(resp.content, "Answer: Option B");
        assert!(!resp.cached);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        let sent = bodies.lock().unwrap()[0].clone();
        assert!(sent.starts_with("Authorization: Bearer sk-test"));
        let payload: serde_json::Value = serde_json::from_str(sent.lines().nth(1).unwrap()).unwrap();
        assert_eq!(payload["model"], "gpt-4o");
        assert_eq!(payload["messages"][0]["role"], "user");
        assert_eq!(payload["temperature"], 0.0);
        assert_eq!(payload["max_tokens"], 512);
        assert!(payload.get("purpose").is_none());
    }

    #[test]
    fn rate_limit_is_retried_then_succeeds() {
        let (url, hits, _) = serve(vec![(429, "{}".into()), (200, ok_body("ok"))]);
        assert_eq!(backend(&url).complete(&req()).unwrap().content, "ok");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn retries_are_bounded() {
        let (url, hits, _) = serve(vec![(429, "{}".into())]);
        let err = backend(&url).complete(&req()).unwrap_err();
        assert!(matches!(err, GatewayError::RateLimited { attempts: 3 }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);

        let (url, hits, _) = serve(vec![(503, "down".into())]);
        let err = backend(&url).complete(&req()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_payload_is_not_retried() {
        let (url, hits, _) = serve(vec![(200, "{\"nope\": 1}".into())]);
        assert!(matches!(backend(&url).complete(&req()), Err(GatewayError::MalformedUpstream(_))));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn null_content_is_an_empty_refusal() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": null}, "finish_reason": "content_filter"}]});
        let (url, _, _) = serve(vec![(200, body.to_string())]);
        assert_eq!(backend(&url).complete(&req()).unwrap().content, "");
    }

    #[test]
    fn unreachable_host_is_a_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = backend(&format!("http://{addr}")).complete(&req()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
    }

    #[test]
    fn missing_api_key_names_the_variable() {
        std::env::remove_var(API_KEY_ENV);
        let err = HttpConfig::from_env("http://localhost").unwrap_err();
        assert!(err.to_string().contains("COGDEBIAS_API_KEY"));
    }
}
