//! Oracle backed by an OpenAI-compatible chat-completions endpoint.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use probtab_core::oracle::{Completion, Oracle, OracleRequest, TransportError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Set to a non-empty value to refuse all network access.
pub const OFFLINE_ENV: &str = "PROBTAB_OFFLINE";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum HttpSetupError {
    #[error("network access is disabled ({OFFLINE_ENV} is set)")]
    Offline,
    #[error("environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("could not build HTTP client: {0}")]
    Client(#[from] reqwest::Error),
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: DEFAULT_MODEL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(60),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

pub fn offline() -> bool {
    std::env::var_os(OFFLINE_ENV).is_some_and(|v| !v.is_empty())
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpOracle {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: String,
    slots: Slots,
}

impl HttpOracle {
    pub fn new(config: HttpConfig) -> Result<Self, HttpSetupError> {
        if offline() {
            return Err(HttpSetupError::Offline);
        }
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| HttpSetupError::MissingApiKey(config.api_key_env.clone()))?;
        Self::with_key(config, api_key)
    }

    /// Skips the environment lookup; used against local test servers.
    pub fn with_key(config: HttpConfig, api_key: String) -> Result<Self, HttpSetupError> {
        let client = reqwest::blocking::Client::builder().timeout(config.timeout).build()?;
        let slots = Slots::new(config.max_in_flight);
        Ok(HttpOracle {
            client,
            config,
            api_key,
            slots,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }
}

fn status_error(status: reqwest::StatusCode, body: &str) -> TransportError {
    let snippet: String = body.chars().take(200).collect();
    let message = format!("HTTP {status}: {snippet}");
    if status.as_u16() == 429 || status.is_server_error() {
        TransportError::retryable(message)
    } else {
        TransportError::fatal(message)
    }
}

impl Oracle for HttpOracle {
    fn complete(&self, request: &OracleRequest<'_>) -> Result<Completion, TransportError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: request
                .messages
                .iter()
                .map(|m| ChatMessage {
                    role: m.role.as_str(),
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
        };
        let _permit = self.slots.acquire();
        let started = Instant::now();
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                // Connection and timeout failures are worth another try.
                if e.is_timeout() || e.is_connect() || e.is_request() {
                    TransportError::retryable(e.to_string())
                } else {
                    TransportError::fatal(e.to_string())
                }
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| TransportError::retryable(e.to_string()))?;
        if !status.is_success() {
            return Err(status_error(status, &text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::retryable(format!("malformed completion body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::retryable("completion has no message content"))?;
        Ok(Completion {
            text: content,
            latency: started.elapsed(),
        })
    }

    fn backoff(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use probtab_core::oracle::Message;
    use probtab_core::prompt::PromptKind;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned response per connection, returning the request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
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
                        auth = line.trim_end().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((auth, String::from_utf8(buf).unwrap())).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, rx)
    }

    fn oracle(url: String) -> HttpOracle {
        let config = HttpConfig {
            endpoint: url,
            model: "test-model".into(),
            timeout: Duration::from_secs(5),
            ..HttpConfig::default()
        };
        HttpOracle::with_key(config, "sk-test".into()).unwrap()
    }

    fn request(messages: &[Message]) -> OracleRequest<'_> {
        OracleRequest {
            kind: PromptKind::Distribution,
            feature: Some("Age Group"),
            context: "",
            requested_rows: None,
            messages,
            temperature: 0.0,
            attempt: 1,
        }
    }

    #[test]
    fn posts_chat_request_and_reads_content() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"{\"A\": 1}"}}]}"#;
        let (url, rx) = serve(vec![(200, reply.into())]);
        let oracle = oracle(url);
        let messages = [Message::user("hello")];
        let done = oracle.complete(&request(&messages)).unwrap();
        assert_eq!(done.text, r#"{"A": 1}"#);
        let (auth, body) = rx.recv().unwrap();
        assert_eq!(auth.to_ascii_lowercase(), "authorization: bearer sk-test");
        let sent: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn status_codes_map_to_retryability() {
        let (url, _rx) = serve(vec![
            (429, "{}".into()),
            (503, "{}".into()),
            (401, r#"{"error":"bad key"}"#.into()),
            (200, "not json".into()),
        ]);
        let oracle = oracle(url);
        let messages = [Message::user("x")];
        let results: Vec<_> = (0..4)
            .map(|_| oracle.complete(&request(&messages)).unwrap_err())
            .collect();
        assert!(results[0].retryable);
        assert!(results[1].retryable);
        assert!(!results[2].retryable);
        assert!(results[2].message.contains("401"));
        assert!(results[3].retryable);
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let slots = Slots::new(2);
        let busy = Mutex::new((0usize, 0usize));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = slots.acquire();
                    {
                        let mut b = busy.lock().unwrap();
                        b.0 += 1;
                        b.1 = b.1.max(b.0);
                    }
                    std::thread::sleep(Duration::from_millis(5));
                    busy.lock().unwrap().0 -= 1;
                });
            }
        });
        let (now, peak) = *busy.lock().unwrap();
        assert_eq!(now, 0);
        assert!(peak <= 2 && peak >= 1);
    }
}
