//! Completion backends shared by test generation and policy sampling.
//!
//! Two implementations sit behind [`CompletionBackend`]: a chat-style HTTP
//! JSON client and a file-backed stub keyed by instruction id.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    /// Instruction id; used by the stub backend as its lookup key.
    pub key: &'a str,
    /// Index of the first completion asked for, counted across calls for `key`.
    pub index: usize,
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n: usize,
    pub seed: Option<u64>,
}

pub trait CompletionBackend: Send + Sync {
    /// Return up to `req.n` completions. Fewer is a shortfall, not an error.
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    HttpEndpoint {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding a bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_http_timeout")]
        timeout_secs: u64,
    },
    FileStub {
        path: PathBuf,
    },
}

fn default_http_timeout() -> u64 {
    120
}

/// Which list field a stub file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubField {
    Responses,
    Completions,
}

impl BackendConfig {
    /// Stub paths are used as given; [`crate::config::RunConfig`] resolves them on load.
    pub fn build(&self, field: StubField) -> Result<Arc<dyn CompletionBackend>> {
        match self {
            BackendConfig::HttpEndpoint {
                endpoint,
                model,
                api_key_env,
                timeout_secs,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(format!("credential variable `{var}` is not set"))
                    })?),
                    None => None,
                };
                Ok(Arc::new(HttpChatBackend::new(
                    endpoint.clone(),
                    model.clone(),
                    api_key,
                    Duration::from_secs(*timeout_secs),
                )?))
            }
            BackendConfig::FileStub { path } => Ok(Arc::new(StubBackend::load(path, field)?)),
        }
    }
}

#[derive(Debug, Deserialize)]
struct StubLine {
    instruction_id: String,
    #[serde(default)]
    responses: Option<Vec<String>>,
    #[serde(default)]
    completions: Option<Vec<String>>,
}

/// Canned completions keyed by instruction id.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    entries: HashMap<String, Vec<String>>,
}

impl StubBackend {
    pub fn load(path: &Path, field: StubField) -> Result<Self> {
        let lines: Vec<StubLine> = read_jsonl(path)?;
        let mut entries = HashMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            let list = match field {
                StubField::Responses => line.responses,
                StubField::Completions => line.completions,
            };
            let Some(list) = list else {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("missing `{}` list", field.key()),
                });
            };
            entries
                .entry(line.instruction_id)
                .or_insert_with(Vec::new)
                .extend(list);
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }
}

impl StubField {
    fn key(self) -> &'static str {
        match self {
            StubField::Responses => "responses",
            StubField::Completions => "completions",
        }
    }
}

impl CompletionBackend for StubBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>> {
        let list = self
            .entries
            .get(req.key)
            .ok_or_else(|| Error::StubMiss(req.key.to_string()))?;
        Ok(list.iter().skip(req.index).take(req.n).cloned().collect())
    }
}

pub const HTTP_ATTEMPTS: usize = 3;

/// OpenAI-compatible chat-completions client.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry_base_delay: Duration,
}

impl HttpChatBackend {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            endpoint,
            model,
            api_key,
            retry_base_delay: Duration::from_millis(500),
        })
    }

    pub fn with_retry_base_delay(mut self, delay: Duration) -> Self {
        self.retry_base_delay = delay;
        self
    }

    fn request_body(&self, req: &CompletionRequest<'_>) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if req.n > 1 {
            body["n"] = json!(req.n);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<Vec<String>, Attempt> {
        let mut builder = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Transient(format!("http status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("http status {status}")));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| Attempt::Fatal(format!("response is not JSON: {e}")))?;
        let choices = value["choices"]
            .as_array()
            .ok_or_else(|| Attempt::Fatal("response has no `choices` array".into()))?;
        Ok(choices
            .iter()
            .filter_map(|c| {
                c["message"]["content"]
                    .as_str()
                    .or_else(|| c["text"].as_str())
                    .map(str::to_string)
            })
            .collect())
    }
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

impl CompletionBackend for HttpChatBackend {
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<String>> {
        let body = self.request_body(req);
        let mut delay = self.retry_base_delay;
        let mut last = String::new();
        for attempt in 1..=HTTP_ATTEMPTS {
            match self.attempt(&body) {
                Ok(mut texts) => {
                    texts.truncate(req.n);
                    return Ok(texts);
                }
                Err(Attempt::Fatal(message)) => {
                    return Err(Error::BackendUnavailable {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Attempt::Transient(message)) => {
                    warn!(attempt, %message, "completion request failed");
                    last = message;
                    if attempt < HTTP_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::BackendUnavailable {
            attempts: HTTP_ATTEMPTS,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Serve `responses` in order, one per connection; record request bodies.
    fn serve(
        responses: Vec<(u16, String)>,
    ) -> (String, Arc<std::sync::Mutex<Vec<String>>>, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
        let hits = Arc::new(AtomicUsize::new(0));
        let (b, h) = (bodies.clone(), hits.clone());
        std::thread::spawn(move || {
            for (status, payload) in responses {
                let Ok((mut stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                b.lock().unwrap().push(String::from_utf8(body).unwrap());
                h.fetch_add(1, Ordering::SeqCst);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), bodies, hits)
    }

    fn request<'a>(prompt: &'a str, n: usize) -> CompletionRequest<'a> {
        CompletionRequest {
            key: "q1",
            index: 0,
            prompt,
            temperature: 0.0,
            max_tokens: 4096,
            n,
            seed: None,
        }
    }

    #[test]
    fn http_sends_single_user_message_and_reads_choices() {
        let payload = r#"{"choices":[{"message":{"role":"assistant","content":"first"}},{"message":{"content":"second"}}]}"#;
        let (url, bodies, _) = serve(vec![(200, payload.to_string())]);
        let backend = HttpChatBackend::new(
            url,
            "gpt-4-1106".into(),
            Some("k".into()),
            Duration::from_secs(5),
        )
        .unwrap();
        let out = backend.complete(&request("hello", 2)).unwrap();
        assert_eq!(out, ["first", "second"]);
        let sent: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(
            sent["messages"],
            json!([{"role": "user", "content": "hello"}])
        );
        assert_eq!(sent["temperature"], json!(0.0));
        assert_eq!(sent["max_tokens"], json!(4096));
        assert_eq!(sent["n"], json!(2));
        assert_eq!(sent["model"], json!("gpt-4-1106"));
    }

    #[test]
    fn http_retries_transient_failures() {
        let ok = r#"{"choices":[{"message":{"content":"done"}}]}"#.to_string();
        let (url, _, hits) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok)]);
        let backend = HttpChatBackend::new(url, "m".into(), None, Duration::from_secs(5))
            .unwrap()
            .with_retry_base_delay(Duration::from_millis(1));
        assert_eq!(backend.complete(&request("p", 1)).unwrap(), ["done"]);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn http_gives_up_after_bounded_retries() {
        let (url, _, hits) = serve(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
        ]);
        let backend = HttpChatBackend::new(url, "m".into(), None, Duration::from_secs(5))
            .unwrap()
            .with_retry_base_delay(Duration::from_millis(1));
        let err = backend.complete(&request("p", 1)).unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { attempts: 3, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn http_client_errors_are_not_retried() {
        let (url, _, hits) = serve(vec![(400, "{}".into())]);
        let backend = HttpChatBackend::new(url, "m".into(), None, Duration::from_secs(5)).unwrap();
        assert!(matches!(
            backend.complete(&request("p", 1)),
            Err(Error::BackendUnavailable { attempts: 1, .. })
        ));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn stub_serves_by_index_and_reports_misses() {
        let stub = StubBackend::from_entries([(
            "q1".to_string(),
            vec!["a".into(), "b".into(), "c".into()],
        )]);
        let mut req = request("p", 2);
        assert_eq!(stub.complete(&req).unwrap(), ["a", "b"]);
        req.index = 2;
        assert_eq!(stub.complete(&req).unwrap(), ["c"]);
        req.key = "nope";
        assert!(matches!(stub.complete(&req), Err(Error::StubMiss(_))));
    }

    #[test]
    fn stub_file_field_must_match() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"instruction_id":"q1","completions":["x"]}}"#).unwrap();
        assert!(StubBackend::load(f.path(), StubField::Completions).is_ok());
        assert!(StubBackend::load(f.path(), StubField::Responses).is_err());
    }
}
