//! HTTP chat-completion backend.
//!
//! Speaks the widely adopted chat wire shape: POST a JSON body with
//! `model`, `messages` (system + user), `temperature`, and `max_tokens`;
//! read the reply from `choices[0].message.content`. The bearer credential
//! comes from an environment variable named in the backend configuration,
//! read once at construction so a missing credential fails fast instead of
//! on the first call from a worker thread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::template::RenderedPrompt;
use super::{Backend, BackendConfig, BackendError, CompletionRequest};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Blocking chat-completion client.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    credential: String,
    http: reqwest::blocking::Client,
}

// Hand-written so the credential can never leak into logs or panics.
impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("credential", &"<redacted>")
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("http backend requires an endpoint URL".into()));
        }
        if config.model.is_empty() {
            return Err(Error::Config("http backend requires a model name".into()));
        }
        let credential = std::env::var(&config.credential_env).map_err(|_| {
            Error::Config(format!(
                "credential environment variable '{}' is not set",
                config.credential_env
            ))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("building http client: {e}")))?;
        Ok(HttpBackend {
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            credential,
            http,
        })
    }
}

impl Backend for HttpBackend {
    fn execute(
        &self,
        prompt: &RenderedPrompt,
        request: &CompletionRequest,
    ) -> std::result::Result<String, BackendError> {
        let body = WireRequest {
            model: &self.model,
            messages: vec![
                WireMessage { role: "system", content: &prompt.system },
                WireMessage { role: "user", content: &prompt.user },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };

        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.credential)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(format!("request failed: {e}")))?;

        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Permanent(format!("HTTP {status}")));
        }

        let parsed: WireResponse = response
            .json()
            .map_err(|e| BackendError::Permanent(format!("malformed response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Permanent("response contained no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendKind, Client, TemplateStore};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Minimal one-thread HTTP server that answers each connection with the
    /// next scripted status, capturing request headers and bodies.
    fn spawn_server(
        statuses: Vec<u16>,
    ) -> (String, mpsc::Receiver<(String, String)>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            for status in statuses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut headers = String::new();
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    headers.push_str(&line);
                }
                let mut body = vec![0u8; content_length];
                reader.read_exact(&mut body).unwrap();
                tx.send((headers, String::from_utf8(body).unwrap())).unwrap();

                let payload = if status == 200 {
                    r#"{"choices":[{"message":{"content":"server says hi"}}]}"#
                } else {
                    r#"{"error":"scripted failure"}"#
                };
                let reason = if status == 200 { "OK" } else { "Error" };
                let reply = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let mut stream = reader.into_inner();
                stream.write_all(reply.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), rx, handle)
    }

    fn client_for(endpoint: &str, env_name: &str, max_retries: u32) -> Client {
        std::env::set_var(env_name, "secret-token");
        let config = BackendConfig {
            kind: BackendKind::HttpChat,
            endpoint: endpoint.to_string(),
            model: "test-model".into(),
            credential_env: env_name.into(),
            max_retries,
            backoff_base_ms: 1,
            backoff_jitter: false,
            ..BackendConfig::default()
        };
        Client::new(config, TemplateStore::builtin()).unwrap()
    }

    fn judge_request() -> CompletionRequest {
        CompletionRequest::new("judge")
            .var("reference", "a dog runs")
            .var("predicted", "a dog walks")
            .deterministic()
    }

    #[test]
    fn missing_credential_fails_at_construction() {
        let config = BackendConfig {
            kind: BackendKind::HttpChat,
            endpoint: "http://127.0.0.1:1/x".into(),
            model: "m".into(),
            credential_env: "RCC_TEST_UNSET_CREDENTIAL".into(),
            ..BackendConfig::default()
        };
        let err = HttpBackend::new(&config).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("RCC_TEST_UNSET_CREDENTIAL"), "{err}");
    }

    #[test]
    fn success_sends_bearer_auth_and_wire_shape() {
        let (endpoint, rx, handle) = spawn_server(vec![200]);
        let client = client_for(&endpoint, "RCC_TEST_KEY_WIRE", 0);
        let reply = client.complete(&judge_request()).unwrap();
        assert_eq!(reply, "server says hi");

        let (headers, body) = rx.recv().unwrap();
        assert!(
            headers.to_lowercase().contains("authorization: bearer secret-token"),
            "{headers}"
        );
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(parsed["model"], "test-model");
        assert_eq!(parsed["temperature"], 0.0);
        assert_eq!(parsed["messages"][0]["role"], "system");
        assert_eq!(parsed["messages"][1]["role"], "user");
        assert!(
            parsed["messages"][1]["content"].as_str().unwrap().contains("a dog walks"),
            "user message lost the rendered prompt"
        );
        handle.join().unwrap();
    }

    #[test]
    fn server_errors_are_retried_until_success() {
        let (endpoint, rx, handle) = spawn_server(vec![500, 503, 200]);
        let client = client_for(&endpoint, "RCC_TEST_KEY_RETRY", 3);
        let reply = client.complete(&judge_request()).unwrap();
        assert_eq!(reply, "server says hi");
        assert_eq!(rx.iter().count(), 3, "expected exactly three attempts");
        handle.join().unwrap();
    }

    #[test]
    fn client_errors_fail_immediately() {
        let (endpoint, rx, handle) = spawn_server(vec![400]);
        let client = client_for(&endpoint, "RCC_TEST_KEY_4XX", 3);
        let err = client.complete(&judge_request()).unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err}");
        assert!(err.to_string().contains("400"), "{err}");
        assert_eq!(rx.iter().count(), 1, "a 400 must not be retried");
        handle.join().unwrap();
    }

    #[test]
    fn connection_refused_counts_as_transient() {
        // Bind then drop a listener to get a port nothing is listening on.
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let client = client_for(
            &format!("http://127.0.0.1:{port}/v1/chat/completions"),
            "RCC_TEST_KEY_REFUSED",
            1,
        );
        let err = client.complete(&judge_request()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 attempts"), "{msg}");
    }
}
