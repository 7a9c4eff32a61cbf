//! OpenAI-compatible `/chat/completions` backend.

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Part, Usage};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: Option<&str>, api_key: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.unwrap_or(DEFAULT_BASE_URL).trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
        }
    }

    fn endpoint(&self) -> String {
        if self.base_url.ends_with("/chat/completions") {
            self.base_url.clone()
        } else {
            format!("{}/chat/completions", self.base_url)
        }
    }
}

/// Request body in the OpenAI chat format; images travel as base64 data URLs.
pub(crate) fn request_body(request: &ChatRequest) -> Result<Value, BackendError> {
    let mut content = Vec::new();
    for part in &request.user_parts {
        match part {
            Part::Text(t) => content.push(json!({"type": "text", "text": t})),
            Part::Image { path, media_type } => {
                let bytes = std::fs::read(path).map_err(|e| {
                    BackendError::Transport(format!("reading {}: {e}", path.display()))
                })?;
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                content.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{media_type};base64,{data}")}
                }));
            }
        }
    }
    Ok(json!({
        "model": request.model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": content},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }))
}

pub(crate) fn parse_completion(body: &Value) -> Result<ChatResponse, BackendError> {
    let text = body["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))?;
    let usage = Usage {
        input_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        output_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ChatResponse { text: text.to_string(), usage })
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = request_body(request)?;
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| BackendError::Transport(format!("bad response json: {e}")))?;
                parse_completion(&value)
            }
            401 | 403 => Err(BackendError::Auth(format!("HTTP {status}: {text}"))),
            _ => Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;
    use crate::gateway::StageTag;

    fn sample_request(dir: &std::path::Path) -> ChatRequest {
        let img = dir.join("fig.png");
        std::fs::write(&img, b"\x89PNG fake").unwrap();
        ChatRequest {
            model: "m1".into(),
            system: "be brief".into(),
            user_parts: vec![Part::text("hello"), Part::image(&img)],
            temperature: 0.2,
            max_output_tokens: 64,
            stage: StageTag::DagVisual,
        }
    }

    #[test]
    fn body_shape() {
        let dir = tempfile::tempdir().unwrap();
        let body = request_body(&sample_request(dir.path())).unwrap();
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"][0]["text"], "hello");
        let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        assert_eq!(body["max_tokens"], 64);
    }

    /// Serves one canned HTTP response and returns the raw request it received.
    fn one_shot_server(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut payload = vec![0; content_length];
            reader.read_exact(&mut payload).unwrap();
            let reply = format!(
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(payload).unwrap()
        });
        (addr, handle)
    }

    #[test]
    fn round_trip_against_local_server() {
        let (addr, handle) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"content":"hi there"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let backend = HttpBackend::new(Some(&addr), "secret");
        let response = backend.send(&sample_request(dir.path())).unwrap();
        assert_eq!(response.text, "hi there");
        assert_eq!(response.usage, Usage { input_tokens: 12, output_tokens: 3 });
        let raw = handle.join().unwrap();
        assert!(raw.starts_with("POST /chat/completions"));
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
    }

    #[test]
    fn unauthorized_maps_to_auth_error() {
        let (addr, handle) = one_shot_server("401 Unauthorized", r#"{"error":"nope"}"#);
        let dir = tempfile::tempdir().unwrap();
        let err = HttpBackend::new(Some(&addr), "bad").send(&sample_request(dir.path())).unwrap_err();
        assert!(matches!(err, BackendError::Auth(_)));
        handle.join().unwrap();
    }
}
