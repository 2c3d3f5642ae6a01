//! Scripted chat-completions endpoint.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::Router;
use serde_json::{json, Value};
use tokio::runtime::Runtime;

use crate::server::{runtime, serve};

#[derive(Debug, Clone)]
pub struct StubReply {
    pub status: u16,
    /// Completion text for 200 replies, raw body otherwise.
    pub content: String,
    pub delay: Duration,
}

impl StubReply {
    pub fn ok(content: impl Into<String>) -> Self {
        Self {
            status: 200,
            content: content.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            content: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RecordedCall {
    pub authorization: Option<String>,
    pub body: Value,
}

struct Shared {
    script: Vec<StubReply>,
    calls: Mutex<Vec<RecordedCall>>,
}

/// Replies follow the script in order; the last entry repeats.
pub struct LlmStub {
    url: String,
    shared: Arc<Shared>,
    rt: Option<Runtime>,
}

impl LlmStub {
    pub fn start(script: Vec<StubReply>) -> Self {
        assert!(!script.is_empty(), "stub needs at least one reply");
        let rt = runtime();
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let shared = Arc::new(Shared {
            script,
            calls: Mutex::new(Vec::new()),
        });
        let app = Router::new().fallback(handle).with_state(shared.clone());
        serve(&rt, listener, app);
        LlmStub {
            url,
            shared,
            rt: Some(rt),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.shared.calls.lock().unwrap().clone()
    }
}

impl Drop for LlmStub {
    fn drop(&mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

async fn handle(State(s): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> impl IntoResponse {
    let index = {
        let mut calls = s.calls.lock().unwrap();
        calls.push(RecordedCall {
            authorization: headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_owned),
            body: serde_json::from_slice(&body).unwrap_or(Value::Null),
        });
        calls.len() - 1
    };
    let reply = s.script[index.min(s.script.len() - 1)].clone();
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap();
    let body = if reply.status == 200 {
        json!({
            "id": format!("cmpl-{index}"),
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": reply.content}, "finish_reason": "stop"}],
        })
        .to_string()
    } else {
        reply.content
    };
    (status, [("content-type", "application/json")], body)
}
