//! Helpers shared by the integration tests: a background HTTP server, a mock
//! OpenAI-compatible LLM and a small blocking client.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

/// A router served on an ephemeral local port until dropped.
pub struct Server {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    pub fn start(router: Router) -> Server {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        Server {
            addr: addr_rx.recv().unwrap(),
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

/// Status and JSON body of a GET.
pub fn get_json(url: &str) -> (u16, Value, Option<String>) {
    let mut resp = agent().get(url).header("Origin", "http://example.test").call().unwrap();
    let cors = resp
        .headers()
        .get("access-control-allow-origin")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&body).unwrap_or(Value::Null), cors)
}

/// Status and raw body of a JSON POST.
pub fn post_raw(url: &str, body: &str) -> (u16, String) {
    let mut resp = agent()
        .post(url)
        .header("Content-Type", "application/json")
        .send(body)
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().unwrap())
}

pub fn post_json(url: &str, body: &Value) -> (u16, Value) {
    let (status, text) = post_raw(url, &body.to_string());
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

/// Counts calls to the mock LLM.
#[derive(Clone, Default)]
pub struct MockStats {
    pub chat: Arc<AtomicUsize>,
    pub embed: Arc<AtomicUsize>,
}

impl MockStats {
    pub fn chat_calls(&self) -> usize {
        self.chat.load(Ordering::SeqCst)
    }
}

fn last_number(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .last()
        .map(str::to_string)
}

/// Deterministic stand-in for a chat model. It truncates the user text and,
/// when asked for an answer, appends one in the requested format.
pub fn mock_reply(system: &str, user: &str, choice: usize) -> String {
    let words: Vec<&str> = user.split_whitespace().collect();
    let limit = system
        .split("at most ")
        .nth(1)
        .and_then(|rest| rest.split(' ').next())
        .and_then(|n| n.parse::<usize>().ok());
    let keep = match limit {
        Some(n) => n.saturating_sub(choice).max(1),
        None => words.len().div_ceil(2).max(1),
    };
    let mut out = words.iter().take(keep).copied().collect::<Vec<_>>().join(" ");
    if system.contains("####") {
        out.push_str(&format!(" #### {}", last_number(user).unwrap_or_else(|| "0".into())));
    } else if system.contains("True or False") {
        out.push_str(if words.len() % 2 == 0 { " True" } else { " False" });
    } else if system.contains("(A)") {
        out.push_str(" (A)");
    }
    out
}

async fn chat(State(stats): State<MockStats>, Json(body): Json<Value>) -> Json<Value> {
    stats.chat.fetch_add(1, Ordering::SeqCst);
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let find = |role: &str| {
        messages
            .iter()
            .rev()
            .find(|m| m["role"] == role)
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_string()
    };
    let (system, user) = (find("system"), find("user"));
    let n = body["n"].as_u64().unwrap_or(1) as usize;
    let choices: Vec<Value> = (0..n)
        .map(|i| json!({"index": i, "message": {"role": "assistant", "content": mock_reply(&system, &user, i)}}))
        .collect();
    Json(json!({"choices": choices}))
}

/// Bag-of-hashed-words vector, so equal texts embed equally.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 16];
    for w in text.split_whitespace() {
        let h = w.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
        v[(h % 16) as usize] += 1.0;
    }
    v
}

async fn embeddings(State(stats): State<MockStats>, Json(body): Json<Value>) -> Json<Value> {
    stats.embed.fetch_add(1, Ordering::SeqCst);
    let inputs: Vec<String> = match &body["input"] {
        Value::Array(a) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        Value::String(s) => vec![s.clone()],
        _ => Vec::new(),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": mock_embedding(t)}))
        .collect();
    Json(json!({"data": data}))
}

async fn models() -> Json<Value> {
    Json(json!({"data": [{"id": "mock"}]}))
}

pub fn mock_llm(stats: MockStats) -> Router {
    Router::new()
        .route("/models", get(models))
        .route("/chat/completions", post(chat))
        .route("/embeddings", post(embeddings))
        .with_state(stats)
}

/// An endpoint whose completion calls always fail with `status`.
pub fn failing_llm(status: u16) -> Router {
    let code = StatusCode::from_u16(status).unwrap();
    Router::new()
        .route("/models", get(models))
        .route("/completions", post(move || async move { (code, "upstream down") }))
        .route("/chat/completions", post(move || async move { (code, "upstream down") }))
}

/// Service with the given config on an ephemeral port.
pub fn start_service(config: &pct_cli::settings::ServiceConfig) -> Server {
    let compressor = config.build_compressor().unwrap();
    Server::start(pct_cli::service::router(compressor, &config.origins))
}
