//! A minimal in-process HTTP server speaking the model-server protocol.
//!
//! It serves any [`ConditionalBackend`] (or a custom handler) on a loopback
//! port, which lets the remote client be exercised end to end without a
//! real model. Tokenization splits on whitespace and parses decimal ids.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use crate::backend::{ConditionalBackend, Query};
use crate::seq::TokenId;

/// A parsed request handed to a handler.
#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

/// Status code and JSON (or arbitrary) body.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn json(status: u16, value: &Value) -> Self {
        Self {
            status,
            body: value.to_string(),
        }
    }

    fn error(status: u16, msg: &str) -> Self {
        Self::json(status, &json!({ "error": msg }))
    }
}

type Handler = dyn Fn(&HttpRequest) -> HttpResponse + Send + Sync;

pub struct LoopbackServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Serves `backend` with the given per-request batch limit.
    pub fn serve<B: ConditionalBackend + 'static>(backend: B, max_batch: usize) -> io::Result<Self> {
        let backend = Arc::new(backend);
        Self::with_handler(move |req| backend_handler(backend.as_ref(), max_batch, req))
    }

    pub fn with_handler(handler: impl Fn(&HttpRequest) -> HttpResponse + Send + Sync + 'static) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU64::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (stop, count) = (shutdown.clone(), requests.clone());
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let count = count.clone();
                thread::spawn(move || {
                    let _ = handle_connection(stream, handler.as_ref(), &count);
                });
            }
        });
        Ok(Self {
            addr,
            shutdown,
            requests,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests served so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(stream: TcpStream, handler: &Handler, count: &AtomicU64) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" || header == "\n" {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    count.fetch_add(1, Ordering::SeqCst);
    let req = HttpRequest {
        method,
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let resp = handler(&req);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        resp.status,
        reason(resp.status),
        resp.body.len(),
        resp.body
    )?;
    stream.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        413 => "Payload Too Large",
        422 => "Unprocessable Entity",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

/// Implements `/v1/meta`, `/v1/tokenize` and `/v1/conditionals` on top of a
/// backend.
pub fn backend_handler<B: ConditionalBackend + ?Sized>(
    backend: &B,
    max_batch: usize,
    req: &HttpRequest,
) -> HttpResponse {
    let vocab = backend.vocab();
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/v1/meta") => HttpResponse::json(
            200,
            &json!({
                "vocab_size": vocab.len(),
                "mask_token_id": vocab.mask_id(),
                "special_token_ids": vocab.special_ids().iter().collect::<Vec<_>>(),
                "model_name": backend.name(),
            }),
        ),
        ("POST", "/v1/tokenize") => {
            let Ok(v) = serde_json::from_str::<Value>(&req.body) else {
                return HttpResponse::error(400, "malformed JSON");
            };
            let text = v.get("text").and_then(Value::as_str).unwrap_or_default();
            if text.trim().is_empty() {
                return HttpResponse::error(400, "empty text");
            }
            let ids: Option<Vec<TokenId>> = text.split_whitespace().map(|w| w.parse().ok()).collect();
            match ids {
                Some(ids) => HttpResponse::json(200, &json!({ "token_ids": ids })),
                None => HttpResponse::error(400, "unknown token"),
            }
        }
        ("POST", "/v1/conditionals") => {
            let Ok(v) = serde_json::from_str::<Value>(&req.body) else {
                return HttpResponse::error(400, "malformed JSON");
            };
            let Some(items) = v.get("queries").and_then(Value::as_array) else {
                return HttpResponse::error(400, "missing queries");
            };
            if items.len() > max_batch {
                return HttpResponse::error(413, "batch too large");
            }
            let mut queries = Vec::with_capacity(items.len());
            for item in items {
                let ids = item.get("token_ids").and_then(Value::as_array);
                let pos = item.get("position").and_then(Value::as_u64);
                let (Some(ids), Some(pos)) = (ids, pos) else {
                    return HttpResponse::error(400, "malformed query");
                };
                let Some(ids) = ids
                    .iter()
                    .map(|x| x.as_u64().map(|t| t as TokenId))
                    .collect::<Option<Vec<_>>>()
                else {
                    return HttpResponse::error(400, "token ids must be integers");
                };
                if pos as usize >= ids.len() {
                    return HttpResponse::error(422, "position out of range");
                }
                queries.push(Query::new(ids, pos as usize));
            }
            match backend.conditionals_batch(&queries) {
                Ok(dists) => HttpResponse::json(
                    200,
                    &json!({ "results": dists.iter().map(|d| json!({ "logp": d.logp() })).collect::<Vec<_>>() }),
                ),
                Err(e) => HttpResponse::error(422, &e.to_string()),
            }
        }
        _ => HttpResponse::error(404, "not found"),
    }
}
