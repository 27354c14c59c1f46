//! HTTP ingestion gateway: the cloud-side API endpoint for edge devices.
//!
//! `POST /ingest/<topic>` authenticates with a static token header, then
//! appends to the storage sink *first* (storage is the system of record —
//! ingest fails closed with 503 when the append fails) and only then
//! publishes to the best-effort dispatcher. `GET /healthz` reports
//! liveness.

use crate::latency::now_ms;
use crate::pubsub::{validate_topic, CloudEnvelope, Dispatcher};
use crate::storage::StorageSink;
use std::io::{self, Read};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;
use tiny_http::{Header, Method, Response, Server};

/// Token header name.
pub const TOKEN_HEADER: &str = "X-MSight-Token";
/// Optional producer identity header; remote address otherwise.
pub const SOURCE_HEADER: &str = "X-MSight-Source";
/// Default request-body ceiling.
pub const DEFAULT_MAX_BODY: usize = 4 * 1024 * 1024;

/// Gateway settings.
pub struct GatewayConfig {
    /// Bind address, e.g. `127.0.0.1:0`.
    pub bind: String,
    pub token: String,
    pub max_body: usize,
    pub storage: StorageSink,
    pub dispatcher: Dispatcher,
}

/// Handle to a running gateway; dropping it stops the server.
pub struct GatewayHandle {
    addr: SocketAddr,
    dispatcher: Dispatcher,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.dispatcher
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for join in self.workers.drain(..) {
            let _ = join.join();
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the gateway with a small worker pool sharing one listener.
pub fn start(config: GatewayConfig) -> io::Result<GatewayHandle> {
    let server = Server::http(&config.bind).map_err(io::Error::other)?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| io::Error::other("gateway bound to a non-IP address"))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(SharedState {
        token: config.token,
        max_body: config.max_body,
        storage: Mutex::new(config.storage),
        dispatcher: config.dispatcher.clone(),
    });

    let mut workers = Vec::new();
    for worker in 0..4 {
        let server = Arc::clone(&server);
        let stop = Arc::clone(&stop);
        let shared = Arc::clone(&shared);
        workers.push(
            std::thread::Builder::new()
                .name(format!("gateway-{worker}"))
                .spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(request)) => handle(request, &shared),
                            Ok(None) => {}
                            Err(e) => {
                                log::warn!("gateway accept error: {e}");
                            }
                        }
                    }
                })?,
        );
    }

    Ok(GatewayHandle { addr, dispatcher: config.dispatcher, stop, workers })
}

struct SharedState {
    token: String,
    max_body: usize,
    storage: Mutex<StorageSink>,
    dispatcher: Dispatcher,
}

fn header_value<'r>(request: &'r tiny_http::Request, name: &'static str) -> Option<&'r str> {
    request
        .headers()
        .iter()
        .find(|h| h.field.equiv(name))
        .map(|h| h.value.as_str())
}

fn respond(request: tiny_http::Request, status: u16, body: &str) {
    let response = Response::from_string(body).with_status_code(status).with_header(
        Header::from_bytes(&b"Content-Type"[..], &b"text/plain"[..]).expect("static header"),
    );
    if let Err(e) = request.respond(response) {
        log::debug!("client went away before the response: {e}");
    }
}

fn handle(mut request: tiny_http::Request, shared: &SharedState) {
    let method = request.method().clone();
    let url = request.url().to_string();

    if method == Method::Get && url == "/healthz" {
        respond(request, 200, "ok");
        return;
    }

    let topic = match (method, url.strip_prefix("/ingest/")) {
        (Method::Post, Some(rest)) if !rest.is_empty() => rest.to_string(),
        _ => {
            respond(request, 404, "not found");
            return;
        }
    };

    if header_value(&request, TOKEN_HEADER) != Some(shared.token.as_str()) {
        respond(request, 401, "unauthorized");
        return;
    }
    if validate_topic(&topic).is_err() {
        respond(request, 400, "invalid topic");
        return;
    }
    if request.body_length().is_some_and(|n| n > shared.max_body) {
        respond(request, 413, "body too large");
        return;
    }

    let source = header_value(&request, SOURCE_HEADER)
        .map(str::to_string)
        .or_else(|| request.remote_addr().map(|a| a.to_string()))
        .unwrap_or_else(|| "unknown".to_string());

    // Read at most one byte over the cap so undeclared lengths are still
    // bounded.
    let mut payload = Vec::new();
    let read = request
        .as_reader()
        .take(shared.max_body as u64 + 1)
        .read_to_end(&mut payload);
    if read.is_err() {
        respond(request, 400, "unreadable body");
        return;
    }
    if payload.len() > shared.max_body {
        respond(request, 413, "body too large");
        return;
    }

    let env = CloudEnvelope { topic, received_ts_ms: now_ms(), source, payload };

    // Storage first; a failed append fails the whole ingest closed.
    {
        let mut storage = shared.storage.lock().expect("storage lock");
        if let Err(e) = storage.append(&env) {
            log::error!("storage append failed: {e}");
            respond(request, 503, "storage unavailable");
            return;
        }
    }
    let report = shared.dispatcher.publish(&env);
    respond(
        request,
        200,
        &format!(
            "{{\"delivered\":{},\"dropped_oldest\":{}}}",
            report.delivered, report.dropped_oldest
        ),
    );
}
