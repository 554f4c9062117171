//! Server-side counters and their flat `key=value` rendering.
//!
//! Connections whose first request targets the metrics path are control
//! connections: they are excluded from `tcp_accepts`, the open-connection
//! gauges and every request counter, so probing never perturbs a measurement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

pub const METRICS_PATH: &str = "/.metrics";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerMetrics {
    pub tcp_accepts: u64,
    pub requests_total: u64,
    pub ranged_requests: u64,
    pub multipart_responses: u64,
    pub metalink_requests: u64,
    pub bytes_sent: u64,
    pub open_connections: u64,
    pub peak_open_connections: u64,
    pub per_connection: BTreeMap<u64, u64>,
    pub per_path: BTreeMap<String, u64>,
}

impl ServerMetrics {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tcp_accepts={}", self.tcp_accepts);
        let _ = writeln!(out, "requests_total={}", self.requests_total);
        let _ = writeln!(out, "ranged_requests={}", self.ranged_requests);
        let _ = writeln!(out, "multipart_responses={}", self.multipart_responses);
        let _ = writeln!(out, "metalink_requests={}", self.metalink_requests);
        let _ = writeln!(out, "bytes_sent={}", self.bytes_sent);
        let _ = writeln!(out, "open_connections={}", self.open_connections);
        let _ = writeln!(out, "peak_open_connections={}", self.peak_open_connections);
        for (id, n) in &self.per_connection {
            let _ = writeln!(out, "conn.{id}={n}");
        }
        for (path, n) in &self.per_path {
            let _ = writeln!(out, "path.{path}={n}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<ServerMetrics> {
        let mut m = ServerMetrics::default();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=')?;
            let v: u64 = v.parse().ok()?;
            match k {
                "tcp_accepts" => m.tcp_accepts = v,
                "requests_total" => m.requests_total = v,
                "ranged_requests" => m.ranged_requests = v,
                "multipart_responses" => m.multipart_responses = v,
                "metalink_requests" => m.metalink_requests = v,
                "bytes_sent" => m.bytes_sent = v,
                "open_connections" => m.open_connections = v,
                "peak_open_connections" => m.peak_open_connections = v,
                _ => {
                    if let Some(id) = k.strip_prefix("conn.") {
                        m.per_connection.insert(id.parse().ok()?, v);
                    } else if let Some(p) = k.strip_prefix("path.") {
                        m.per_path.insert(p.to_string(), v);
                    }
                }
            }
        }
        Some(m)
    }
}

#[derive(Default)]
pub(crate) struct Counters {
    pub tcp_accepts: AtomicU64,
    pub ranged_requests: AtomicU64,
    pub multipart_responses: AtomicU64,
    pub metalink_requests: AtomicU64,
    pub bytes_sent: AtomicU64,
    // request-indexed state is updated under one lock so that
    // requests_total always equals the per-connection sum
    pub requests: Mutex<RequestBook>,
}

#[derive(Default)]
pub(crate) struct RequestBook {
    pub requests_total: u64,
    pub open_connections: u64,
    pub peak_open_connections: u64,
    pub per_connection: BTreeMap<u64, u64>,
    pub per_path: BTreeMap<String, u64>,
}

impl Counters {
    pub fn connection_opened(&self) {
        self.tcp_accepts.fetch_add(1, Ordering::SeqCst);
        let mut book = self.requests.lock().unwrap();
        book.open_connections += 1;
        book.peak_open_connections = book.peak_open_connections.max(book.open_connections);
    }

    pub fn connection_closed(&self) {
        let mut book = self.requests.lock().unwrap();
        book.open_connections = book.open_connections.saturating_sub(1);
    }

    pub fn request(&self, conn: u64, path: &str) {
        let mut book = self.requests.lock().unwrap();
        book.requests_total += 1;
        *book.per_connection.entry(conn).or_default() += 1;
        *book.per_path.entry(path.to_string()).or_default() += 1;
    }

    pub fn snapshot(&self) -> ServerMetrics {
        let book = self.requests.lock().unwrap();
        ServerMetrics {
            tcp_accepts: self.tcp_accepts.load(Ordering::SeqCst),
            requests_total: book.requests_total,
            ranged_requests: self.ranged_requests.load(Ordering::SeqCst),
            multipart_responses: self.multipart_responses.load(Ordering::SeqCst),
            metalink_requests: self.metalink_requests.load(Ordering::SeqCst),
            bytes_sent: self.bytes_sent.load(Ordering::SeqCst),
            open_connections: book.open_connections,
            peak_open_connections: book.peak_open_connections,
            per_connection: book.per_connection.clone(),
            per_path: book.per_path.clone(),
        }
    }
}
