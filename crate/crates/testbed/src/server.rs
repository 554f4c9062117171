//! Thread-per-connection HTTP/1.1 origin server.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime};

use sha2::{Digest, Sha256};

use crate::error::TestbedError;
use crate::faults::{FaultPlan, Toggle, PRIMARY_ROOT};
use crate::latency::LatencyModel;
use crate::metalink::{render_metalink, MetalinkUrl, METALINK_MEDIA_TYPE};
use crate::metrics::{Counters, ServerMetrics, METRICS_PATH};
use crate::multipart::{compose_multipart, Part};
use crate::range::{resolve, RangeOutcome, Span};

const MAX_HEAD: usize = 64 * 1024;
const WRITE_SLICE: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(50);

/// A named virtual root, served under `/<name>/...`.
#[derive(Debug, Clone)]
pub struct ReplicaRoot {
    pub name: String,
    pub root: PathBuf,
    pub location: Option<String>,
}

impl ReplicaRoot {
    pub fn new(name: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        ReplicaRoot {
            name: name.into(),
            root: root.into(),
            location: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestbedConfig {
    pub corpus_root: PathBuf,
    pub replicas: Vec<ReplicaRoot>,
    pub latency: LatencyModel,
    pub faults: FaultPlan,
    pub bind: SocketAddr,
    /// Idle keep-alive connections are closed after this long.
    pub idle_timeout: Duration,
}

impl TestbedConfig {
    pub fn new(corpus_root: impl Into<PathBuf>) -> Self {
        TestbedConfig {
            corpus_root: corpus_root.into(),
            replicas: Vec::new(),
            latency: LatencyModel::none(),
            faults: FaultPlan::new(),
            bind: "127.0.0.1:0".parse().unwrap(),
            idle_timeout: Duration::from_secs(30),
        }
    }

    pub fn replica(mut self, name: &str, root: impl Into<PathBuf>) -> Self {
        self.replicas.push(ReplicaRoot::new(name, root));
        self
    }

    pub fn latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }
}

struct Shared {
    corpus_root: PathBuf,
    replicas: Vec<ReplicaRoot>,
    latency: LatencyModel,
    faults: RwLock<FaultPlan>,
    addr: SocketAddr,
    idle_timeout: Duration,
    counters: Counters,
    request_seq: AtomicU64,
    connection_seq: AtomicU64,
    boundary_seq: AtomicU64,
    // bytes of body served per replica index (corpus root = last slot)
    served: Vec<AtomicU64>,
    shutdown: AtomicBool,
}

/// Running server. Dropping the handle stops accepting new connections.
pub struct TestbedHandle {
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

/// Start serving.
pub fn serve(config: TestbedConfig) -> Result<TestbedHandle, TestbedError> {
    for root in std::iter::once(&config.corpus_root).chain(config.replicas.iter().map(|r| &r.root)) {
        fs::read_dir(root).map_err(|source| TestbedError::CorpusUnreadable {
            path: root.clone(),
            source,
        })?;
    }
    let listener = TcpListener::bind(config.bind).map_err(|source| TestbedError::BindFailed {
        addr: config.bind.to_string(),
        source,
    })?;
    let addr = listener.local_addr()?;
    let served = (0..=config.replicas.len()).map(|_| AtomicU64::new(0)).collect();
    let shared = Arc::new(Shared {
        corpus_root: config.corpus_root,
        replicas: config.replicas,
        latency: config.latency,
        faults: RwLock::new(config.faults),
        addr,
        idle_timeout: config.idle_timeout,
        counters: Counters::default(),
        request_seq: AtomicU64::new(0),
        connection_seq: AtomicU64::new(0),
        boundary_seq: AtomicU64::new(0),
        served,
        shutdown: AtomicBool::new(false),
    });
    let accept_shared = Arc::clone(&shared);
    let accept_thread = thread::Builder::new()
        .name("testbed-accept".into())
        .spawn(move || accept_loop(listener, accept_shared))?;
    log::info!("testbed listening on http://{addr}");
    Ok(TestbedHandle {
        shared,
        accept_thread: Some(accept_thread),
    })
}

impl TestbedHandle {
    pub fn addr(&self) -> SocketAddr {
        self.shared.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.shared.addr)
    }

    /// Absolute URL for a server path (`path` must start with `/`).
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url(), path)
    }

    pub fn metrics_url(&self) -> String {
        self.url(METRICS_PATH)
    }

    pub fn snapshot_metrics(&self) -> ServerMetrics {
        self.shared.counters.snapshot()
    }

    /// Replace the fault plan. Request numbering continues from the current
    /// counter, so `from_request` values are absolute.
    pub fn set_faults(&self, plan: FaultPlan) {
        *self.shared.faults.write().unwrap() = plan;
    }

    pub fn requests_so_far(&self) -> u64 {
        self.shared.request_seq.load(Ordering::SeqCst)
    }

    /// Forget byte budgets already consumed by `die_after_bytes` events.
    pub fn reset_byte_budgets(&self) {
        for s in &self.shared.served {
            s.store(0, Ordering::SeqCst);
        }
    }

    pub fn shutdown(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect_timeout(&self.shared.addr, Duration::from_millis(200));
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TestbedHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let conn_id = shared.connection_seq.fetch_add(1, Ordering::SeqCst) + 1;
        let shared = Arc::clone(&shared);
        let spawned = thread::Builder::new()
            .name(format!("testbed-conn-{conn_id}"))
            .spawn(move || {
                let mut conn = Connection::new(stream, shared, conn_id);
                if let Err(e) = conn.run() {
                    log::debug!("connection {conn_id} ended: {e}");
                }
                conn.finish();
            });
        if let Err(e) = spawned {
            log::warn!("could not spawn connection thread: {e}");
        }
    }
}

struct RequestHead {
    method: String,
    target: String,
    http10: bool,
    headers: Vec<(String, String)>,
}

impl RequestHead {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn wants_close(&self) -> bool {
        let conn = self.header("connection").map(|v| v.to_ascii_lowercase());
        match conn.as_deref() {
            Some(v) if v.contains("close") => true,
            Some(v) if v.contains("keep-alive") => false,
            _ => self.http10,
        }
    }
}

struct Response {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
    /// Length advertised for HEAD (body is empty but Content-Length is not).
    head_length: Option<u64>,
    omit_length: bool,
}

impl Response {
    fn new(status: u16) -> Self {
        Response {
            status,
            headers: Vec::new(),
            body: Vec::new(),
            head_length: None,
            omit_length: false,
        }
    }

    fn text(status: u16, body: &str) -> Self {
        let mut r = Response::new(status);
        r.headers.push(("Content-Type".into(), "text/plain".into()));
        r.body = body.as_bytes().to_vec();
        r
    }

    fn header(mut self, k: &str, v: impl Into<String>) -> Self {
        self.headers.push((k.to_string(), v.into()));
        self
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        204 => "No Content",
        206 => "Partial Content",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        416 => "Range Not Satisfiable",
        500 => "Internal Server Error",
        _ => "Unknown",
    }
}

/// Which root a request path resolves into.
struct Target {
    /// Index into `replicas`, or `None` for the corpus root.
    replica: Option<usize>,
    /// Path relative to the root, without a leading slash.
    rel: String,
}

enum Outcome {
    Respond(Response),
    /// Drop the connection without a response (offline replica).
    Reset,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    shared: Arc<Shared>,
    id: u64,
    counted: bool,
}

impl Connection {
    fn new(stream: TcpStream, shared: Arc<Shared>, id: u64) -> Self {
        let _ = stream.set_nodelay(true);
        let reader = BufReader::new(stream.try_clone().expect("clone tcp stream"));
        Connection {
            reader,
            writer: stream,
            shared,
            id,
            counted: false,
        }
    }

    fn finish(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Both);
        if self.counted {
            self.shared.counters.connection_closed();
        }
    }

    /// Wait for the first byte of the next request. `false` on EOF, idle
    /// timeout or server shutdown.
    fn await_request(&mut self) -> io::Result<bool> {
        self.writer.set_read_timeout(Some(POLL))?;
        let started = Instant::now();
        loop {
            match self.reader.fill_buf() {
                Ok([]) => return Ok(false),
                Ok(_) => break,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if self.shared.shutdown.load(Ordering::SeqCst) || started.elapsed() > self.shared.idle_timeout {
                        return Ok(false);
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.writer.set_read_timeout(Some(Duration::from_secs(30)))?;
        Ok(true)
    }

    fn read_head(&mut self) -> io::Result<Option<RequestHead>> {
        let mut buf = Vec::with_capacity(1024);
        loop {
            let n = self.reader.read_until(b'\n', &mut buf)?;
            if n == 0 {
                return Err(io::ErrorKind::UnexpectedEof.into());
            }
            if buf.ends_with(b"\r\n\r\n") || buf.ends_with(b"\n\n") {
                break;
            }
            if buf.len() > MAX_HEAD {
                return Ok(None);
            }
        }
        let mut headers = [httparse::EMPTY_HEADER; 64];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(&buf) {
            Ok(httparse::Status::Complete(_)) => {}
            _ => return Ok(None),
        }
        Ok(Some(RequestHead {
            method: req.method.unwrap_or("").to_string(),
            target: req.path.unwrap_or("/").to_string(),
            http10: req.version == Some(0),
            headers: req
                .headers
                .iter()
                .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()))
                .collect(),
        }))
    }

    fn read_body(&mut self, head: &RequestHead) -> io::Result<Vec<u8>> {
        let chunked = head
            .header("transfer-encoding")
            .is_some_and(|v| v.to_ascii_lowercase().contains("chunked"));
        if chunked {
            let mut body = Vec::new();
            loop {
                let mut line = String::new();
                self.reader.read_line(&mut line)?;
                let size_str = line.trim().split(';').next().unwrap_or("");
                let size = u64::from_str_radix(size_str, 16)
                    .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad chunk size"))?;
                if size == 0 {
                    loop {
                        line.clear();
                        self.reader.read_line(&mut line)?;
                        if line.trim().is_empty() {
                            break;
                        }
                    }
                    return Ok(body);
                }
                let start = body.len();
                body.resize(start + size as usize, 0);
                self.reader.read_exact(&mut body[start..])?;
                line.clear();
                self.reader.read_line(&mut line)?;
            }
        }
        let len: u64 = match head.header("content-length") {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad content-length"))?,
            None => 0,
        };
        let mut body = vec![0; len as usize];
        self.reader.read_exact(&mut body)?;
        Ok(body)
    }

    fn run(&mut self) -> io::Result<()> {
        while self.await_request()? {
            let head = match self.read_head()? {
                Some(h) => h,
                None => {
                    let resp = Response::text(400, "malformed request\n");
                    self.write_response(resp, "GET", true, None, None)?;
                    return Ok(());
                }
            };
            let body = self.read_body(&head)?;
            let path = head.target.split('?').next().unwrap_or("/").to_string();

            if path == METRICS_PATH {
                let text = self.shared.counters.snapshot().render();
                let close = head.wants_close();
                self.write_response(Response::text(200, &text), &head.method, close, None, None)?;
                if close {
                    return Ok(());
                }
                continue;
            }

            if !self.counted {
                self.counted = true;
                self.shared.counters.connection_opened();
            }
            let request_no = self.shared.request_seq.fetch_add(1, Ordering::SeqCst) + 1;
            self.shared.counters.request(self.id, &path);
            if head.header("range").is_some() && head.method == "GET" {
                self.shared.counters.ranged_requests.fetch_add(1, Ordering::SeqCst);
            }
            let faults = self.shared.faults.read().unwrap().clone();
            let (outcome, budget_slot) = self.dispatch(&head, &path, body, request_no, &faults);
            let resp = match outcome {
                Outcome::Respond(r) => r,
                Outcome::Reset => {
                    log::debug!("request {request_no}: root offline, dropping connection {}", self.id);
                    return Ok(());
                }
            };
            let delay = self.shared.latency.request_delay(request_no);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
            let close = head.wants_close() || faults.closes_after(request_no);
            let budget = budget_slot.and_then(|slot| {
                let name = self.root_name(slot);
                faults.byte_budget(&name).map(|b| (slot, b))
            });
            let complete = self.write_response(resp, &head.method, close, budget, Some(request_no))?;
            if close || !complete {
                return Ok(());
            }
        }
        Ok(())
    }

    fn root_name(&self, slot: usize) -> String {
        if slot == self.shared.replicas.len() {
            PRIMARY_ROOT.to_string()
        } else {
            self.shared.replicas[slot].name.clone()
        }
    }

    fn resolve_target(&self, path: &str) -> Option<Target> {
        let trimmed = path.trim_start_matches('/');
        if Path::new(trimmed)
            .components()
            .any(|c| !matches!(c, Component::Normal(_)))
        {
            return None;
        }
        let (first, rest) = trimmed.split_once('/').unwrap_or((trimmed, ""));
        if let Some(idx) = self.shared.replicas.iter().position(|r| r.name == first) {
            return Some(Target {
                replica: Some(idx),
                rel: rest.to_string(),
            });
        }
        Some(Target {
            replica: None,
            rel: trimmed.to_string(),
        })
    }

    fn root_of(&self, target: &Target) -> &Path {
        match target.replica {
            Some(i) => &self.shared.replicas[i].root,
            None => &self.shared.corpus_root,
        }
    }

    fn slot_of(&self, target: &Target) -> usize {
        target.replica.unwrap_or(self.shared.replicas.len())
    }

    fn dispatch(
        &self,
        head: &RequestHead,
        path: &str,
        body: Vec<u8>,
        request_no: u64,
        faults: &FaultPlan,
    ) -> (Outcome, Option<usize>) {
        let target = match self.resolve_target(path) {
            Some(t) => t,
            None => return (Outcome::Respond(Response::text(400, "bad path\n")), None),
        };
        let query = head.target.split_once('?').map(|(_, q)| q);

        if target.replica.is_none() && head.method == "GET" {
            if let Some(resp) = self.try_metalink(head, &target, query, faults) {
                return (Outcome::Respond(resp), None);
            }
        }

        let slot = self.slot_of(&target);
        let name = self.root_name(slot);
        let exhausted = faults
            .byte_budget(&name)
            .is_some_and(|b| self.shared.served[slot].load(Ordering::SeqCst) >= b);
        if faults.replica_offline_at(&name, request_no) || exhausted {
            return (Outcome::Reset, None);
        }

        let file = self.root_of(&target).join(&target.rel);
        let resp = match head.method.as_str() {
            "GET" => self.get(head, &file, request_no, faults),
            "HEAD" => self.head(&file, request_no, faults),
            "PUT" => self.put(path, &file, &target, body, faults),
            "DELETE" => self.delete(path, &file, &target, faults),
            _ => Response::text(405, "method not allowed\n").header("Allow", "GET, HEAD, PUT, DELETE"),
        };
        (Outcome::Respond(resp), Some(slot))
    }

    fn try_metalink(
        &self,
        head: &RequestHead,
        target: &Target,
        query: Option<&str>,
        faults: &FaultPlan,
    ) -> Option<Response> {
        let rungs = faults.metalink_rungs();
        let wants_type = head
            .header("accept")
            .is_some_and(|a| a.to_ascii_lowercase().contains(METALINK_MEDIA_TYPE));
        let by_query = query.is_some_and(|q| q.split('&').any(|p| p == "metalink"));
        let suffix_rel = target.rel.strip_suffix(".meta4");
        let literal_exists = self.shared.corpus_root.join(&target.rel).is_file();

        let rel = if (wants_type && rungs.accept) || (by_query && rungs.query) {
            target.rel.as_str()
        } else if let (Some(stripped), true, false) = (suffix_rel, rungs.suffix, literal_exists) {
            stripped
        } else {
            return None;
        };

        let holders: Vec<(usize, PathBuf)> = self
            .shared
            .replicas
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.root.join(rel)))
            .filter(|(_, p)| p.is_file())
            .collect();
        if holders.is_empty() {
            // Accept negotiation on an object nobody replicates falls
            // through to the plain resource.
            if wants_type && rungs.accept {
                return None;
            }
            self.shared.counters.metalink_requests.fetch_add(1, Ordering::SeqCst);
            return Some(Response::text(404, "no metalink\n"));
        }
        self.shared.counters.metalink_requests.fetch_add(1, Ordering::SeqCst);
        let data = match fs::read(&holders[0].1) {
            Ok(d) => d,
            Err(_) => return Some(Response::text(500, "replica unreadable\n")),
        };
        let digest = hex::encode(Sha256::digest(&data));
        let urls: Vec<MetalinkUrl> = holders
            .iter()
            .map(|(i, _)| {
                let r = &self.shared.replicas[*i];
                MetalinkUrl {
                    url: format!("http://{}/{}/{}", self.shared.addr, r.name, rel),
                    priority: *i as u32 + 1,
                    location: r.location.clone(),
                }
            })
            .collect();
        let name = Path::new(rel)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let xml = render_metalink(&name, data.len() as u64, &digest, &urls);
        let mut resp = Response::new(200).header("Content-Type", METALINK_MEDIA_TYPE);
        resp.body = xml.into_bytes();
        Some(resp)
    }

    fn validators(meta: &fs::Metadata) -> Vec<(String, String)> {
        let mtime = meta.modified().unwrap_or(SystemTime::UNIX_EPOCH);
        let nanos = mtime
            .duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        vec![
            ("Last-Modified".into(), httpdate::fmt_http_date(mtime)),
            ("ETag".into(), format!("\"{:x}-{:x}\"", meta.len(), nanos)),
        ]
    }

    fn head(&self, file: &Path, request_no: u64, faults: &FaultPlan) -> Response {
        let meta = match fs::metadata(file) {
            Ok(m) if m.is_file() => m,
            _ => return Response::text(404, "not found\n"),
        };
        let accept_ranges = if faults.is_on(Toggle::IgnoreRange, request_no) {
            "none"
        } else {
            "bytes"
        };
        let mut resp = Response::new(200)
            .header("Content-Type", "application/octet-stream")
            .header("Accept-Ranges", accept_ranges);
        resp.headers.extend(Self::validators(&meta));
        resp.head_length = Some(meta.len());
        resp.omit_length = faults.is_on(Toggle::HeadOmitLength, request_no);
        resp
    }

    fn get(&self, head: &RequestHead, file: &Path, request_no: u64, faults: &FaultPlan) -> Response {
        let mut f = match File::open(file) {
            Ok(f) => f,
            Err(_) => return Response::text(404, "not found\n"),
        };
        let meta = match f.metadata() {
            Ok(m) if m.is_file() => m,
            _ => return Response::text(404, "not found\n"),
        };
        let len = meta.len();
        let ignore = faults.is_on(Toggle::IgnoreRange, request_no);
        let outcome = match head.header("range") {
            Some(v) if !ignore => resolve(v, len),
            _ => RangeOutcome::Ignore,
        };
        let result = (|| -> io::Result<Response> {
            let mut resp = match outcome {
                RangeOutcome::Ignore => {
                    let mut r = Response::new(200);
                    r.body = read_span(&mut f, 0, len)?;
                    r
                }
                RangeOutcome::Unsatisfiable => {
                    Response::text(416, "range not satisfiable\n").header("Content-Range", format!("bytes */{len}"))
                }
                RangeOutcome::Spans(spans) => {
                    let mut spans = spans;
                    if spans.len() > 1 {
                        if faults.is_on(Toggle::SingleRangeOnly, request_no) {
                            spans.truncate(1);
                        } else if faults.is_on(Toggle::CoalesceRanges, request_no) {
                            let first = spans.iter().map(|s| s.first).min().unwrap();
                            let last = spans.iter().map(|s| s.last).max().unwrap();
                            spans = vec![Span { first, last }];
                        }
                    }
                    if spans.len() == 1 {
                        let s = spans[0];
                        let mut r =
                            Response::new(206).header("Content-Range", format!("bytes {}-{}/{len}", s.first, s.last));
                        r.body = read_span(&mut f, s.first, s.len())?;
                        r
                    } else {
                        if faults.is_on(Toggle::ReverseMultipart, request_no) {
                            spans.reverse();
                        }
                        let mut parts = Vec::with_capacity(spans.len());
                        for s in &spans {
                            parts.push(Part::new(s.first, read_span(&mut f, s.first, s.len())?));
                        }
                        let seq = self.shared.boundary_seq.fetch_add(1, Ordering::SeqCst);
                        let boundary = format!("TESTBED_BOUNDARY_{seq:016x}");
                        let body =
                            compose_multipart(&parts, len, &boundary).map_err(|e| io::Error::other(e.to_string()))?;
                        self.shared.counters.multipart_responses.fetch_add(1, Ordering::SeqCst);
                        let mut r = Response::new(206)
                            .header("Content-Type", format!("multipart/byteranges; boundary={boundary}"));
                        r.body = body;
                        return Ok(r);
                    }
                }
            };
            if resp.status != 416 {
                resp.headers
                    .push(("Content-Type".into(), "application/octet-stream".into()));
            }
            Ok(resp)
        })();
        match result {
            Ok(mut r) => {
                let ar = if ignore { "none" } else { "bytes" };
                r.headers.push(("Accept-Ranges".into(), ar.into()));
                r.headers.extend(Self::validators(&meta));
                r
            }
            Err(e) => Response::text(500, &format!("read failed: {e}\n")),
        }
    }

    fn put(&self, path: &str, file: &Path, target: &Target, body: Vec<u8>, faults: &FaultPlan) -> Response {
        if faults.is_read_only(path) {
            return Response::text(403, "read-only area\n");
        }
        if target.rel.is_empty() || target.rel.ends_with('/') {
            return Response::text(400, "cannot PUT a collection\n");
        }
        let existed = file.is_file();
        let write = || -> io::Result<()> {
            if let Some(parent) = file.parent() {
                fs::create_dir_all(parent)?;
            }
            let tmp = file.with_extension(format!(
                "tmp-upload-{}",
                self.shared.boundary_seq.fetch_add(1, Ordering::SeqCst)
            ));
            fs::write(&tmp, &body)?;
            fs::rename(&tmp, file)
        };
        match write() {
            Ok(()) if existed => Response::new(204),
            Ok(()) => Response::new(201),
            Err(e) => Response::text(500, &format!("write failed: {e}\n")),
        }
    }

    fn delete(&self, path: &str, file: &Path, _target: &Target, faults: &FaultPlan) -> Response {
        if faults.is_read_only(path) {
            return Response::text(403, "read-only area\n");
        }
        match fs::remove_file(file) {
            Ok(()) => Response::new(204),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Response::text(404, "not found\n"),
            Err(e) => Response::text(500, &format!("delete failed: {e}\n")),
        }
    }

    /// Returns `false` when the body was cut short by a byte budget.
    fn write_response(
        &mut self,
        resp: Response,
        method: &str,
        close: bool,
        budget: Option<(usize, u64)>,
        request_no: Option<u64>,
    ) -> io::Result<bool> {
        let mut head = format!("HTTP/1.1 {} {}\r\n", resp.status, reason(resp.status));
        for (k, v) in &resp.headers {
            head.push_str(&format!("{k}: {v}\r\n"));
        }
        let no_body_status = resp.status == 204 || resp.status == 304;
        if !no_body_status && !resp.omit_length {
            let len = resp.head_length.unwrap_or(resp.body.len() as u64);
            head.push_str(&format!("Content-Length: {len}\r\n"));
        }
        if close {
            head.push_str("Connection: close\r\n");
        }
        head.push_str("\r\n");
        self.writer.write_all(head.as_bytes())?;
        if method == "HEAD" || no_body_status {
            self.writer.flush()?;
            return Ok(true);
        }

        let mut allowed = resp.body.len() as u64;
        if let Some((slot, limit)) = budget {
            let before = self.shared.served[slot].fetch_add(allowed, Ordering::SeqCst);
            allowed = allowed.min(limit.saturating_sub(before));
        }
        let mut pending_delay = Duration::ZERO;
        for slice in resp.body[..allowed as usize].chunks(WRITE_SLICE) {
            // counted before the write so a client that has read the bytes
            // never sees a stale counter
            if request_no.is_some() {
                self.shared.counters.bytes_sent.fetch_add(slice.len() as u64, Ordering::SeqCst);
            }
            self.writer.write_all(slice)?;
            pending_delay += self.shared.latency.body_delay(slice.len() as u64);
            if pending_delay >= Duration::from_millis(1) {
                thread::sleep(pending_delay);
                pending_delay = Duration::ZERO;
            }
        }
        self.writer.flush()?;
        Ok(allowed == resp.body.len() as u64)
    }
}

fn read_span(f: &mut File, offset: u64, len: u64) -> io::Result<Vec<u8>> {
    f.seek(SeekFrom::Start(offset))?;
    let mut buf = vec![0; len as usize];
    f.read_exact(&mut buf)?;
    Ok(buf)
}
