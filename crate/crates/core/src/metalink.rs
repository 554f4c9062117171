//! Metalink/4 replica descriptions and the two replica strategies:
//! fail-over reads and multi-source chunked downloads.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::io;
use std::sync::{Condvar, Mutex};

use sha2::{Digest, Sha256, Sha384, Sha512};
use url::Url;

use crate::engine::{execute_ranged_get, EngineLimits};
use crate::error::{Error, Result};
use crate::http::{Agent, Method};
use crate::range::ByteRange;
use crate::vector::{vector_read, FragmentRequest, VectorConfig};

pub const METALINK_MEDIA_TYPE: &str = "application/metalink4+xml";
const DEFAULT_PRIORITY: u32 = 999_999;
/// Metalink bodies larger than this are not documents we want to parse.
const MAX_METALINK_BYTES: u64 = 4 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    pub url: Url,
    /// Lower is preferred.
    pub priority: u32,
    pub location: Option<String>,
    pub document_order: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetalinkDocument {
    pub name: String,
    pub size: Option<u64>,
    /// Algorithm name (lowercase, e.g. `sha-256`) to lowercase hex digest.
    pub checksums: BTreeMap<String, String>,
    pub replicas: Vec<Replica>,
    /// URLs dropped because their scheme is not http(s).
    pub skipped_urls: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedMetalink(msg.into())
}

/// Parse the first `<file>` of a Metalink/4 document.
pub fn parse_metalink(xml: &[u8]) -> Result<MetalinkDocument> {
    let text = std::str::from_utf8(xml).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| malformed(format!("not XML: {e}")))?;
    let root = doc.root_element();
    if root.tag_name().name() != "metalink" {
        return Err(malformed(format!("root element is <{}>", root.tag_name().name())));
    }
    let file = root
        .children()
        .find(|n| n.is_element() && n.tag_name().name() == "file")
        .ok_or_else(|| malformed("no file element"))?;

    let mut out = MetalinkDocument {
        name: file.attribute("name").unwrap_or_default().to_string(),
        size: None,
        checksums: BTreeMap::new(),
        replicas: Vec::new(),
        skipped_urls: 0,
    };
    let mut order = 0;
    for child in file.children().filter(roxmltree::Node::is_element) {
        let body = child.text().unwrap_or("").trim();
        match child.tag_name().name() {
            "size" => {
                out.size = Some(body.parse().map_err(|_| malformed(format!("bad size {body:?}")))?);
            }
            "hash" => {
                if let Some(kind) = child.attribute("type") {
                    out.checksums
                        .insert(kind.to_ascii_lowercase(), body.to_ascii_lowercase());
                }
            }
            "url" => {
                let document_order = order;
                order += 1;
                let url = match Url::parse(body) {
                    Ok(u) if matches!(u.scheme(), "http" | "https") && u.host().is_some() => u,
                    _ => {
                        out.skipped_urls += 1;
                        continue;
                    }
                };
                let priority = match child.attribute("priority") {
                    Some(p) => p
                        .trim()
                        .parse()
                        .ok()
                        .filter(|&p| p >= 1)
                        .ok_or_else(|| malformed(format!("bad priority {p:?}")))?,
                    None => DEFAULT_PRIORITY,
                };
                out.replicas.push(Replica {
                    url,
                    priority,
                    location: child.attribute("location").map(str::to_string),
                    document_order,
                });
            }
            _ => {}
        }
    }
    if out.replicas.is_empty() {
        return Err(malformed("no usable replica"));
    }
    Ok(out)
}

/// Live replicas by (priority, document order).
pub fn order_replicas(doc: &MetalinkDocument, dead: &HashSet<String>) -> Result<Vec<Replica>> {
    let mut live: Vec<Replica> = doc
        .replicas
        .iter()
        .filter(|r| !dead.contains(r.url.as_str()))
        .cloned()
        .collect();
    if live.is_empty() {
        return Err(Error::NoReplicaAvailable);
    }
    live.sort_by_key(|r| (r.priority, r.document_order));
    Ok(live)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryRung {
    AcceptHeader,
    QueryParameter,
    Meta4Suffix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryAttempt {
    pub rung: DiscoveryRung,
    pub url: Url,
    /// `None` when this rung produced the document.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Discovery {
    pub document: Option<MetalinkDocument>,
    pub attempts: Vec<DiscoveryAttempt>,
}

fn is_metalink_type(content_type: &str) -> bool {
    let media = content_type.split(';').next().unwrap_or("").trim();
    media.eq_ignore_ascii_case(METALINK_MEDIA_TYPE) || media.eq_ignore_ascii_case("application/metalink+xml")
}

fn fetch_metalink(agent: &Agent, url: &Url, accept: bool) -> Result<MetalinkDocument> {
    let headers = if accept {
        vec![("Accept", METALINK_MEDIA_TYPE.to_string())]
    } else {
        Vec::new()
    };
    let mut resp = agent.fetch(Method::Get, url, &headers)?;
    if resp.status != 200 {
        return Err(resp.into_http_error());
    }
    if accept && !resp.header("content-type").is_some_and(is_metalink_type) {
        resp.drain();
        return Err(Error::UnexpectedResponse("reply is not a metalink".into()));
    }
    parse_metalink(&resp.read_body(MAX_METALINK_BYTES)?)
}

/// Try the three discovery rungs in order: content negotiation,
/// `?metalink`, then a `.meta4` sibling. Failures are logged, never raised.
pub fn discover_metalink(agent: &Agent, url: &Url) -> Discovery {
    let mut query_url = url.clone();
    match url.query() {
        Some(q) if !q.is_empty() => query_url.set_query(Some(&format!("{q}&metalink"))),
        _ => query_url.set_query(Some("metalink")),
    }
    let mut suffix_url = url.clone();
    suffix_url.set_query(None);
    suffix_url.set_path(&format!("{}.meta4", url.path()));

    let rungs = [
        (DiscoveryRung::AcceptHeader, url.clone(), true),
        (DiscoveryRung::QueryParameter, query_url, false),
        (DiscoveryRung::Meta4Suffix, suffix_url, false),
    ];
    let mut out = Discovery::default();
    for (rung, target, accept) in rungs {
        match fetch_metalink(agent, &target, accept) {
            Ok(doc) => {
                log::debug!("metalink for {url} found via {rung:?}");
                out.attempts.push(DiscoveryAttempt {
                    rung,
                    url: target,
                    failure: None,
                });
                out.document = Some(doc);
                break;
            }
            Err(e) => {
                log::debug!("metalink rung {rung:?} for {url}: {e}");
                out.attempts.push(DiscoveryAttempt {
                    rung,
                    url: target,
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    out
}

/// Vectored read that moves to replicas when the primary is unavailable.
/// A healthy primary costs exactly what a plain vectored read costs.
pub fn failover_read(
    agent: &Agent,
    url: &Url,
    fragments: &mut [FragmentRequest<'_>],
    config: &VectorConfig,
    limits: &EngineLimits,
) -> Result<Vec<Result<()>>> {
    let mut errors: Vec<(String, Error)> = Vec::new();
    let mut outcomes: Vec<Result<()>> = match vector_read(agent, url, fragments, config, limits) {
        Ok(o) => o,
        Err(e) if e.is_unavailable() => {
            errors.push((url.to_string(), e.clone()));
            vec![Err(e); fragments.len()]
        }
        Err(e) => return Err(e),
    };
    let mut pending: Vec<usize> = unavailable(&outcomes);
    if pending.is_empty() {
        return Ok(outcomes);
    }
    if errors.is_empty() {
        let first = outcomes[pending[0]].clone().unwrap_err();
        errors.push((url.to_string(), first));
    }

    let Some(doc) = discover_metalink(agent, url).document else {
        log::debug!("{url} unavailable and no metalink found");
        return Err(Error::AllReplicasFailed(errors));
    };
    let mut dead: HashSet<String> = HashSet::from([url.to_string()]);
    loop {
        let replica = match order_replicas(&doc, &dead) {
            Ok(live) => live.into_iter().next().expect("non-empty"),
            Err(_) => return Err(Error::AllReplicasFailed(errors)),
        };
        log::debug!("retrying {} fragments on {}", pending.len(), replica.url);
        let mut subset: Vec<FragmentRequest<'_>> = fragments
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| pending.binary_search(i).is_ok())
            .map(|(_, f)| FragmentRequest::new(f.id, f.range, &mut *f.destination))
            .collect();
        let result = vector_read(agent, &replica.url, &mut subset, config, limits);
        drop(subset);
        match result {
            Ok(sub) => {
                for (&i, o) in pending.iter().zip(sub) {
                    outcomes[i] = o;
                }
                pending = unavailable(&outcomes);
                if pending.is_empty() {
                    return Ok(outcomes);
                }
                let e = outcomes[pending[0]].clone().unwrap_err();
                errors.push((replica.url.to_string(), e));
            }
            Err(e) => errors.push((replica.url.to_string(), e)),
        }
        dead.insert(replica.url.to_string());
    }
}

fn unavailable(outcomes: &[Result<()>]) -> Vec<usize> {
    outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| matches!(o, Err(e) if e.is_unavailable()))
        .map(|(i, _)| i)
        .collect()
}

// ---------------------------------------------------------------------------
// multi-stream download

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    pub chunk_size: u64,
    pub streams: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            chunk_size: 8 << 20,
            streams: 4,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::config("metalink.chunk_size", "must be at least 1"));
        }
        if self.streams == 0 {
            return Err(Error::config("metalink.streams", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkState {
    Pending,
    Active,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub range: ByteRange,
    /// Index into the ordered replica list.
    pub replica: usize,
    pub state: ChunkState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamPlan {
    pub chunk_size: u64,
    pub streams: usize,
    pub chunks: Vec<Chunk>,
}

/// Tile `[0, size)` and assign chunks round-robin over `replicas`.
pub fn plan_streams(size: u64, config: &StreamConfig, replicas: usize) -> Result<StreamPlan> {
    config.validate()?;
    if replicas == 0 {
        return Err(Error::NoReplicaAvailable);
    }
    let streams = config.streams.min(replicas);
    let mut chunks = Vec::new();
    let mut offset = 0;
    while offset < size {
        let len = config.chunk_size.min(size - offset);
        chunks.push(Chunk {
            range: ByteRange::new(offset, len)?,
            replica: chunks.len() % streams,
            state: ChunkState::Pending,
        });
        offset += len;
    }
    Ok(StreamPlan {
        chunk_size: config.chunk_size,
        streams,
        chunks,
    })
}

/// Random-access destination shared by download workers.
pub trait DownloadSink: Sync {
    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()>;
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize>;
}

/// The file must be open for reading too: the checksum pass reads it back.
#[cfg(unix)]
impl DownloadSink for std::fs::File {
    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        std::os::unix::fs::FileExt::write_all_at(self, data, offset)
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<usize> {
        std::os::unix::fs::FileExt::read_at(self, buf, offset)
    }
}

/// In-memory sink, mostly for tests and small objects.
#[derive(Debug, Default)]
pub struct MemorySink(Mutex<Vec<u8>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0.into_inner().unwrap()
    }
}

impl DownloadSink for MemorySink {
    fn write_at(&self, offset: u64, data: &[u8]) -> io::Result<()> {
        let mut buf = self.0.lock().unwrap();
        let end = offset as usize + data.len();
        if buf.len() < end {
            buf.resize(end, 0);
        }
        buf[offset as usize..end].copy_from_slice(data);
        Ok(())
    }

    fn read_at(&self, offset: u64, out: &mut [u8]) -> io::Result<usize> {
        let buf = self.0.lock().unwrap();
        let start = (offset as usize).min(buf.len());
        let n = out.len().min(buf.len() - start);
        out[..n].copy_from_slice(&buf[start..start + n]);
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownloadReport {
    pub bytes: u64,
    /// Chunks served, per replica URL, in replica order.
    pub per_replica_chunks: Vec<(String, usize)>,
    pub checksum_verified: bool,
    pub checksum_algorithm: Option<String>,
    /// Chunks served by a replica other than the one they were assigned to.
    pub migrated_chunks: usize,
    /// Chunk attempts that failed and were retried elsewhere.
    pub failed_attempts: Vec<(String, Error)>,
    pub warnings: Vec<String>,
}

struct Progress {
    chunks: Vec<Chunk>,
    tried: Vec<HashSet<usize>>,
    queue: VecDeque<usize>,
    active: usize,
    demoted: Vec<bool>,
    served_by: Vec<Option<usize>>,
    failed_attempts: Vec<(String, Error)>,
    fatal: Option<Error>,
}

impl Progress {
    fn finished(&self) -> bool {
        self.fatal.is_some() || (self.queue.is_empty() && self.active == 0)
    }

    /// Next chunk for a worker on `replica`: its own assignment first,
    /// otherwise steal the oldest pending chunk.
    fn take(&mut self, replica: usize) -> Option<usize> {
        let pos = self
            .queue
            .iter()
            .position(|&c| self.chunks[c].replica == replica && !self.tried[c].contains(&replica))
            .unwrap_or(0);
        let c = self.queue.remove(pos)?;
        self.chunks[c].state = ChunkState::Active;
        self.active += 1;
        Some(c)
    }

    /// Replica to fetch `chunk` from: `preferred` unless it already failed
    /// this chunk or was demoted; healthy replicas before demoted ones.
    fn pick(&self, chunk: usize, preferred: usize) -> Option<usize> {
        let n = self.demoted.len();
        let untried = |r: &usize| !self.tried[chunk].contains(r);
        let mut rotation = (0..n).map(|k| (preferred + k) % n);
        rotation
            .clone()
            .filter(untried)
            .find(|&r| !self.demoted[r])
            .or_else(|| rotation.find(untried))
    }
}

/// Fetch the object described by `doc` from all its replicas at once.
pub fn multistream_download(
    agent: &Agent,
    doc: &MetalinkDocument,
    sink: &dyn DownloadSink,
    config: &StreamConfig,
    limits: &EngineLimits,
) -> Result<DownloadReport> {
    let size = doc.size.ok_or(Error::SizeUnknown)?;
    let replicas = order_replicas(doc, &HashSet::new())?;
    let plan = plan_streams(size, config, replicas.len())?;
    let n_chunks = plan.chunks.len();

    let state = Mutex::new(Progress {
        tried: vec![HashSet::new(); n_chunks],
        queue: (0..n_chunks).collect(),
        active: 0,
        demoted: vec![false; replicas.len()],
        served_by: vec![None; n_chunks],
        failed_attempts: Vec::new(),
        fatal: None,
        chunks: plan.chunks.clone(),
    });
    let wake = Condvar::new();

    let worker = |home: usize| {
        let mut current = home;
        loop {
            let (chunk, replica, range) = {
                let mut st = state.lock().unwrap();
                let chunk = loop {
                    if st.finished() {
                        return;
                    }
                    if let Some(c) = st.take(home) {
                        break c;
                    }
                    st = wake.wait(st).unwrap();
                };
                match st.pick(chunk, current) {
                    Some(r) => (chunk, r, st.chunks[chunk].range),
                    None => {
                        st.chunks[chunk].state = ChunkState::Failed;
                        st.active -= 1;
                        let errors = st.failed_attempts.clone();
                        st.fatal = Some(Error::AllReplicasFailed(errors));
                        wake.notify_all();
                        return;
                    }
                }
            };
            current = replica;

            let result = fetch_chunk(agent, &replicas[replica].url, range, limits)
                .and_then(|data| sink.write_at(range.offset(), &data).map_err(Error::from));

            let mut st = state.lock().unwrap();
            st.active -= 1;
            match result {
                Ok(()) => {
                    st.chunks[chunk].state = ChunkState::Done;
                    st.served_by[chunk] = Some(replica);
                }
                Err(e) => {
                    log::debug!("chunk {range} from {} failed: {e}", replicas[replica].url);
                    st.failed_attempts.push((replicas[replica].url.to_string(), e));
                    st.tried[chunk].insert(replica);
                    st.demoted[replica] = true;
                    st.chunks[chunk].state = ChunkState::Pending;
                    st.queue.push_front(chunk);
                    current = (replica + 1) % replicas.len();
                }
            }
            wake.notify_all();
        }
    };
    std::thread::scope(|s| {
        for home in 0..plan.streams {
            let worker = &worker;
            s.spawn(move || worker(home));
        }
    });

    let st = state.into_inner().unwrap();
    if let Some(e) = st.fatal {
        return Err(e);
    }
    let mut per_replica = vec![0usize; replicas.len()];
    let mut migrated = 0;
    for (c, served) in st.served_by.iter().enumerate() {
        let r = served.expect("all chunks done");
        per_replica[r] += 1;
        if r != st.chunks[c].replica {
            migrated += 1;
        }
    }

    let mut warnings = Vec::new();
    let (checksum_verified, checksum_algorithm) = match verify_checksum(doc, sink, size)? {
        Some(alg) => (true, Some(alg)),
        None => {
            warnings.push("metalink carries no supported checksum; download not verified".to_string());
            (false, None)
        }
    };
    Ok(DownloadReport {
        bytes: size,
        per_replica_chunks: replicas
            .iter()
            .zip(per_replica)
            .map(|(r, n)| (r.url.to_string(), n))
            .collect(),
        checksum_verified,
        checksum_algorithm,
        migrated_chunks: migrated,
        failed_attempts: st.failed_attempts,
        warnings,
    })
}

fn fetch_chunk(agent: &Agent, url: &Url, range: ByteRange, limits: &EngineLimits) -> Result<Vec<u8>> {
    let resp = execute_ranged_get(agent, url, &[range], limits)?;
    resp.slice(&range)
        .map(<[u8]>::to_vec)
        .ok_or_else(|| Error::UnexpectedResponse(format!("{url} did not return bytes {range}")))
}

/// Strongest supported digest first.
const ALGORITHMS: [&str; 3] = ["sha-512", "sha-384", "sha-256"];

fn verify_checksum(doc: &MetalinkDocument, sink: &dyn DownloadSink, size: u64) -> Result<Option<String>> {
    let Some((alg, expected)) = ALGORITHMS.iter().find_map(|&a| doc.checksums.get(a).map(|d| (a, d))) else {
        return Ok(None);
    };
    let actual = match alg {
        "sha-512" => digest_sink::<Sha512>(sink, size)?,
        "sha-384" => digest_sink::<Sha384>(sink, size)?,
        _ => digest_sink::<Sha256>(sink, size)?,
    };
    if &actual != expected {
        return Err(Error::ChecksumMismatch {
            algorithm: alg.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(Some(alg.to_string()))
}

fn digest_sink<D: Digest>(sink: &dyn DownloadSink, size: u64) -> Result<String> {
    let mut hasher = D::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut offset = 0;
    while offset < size {
        let want = buf.len().min((size - offset) as usize);
        let n = sink.read_at(offset, &mut buf[..want])?;
        if n == 0 {
            return Err(Error::Io(format!("sink ends at {offset} of {size} bytes")));
        }
        hasher.update(&buf[..n]);
        offset += n as u64;
    }
    Ok(hex::encode(hasher.finalize()))
}
