//! Object-level API: CRUD verbs plus a positional read handle.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::SystemTime;

use url::Url;

use crate::config::{ClientConfig, MetalinkStrategy};
use crate::error::{Error, Result};
use crate::http::{parse_url, Agent, Method, RequestBody};
use crate::metalink::{
    discover_metalink, failover_read, multistream_download, order_replicas, Discovery, DownloadReport, DownloadSink,
    MetalinkDocument, Replica,
};
use crate::pool::{Connector, PoolStats, SessionPool, TcpConnector};
use crate::range::ByteRange;
use crate::vector::{vector_read, FragmentRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceInfo {
    pub uri: Url,
    /// `None` when the server omits Content-Length.
    pub size: Option<u64>,
    pub last_modified: Option<SystemTime>,
    pub etag: Option<String>,
    pub supports_ranges: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoveOutcome {
    Deleted,
    /// The object was already gone (404); the intent is satisfied.
    AlreadyAbsent,
}

/// Shared, thread-safe client. Clones share one session pool.
#[derive(Debug, Clone)]
pub struct Client {
    agent: Agent,
    config: Arc<ClientConfig>,
}

impl Client {
    pub fn new(config: ClientConfig) -> Result<Self> {
        let connector = TcpConnector {
            connect_timeout: config.tcp_connect_timeout,
            io_timeout: Some(config.io_timeout),
        };
        Self::with_connector(config, connector)
    }

    pub fn with_connector(config: ClientConfig, connector: impl Connector + 'static) -> Result<Self> {
        config.validate()?;
        let pool = SessionPool::with_connector(config.pool.clone(), connector)?;
        let agent = Agent::new(pool).with_credential(&config.credential_id, None);
        Ok(Client {
            agent,
            config: Arc::new(config),
        })
    }

    /// Send `name: value` with every request. The pool keeps these sessions
    /// apart from other identities through the configured credential id.
    pub fn with_credential_header(mut self, name: &str, value: &str) -> Self {
        self.agent = self
            .agent
            .with_credential(&self.config.credential_id, Some((name.to_string(), value.to_string())));
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn pool(&self) -> &SessionPool {
        self.agent.pool()
    }

    pub fn pool_stats(&self) -> PoolStats {
        self.agent.pool().stats()
    }

    pub fn put(&self, uri: &str, body: &[u8]) -> Result<ResourceInfo> {
        self.put_body(uri, RequestBody::Bytes(body))
    }

    pub fn put_reader(&self, uri: &str, body: &mut dyn Read, length: u64) -> Result<ResourceInfo> {
        self.put_body(uri, RequestBody::Reader(body, length))
    }

    pub fn put_file(&self, uri: &str, path: &Path) -> Result<ResourceInfo> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let length = file.metadata()?.len();
        self.put_reader(uri, &mut file, length)
    }

    fn put_body(&self, uri: &str, body: RequestBody<'_>) -> Result<ResourceInfo> {
        let url = parse_url(uri)?;
        let resp = self.agent.send(Method::Put, &url, &[], body)?;
        if !resp.is_success() {
            return Err(resp.into_http_error());
        }
        let mut resp = resp;
        resp.drain();
        self.stat_url(&url)
    }

    pub fn get(&self, uri: &str) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.get_to(uri, &mut out)?;
        Ok(out)
    }

    /// Stream the whole object into `sink`; returns the byte count.
    pub fn get_to(&self, uri: &str, sink: &mut dyn Write) -> Result<u64> {
        let url = parse_url(uri)?;
        let mut resp = self.agent.fetch(Method::Get, &url, &[])?;
        if resp.status != 200 {
            return Err(resp.into_http_error());
        }
        let mut buf = vec![0u8; 256 * 1024];
        let mut total = 0u64;
        loop {
            let n = resp.read(&mut buf).map_err(Error::transport)?;
            if n == 0 {
                break;
            }
            sink.write_all(&buf[..n])?;
            total += n as u64;
        }
        if let Some(expected) = resp.content_length() {
            if expected != total {
                return Err(Error::Transport(format!("{url}: got {total} of {expected} bytes")));
            }
        }
        Ok(total)
    }

    pub fn remove(&self, uri: &str) -> Result<RemoveOutcome> {
        let url = parse_url(uri)?;
        let resp = self.agent.send(Method::Delete, &url, &[], RequestBody::Empty)?;
        match resp.status {
            s if (200..300).contains(&s) => {
                let mut resp = resp;
                resp.drain();
                Ok(RemoveOutcome::Deleted)
            }
            404 => {
                let mut resp = resp;
                resp.drain();
                log::info!("{url} already absent");
                Ok(RemoveOutcome::AlreadyAbsent)
            }
            _ => Err(resp.into_http_error()),
        }
    }

    pub fn stat(&self, uri: &str) -> Result<ResourceInfo> {
        self.stat_url(&parse_url(uri)?)
    }

    fn stat_url(&self, url: &Url) -> Result<ResourceInfo> {
        let resp = self.agent.fetch(Method::Head, url, &[])?;
        if !resp.is_success() {
            return Err(resp.into_http_error());
        }
        let supports_ranges = resp
            .header("accept-ranges")
            .is_some_and(|v| v.split(',').any(|t| t.trim().eq_ignore_ascii_case("bytes")));
        Ok(ResourceInfo {
            uri: resp.url.clone(),
            size: resp.content_length(),
            last_modified: resp
                .header("last-modified")
                .and_then(|v| httpdate::parse_http_date(v).ok()),
            etag: resp.header("etag").map(str::to_string),
            supports_ranges,
        })
    }

    fn failover_enabled(&self) -> bool {
        self.config.metalink != MetalinkStrategy::Off
    }

    /// Stat `uri`; when it is unavailable and fail-over is on, bind the
    /// handle to the first replica that answers instead.
    pub fn open(&self, uri: &str) -> Result<RemoteFileHandle> {
        let url = parse_url(uri)?;
        let info = match self.stat_url(&url) {
            Ok(info) => info,
            Err(e) if e.is_unavailable() && self.failover_enabled() => self.stat_replica(&url, e)?,
            Err(e) => return Err(e),
        };
        Ok(RemoteFileHandle {
            client: self.clone(),
            url: info.uri.clone(),
            info,
            position: 0,
            failover: self.failover_enabled(),
        })
    }

    fn stat_replica(&self, url: &Url, original: Error) -> Result<ResourceInfo> {
        let mut errors = vec![(url.to_string(), original)];
        let Some(doc) = discover_metalink(&self.agent, url).document else {
            return Err(Error::AllReplicasFailed(errors));
        };
        let dead = HashSet::from([url.to_string()]);
        for replica in order_replicas(&doc, &dead).unwrap_or_default() {
            match self.stat_url(&replica.url) {
                Ok(info) => return Ok(info),
                Err(e) => errors.push((replica.url.to_string(), e)),
            }
        }
        Err(Error::AllReplicasFailed(errors))
    }

    /// Vectored read honouring the configured replica strategy.
    pub fn vector_read(&self, uri: &str, fragments: &mut [FragmentRequest<'_>]) -> Result<Vec<Result<()>>> {
        let url = parse_url(uri)?;
        self.vector_read_url(&url, fragments, self.failover_enabled())
    }

    fn vector_read_url(
        &self,
        url: &Url,
        fragments: &mut [FragmentRequest<'_>],
        failover: bool,
    ) -> Result<Vec<Result<()>>> {
        let c = &self.config;
        if failover {
            failover_read(&self.agent, url, fragments, &c.vector, &c.engine)
        } else {
            vector_read(&self.agent, url, fragments, &c.vector, &c.engine)
        }
    }

    pub fn discover_metalink(&self, uri: &str) -> Result<Discovery> {
        Ok(discover_metalink(&self.agent, &parse_url(uri)?))
    }

    /// Multi-source download into `sink`. Without a metalink the object is
    /// still fetched in chunks, from `uri` alone.
    pub fn download_multistream(&self, uri: &str, sink: &dyn DownloadSink) -> Result<DownloadReport> {
        let url = parse_url(uri)?;
        let doc = match discover_metalink(&self.agent, &url).document {
            Some(doc) if doc.size.is_some() => doc,
            found => {
                let info = self.stat_url(&url)?;
                let mut report_doc = MetalinkDocument {
                    name: url.path().rsplit('/').next().unwrap_or_default().to_string(),
                    size: info.size,
                    checksums: BTreeMap::new(),
                    replicas: vec![Replica {
                        url: url.clone(),
                        priority: 1,
                        location: None,
                        document_order: 0,
                    }],
                    skipped_urls: 0,
                };
                if let Some(found) = found {
                    report_doc.checksums = found.checksums;
                    report_doc.replicas = found.replicas;
                }
                report_doc
            }
        };
        multistream_download(&self.agent, &doc, sink, &self.config.streams, &self.config.engine)
    }
}

/// Positional reader over one remote object.
///
/// `pread` and `preadvec` take `&self` and may run concurrently; `read` and
/// `seek` move the handle's position.
#[derive(Debug)]
pub struct RemoteFileHandle {
    client: Client,
    url: Url,
    info: ResourceInfo,
    position: u64,
    failover: bool,
}

impl RemoteFileHandle {
    pub fn url(&self) -> &Url {
        &self.url
    }

    pub fn info(&self) -> &ResourceInfo {
        &self.info
    }

    pub fn size(&self) -> Option<u64> {
        self.info.size
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn failover_enabled(&self) -> bool {
        self.failover
    }

    /// Up to `length` bytes at `offset`; short only at end of object.
    pub fn pread(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        let length = match self.info.size {
            Some(size) if offset >= size => return Err(Error::RangeNotSatisfiable { total: Some(size) }),
            Some(size) => length.min(size - offset),
            None => length,
        };
        if length == 0 {
            return Ok(Vec::new());
        }
        let range = ByteRange::new(offset, length)?;
        let mut buf = vec![0u8; usize::try_from(length).map_err(|_| Error::InvalidRange { offset, length })?];
        let mut frags = [FragmentRequest::new(0, range, &mut buf)];
        let outcome = self.preadvec(&mut frags)?.pop().expect("one fragment");
        outcome?;
        Ok(buf)
    }

    pub fn preadvec(&self, fragments: &mut [FragmentRequest<'_>]) -> Result<Vec<Result<()>>> {
        self.client.vector_read_url(&self.url, fragments, self.failover)
    }

    /// Read from the current position and advance past what was returned.
    /// Returns an empty buffer at end of object.
    pub fn read_next(&mut self, length: u64) -> Result<Vec<u8>> {
        if length == 0 || self.info.size.is_some_and(|s| self.position >= s) {
            return Ok(Vec::new());
        }
        let data = match self.pread(self.position, length) {
            Err(Error::RangeNotSatisfiable { .. }) if self.info.size.is_none() => Vec::new(),
            other => other?,
        };
        self.position += data.len() as u64;
        Ok(data)
    }
}

impl Read for RemoteFileHandle {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let data = self.read_next(buf.len() as u64).map_err(io::Error::other)?;
        buf[..data.len()].copy_from_slice(&data);
        Ok(data.len())
    }
}

impl Seek for RemoteFileHandle {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(n) => Some(n),
            SeekFrom::Current(d) => self.position.checked_add_signed(d),
            SeekFrom::End(d) => {
                let size = self
                    .info
                    .size
                    .ok_or_else(|| io::Error::new(io::ErrorKind::Unsupported, "object size unknown"))?;
                size.checked_add_signed(d)
            }
        };
        let target = target.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "seek before start"))?;
        if self.info.size.is_some_and(|s| target > s) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "seek past end of object"));
        }
        self.position = target;
        Ok(target)
    }
}
