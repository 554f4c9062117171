//! HTTP/1.1 request/response exchange over pooled sessions.

use std::io::{self, BufRead, Read, Write};

use url::Url;

use crate::error::{Error, Result};
use crate::pool::{PooledSession, SessionKey, SessionPool, ANONYMOUS};

const MAX_RESPONSE_HEAD: usize = 64 * 1024;
const MAX_REDIRECTS: usize = 5;
/// Error/redirect bodies up to this size are drained to keep the connection.
pub(crate) const DRAIN_LIMIT: u64 = 64 * 1024;
const USER_AGENT: &str = concat!("hpcio/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn has_token(&self, name: &str, token: &str) -> bool {
        self.0
            .iter()
            .filter(|(k, _)| k.eq_ignore_ascii_case(name))
            .flat_map(|(_, v)| v.split(','))
            .any(|t| t.trim().eq_ignore_ascii_case(token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Head,
    Put,
    Delete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Head => "HEAD",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
        }
    }
}

pub enum RequestBody<'a> {
    Empty,
    Bytes(&'a [u8]),
    /// Streamed body of known length; not replayable.
    Reader(&'a mut dyn Read, u64),
}

impl RequestBody<'_> {
    fn replayable(&self) -> bool {
        !matches!(self, RequestBody::Reader(..))
    }
}

#[derive(Debug, Clone, Copy)]
enum Framing {
    Empty,
    Length(u64),
    Chunked { remaining_in_chunk: u64, finished: bool },
    UntilClose,
}

/// Response head plus a streaming body reader that owns the session lease.
///
/// The session goes back to the pool as soon as the body has been read to
/// its end; a response dropped before that closes the connection.
pub struct Response {
    pub status: u16,
    pub reason: String,
    pub headers: Headers,
    pub url: Url,
    session: Option<PooledSession>,
    framing: Framing,
    keep_alive: bool,
    released_reusable: Option<bool>,
}

impl std::fmt::Debug for Response {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Response")
            .field("status", &self.status)
            .field("url", &self.url.as_str())
            .field("framing", &self.framing)
            .finish()
    }
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name)
    }

    pub fn content_length(&self) -> Option<u64> {
        self.header("content-length").and_then(|v| v.trim().parse().ok())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// `true` once the body was fully read and the session returned for reuse.
    pub fn connection_reusable(&self) -> bool {
        self.released_reusable == Some(true)
    }

    pub fn is_finished(&self) -> bool {
        self.session.is_none()
    }

    fn finish(&mut self, reusable: bool) {
        if let Some(s) = self.session.take() {
            let reusable = reusable && self.keep_alive;
            self.released_reusable = Some(reusable);
            s.release(reusable);
        }
    }

    fn abort(&mut self) {
        if let Some(s) = self.session.take() {
            self.released_reusable = Some(false);
            s.release(false);
        }
    }

    /// Read the whole body, failing once it exceeds `limit` bytes.
    pub fn read_body(&mut self, limit: u64) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.content_length().unwrap_or(0).min(limit).min(1 << 26) as usize);
        let n = (&mut *self)
            .take(limit.saturating_add(1))
            .read_to_end(&mut out)
            .map_err(Error::transport)?;
        if n as u64 > limit {
            self.abort();
            return Err(Error::UnexpectedResponse(format!("body exceeds {limit} bytes")));
        }
        Ok(out)
    }

    /// Consume the rest of a short body so the connection can be recycled;
    /// longer bodies are abandoned and the connection closed.
    pub fn drain(&mut self) {
        if self.is_finished() {
            return;
        }
        if let Some(len) = self.content_length() {
            if len > DRAIN_LIMIT {
                self.abort();
                return;
            }
        }
        let mut sink = io::sink();
        match io::copy(&mut (&mut *self).take(DRAIN_LIMIT), &mut sink) {
            Ok(_) if self.is_finished() => {}
            _ => self.abort(),
        }
    }

    pub fn into_http_error(mut self) -> Error {
        self.drain();
        Error::Http {
            status: self.status,
            reason: self.reason.clone(),
        }
    }

    fn read_chunk_size(conn: &mut PooledSession) -> io::Result<u64> {
        let line = read_line(conn, 4096)?;
        let text = String::from_utf8_lossy(&line);
        let size = text.trim().split(';').next().unwrap_or("").trim();
        u64::from_str_radix(size, 16).map_err(|_| invalid("bad chunk size"))
    }

    fn read_inner(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let Some(session) = self.session.as_mut() else {
            return Ok(0);
        };
        match self.framing {
            Framing::Empty => {
                self.finish(true);
                Ok(0)
            }
            Framing::Length(0) => {
                self.finish(true);
                Ok(0)
            }
            Framing::Length(remaining) => {
                let want = buf.len().min(remaining.min(usize::MAX as u64) as usize);
                let n = session.read(&mut buf[..want])?;
                if n == 0 {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "body truncated"));
                }
                let left = remaining - n as u64;
                self.framing = Framing::Length(left);
                if left == 0 {
                    self.finish(true);
                }
                Ok(n)
            }
            Framing::UntilClose => {
                let n = session.read(buf)?;
                if n == 0 {
                    self.finish(false);
                }
                Ok(n)
            }
            Framing::Chunked {
                remaining_in_chunk,
                finished,
            } => {
                if finished {
                    self.finish(true);
                    return Ok(0);
                }
                let mut remaining = remaining_in_chunk;
                if remaining == 0 {
                    remaining = Self::read_chunk_size(session)?;
                    if remaining == 0 {
                        // trailers
                        loop {
                            let line = read_line(session, 8192)?;
                            if line.is_empty() {
                                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated trailers"));
                            }
                            if line == b"\r\n" || line == b"\n" {
                                break;
                            }
                        }
                        self.framing = Framing::Chunked {
                            remaining_in_chunk: 0,
                            finished: true,
                        };
                        self.finish(true);
                        return Ok(0);
                    }
                }
                let want = buf.len().min(remaining.min(usize::MAX as u64) as usize);
                let n = session.read(&mut buf[..want])?;
                if n == 0 {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "chunk truncated"));
                }
                remaining -= n as u64;
                if remaining == 0 {
                    let crlf = read_line(session, 2)?;
                    if crlf != b"\r\n" && crlf != b"\n" {
                        return Err(invalid("missing CRLF after chunk"));
                    }
                }
                self.framing = Framing::Chunked {
                    remaining_in_chunk: remaining,
                    finished: false,
                };
                Ok(n)
            }
        }
    }
}

impl Read for Response {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self.read_inner(buf) {
            Ok(n) => Ok(n),
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }
}

impl Drop for Response {
    fn drop(&mut self) {
        self.abort();
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_line(conn: &mut PooledSession, limit: usize) -> io::Result<Vec<u8>> {
    let mut line = Vec::new();
    (&mut *conn.conn())
        .take(limit as u64 + 1)
        .read_until(b'\n', &mut line)?;
    if line.len() > limit {
        return Err(invalid("line too long"));
    }
    Ok(line)
}

struct Head {
    status: u16,
    reason: String,
    http10: bool,
    headers: Headers,
}

fn read_head(session: &mut PooledSession) -> io::Result<Head> {
    loop {
        let mut buf = Vec::with_capacity(512);
        loop {
            let n = session.conn().read_until(b'\n', &mut buf)?;
            if n == 0 {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    if buf.is_empty() {
                        "connection closed before response"
                    } else {
                        "truncated response head"
                    },
                ));
            }
            if buf.ends_with(b"\r\n\r\n") || buf.ends_with(b"\n\n") {
                break;
            }
            if buf.len() > MAX_RESPONSE_HEAD {
                return Err(invalid("response head too large"));
            }
        }
        let mut raw = [httparse::EMPTY_HEADER; 96];
        let mut parsed = httparse::Response::new(&mut raw);
        match parsed.parse(&buf) {
            Ok(httparse::Status::Complete(_)) => {}
            Ok(httparse::Status::Partial) => return Err(invalid("incomplete response head")),
            Err(e) => return Err(invalid(&format!("bad response head: {e}"))),
        }
        let status = parsed.code.unwrap_or(0);
        if (100..200).contains(&status) && status != 101 {
            continue;
        }
        let headers = Headers(
            parsed
                .headers
                .iter()
                .map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).trim().to_string()))
                .collect(),
        );
        return Ok(Head {
            status,
            reason: parsed.reason.unwrap_or("").to_string(),
            http10: parsed.version == Some(0),
            headers,
        });
    }
}

/// Request target plus the headers every request carries.
fn write_request(
    session: &mut PooledSession,
    method: Method,
    url: &Url,
    extra: &[(&str, String)],
    body: &mut RequestBody<'_>,
) -> io::Result<()> {
    let mut target = url.path().to_string();
    if target.is_empty() {
        target.push('/');
    }
    if let Some(q) = url.query() {
        target.push('?');
        target.push_str(q);
    }
    let mut head = format!(
        "{} {target} HTTP/1.1\r\nHost: {}\r\nUser-Agent: {USER_AGENT}\r\n",
        method.as_str(),
        session.key().authority()
    );
    for (k, v) in extra {
        head.push_str(k);
        head.push_str(": ");
        head.push_str(v);
        head.push_str("\r\n");
    }
    let len = match body {
        RequestBody::Empty => None,
        RequestBody::Bytes(b) => Some(b.len() as u64),
        RequestBody::Reader(_, n) => Some(*n),
    };
    match len {
        Some(n) => head.push_str(&format!("Content-Length: {n}\r\n")),
        None if method == Method::Put => head.push_str("Content-Length: 0\r\n"),
        None => {}
    }
    head.push_str("\r\n");
    session.write_all(head.as_bytes())?;
    match body {
        RequestBody::Empty => {}
        RequestBody::Bytes(b) => session.write_all(b)?,
        RequestBody::Reader(r, n) => {
            let copied = io::copy(&mut r.take(*n), session)?;
            if copied != *n {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "request body shorter than declared",
                ));
            }
        }
    }
    session.flush()
}

/// Pool handle bound to a client identity. All network operations go
/// through an agent.
#[derive(Debug, Clone)]
pub struct Agent {
    pool: SessionPool,
    credential_id: String,
    /// Pass-through credential, e.g. `("Authorization", "Bearer ...")`.
    credential_header: Option<(String, String)>,
}

impl Agent {
    pub fn new(pool: SessionPool) -> Self {
        Agent {
            pool,
            credential_id: ANONYMOUS.to_string(),
            credential_header: None,
        }
    }

    pub fn with_credential(mut self, credential_id: &str, header: Option<(String, String)>) -> Self {
        self.credential_id = if credential_id.is_empty() {
            ANONYMOUS.to_string()
        } else {
            credential_id.to_string()
        };
        self.credential_header = header;
        self
    }

    pub fn pool(&self) -> &SessionPool {
        &self.pool
    }

    pub fn credential_id(&self) -> &str {
        &self.credential_id
    }

    pub fn session_key(&self, url: &Url) -> Result<SessionKey> {
        SessionKey::from_url(url, &self.credential_id)
    }

    /// One request/response exchange, no redirect handling. A recycled
    /// session that turns out to be dead (closed by the peer while idle) is
    /// discarded and the request retried when the body is replayable.
    pub fn send(
        &self,
        method: Method,
        url: &Url,
        headers: &[(&str, String)],
        mut body: RequestBody<'_>,
    ) -> Result<Response> {
        let key = self.session_key(url)?;
        let mut all_headers: Vec<(&str, String)> = headers.to_vec();
        if let Some((k, v)) = &self.credential_header {
            all_headers.push((k.as_str(), v.clone()));
        }
        let max_attempts = self.pool.config().max_sessions_per_key + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut session = self.pool.acquire(&key)?;
            let recycled = session.is_recycled();
            session.begin_request();
            let result = write_request(&mut session, method, url, &all_headers, &mut body)
                .and_then(|()| read_head(&mut session));
            match result {
                Ok(head) => {
                    let close = head.headers.has_token("connection", "close");
                    let keep_alive = if head.http10 {
                        head.headers.has_token("connection", "keep-alive")
                    } else {
                        !close
                    };
                    let no_body = method == Method::Head || head.status == 204 || head.status == 304;
                    let chunked = head.headers.has_token("transfer-encoding", "chunked");
                    let length = head
                        .headers
                        .get("content-length")
                        .and_then(|v| v.trim().parse::<u64>().ok());
                    let framing = if no_body {
                        Framing::Empty
                    } else if chunked {
                        Framing::Chunked {
                            remaining_in_chunk: 0,
                            finished: false,
                        }
                    } else if let Some(n) = length {
                        Framing::Length(n)
                    } else {
                        Framing::UntilClose
                    };
                    let keep_alive = keep_alive && !matches!(framing, Framing::UntilClose);
                    let mut resp = Response {
                        status: head.status,
                        reason: head.reason,
                        headers: head.headers,
                        url: url.clone(),
                        session: Some(session),
                        framing,
                        keep_alive,
                        released_reusable: None,
                    };
                    if matches!(framing, Framing::Empty | Framing::Length(0)) {
                        resp.finish(true);
                    }
                    return Ok(resp);
                }
                Err(e) => {
                    session.release(false);
                    if recycled && body.replayable() && attempt < max_attempts {
                        log::debug!("stale session for {key}: {e}; retrying");
                        continue;
                    }
                    return Err(Error::Transport(format!("{} {url}: {e}", method.as_str())));
                }
            }
        }
    }

    /// GET/HEAD following up to five redirects; each hop uses the session key
    /// of its own target.
    pub fn fetch(&self, method: Method, url: &Url, headers: &[(&str, String)]) -> Result<Response> {
        let mut current = url.clone();
        for _ in 0..=MAX_REDIRECTS {
            let resp = self.send(method, &current, headers, RequestBody::Empty)?;
            let redirect =
                matches!(resp.status, 301 | 302 | 303 | 307 | 308) && matches!(method, Method::Get | Method::Head);
            if !redirect {
                return Ok(resp);
            }
            let mut resp = resp;
            let location = resp
                .header("location")
                .ok_or_else(|| Error::UnexpectedResponse(format!("{} without Location", resp.status)))?
                .to_string();
            resp.drain();
            current = current
                .join(&location)
                .map_err(|e| Error::MalformedUri(format!("redirect to {location}: {e}")))?;
            log::debug!("following redirect to {current}");
        }
        Err(Error::UnexpectedResponse(format!(
            "more than {MAX_REDIRECTS} redirects from {url}"
        )))
    }
}

pub(crate) fn parse_url(uri: &str) -> Result<Url> {
    let url = Url::parse(uri).map_err(|e| Error::MalformedUri(format!("{uri}: {e}")))?;
    match url.scheme() {
        "http" | "https" if url.host().is_some() => Ok(url),
        _ => Err(Error::MalformedUri(format!("{uri}: expected absolute http(s) URI"))),
    }
}
