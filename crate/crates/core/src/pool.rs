//! Dynamic pool of keep-alive HTTP/1.1 sessions.
//!
//! Sessions are keyed by `(scheme, host, port, credential)`. An acquire hands
//! out the most recently used idle session for the key, opens a new one when
//! the per-key and global caps allow it, and otherwise waits (bounded by
//! `connect_timeout`) for a release. Each session carries strictly serial
//! request/response exchanges: there is no pipelining.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use url::Url;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Http,
    Https,
}

impl Scheme {
    pub fn default_port(self) -> u16 {
        match self {
            Scheme::Http => 80,
            Scheme::Https => 443,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Http => "http",
            Scheme::Https => "https",
        }
    }
}

pub const ANONYMOUS: &str = "anonymous";

/// Identity of a reusable connection target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SessionKey {
    pub scheme: Scheme,
    pub host: String,
    pub port: u16,
    pub credential_id: String,
}

impl SessionKey {
    pub fn from_url(url: &Url, credential_id: &str) -> Result<Self> {
        let scheme = match url.scheme() {
            "http" => Scheme::Http,
            "https" => Scheme::Https,
            other => return Err(Error::MalformedUri(format!("unsupported scheme {other:?} in {url}"))),
        };
        let host = match url.host() {
            Some(url::Host::Domain(d)) if !d.is_empty() => d.to_ascii_lowercase(),
            Some(url::Host::Ipv4(a)) => a.to_string(),
            Some(url::Host::Ipv6(a)) => format!("[{a}]"),
            _ => return Err(Error::MalformedUri(format!("no host in {url}"))),
        };
        let credential_id = if credential_id.is_empty() {
            ANONYMOUS.to_string()
        } else {
            credential_id.to_string()
        };
        Ok(SessionKey {
            scheme,
            host,
            port: url.port().unwrap_or(scheme.default_port()),
            credential_id,
        })
    }

    /// `host[:port]` as sent in the Host header (port omitted when default).
    pub fn authority(&self) -> String {
        if self.port == self.scheme.default_port() {
            self.host.clone()
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}://{}:{} [{}]",
            self.scheme.as_str(),
            self.host,
            self.port,
            self.credential_id
        )
    }
}

/// Normalize an absolute URI into its session identity.
pub fn session_key(uri: &str, credential_id: &str) -> Result<SessionKey> {
    let url = Url::parse(uri).map_err(|e| Error::MalformedUri(format!("{uri}: {e}")))?;
    SessionKey::from_url(&url, credential_id)
}

/// A bidirectional byte stream the pool can recycle.
pub trait Transport: Read + Write + Send {}
impl<T: Read + Write + Send> Transport for T {}

/// Opens transports for session keys.
pub trait Connector: Send + Sync {
    fn connect(&self, key: &SessionKey) -> io::Result<Box<dyn Transport>>;
}

/// Plain TCP connector. `https` keys are refused: TLS is not bundled, supply
/// a custom [`Connector`] to reach TLS endpoints.
#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub connect_timeout: Duration,
    pub io_timeout: Option<Duration>,
}

impl Default for TcpConnector {
    fn default() -> Self {
        TcpConnector {
            connect_timeout: Duration::from_secs(30),
            io_timeout: Some(Duration::from_secs(60)),
        }
    }
}

impl Connector for TcpConnector {
    fn connect(&self, key: &SessionKey) -> io::Result<Box<dyn Transport>> {
        if key.scheme == Scheme::Https {
            return Err(io::Error::new(
                io::ErrorKind::Unsupported,
                "no TLS connector configured for https",
            ));
        }
        let host = key.host.trim_start_matches('[').trim_end_matches(']');
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, format!("{} did not resolve", key.host));
        for addr in (host, key.port).to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(self.io_timeout)?;
                    stream.set_write_timeout(self.io_timeout)?;
                    return Ok(Box::new(stream));
                }
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolConfig {
    pub max_sessions_per_key: usize,
    pub max_total_sessions: usize,
    pub idle_ttl: Duration,
    /// Upper bound on how long an acquire may wait for a free session.
    pub connect_timeout: Duration,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            max_sessions_per_key: 16,
            max_total_sessions: 128,
            idle_ttl: Duration::from_secs(60),
            connect_timeout: Duration::from_secs(30),
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sessions_per_key == 0 {
            return Err(Error::config("pool.max_per_key", "must be at least 1"));
        }
        if self.max_total_sessions < self.max_sessions_per_key {
            return Err(Error::config("pool.max_total", "must be >= pool.max_per_key"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub sessions_created: u64,
    pub sessions_reused: u64,
    pub sessions_evicted: u64,
    pub close_failures: u64,
    pub current_idle: u64,
    pub current_leased: u64,
    /// Idle + leased + connections being established.
    pub current_open: u64,
}

impl PoolStats {
    /// Flat `key=value` rendering used by the CLI.
    pub fn render(&self) -> String {
        format!(
            "pool.sessions_created={}\npool.sessions_reused={}\npool.sessions_evicted={}\n\
             pool.close_failures={}\npool.current_idle={}\npool.current_leased={}\npool.current_open={}\n",
            self.sessions_created,
            self.sessions_reused,
            self.sessions_evicted,
            self.close_failures,
            self.current_idle,
            self.current_leased,
            self.current_open
        )
    }
}

pub(crate) type Conn = BufReader<Box<dyn Transport>>;

struct IdleSession {
    conn: Conn,
    id: u64,
    created_at: Instant,
    last_used_at: Instant,
    requests_served: u64,
}

#[derive(Default)]
struct State {
    idle: HashMap<SessionKey, Vec<IdleSession>>,
    open_per_key: HashMap<SessionKey, usize>,
    total_open: usize,
    idle_count: usize,
    leased: usize,
    stats: PoolStats,
}

impl State {
    fn forget(&mut self, key: &SessionKey) {
        if let Some(n) = self.open_per_key.get_mut(key) {
            *n -= 1;
            if *n == 0 {
                self.open_per_key.remove(key);
            }
        }
        self.total_open -= 1;
    }

    /// Close the least recently used idle session of any key other than
    /// `except`, to make room under the global cap.
    fn evict_lru_other(&mut self, except: &SessionKey) -> bool {
        let victim = self
            .idle
            .iter()
            .filter(|(k, v)| *k != except && !v.is_empty())
            .min_by_key(|(_, v)| v[0].last_used_at)
            .map(|(k, _)| k.clone());
        let Some(key) = victim else { return false };
        let list = self.idle.get_mut(&key).unwrap();
        let s = list.remove(0);
        if list.is_empty() {
            self.idle.remove(&key);
        }
        drop(s.conn);
        self.idle_count -= 1;
        self.stats.sessions_evicted += 1;
        self.forget(&key);
        true
    }
}

struct Inner {
    config: PoolConfig,
    connector: Box<dyn Connector>,
    state: Mutex<State>,
    released: Condvar,
    next_id: AtomicU64,
}

/// Thread-safe session pool. Clones share the same pool.
#[derive(Clone)]
pub struct SessionPool {
    inner: Arc<Inner>,
}

impl fmt::Debug for SessionPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionPool")
            .field("config", &self.inner.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl SessionPool {
    pub fn new(config: PoolConfig) -> Result<Self> {
        Self::with_connector(config, TcpConnector::default())
    }

    pub fn with_connector(config: PoolConfig, connector: impl Connector + 'static) -> Result<Self> {
        config.validate()?;
        Ok(SessionPool {
            inner: Arc::new(Inner {
                config,
                connector: Box::new(connector),
                state: Mutex::new(State::default()),
                released: Condvar::new(),
                next_id: AtomicU64::new(1),
            }),
        })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.inner.config
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn stats(&self) -> PoolStats {
        let st = self.lock();
        let mut s = st.stats;
        s.current_idle = st.idle_count as u64;
        s.current_leased = st.leased as u64;
        s.current_open = st.total_open as u64;
        s
    }

    /// Open connections (idle, leased or connecting) for one key.
    pub fn open_sessions(&self, key: &SessionKey) -> usize {
        self.lock().open_per_key.get(key).copied().unwrap_or(0)
    }

    /// Lease a session for `key`.
    pub fn acquire(&self, key: &SessionKey) -> Result<PooledSession> {
        let cfg = &self.inner.config;
        let deadline = Instant::now() + cfg.connect_timeout;
        let mut st = self.lock();
        loop {
            let now = Instant::now();
            // most recently used first; expired ones age out here too
            while let Some(s) = st.idle.get_mut(key).and_then(Vec::pop) {
                st.idle_count -= 1;
                if now.duration_since(s.last_used_at) > cfg.idle_ttl {
                    st.stats.sessions_evicted += 1;
                    st.forget(key);
                    continue;
                }
                st.leased += 1;
                st.stats.sessions_reused += 1;
                return Ok(self.lease(key.clone(), s));
            }

            let per_key = st.open_per_key.get(key).copied().unwrap_or(0);
            if per_key < cfg.max_sessions_per_key {
                if st.total_open >= cfg.max_total_sessions {
                    st.evict_lru_other(key);
                }
                if st.total_open < cfg.max_total_sessions {
                    *st.open_per_key.entry(key.clone()).or_default() += 1;
                    st.total_open += 1;
                    drop(st);
                    return self.open(key);
                }
            }

            let remaining = deadline.saturating_duration_since(now);
            if remaining.is_zero() {
                return Err(Error::AcquireTimeout(cfg.connect_timeout));
            }
            st = self
                .inner
                .released
                .wait_timeout(st, remaining)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    fn open(&self, key: &SessionKey) -> Result<PooledSession> {
        match self.inner.connector.connect(key) {
            Ok(transport) => {
                let mut st = self.lock();
                st.leased += 1;
                st.stats.sessions_created += 1;
                drop(st);
                let now = Instant::now();
                let idle = IdleSession {
                    conn: BufReader::with_capacity(64 * 1024, transport),
                    id: self.inner.next_id.fetch_add(1, Ordering::Relaxed),
                    created_at: now,
                    last_used_at: now,
                    requests_served: 0,
                };
                log::debug!("opened session {} to {key}", idle.id);
                Ok(self.lease(key.clone(), idle))
            }
            Err(e) => {
                let mut st = self.lock();
                st.forget(key);
                drop(st);
                self.inner.released.notify_all();
                Err(Error::ConnectFailed(format!("{key}: {e}")))
            }
        }
    }

    fn lease(&self, key: SessionKey, s: IdleSession) -> PooledSession {
        PooledSession {
            key,
            conn: Some(s.conn),
            id: s.id,
            created_at: s.created_at,
            last_used_at: s.last_used_at,
            requests_served: s.requests_served,
            pool: self.clone(),
        }
    }

    /// Return a leased session. Only pass `reusable = true` when the last
    /// response was fully drained, did not ask for `Connection: close`, and
    /// no transport error occurred.
    pub fn release(&self, mut session: PooledSession, reusable: bool) {
        self.release_inner(&mut session, reusable);
    }

    fn release_inner(&self, session: &mut PooledSession, reusable: bool) {
        let Some(mut conn) = session.conn.take() else { return };
        let mut st = self.lock();
        st.leased -= 1;
        let idle_for_key = st.idle.get(&session.key).map_or(0, Vec::len);
        if reusable && idle_for_key < self.inner.config.max_sessions_per_key {
            let now = Instant::now();
            st.idle.entry(session.key.clone()).or_default().push(IdleSession {
                conn,
                id: session.id,
                created_at: session.created_at,
                last_used_at: now.max(session.created_at),
                requests_served: session.requests_served,
            });
            st.idle_count += 1;
        } else {
            st.forget(&session.key);
            if conn.get_mut().flush().is_err() {
                st.stats.close_failures += 1;
            }
            drop(conn);
        }
        drop(st);
        self.inner.released.notify_all();
    }

    /// Close every idle session unused for longer than `idle_ttl` as of `now`.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let ttl = self.inner.config.idle_ttl;
        let mut st = self.lock();
        let mut evicted = Vec::new();
        for (key, list) in st.idle.iter_mut() {
            let before = list.len();
            list.retain(|s| now.saturating_duration_since(s.last_used_at) <= ttl);
            for _ in list.len()..before {
                evicted.push(key.clone());
            }
        }
        st.idle.retain(|_, v| !v.is_empty());
        for key in &evicted {
            st.idle_count -= 1;
            st.stats.sessions_evicted += 1;
            st.forget(key);
        }
        drop(st);
        if !evicted.is_empty() {
            self.inner.released.notify_all();
        }
        evicted.len()
    }

    /// Close all idle sessions.
    pub fn clear_idle(&self) -> usize {
        let mut st = self.lock();
        let drained: Vec<(SessionKey, usize)> = st.idle.drain().map(|(k, v)| (k, v.len())).collect();
        let mut n = 0;
        for (key, count) in drained {
            for _ in 0..count {
                st.forget(&key);
            }
            st.idle_count -= count;
            st.stats.sessions_evicted += count as u64;
            n += count;
        }
        drop(st);
        self.inner.released.notify_all();
        n
    }
}

/// A leased connection. Dropping it without [`SessionPool::release`] closes
/// the connection.
pub struct PooledSession {
    key: SessionKey,
    conn: Option<Conn>,
    id: u64,
    created_at: Instant,
    last_used_at: Instant,
    requests_served: u64,
    pool: SessionPool,
}

impl fmt::Debug for PooledSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PooledSession")
            .field("key", &self.key)
            .field("id", &self.id)
            .field("requests_served", &self.requests_served)
            .finish()
    }
}

impl PooledSession {
    pub fn key(&self) -> &SessionKey {
        &self.key
    }

    /// Pool-unique connection id.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn created_at(&self) -> Instant {
        self.created_at
    }

    pub fn last_used_at(&self) -> Instant {
        self.last_used_at
    }

    pub fn requests_served(&self) -> u64 {
        self.requests_served
    }

    /// Whether this session already carried a request before this lease.
    pub fn is_recycled(&self) -> bool {
        self.requests_served > 0
    }

    pub(crate) fn begin_request(&mut self) {
        self.requests_served += 1;
        self.last_used_at = Instant::now();
    }

    pub(crate) fn conn(&mut self) -> &mut Conn {
        self.conn.as_mut().expect("session already released")
    }

    pub fn release(mut self, reusable: bool) {
        let pool = self.pool.clone();
        pool.release_inner(&mut self, reusable);
    }
}

impl Drop for PooledSession {
    fn drop(&mut self) {
        if self.conn.is_some() {
            let pool = self.pool.clone();
            pool.release_inner(self, false);
        }
    }
}

impl Read for PooledSession {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.conn().read(buf)
    }
}

impl Write for PooledSession {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.conn().get_mut().write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.conn().get_mut().flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// In-memory transport; counts connects.
    #[derive(Default)]
    struct FakeConnector {
        connects: AtomicU64,
        fail: bool,
    }

    struct Loop(VecDeque<u8>);
    impl Read for Loop {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            self.0.read(buf)
        }
    }
    impl Write for Loop {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.extend(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    impl Connector for Arc<FakeConnector> {
        fn connect(&self, _key: &SessionKey) -> io::Result<Box<dyn Transport>> {
            if self.fail {
                return Err(io::Error::new(io::ErrorKind::ConnectionRefused, "refused"));
            }
            self.connects.fetch_add(1, Ordering::SeqCst);
            Ok(Box::new(Loop(VecDeque::new())))
        }
    }

    fn pool(cfg: PoolConfig) -> (SessionPool, Arc<FakeConnector>) {
        let c = Arc::new(FakeConnector::default());
        (SessionPool::with_connector(cfg, c.clone()).unwrap(), c)
    }

    fn key(cred: &str) -> SessionKey {
        session_key("http://data.example:8080/f", cred).unwrap()
    }

    #[test]
    fn key_examples() {
        let k = session_key("http://data.example:8080/f1", "anon").unwrap();
        assert_eq!(
            (k.scheme, k.host.as_str(), k.port, k.credential_id.as_str()),
            (Scheme::Http, "data.example", 8080, "anon")
        );
        let k = session_key("https://Data.Example/f2", "anon").unwrap();
        assert_eq!(
            (k.scheme, k.host.as_str(), k.port),
            (Scheme::Https, "data.example", 443)
        );
        assert!(matches!(session_key("ftp://x/y", "anon"), Err(Error::MalformedUri(_))));
    }

    #[test]
    fn key_normalization_invariants() {
        assert_eq!(
            session_key("http://h/a?x=1#f", "c").unwrap(),
            session_key("http://h:80/b/c", "c").unwrap()
        );
        assert_ne!(
            session_key("http://h/a", "alice").unwrap(),
            session_key("http://h/a", "bob").unwrap()
        );
        assert_eq!(session_key("http://h/a", "").unwrap().credential_id, ANONYMOUS);
        assert!(session_key("not a uri", "c").is_err());
    }

    #[test]
    fn reuse_and_create_paths() {
        let (p, c) = pool(PoolConfig::default());
        let s = p.acquire(&key("a")).unwrap();
        assert_eq!(p.stats().sessions_created, 1);
        let id = s.id();
        p.release(s, true);
        assert_eq!(p.stats().current_idle, 1);
        let s = p.acquire(&key("a")).unwrap();
        assert_eq!(s.id(), id);
        assert_eq!(p.stats().sessions_reused, 1);
        s.release(false);
        let st = p.stats();
        assert_eq!((st.current_idle, st.current_open), (0, 0));
        assert_eq!(c.connects.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn hundred_serial_cycles_one_connection() {
        let (p, c) = pool(PoolConfig::default());
        for _ in 0..100 {
            let mut s = p.acquire(&key("a")).unwrap();
            s.begin_request();
            s.release(true);
        }
        let st = p.stats();
        assert_eq!((st.sessions_created, st.sessions_reused), (1, 99));
        assert_eq!(c.connects.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn mru_order() {
        let (p, _) = pool(PoolConfig::default());
        let a = p.acquire(&key("a")).unwrap();
        let b = p.acquire(&key("a")).unwrap();
        let (ida, idb) = (a.id(), b.id());
        p.release(a, true);
        std::thread::sleep(Duration::from_millis(2));
        p.release(b, true);
        assert_eq!(p.acquire(&key("a")).unwrap().id(), idb);
        assert_ne!(ida, idb);
    }

    #[test]
    fn dropped_lease_closes() {
        let (p, _) = pool(PoolConfig::default());
        drop(p.acquire(&key("a")).unwrap());
        let st = p.stats();
        assert_eq!((st.current_idle, st.current_leased, st.current_open), (0, 0, 0));
    }

    #[test]
    fn credentials_never_share() {
        let (p, _) = pool(PoolConfig::default());
        let a = p.acquire(&key("alice")).unwrap();
        let ida = a.id();
        p.release(a, true);
        let b = p.acquire(&key("bob")).unwrap();
        assert_ne!(b.id(), ida);
    }

    #[test]
    fn acquire_times_out_at_cap() {
        let cfg = PoolConfig {
            max_sessions_per_key: 1,
            max_total_sessions: 1,
            connect_timeout: Duration::from_millis(50),
            ..Default::default()
        };
        let (p, _) = pool(cfg);
        let _held = p.acquire(&key("a")).unwrap();
        let t = Instant::now();
        assert!(matches!(p.acquire(&key("a")), Err(Error::AcquireTimeout(_))));
        assert!(t.elapsed() >= Duration::from_millis(50));
    }

    #[test]
    fn waiter_wakes_on_release() {
        let cfg = PoolConfig {
            max_sessions_per_key: 1,
            max_total_sessions: 1,
            ..Default::default()
        };
        let (p, _) = pool(cfg);
        let held = p.acquire(&key("a")).unwrap();
        let p2 = p.clone();
        let waiter = std::thread::spawn(move || p2.acquire(&key("a")).map(|s| s.id()));
        std::thread::sleep(Duration::from_millis(30));
        let id = held.id();
        held.release(true);
        assert_eq!(waiter.join().unwrap().unwrap(), id);
    }

    #[test]
    fn global_cap_evicts_other_keys_idle() {
        let cfg = PoolConfig {
            max_sessions_per_key: 2,
            max_total_sessions: 2,
            connect_timeout: Duration::from_millis(50),
            ..Default::default()
        };
        let (p, _) = pool(cfg);
        let a1 = p.acquire(&key("a")).unwrap();
        let a2 = p.acquire(&key("a")).unwrap();
        a1.release(true);
        let _b = p.acquire(&key("b")).unwrap();
        assert_eq!(p.stats().sessions_evicted, 1);
        assert_eq!(p.stats().current_open, 2);
        drop(a2);
    }

    #[test]
    fn evict_idle_examples() {
        let cfg = PoolConfig {
            idle_ttl: Duration::from_secs(10),
            ..Default::default()
        };
        let (p, _) = pool(cfg);
        assert_eq!(p.evict_idle(Instant::now()), 0);
        let sessions: Vec<_> = (0..4).map(|_| p.acquire(&key("a")).unwrap()).collect();
        let mut it = sessions.into_iter();
        let leased = it.next().unwrap();
        for s in it {
            s.release(true);
        }
        assert_eq!(p.stats().current_idle, 3);
        // all three idle sessions are older than the ttl at now+11s
        let later = Instant::now() + Duration::from_secs(11);
        assert_eq!(p.evict_idle(later), 3);
        let st = p.stats();
        assert_eq!((st.current_idle, st.current_leased), (0, 1));
        drop(leased);
    }

    #[test]
    fn evict_idle_only_old_sessions() {
        let cfg = PoolConfig {
            idle_ttl: Duration::from_millis(40),
            ..Default::default()
        };
        let (p, _) = pool(cfg);
        let s: Vec<_> = (0..3).map(|_| p.acquire(&key("a")).unwrap()).collect();
        let mut s = s.into_iter();
        s.next().unwrap().release(true);
        s.next().unwrap().release(true);
        std::thread::sleep(Duration::from_millis(60));
        s.next().unwrap().release(true);
        assert_eq!(p.evict_idle(Instant::now()), 2);
        assert_eq!(p.stats().current_idle, 1);
    }

    #[test]
    fn connect_failure_releases_reservation() {
        let c = Arc::new(FakeConnector {
            fail: true,
            ..Default::default()
        });
        let p = SessionPool::with_connector(PoolConfig::default(), c).unwrap();
        assert!(matches!(p.acquire(&key("a")), Err(Error::ConnectFailed(_))));
        assert_eq!(p.stats().current_open, 0);
    }

    #[test]
    fn config_validation() {
        let bad = PoolConfig {
            max_sessions_per_key: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::ConfigInvalid { key, .. }) if key == "pool.max_per_key"));
        let bad = PoolConfig {
            max_sessions_per_key: 8,
            max_total_sessions: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stats_invariant_under_threads() {
        let (p, _) = pool(PoolConfig {
            max_sessions_per_key: 4,
            max_total_sessions: 4,
            ..Default::default()
        });
        let in_use = Arc::new(Mutex::new(std::collections::HashSet::new()));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let p = p.clone();
                let in_use = in_use.clone();
                std::thread::spawn(move || {
                    for j in 0..200 {
                        let s = p.acquire(&key("a")).unwrap();
                        assert!(in_use.lock().unwrap().insert(s.id()), "session leased twice");
                        if (i + j) % 7 == 0 {
                            std::thread::yield_now();
                        }
                        assert!(in_use.lock().unwrap().remove(&s.id()));
                        s.release((i + j) % 5 != 0);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let st = p.stats();
        assert_eq!(st.sessions_created + st.sessions_reused, 1600);
        assert_eq!(st.current_leased, 0);
        assert!(st.current_open <= 4);
    }
}
