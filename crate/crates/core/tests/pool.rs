mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use common::{bed, bed_with, client, client_with, pattern};
use hpcio::pool::{Connector, Transport};
use hpcio::{Client, ClientConfig, SessionKey};
use hpcio_testbed::{FaultEvent, FaultPlan};

#[test]
fn serial_gets_share_one_connection() {
    let b = bed(&[("obj", &pattern(4096, 1))]);
    let c = client();
    for _ in 0..100 {
        c.get(&b.url("/obj")).unwrap();
    }
    let s = c.pool_stats();
    assert_eq!((s.sessions_created, s.sessions_reused), (1, 99));
    assert_eq!(b.server.snapshot_metrics().tcp_accepts, 1);
}

#[test]
fn credentials_never_share_sessions() {
    let b = bed(&[("obj", b"x")]);
    let alice = client_with(|cfg| cfg.credential_id = "alice".into());
    // same pool, different identity
    let bob = hpcio::Agent::new(alice.pool().clone()).with_credential("bob", None);
    let url = url::Url::parse(&b.url("/obj")).unwrap();
    alice.get(&b.url("/obj")).unwrap();
    let mut r = bob.fetch(hpcio::Method::Get, &url, &[]).unwrap();
    r.read_body(10).unwrap();
    alice.get(&b.url("/obj")).unwrap();
    assert_eq!(alice.pool_stats().sessions_created, 2);
    assert_eq!(b.server.snapshot_metrics().tcp_accepts, 2);
}

#[test]
fn server_closing_connections_is_survivable() {
    let b = bed_with(
        &[("obj", &pattern(100, 2))],
        0,
        FaultPlan::new().with(FaultEvent::ConnectionCloseEvery { n: 3 }),
    );
    let c = client();
    for _ in 0..10 {
        assert_eq!(c.get(&b.url("/obj")).unwrap().len(), 100);
    }
    assert!(b.server.snapshot_metrics().tcp_accepts >= 3);
}

#[test]
fn stale_idle_session_is_retried() {
    // first connection answers once and hangs up while the session is idle
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        serve_one(&listener, 1, |_| ok_response(b"old"));
        serve_one(&listener, 1, |_| ok_response(b"new"));
    });
    let c = client();
    let url = format!("http://{addr}/x");
    assert_eq!(c.get(&url).unwrap(), b"old");
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(c.get(&url).unwrap(), b"new");
    server.join().unwrap();
    let s = c.pool_stats();
    assert_eq!(s.sessions_created, 2);
}

fn ok_response(body: &[u8]) -> Vec<u8> {
    let mut out = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n", body.len()).into_bytes();
    out.extend_from_slice(body);
    out
}

/// Serve `requests` requests on one accepted connection, answering each
/// request line with `reply`, then hang up.
fn serve_one(listener: &TcpListener, requests: usize, reply: impl Fn(&str) -> Vec<u8>) {
    let (stream, _) = listener.accept().unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    for _ in 0..requests {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 {
            return;
        }
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            if h.trim().is_empty() {
                break;
            }
        }
        writer.write_all(&reply(line.trim())).unwrap();
    }
}

fn script_server(requests: usize, reply: impl Fn(&str) -> Vec<u8> + Send + 'static) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve_one(&listener, requests, reply));
    addr
}

#[test]
fn chunked_bodies_and_trailers() {
    let addr = script_server(2, |_| {
        b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n4;ext=1\r\nWiki\r\n5\r\npedia\r\n0\r\nX-Trailer: y\r\n\r\n".to_vec()
    });
    let c = client();
    let url = format!("http://{addr}/x");
    assert_eq!(c.get(&url).unwrap(), b"Wikipedia");
    assert_eq!(c.get(&url).unwrap(), b"Wikipedia");
    assert_eq!(c.pool_stats().sessions_created, 1);
}

#[test]
fn interim_responses_are_skipped() {
    let addr = script_server(1, |_| {
        let mut out = b"HTTP/1.1 100 Continue\r\n\r\n".to_vec();
        out.extend(ok_response(b"done"));
        out
    });
    assert_eq!(client().get(&format!("http://{addr}/x")).unwrap(), b"done");
}

#[test]
fn redirects_are_followed_for_reads_only() {
    let b = bed(&[("real", b"payload")]);
    let target = b.url("/real");
    let addr = script_server(3, move |_| {
        format!("HTTP/1.1 302 Found\r\nLocation: {target}\r\nContent-Length: 0\r\n\r\n").into_bytes()
    });
    let c = client();
    let url = format!("http://{addr}/moved");
    assert_eq!(c.get(&url).unwrap(), b"payload");
    assert_eq!(c.stat(&url).unwrap().size, Some(7));
    // PUT is never redirected automatically
    let err = c.put(&url, b"x").unwrap_err();
    assert_eq!(err.status(), Some(302));
}

#[test]
fn redirect_loop_is_bounded() {
    let addr = script_server(6, |_| {
        b"HTTP/1.1 301 Moved\r\nLocation: /again\r\nContent-Length: 0\r\n\r\n".to_vec()
    });
    let err = client().get(&format!("http://{addr}/start")).unwrap_err();
    assert!(
        matches!(err, hpcio::Error::UnexpectedResponse(ref m) if m.contains("redirects")),
        "{err}"
    );
}

#[test]
fn body_without_length_reads_to_close() {
    let addr = script_server(1, |_| {
        b"HTTP/1.1 200 OK\r\nConnection: close\r\n\r\nuntil the end".to_vec()
    });
    // the script thread drops the socket after replying
    assert_eq!(client().get(&format!("http://{addr}/x")).unwrap(), b"until the end");
}

#[test]
fn truncated_body_is_a_transport_error() {
    let addr = script_server(1, |_| b"HTTP/1.1 200 OK\r\nContent-Length: 100\r\n\r\nshort".to_vec());
    let err = client().get(&format!("http://{addr}/x")).unwrap_err();
    assert!(matches!(err, hpcio::Error::Transport(_)), "{err}");
}

#[test]
fn https_is_refused_without_a_tls_connector() {
    let err = client().get("https://127.0.0.1:1/x").unwrap_err();
    assert!(err.is_unavailable(), "{err}");
}

/// Stand-in for a TLS layer: https keys are carried over plain TCP to a
/// fixed address, as a terminating proxy would.
struct PlainTlsShim {
    upstream: SocketAddr,
    seen: Arc<std::sync::Mutex<Vec<SessionKey>>>,
}

impl Connector for PlainTlsShim {
    fn connect(&self, key: &SessionKey) -> std::io::Result<Box<dyn Transport>> {
        self.seen.lock().unwrap().push(key.clone());
        let s = TcpStream::connect_timeout(&self.upstream, Duration::from_secs(2))?;
        Ok(Box::new(s))
    }
}

#[test]
fn custom_connector_serves_https_keys() {
    let data = pattern(1000, 3);
    let b = bed(&[("obj", &data)]);
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let shim = PlainTlsShim {
        upstream: b.server.addr(),
        seen: seen.clone(),
    };
    let c = Client::with_connector(ClientConfig::default(), shim).unwrap();
    let h = c.open("https://storage.example/obj").unwrap();
    assert_eq!(h.pread(10, 10).unwrap(), &data[10..20]);
    let keys = seen.lock().unwrap();
    assert_eq!(keys.len(), 1);
    assert_eq!(keys[0].port, 443);
    assert_eq!(keys[0].host, "storage.example");
}

#[test]
fn saturated_pool_times_out() {
    let b = bed(&[("obj", &pattern(10, 4))]);
    let c = client_with(|cfg| {
        cfg.pool.max_sessions_per_key = 1;
        cfg.pool.max_total_sessions = 1;
        cfg.pool.connect_timeout = Duration::from_millis(200);
    });
    let url = url::Url::parse(&b.url("/obj")).unwrap();
    let held = c.agent().fetch(hpcio::Method::Get, &url, &[]).unwrap();
    let err = c.get(&b.url("/obj")).unwrap_err();
    assert_eq!(err, hpcio::Error::AcquireTimeout(Duration::from_millis(200)));
    drop(held);
    assert_eq!(c.get(&b.url("/obj")).unwrap().len(), 10);
}

#[test]
fn idle_sessions_expire() {
    let b = bed(&[("obj", b"x")]);
    let c = client();
    c.get(&b.url("/obj")).unwrap();
    assert_eq!(c.pool_stats().current_idle, 1);
    let later = std::time::Instant::now() + Duration::from_secs(3600);
    assert_eq!(c.pool().evict_idle(later), 1);
    assert_eq!(c.pool_stats().current_open, 0);
}
