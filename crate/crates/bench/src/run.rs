//! Replaying a trace against a server and measuring it.

use std::time::{Duration, Instant};

use hpcio::{
    execute_ranged_get, failover_read, plan_fragments, vector_read_with_stats, ByteRange, Client, ClientConfig,
    FragmentRequest, MemorySink,
};
use sha2::{Digest, Sha256};
use url::Url;

use crate::error::{BenchError, Result};
use crate::report::{BenchMode, BenchReport, Repetition};
use crate::trace::AccessTrace;

/// Where server-side counters come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MetricsSource {
    /// `/.metrics` on the object's origin, if it answers.
    #[default]
    Auto,
    /// This URL; failing to read it aborts the run.
    Url(String),
    Off,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub repeat: usize,
    pub metrics: MetricsSource,
    /// Overrides the trace's `object_uri`.
    pub object_uri: Option<String>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeat: 5,
            metrics: MetricsSource::Auto,
            object_uri: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    requests: u64,
    connections: u64,
    bytes: u64,
}

struct Probe {
    client: Client,
    url: Url,
}

impl Probe {
    fn read(&self) -> Result<Counters> {
        let body = self.client.get(self.url.as_str())?;
        let text = String::from_utf8_lossy(&body);
        let mut c = Counters::default();
        let mut seen = 0;
        for (k, v) in text.lines().filter_map(|l| l.split_once('=')) {
            let slot = match k {
                "requests_total" => &mut c.requests,
                "tcp_accepts" => &mut c.connections,
                "bytes_sent" => &mut c.bytes,
                _ => continue,
            };
            *slot = v.trim().parse().map_err(|_| {
                BenchError::InvalidParams(format!("metrics endpoint returned a bad value for {k}: {v:?}"))
            })?;
            seen += 1;
        }
        if seen < 3 {
            return Err(BenchError::InvalidParams(format!(
                "{} is not a metrics document",
                self.url
            )));
        }
        Ok(c)
    }
}

fn probe_for(source: &MetricsSource, object: &Url) -> Result<Option<Probe>> {
    let url = match source {
        MetricsSource::Off => return Ok(None),
        MetricsSource::Url(u) => Url::parse(u).map_err(|e| BenchError::InvalidParams(format!("metrics URL: {e}")))?,
        MetricsSource::Auto => object.join("/.metrics").expect("absolute path joins"),
    };
    // a separate pool, so probing never touches the measured sessions
    let cfg = ClientConfig {
        tcp_connect_timeout: Duration::from_secs(2),
        ..ClientConfig::default()
    };
    let probe = Probe {
        client: Client::new(cfg)?,
        url,
    };
    match (source, probe.read()) {
        (_, Ok(_)) => Ok(Some(probe)),
        (MetricsSource::Auto, Err(_)) => Ok(None),
        (_, Err(e)) => Err(e),
    }
}

/// What one pass over the trace produced.
struct Pass {
    digests: Vec<[u8; 32]>,
    batch_timings: Vec<Duration>,
    extra_bytes: u64,
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn distinct_bytes(ranges: &[ByteRange]) -> u64 {
    let mut spans: Vec<(u64, u64)> = ranges.iter().map(|r| (r.offset(), r.end())).collect();
    spans.sort_unstable();
    let (mut total, mut end) = (0, 0);
    for (s, e) in spans {
        let s = s.max(end);
        if e > s {
            total += e - s;
        }
        end = end.max(e);
    }
    total
}

fn fragment_failures(outcomes: Vec<hpcio::Result<()>>, trace: &AccessTrace) -> Result<()> {
    for (o, f) in outcomes.into_iter().zip(&trace.fragments) {
        if let Err(source) = o {
            return Err(BenchError::Fragment { id: f.id, source });
        }
    }
    Ok(())
}

fn run_sequential(client: &Client, url: &Url, trace: &AccessTrace) -> Result<Pass> {
    let limits = &client.config().engine;
    let mut digests = Vec::with_capacity(trace.fragments.len());
    for f in &trace.fragments {
        let range = f.range();
        let resp = execute_ranged_get(client.agent(), url, &[range], limits)?;
        let bytes = resp.slice(&range).ok_or_else(|| BenchError::Fragment {
            id: f.id,
            source: hpcio::Error::UnexpectedResponse("reply does not cover the fragment".into()),
        })?;
        digests.push(digest(bytes));
    }
    Ok(Pass {
        digests,
        batch_timings: Vec::new(),
        extra_bytes: 0,
    })
}

fn run_vectored(client: &Client, url: &Url, trace: &AccessTrace, failover: bool) -> Result<Pass> {
    let cfg = client.config();
    let ranges: Vec<ByteRange> = trace.fragments.iter().map(|f| f.range()).collect();
    let mut bufs: Vec<Vec<u8>> = ranges.iter().map(|r| vec![0u8; r.len() as usize]).collect();
    let mut frags: Vec<FragmentRequest<'_>> = trace
        .fragments
        .iter()
        .zip(bufs.iter_mut())
        .map(|(f, b)| FragmentRequest::new(f.id, f.range(), b))
        .collect();
    let (outcomes, batch_timings, extra_bytes) = if failover {
        let outcomes = failover_read(client.agent(), url, &mut frags, &cfg.vector, &cfg.engine)?;
        (
            outcomes,
            Vec::new(),
            plan_fragments(&ranges, &cfg.vector).stats.extra_bytes,
        )
    } else {
        let out = vector_read_with_stats(client.agent(), url, &mut frags, &cfg.vector, &cfg.engine)?;
        (out.outcomes, out.stats.batch_durations, out.stats.plan.extra_bytes)
    };
    drop(frags);
    fragment_failures(outcomes, trace)?;
    Ok(Pass {
        digests: bufs.iter().map(|b| digest(b)).collect(),
        batch_timings,
        extra_bytes,
    })
}

fn run_multistream(client: &Client, url: &Url, trace: &AccessTrace) -> Result<Pass> {
    let sink = MemorySink::new();
    client.download_multistream(url.as_str(), &sink)?;
    let data = sink.into_inner();
    let mut digests = Vec::with_capacity(trace.fragments.len());
    for f in &trace.fragments {
        let bytes = data
            .get(f.offset as usize..(f.offset + f.length) as usize)
            .ok_or(BenchError::Fragment {
                id: f.id,
                source: hpcio::Error::RangeNotSatisfiable {
                    total: Some(data.len() as u64),
                },
            })?;
        digests.push(digest(bytes));
    }
    let ranges: Vec<ByteRange> = trace.fragments.iter().map(|f| f.range()).collect();
    Ok(Pass {
        digests,
        batch_timings: Vec::new(),
        extra_bytes: data.len() as u64 - distinct_bytes(&ranges),
    })
}

fn config_echo(config: &ClientConfig, mode: BenchMode, repeat: usize) -> Vec<(String, String)> {
    let mut out = vec![
        ("repeat".to_string(), repeat.to_string()),
        (
            "pool.max_per_key".to_string(),
            config.pool.max_sessions_per_key.to_string(),
        ),
        ("pool.max_total".to_string(), config.pool.max_total_sessions.to_string()),
    ];
    match mode {
        BenchMode::Sequential => {}
        BenchMode::Vectored | BenchMode::Failover => {
            let v = &config.vector;
            out.push(("vector.gap_threshold".into(), v.gap_threshold.to_string()));
            out.push((
                "vector.max_ranges_per_request".into(),
                v.max_ranges_per_request.to_string(),
            ));
            out.push((
                "vector.max_range_header_bytes".into(),
                v.max_range_header_bytes.to_string(),
            ));
            out.push((
                "vector.max_concurrent_batches".into(),
                v.max_concurrent_batches.to_string(),
            ));
        }
        BenchMode::Multistream => {
            out.push(("metalink.streams".into(), config.streams.streams.to_string()));
            out.push(("metalink.chunk_size".into(), config.streams.chunk_size.to_string()));
        }
    }
    out
}

/// Replay `trace` `opts.repeat` times, each repetition on a fresh session
/// pool, and report wall time and server-side counter deltas.
///
/// Client errors stop the run: the report then carries the repetitions
/// that completed and `error` is set.
pub fn run_benchmark(
    trace: &AccessTrace,
    mode: BenchMode,
    config: &ClientConfig,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if opts.repeat == 0 {
        return Err(BenchError::InvalidParams("repeat must be at least 1".into()));
    }
    config.validate()?;
    let uri = opts.object_uri.as_deref().unwrap_or(&trace.object_uri);
    let url = Url::parse(uri).map_err(|e| BenchError::InvalidParams(format!("object URI {uri:?}: {e}")))?;
    let probe = probe_for(&opts.metrics, &url)?;

    let mut report = BenchReport {
        mode: Some(mode),
        object_uri: url.to_string(),
        fragments: trace.fragments.len(),
        payload_bytes: trace.total_bytes(),
        config: config_echo(config, mode, opts.repeat),
        ..BenchReport::default()
    };

    for _ in 0..opts.repeat {
        let client = Client::new(config.clone())?;
        let before = probe.as_ref().map(Probe::read).transpose()?;
        let started = Instant::now();
        let pass = match mode {
            BenchMode::Sequential => run_sequential(&client, &url, trace),
            BenchMode::Vectored => run_vectored(&client, &url, trace, false),
            BenchMode::Failover => run_vectored(&client, &url, trace, true),
            BenchMode::Multistream => run_multistream(&client, &url, trace),
        };
        let wall = started.elapsed();
        let pass = match pass {
            Ok(p) => p,
            Err(e) => {
                report.error = Some(e.to_string());
                return Ok(report);
            }
        };
        // sessions are closed before the after-snapshot so the server has
        // seen everything this repetition did
        drop(client);
        let after = probe.as_ref().map(Probe::read).transpose()?;
        let delta = before.zip(after).map(|(b, a)| Counters {
            requests: a.requests - b.requests,
            connections: a.connections - b.connections,
            bytes: a.bytes - b.bytes,
        });
        report.repetitions.push(Repetition {
            wall,
            requests: delta.map(|d| d.requests),
            connections: delta.map(|d| d.connections),
            bytes: delta.map(|d| d.bytes),
        });
        report.digests_from(pass);
    }
    Ok(report)
}

impl BenchReport {
    fn digests_from(&mut self, pass: Pass) {
        self.fragment_digests = pass.digests;
        self.batch_timings = pass.batch_timings;
        self.extra_bytes = pass.extra_bytes;
    }
}
