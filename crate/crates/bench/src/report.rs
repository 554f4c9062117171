//! Benchmark reports.
//!
//! The key=value rendering is versioned: `report.version=1` is always the
//! first line, followed by the summary keys, the config echo under
//! `config.*`, and per-batch timings under `batch.N.ms`. Counter keys are
//! omitted when the server exposed no metrics.

use std::fmt::{self, Write as _};
use std::io;
use std::str::FromStr;
use std::time::Duration;

use crate::error::Result;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    /// One single-range GET per fragment, in trace order.
    Sequential,
    /// One vectored read of the whole trace.
    Vectored,
    /// Vectored read with replica fail-over.
    Failover,
    /// Whole-object multi-source download, fragments cut locally.
    Multistream,
}

impl BenchMode {
    pub const ALL: [BenchMode; 4] = [
        BenchMode::Sequential,
        BenchMode::Vectored,
        BenchMode::Failover,
        BenchMode::Multistream,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Sequential => "sequential",
            BenchMode::Vectored => "vectored",
            BenchMode::Failover => "failover",
            BenchMode::Multistream => "multistream",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected sequential, vectored, failover or multistream)"))
    }
}

/// Round-trip regimes, as per-request delays to configure a test server with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyPreset {
    Lan,
    Geant,
    Wan,
}

impl LatencyPreset {
    pub fn per_request_delay(self) -> Duration {
        match self {
            LatencyPreset::Lan => Duration::from_millis(2),
            LatencyPreset::Geant => Duration::from_millis(40),
            LatencyPreset::Wan => Duration::from_millis(250),
        }
    }
}

impl FromStr for LatencyPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lan" => Ok(LatencyPreset::Lan),
            "geant" => Ok(LatencyPreset::Geant),
            "wan" => Ok(LatencyPreset::Wan),
            _ => Err(format!("unknown latency preset {s:?}")),
        }
    }
}

/// One timed pass over the trace. Counters are server-side deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Repetition {
    pub wall: Duration,
    pub requests: Option<u64>,
    pub connections: Option<u64>,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub mode: Option<BenchMode>,
    pub object_uri: String,
    pub fragments: usize,
    /// Bytes the trace asked for, per repetition.
    pub payload_bytes: u64,
    /// Gap bytes the coalescing plan fetches on top of the payload.
    pub extra_bytes: u64,
    pub repetitions: Vec<Repetition>,
    /// Per-batch timings of the last repetition (vectored modes only).
    pub batch_timings: Vec<Duration>,
    /// SHA-256 of each fragment's bytes, in trace order, from the last
    /// repetition.
    pub fragment_digests: Vec<[u8; 32]>,
    pub config: Vec<(String, String)>,
    /// Set when the run was aborted; the repetitions above completed.
    pub error: Option<String>,
}

fn sum(values: impl Iterator<Item = Option<u64>>) -> Option<u64> {
    values.sum()
}

impl BenchReport {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }

    /// Total over all repetitions; `None` without server metrics.
    pub fn requests_issued(&self) -> Option<u64> {
        sum(self.repetitions.iter().map(|r| r.requests))
    }

    pub fn tcp_connections(&self) -> Option<u64> {
        sum(self.repetitions.iter().map(|r| r.connections))
    }

    pub fn bytes_transferred(&self) -> Option<u64> {
        sum(self.repetitions.iter().map(|r| r.bytes))
    }

    pub fn wall_mean(&self) -> Duration {
        match self.repetitions.len() {
            0 => Duration::ZERO,
            n => self.repetitions.iter().map(|r| r.wall).sum::<Duration>() / n as u32,
        }
    }

    pub fn wall_min(&self) -> Duration {
        self.repetitions.iter().map(|r| r.wall).min().unwrap_or_default()
    }

    pub fn wall_max(&self) -> Duration {
        self.repetitions.iter().map(|r| r.wall).max().unwrap_or_default()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let ms = |d: Duration| format!("{:.3}", d.as_secs_f64() * 1e3);
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("report.version", &REPORT_VERSION);
        kv("mode", &self.mode.map(BenchMode::as_str).unwrap_or("none"));
        kv("valid", &self.is_valid());
        if let Some(e) = &self.error {
            kv("error", &e.replace('\n', " "));
        }
        kv("object_uri", &self.object_uri);
        kv("fragments", &self.fragments);
        kv("repetitions", &self.repetitions.len());
        kv("wall_ms.mean", &ms(self.wall_mean()));
        kv("wall_ms.min", &ms(self.wall_min()));
        kv("wall_ms.max", &ms(self.wall_max()));
        if let Some(n) = self.requests_issued() {
            kv("requests_issued", &n);
        }
        if let Some(n) = self.tcp_connections() {
            kv("tcp_connections", &n);
        }
        if let Some(n) = self.bytes_transferred() {
            kv("bytes_transferred", &n);
        }
        kv("payload_bytes", &self.payload_bytes);
        kv("extra_bytes", &self.extra_bytes);
        if !self.fragment_digests.is_empty() {
            kv("fragment_digest", &self.combined_digest());
        }
        for (k, v) in &self.config {
            kv(&format!("config.{k}"), v);
        }
        for (i, d) in self.batch_timings.iter().enumerate() {
            kv(&format!("batch.{i}.ms"), &ms(*d));
        }
        out
    }

    /// Digest over the per-fragment digests, so modes can be compared at a
    /// glance.
    pub fn combined_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in &self.fragment_digests {
            h.update(d);
        }
        hex::encode(h.finalize())
    }

    /// Per-repetition rows: repetition, wall_ms, requests, connections, bytes.
    pub fn write_csv(&self, out: impl io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["repetition", "wall_ms", "requests", "connections", "bytes"])?;
        let opt = |v: Option<u64>| v.map(|n| n.to_string()).unwrap_or_default();
        for (i, r) in self.repetitions.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:.3}", r.wall.as_secs_f64() * 1e3),
                opt(r.requests),
                opt(r.connections),
                opt(r.bytes),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(ms: u64, requests: u64) -> Repetition {
        Repetition {
            wall: Duration::from_millis(ms),
            requests: Some(requests),
            connections: Some(1),
            bytes: Some(100),
        }
    }

    #[test]
    fn modes_parse() {
        for m in BenchMode::ALL {
            assert_eq!(m.as_str().parse::<BenchMode>().unwrap(), m);
        }
        assert!("turbo".parse::<BenchMode>().is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(
            "geant".parse::<LatencyPreset>().unwrap().per_request_delay(),
            Duration::from_millis(40)
        );
        assert!("moon".parse::<LatencyPreset>().is_err());
    }

    #[test]
    fn rendering() {
        let r = BenchReport {
            mode: Some(BenchMode::Vectored),
            object_uri: "http://h/x".into(),
            fragments: 3,
            repetitions: vec![rep(10, 1), rep(30, 1)],
            config: vec![("vector.gap_threshold".into(), "2048".into())],
            batch_timings: vec![Duration::from_micros(1500)],
            ..BenchReport::default()
        };
        let text = r.render();
        assert!(text.starts_with("report.version=1\n"));
        for line in [
            "mode=vectored",
            "valid=true",
            "wall_ms.mean=20.000",
            "requests_issued=2",
            "tcp_connections=2",
            "config.vector.gap_threshold=2048",
            "batch.0.ms=1.500",
        ] {
            assert!(text.lines().any(|l| l == line), "{line} missing from\n{text}");
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "repetition,wall_ms,requests,connections,bytes\n0,10.000,1,1,100\n1,30.000,1,1,100\n"
        );
    }

    #[test]
    fn missing_counters_are_omitted() {
        let r = BenchReport {
            repetitions: vec![Repetition {
                wall: Duration::from_millis(1),
                requests: None,
                connections: None,
                bytes: None,
            }],
            error: Some("boom".into()),
            ..BenchReport::default()
        };
        let text = r.render();
        assert!(!text.contains("requests_issued"));
        assert!(text.contains("valid=false\nerror=boom\n"));
    }
}
