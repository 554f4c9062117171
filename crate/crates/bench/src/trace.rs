//! Access traces: the fragment lists a benchmark replays.
//!
//! On disk a trace is a few `key=value` header lines followed by one
//! `id offset length` line per fragment:
//!
//! ```text
//! trace.version=1
//! object_uri=http://127.0.0.1:8080/events.bin
//! object_size=7000000
//! seed=42
//! 0 5051234 611
//! 1 120 998
//! ```

use std::fmt::Write as _;
use std::path::Path;

use hpcio::ByteRange;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceFragment {
    pub id: u64,
    pub offset: u64,
    pub length: u64,
}

impl TraceFragment {
    pub fn range(&self) -> ByteRange {
        ByteRange::new(self.offset, self.length).expect("validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub object_uri: String,
    pub object_size: u64,
    pub seed: u64,
    pub fragments: Vec<TraceFragment>,
}

/// Generator knobs. Fragment lengths are uniform in `[min_len, max_len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceParams {
    pub object_size: u64,
    pub fragment_count: usize,
    pub min_len: u64,
    pub max_len: u64,
    pub seed: u64,
}

/// Uniform random fragments; identical parameters give identical traces.
pub fn generate_trace(object_uri: &str, p: &TraceParams) -> Result<AccessTrace> {
    if p.fragment_count == 0 {
        return Err(BenchError::InvalidParams("fragment_count must be at least 1".into()));
    }
    if p.min_len == 0 || p.max_len < p.min_len {
        return Err(BenchError::InvalidParams(format!(
            "need max >= min >= 1, got min {} max {}",
            p.min_len, p.max_len
        )));
    }
    if p.object_size < p.max_len {
        return Err(BenchError::InvalidParams(format!(
            "object_size {} is smaller than max fragment {}",
            p.object_size, p.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let fragments = (0..p.fragment_count as u64)
        .map(|id| {
            let length = rng.gen_range(p.min_len..=p.max_len);
            let offset = rng.gen_range(0..=p.object_size - length);
            TraceFragment { id, offset, length }
        })
        .collect();
    Ok(AccessTrace {
        object_uri: object_uri.to_string(),
        object_size: p.object_size,
        seed: p.seed,
        fragments,
    })
}

impl AccessTrace {
    pub fn total_bytes(&self) -> u64 {
        self.fragments.iter().map(|f| f.length).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(64 + self.fragments.len() * 24);
        let _ = writeln!(out, "trace.version={TRACE_VERSION}");
        let _ = writeln!(out, "object_uri={}", self.object_uri);
        let _ = writeln!(out, "object_size={}", self.object_size);
        let _ = writeln!(out, "seed={}", self.seed);
        for f in &self.fragments {
            let _ = writeln!(out, "{} {} {}", f.id, f.offset, f.length);
        }
        out
    }

    pub fn parse(text: &str) -> Result<AccessTrace> {
        let bad = |line: usize, reason: String| BenchError::MalformedTrace { line, reason };
        let mut version = None;
        let mut uri = None;
        let mut size = None;
        let mut seed = 0;
        let mut fragments = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = raw.split_once('=') {
                if !fragments.is_empty() {
                    return Err(bad(line, "header after fragment lines".into()));
                }
                let num = |v: &str| v.parse::<u64>().map_err(|e| bad(line, format!("{k}: {e}")));
                match k {
                    "trace.version" => version = Some(num(v)?),
                    "object_uri" => uri = Some(v.to_string()),
                    "object_size" => size = Some(num(v)?),
                    "seed" => seed = num(v)?,
                    _ => return Err(bad(line, format!("unknown header {k:?}"))),
                }
                continue;
            }
            let fields: Vec<u64> = raw
                .split_whitespace()
                .map(|s| s.parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(line, e.to_string()))?;
            let [id, offset, length] = fields[..] else {
                return Err(bad(line, "expected `id offset length`".into()));
            };
            if ByteRange::new(offset, length).is_err() {
                return Err(bad(line, format!("invalid range {offset}+{length}")));
            }
            fragments.push(TraceFragment { id, offset, length });
        }
        match version {
            Some(v) if v == u64::from(TRACE_VERSION) => {}
            Some(v) => return Err(bad(1, format!("unsupported trace.version {v}"))),
            None => return Err(bad(1, "missing trace.version".into())),
        }
        let object_size = size.ok_or_else(|| bad(1, "missing object_size".into()))?;
        if let Some(f) = fragments.iter().find(|f| f.offset + f.length > object_size) {
            return Err(BenchError::InvalidParams(format!(
                "fragment {} ends past object_size {object_size}",
                f.id
            )));
        }
        Ok(AccessTrace {
            object_uri: uri.unwrap_or_default(),
            object_size,
            seed,
            fragments,
        })
    }

    pub fn load(path: &Path) -> Result<AccessTrace> {
        AccessTrace::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.render())?)
    }
}
