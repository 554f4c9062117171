//! Vectored reads: many small fragments served by few multi-range GETs.
//!
//! A call plans (sort, coalesce across small gaps), partitions the coalesced
//! ranges into batches that fit one `Range` header, dispatches the batches
//! over the pool and scatters the returned bytes into each fragment.
//!
//! Servers that do not cooperate still yield correct bytes. A batch answered
//! with a superset or the full body is sliced locally; ranges a server left
//! out (single-range-only servers, broken multipart) are refetched one GET
//! per range.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use url::Url;

use crate::engine::{execute_ranged_get, EngineLimits, RangedResponse, ResponseKind};
use crate::error::{Error, Result};
use crate::http::Agent;
use crate::multipart::RangePart;
use crate::range::{range_spec_len, ByteRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorConfig {
    /// Fragments separated by at most this many bytes are read as one range.
    pub gap_threshold: u64,
    pub max_ranges_per_request: usize,
    /// Budget for the whole `Range` header value, `bytes=` included.
    pub max_range_header_bytes: usize,
    pub max_concurrent_batches: usize,
}

impl Default for VectorConfig {
    fn default() -> Self {
        VectorConfig {
            gap_threshold: 2048,
            max_ranges_per_request: 200,
            max_range_header_bytes: 7000,
            max_concurrent_batches: 4,
        }
    }
}

impl VectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_ranges_per_request == 0 {
            return Err(Error::config("vector.max_ranges_per_request", "must be at least 1"));
        }
        // "bytes=" plus the shortest spec "0-0"
        if self.max_range_header_bytes < 9 {
            return Err(Error::config("vector.max_range_header_bytes", "must be at least 9"));
        }
        if self.max_concurrent_batches == 0 {
            return Err(Error::config("vector.max_concurrent_batches", "must be at least 1"));
        }
        Ok(())
    }
}

/// One fragment the caller wants, and where its bytes go.
#[derive(Debug)]
pub struct FragmentRequest<'a> {
    pub id: u64,
    pub range: ByteRange,
    pub destination: &'a mut [u8],
}

impl<'a> FragmentRequest<'a> {
    pub fn new(id: u64, range: ByteRange, destination: &'a mut [u8]) -> Self {
        FragmentRequest { id, range, destination }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub input_fragments: usize,
    pub coalesced_ranges: usize,
    pub batch_count: usize,
    /// Coalesced bytes that no fragment asked for.
    pub extra_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentSlot {
    pub coalesced: usize,
    pub offset_in_range: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VectorPlan {
    /// Sorted, pairwise disjoint.
    pub coalesced: Vec<ByteRange>,
    /// Contiguous runs of indices into `coalesced`.
    pub batches: Vec<Vec<usize>>,
    /// Indexed like the input fragments.
    pub mapping: Vec<FragmentSlot>,
    pub stats: PlanStats,
}

/// Sort and coalesce. Overlapping and duplicate fragments share bytes.
pub fn normalize_fragments(ranges: &[ByteRange], config: &VectorConfig) -> VectorPlan {
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    order.sort_by_key(|&i| (ranges[i].offset(), ranges[i].end()));

    let mut coalesced: Vec<ByteRange> = Vec::new();
    let mut owner = vec![0usize; ranges.len()];
    let mut requested = 0u64;
    // end of the union of requested bytes seen so far
    let mut union_end = 0u64;
    for &i in &order {
        let r = ranges[i];
        let fresh_start = r.offset().max(union_end);
        if r.end() > fresh_start {
            requested += r.end() - fresh_start;
        }
        union_end = union_end.max(r.end());

        match coalesced.last_mut() {
            Some(last) if r.offset() <= last.end().saturating_add(config.gap_threshold) => {
                if r.end() > last.end() {
                    *last = ByteRange::new(last.offset(), r.end() - last.offset()).expect("grows a valid range");
                }
            }
            _ => coalesced.push(r),
        }
        owner[i] = coalesced.len() - 1;
    }

    let mapping = ranges
        .iter()
        .zip(&owner)
        .map(|(r, &c)| FragmentSlot {
            coalesced: c,
            offset_in_range: r.offset() - coalesced[c].offset(),
        })
        .collect();
    let total: u64 = coalesced.iter().map(ByteRange::len).sum();
    VectorPlan {
        stats: PlanStats {
            input_fragments: ranges.len(),
            coalesced_ranges: coalesced.len(),
            batch_count: 0,
            extra_bytes: total - requested,
        },
        coalesced,
        batches: Vec::new(),
        mapping,
    }
}

/// Greedy left-to-right split so each batch fits both request limits.
pub fn partition_ranges(mut plan: VectorPlan, config: &VectorConfig) -> VectorPlan {
    const PREFIX: usize = "bytes=".len();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut header_len = PREFIX;
    for (i, r) in plan.coalesced.iter().enumerate() {
        let spec = range_spec_len(r);
        let added = if current.is_empty() { spec } else { spec + 1 };
        let fits = current.len() < config.max_ranges_per_request && header_len + added <= config.max_range_header_bytes;
        if !fits && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            header_len = PREFIX;
        }
        header_len += if current.is_empty() { spec } else { spec + 1 };
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    plan.stats.batch_count = batches.len();
    plan.batches = batches;
    plan
}

pub fn plan_fragments(ranges: &[ByteRange], config: &VectorConfig) -> VectorPlan {
    partition_ranges(normalize_fragments(ranges, config), config)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VectorStats {
    pub plan: PlanStats,
    /// Every GET this call issued, fallbacks included.
    pub requests: usize,
    pub per_range_fallbacks: usize,
    pub full_body_responses: usize,
    pub batch_durations: Vec<Duration>,
}

#[derive(Debug)]
pub struct VectorOutcome {
    /// Indexed like the input fragments.
    pub outcomes: Vec<Result<()>>,
    pub stats: VectorStats,
}

impl VectorOutcome {
    pub fn all_ok(&self) -> bool {
        self.outcomes.iter().all(Result::is_ok)
    }
}

/// Read every fragment. Per-fragment failures are reported in the returned
/// list; the call itself fails only when no batch got any answer at all.
pub fn vector_read(
    agent: &Agent,
    url: &Url,
    fragments: &mut [FragmentRequest<'_>],
    config: &VectorConfig,
    limits: &EngineLimits,
) -> Result<Vec<Result<()>>> {
    vector_read_with_stats(agent, url, fragments, config, limits).map(|o| o.outcomes)
}

pub fn vector_read_with_stats(
    agent: &Agent,
    url: &Url,
    fragments: &mut [FragmentRequest<'_>],
    config: &VectorConfig,
    limits: &EngineLimits,
) -> Result<VectorOutcome> {
    config.validate()?;
    for f in fragments.iter() {
        if f.destination.len() as u64 != f.range.len() {
            return Err(Error::InvalidRange {
                offset: f.range.offset(),
                length: f.destination.len() as u64,
            });
        }
    }
    let ranges: Vec<ByteRange> = fragments.iter().map(|f| f.range).collect();
    let plan = plan_fragments(&ranges, config);
    if plan.batches.is_empty() {
        return Ok(VectorOutcome {
            outcomes: Vec::new(),
            stats: VectorStats {
                plan: plan.stats,
                ..VectorStats::default()
            },
        });
    }

    let run = BatchRun {
        agent,
        url,
        limits,
        plan: &plan,
        full_body: OnceLock::new(),
        requests: AtomicUsize::new(0),
        per_range: AtomicUsize::new(0),
        full_bodies: AtomicUsize::new(0),
    };
    let served = run.dispatch(config.max_concurrent_batches);

    // whole-call failure: nothing came back and it was not merely EOF
    let any_answer = served.batches.iter().any(|b| b.answered);
    if !any_answer {
        if let Some(e) = served.batches.iter().flat_map(|b| b.ranges.iter()).find_map(|r| {
            r.as_ref()
                .err()
                .filter(|e| !matches!(e, Error::RangeNotSatisfiable { .. }))
        }) {
            return Err(e.clone());
        }
    }

    let mut per_coalesced: Vec<Option<&Result<Served>>> = vec![None; plan.coalesced.len()];
    for (batch, result) in plan.batches.iter().zip(&served.batches) {
        for (&c, r) in batch.iter().zip(&result.ranges) {
            per_coalesced[c] = Some(r);
        }
    }
    let outcomes = fragments
        .iter_mut()
        .zip(&plan.mapping)
        .map(|(f, slot)| {
            let served = per_coalesced[slot.coalesced].expect("every coalesced range is in a batch");
            scatter(f, served)
        })
        .collect();

    Ok(VectorOutcome {
        outcomes,
        stats: VectorStats {
            plan: plan.stats,
            requests: run.requests.load(Ordering::Relaxed),
            per_range_fallbacks: run.per_range.load(Ordering::Relaxed),
            full_body_responses: run.full_bodies.load(Ordering::Relaxed),
            batch_durations: served.durations,
        },
    })
}

/// Bytes that back one coalesced range, possibly short at end of object.
#[derive(Debug, Clone)]
struct Served {
    part: Arc<RangePart>,
    total: Option<u64>,
}

fn scatter(f: &mut FragmentRequest<'_>, served: &Result<Served>) -> Result<()> {
    let served = served.as_ref().map_err(Clone::clone)?;
    if let Some(bytes) = served.part.slice(&f.range) {
        f.destination.copy_from_slice(bytes);
        return Ok(());
    }
    match served.total {
        Some(total) if f.range.end() > total => Err(Error::RangeNotSatisfiable { total: Some(total) }),
        _ => Err(Error::UnexpectedResponse(format!(
            "server did not return bytes {}",
            f.range
        ))),
    }
}

struct BatchResult {
    /// Aligned with the batch's coalesced indices.
    ranges: Vec<Result<Served>>,
    answered: bool,
}

struct Dispatched {
    batches: Vec<BatchResult>,
    durations: Vec<Duration>,
}

struct BatchRun<'r> {
    agent: &'r Agent,
    url: &'r Url,
    limits: &'r EngineLimits,
    plan: &'r VectorPlan,
    /// A server that ignored Range once will ignore it for every batch.
    full_body: OnceLock<Served>,
    requests: AtomicUsize,
    per_range: AtomicUsize,
    full_bodies: AtomicUsize,
}

impl BatchRun<'_> {
    fn dispatch(&self, max_workers: usize) -> Dispatched {
        let n = self.plan.batches.len();
        let slots: Mutex<Vec<Option<(BatchResult, Duration)>>> = Mutex::new((0..n).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let work = || loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= n {
                break;
            }
            let started = Instant::now();
            let result = self.run_batch(&self.plan.batches[i]);
            slots.lock().unwrap()[i] = Some((result, started.elapsed()));
        };
        let workers = max_workers.min(n);
        if workers <= 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        let (batches, durations) = slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|s| s.expect("every batch ran"))
            .unzip();
        Dispatched { batches, durations }
    }

    fn get(&self, ranges: &[ByteRange]) -> Result<RangedResponse> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = execute_ranged_get(self.agent, self.url, ranges, self.limits)?;
        if resp.kind == ResponseKind::FullBody {
            self.full_bodies.fetch_add(1, Ordering::Relaxed);
        }
        Ok(resp)
    }

    fn run_batch(&self, batch: &[usize]) -> BatchResult {
        let ranges: Vec<ByteRange> = batch.iter().map(|&c| self.plan.coalesced[c]).collect();
        if let Some(full) = self.full_body.get() {
            return BatchResult {
                ranges: ranges.iter().map(|r| locate(r, std::slice::from_ref(full))).collect(),
                answered: true,
            };
        }

        let resp = match self.get(&ranges) {
            Ok(resp) => resp,
            Err(Error::MalformedMultipart(msg)) => {
                log::debug!("multipart reply unusable ({msg}); one GET per range");
                return self.per_range(&ranges);
            }
            Err(e) => {
                log::debug!("batch of {} ranges failed: {e}", ranges.len());
                return BatchResult {
                    ranges: ranges.iter().map(|_| Err(e.clone())).collect(),
                    answered: false,
                };
            }
        };

        let total = resp.total_size;
        let served: Vec<Served> = resp
            .parts
            .into_iter()
            .map(|p| Served {
                part: Arc::new(p),
                total,
            })
            .collect();
        if resp.kind == ResponseKind::FullBody {
            let _ = self.full_body.set(served[0].clone());
        }

        let mut out: Vec<Result<Served>> = ranges.iter().map(|r| locate(r, &served)).collect();
        let missing: Vec<usize> = (0..ranges.len()).filter(|&i| out[i].is_err()).collect();
        if !missing.is_empty() && resp.kind != ResponseKind::FullBody {
            log::debug!(
                "server returned {} of {} ranges; fetching the rest singly",
                ranges.len() - missing.len(),
                ranges.len()
            );
            let retry: Vec<ByteRange> = missing.iter().map(|&i| ranges[i]).collect();
            let again = self.per_range(&retry);
            for (i, r) in missing.into_iter().zip(again.ranges) {
                out[i] = r;
            }
        }
        BatchResult {
            ranges: out,
            answered: true,
        }
    }

    fn per_range(&self, ranges: &[ByteRange]) -> BatchResult {
        let mut answered = false;
        let out = ranges
            .iter()
            .map(|r| {
                if let Some(full) = self.full_body.get() {
                    answered = true;
                    return locate(r, std::slice::from_ref(full));
                }
                self.per_range.fetch_add(1, Ordering::Relaxed);
                let resp = self.get(std::slice::from_ref(r))?;
                answered = true;
                let total = resp.total_size;
                let served: Vec<Served> = resp
                    .parts
                    .into_iter()
                    .map(|p| Served {
                        part: Arc::new(p),
                        total,
                    })
                    .collect();
                if resp.kind == ResponseKind::FullBody {
                    let _ = self.full_body.set(served[0].clone());
                }
                locate(r, &served)
            })
            .collect();
        BatchResult { ranges: out, answered }
    }
}

/// The returned part that backs `want`, allowing a short tail at EOF.
fn locate(want: &ByteRange, served: &[Served]) -> Result<Served> {
    let total = served.iter().find_map(|s| s.total);
    let effective = match total {
        Some(t) => want.clamp_to(t).ok_or(Error::RangeNotSatisfiable { total: Some(t) })?,
        None => *want,
    };
    served
        .iter()
        .find(|s| s.part.range.contains(&effective))
        .cloned()
        .ok_or_else(|| Error::UnexpectedResponse(format!("server did not return bytes {want}")))
}
