//! Scripted server misbehaviour.
//!
//! Every event is a pure function of the global request counter (or, for
//! `die_after_bytes`, of the bytes served from a replica root), so a given
//! plan replays identically for the same request sequence.
//!
//! Fault files use one event per line; `#` starts a comment and an optional
//! trailing `@N` makes a toggle take effect from request `N` (1-based):
//!
//! ```text
//! replica_offline r1 5
//! replica_die_after_bytes r0 8388608
//! ignore_range on
//! single_range_only on @10
//! coalesce_ranges off
//! reverse_multipart on
//! head_omit_length on
//! connection_close_every 1
//! read_only /ro
//! metalink_rungs accept,query,suffix
//! ```

use std::path::Path;

use crate::error::TestbedError;

/// Name used in fault plans for the corpus root (the non-replica namespace).
pub const PRIMARY_ROOT: &str = "primary";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    /// Answer ranged GETs with 200 and the whole body.
    IgnoreRange,
    /// Answer multi-range GETs with a single 206 for the first range only.
    SingleRangeOnly,
    /// Answer multi-range GETs with one 206 spanning all requested ranges.
    CoalesceRanges,
    /// Emit multipart parts in reverse request order.
    ReverseMultipart,
    /// Omit Content-Length on HEAD responses.
    HeadOmitLength,
}

impl Toggle {
    fn keyword(self) -> &'static str {
        match self {
            Toggle::IgnoreRange => "ignore_range",
            Toggle::SingleRangeOnly => "single_range_only",
            Toggle::CoalesceRanges => "coalesce_ranges",
            Toggle::ReverseMultipart => "reverse_multipart",
            Toggle::HeadOmitLength => "head_omit_length",
        }
    }

    fn from_keyword(word: &str) -> Option<Toggle> {
        [
            Toggle::IgnoreRange,
            Toggle::SingleRangeOnly,
            Toggle::CoalesceRanges,
            Toggle::ReverseMultipart,
            Toggle::HeadOmitLength,
        ]
        .into_iter()
        .find(|t| t.keyword() == word)
    }
}

/// Which metalink discovery endpoints the server answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetalinkRungs {
    pub accept: bool,
    pub query: bool,
    pub suffix: bool,
}

impl Default for MetalinkRungs {
    fn default() -> Self {
        MetalinkRungs {
            accept: true,
            query: true,
            suffix: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultEvent {
    ReplicaOffline { replica: String, from_request: u64 },
    ReplicaDieAfterBytes { replica: String, bytes: u64 },
    Toggle { fault: Toggle, on: bool, from_request: u64 },
    ConnectionCloseEvery { n: u64 },
    ReadOnly { prefix: String },
    MetalinkRungs(MetalinkRungs),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub events: Vec<FaultEvent>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, event: FaultEvent) -> Self {
        self.events.push(event);
        self
    }

    pub fn toggle(self, fault: Toggle, on: bool) -> Self {
        self.with(FaultEvent::Toggle {
            fault,
            on,
            from_request: 0,
        })
    }

    pub fn replica_offline(self, replica: &str, from_request: u64) -> Self {
        self.with(FaultEvent::ReplicaOffline {
            replica: replica.to_string(),
            from_request,
        })
    }

    pub fn die_after_bytes(self, replica: &str, bytes: u64) -> Self {
        self.with(FaultEvent::ReplicaDieAfterBytes {
            replica: replica.to_string(),
            bytes,
        })
    }

    /// State of a toggle for request number `request` (1-based). The event
    /// with the greatest `from_request <= request` wins; later lines break ties.
    pub fn is_on(&self, fault: Toggle, request: u64) -> bool {
        let mut best: Option<(u64, bool)> = None;
        for ev in &self.events {
            if let FaultEvent::Toggle {
                fault: f,
                on,
                from_request,
            } = ev
            {
                if *f == fault && *from_request <= request && best.is_none_or(|(b, _)| *from_request >= b) {
                    best = Some((*from_request, *on));
                }
            }
        }
        best.is_some_and(|(_, on)| on)
    }

    pub fn replica_offline_at(&self, replica: &str, request: u64) -> bool {
        self.events.iter().any(|ev| {
            matches!(ev, FaultEvent::ReplicaOffline { replica: r, from_request }
                if r == replica && *from_request <= request)
        })
    }

    pub fn byte_budget(&self, replica: &str) -> Option<u64> {
        self.events
            .iter()
            .filter_map(|ev| match ev {
                FaultEvent::ReplicaDieAfterBytes { replica: r, bytes } if r == replica => Some(*bytes),
                _ => None,
            })
            .min()
    }

    /// Whether the response to request `request` carries `Connection: close`.
    pub fn closes_after(&self, request: u64) -> bool {
        self.events
            .iter()
            .any(|ev| matches!(ev, FaultEvent::ConnectionCloseEvery { n } if *n > 0 && request.is_multiple_of(*n)))
    }

    pub fn is_read_only(&self, path: &str) -> bool {
        self.events
            .iter()
            .any(|ev| matches!(ev, FaultEvent::ReadOnly { prefix } if path.starts_with(prefix.as_str())))
    }

    pub fn metalink_rungs(&self) -> MetalinkRungs {
        self.events
            .iter()
            .rev()
            .find_map(|ev| match ev {
                FaultEvent::MetalinkRungs(r) => Some(*r),
                _ => None,
            })
            .unwrap_or_default()
    }

    pub fn load(path: &Path) -> Result<FaultPlan, TestbedError> {
        let text = std::fs::read_to_string(path)?;
        FaultPlan::parse(&text)
    }

    pub fn parse(text: &str) -> Result<FaultPlan, TestbedError> {
        let mut plan = FaultPlan::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| TestbedError::FaultSyntax { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words: Vec<&str> = line.split_whitespace().collect();
            let mut from_request = 0;
            if let Some(last) = words.last() {
                if let Some(n) = last.strip_prefix('@') {
                    from_request = n.parse().map_err(|_| err(format!("bad request number {last}")))?;
                    words.pop();
                }
            }
            let num = |s: Option<&&str>, what: &str| -> Result<u64, TestbedError> {
                s.ok_or_else(|| err(format!("missing {what}")))?
                    .parse()
                    .map_err(|_| err(format!("bad {what}")))
            };
            let word = |s: Option<&&str>, what: &str| -> Result<String, TestbedError> {
                s.map(|w| w.to_string()).ok_or_else(|| err(format!("missing {what}")))
            };
            let event = match words[0] {
                "replica_offline" => FaultEvent::ReplicaOffline {
                    replica: word(words.get(1), "replica")?,
                    from_request: if words.len() > 2 {
                        num(words.get(2), "request number")?
                    } else {
                        from_request
                    },
                },
                "replica_die_after_bytes" | "die_after_bytes" => FaultEvent::ReplicaDieAfterBytes {
                    replica: word(words.get(1), "replica")?,
                    bytes: num(words.get(2), "byte count")?,
                },
                "connection_close_every" => FaultEvent::ConnectionCloseEvery {
                    n: num(words.get(1), "interval")?,
                },
                "read_only" => FaultEvent::ReadOnly {
                    prefix: word(words.get(1), "path prefix")?,
                },
                "metalink_rungs" => {
                    let list = word(words.get(1), "rung list")?;
                    let mut rungs = MetalinkRungs {
                        accept: false,
                        query: false,
                        suffix: false,
                    };
                    for r in list.split(',') {
                        match r {
                            "accept" => rungs.accept = true,
                            "query" => rungs.query = true,
                            "suffix" => rungs.suffix = true,
                            "none" => {}
                            other => return Err(err(format!("unknown rung {other}"))),
                        }
                    }
                    FaultEvent::MetalinkRungs(rungs)
                }
                kw => {
                    let fault = Toggle::from_keyword(kw).ok_or_else(|| err(format!("unknown event {kw}")))?;
                    let on = match words.get(1).copied() {
                        Some("on") | None => true,
                        Some("off") => false,
                        Some(other) => return Err(err(format!("expected on/off, got {other}"))),
                    };
                    FaultEvent::Toggle {
                        fault,
                        on,
                        from_request,
                    }
                }
            };
            plan.events.push(event);
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_event_kind() {
        let plan = FaultPlan::parse(
            "# demo\nreplica_offline r1 5\nreplica_die_after_bytes r0 1024\nignore_range on\n\
             single_range_only on @10\nconnection_close_every 3\nread_only /ro\nmetalink_rungs query\n",
        )
        .unwrap();
        assert_eq!(plan.events.len(), 7);
        assert!(plan.replica_offline_at("r1", 5));
        assert!(!plan.replica_offline_at("r1", 4));
        assert_eq!(plan.byte_budget("r0"), Some(1024));
        assert!(plan.is_on(Toggle::IgnoreRange, 1));
        assert!(!plan.is_on(Toggle::SingleRangeOnly, 9));
        assert!(plan.is_on(Toggle::SingleRangeOnly, 10));
        assert!(plan.closes_after(6) && !plan.closes_after(7));
        assert!(plan.is_read_only("/ro/x"));
        assert_eq!(
            plan.metalink_rungs(),
            MetalinkRungs {
                accept: false,
                query: true,
                suffix: false
            }
        );
    }

    #[test]
    fn later_toggle_wins() {
        let plan = FaultPlan::parse("ignore_range on\nignore_range off @3\n").unwrap();
        assert!(plan.is_on(Toggle::IgnoreRange, 2));
        assert!(!plan.is_on(Toggle::IgnoreRange, 3));
    }

    #[test]
    fn syntax_errors_carry_line() {
        match FaultPlan::parse("ignore_range on\nfrobnicate\n") {
            Err(TestbedError::FaultSyntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
