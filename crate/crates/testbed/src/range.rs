//! Server-side `Range` header handling (RFC 7233 byte-range-set grammar).
//!
//! This parser is deliberately independent from the client crate so it can
//! act as a grammar oracle for the client's header composer.

/// One element of a `bytes=` range set, as written on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeSpec {
    /// `first-last`
    Closed { first: u64, last: u64 },
    /// `first-`
    From { first: u64 },
    /// `-suffix_length`
    Suffix { length: u64 },
}

/// Inclusive byte span resolved against a concrete representation length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub first: u64,
    pub last: u64,
}

impl Span {
    pub fn len(&self) -> u64 {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Outcome of applying a Range header to a representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RangeOutcome {
    /// Syntactically invalid header: the server ignores it and sends 200.
    Ignore,
    /// No range in the set overlaps the representation: 416.
    Unsatisfiable,
    /// Satisfiable spans in request order.
    Spans(Vec<Span>),
}

fn parse_u64(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Strict parse of a `Range` header value into its range-set.
///
/// Returns `None` when the value does not match
/// `"bytes=" 1#( byte-range-spec / suffix-byte-range-spec )`.
pub fn parse_byte_range_set(value: &str) -> Option<Vec<RangeSpec>> {
    let rest = value.strip_prefix("bytes=")?;
    let mut specs = Vec::new();
    for item in rest.split(',') {
        let item = item.trim_matches(|c| c == ' ' || c == '\t');
        if item.is_empty() {
            // empty list elements are allowed by the #rule, but not an empty set
            continue;
        }
        let (a, b) = item.split_once('-')?;
        let spec = match (a.is_empty(), b.is_empty()) {
            (true, true) => return None,
            (true, false) => RangeSpec::Suffix { length: parse_u64(b)? },
            (false, true) => RangeSpec::From { first: parse_u64(a)? },
            (false, false) => {
                let first = parse_u64(a)?;
                let last = parse_u64(b)?;
                if last < first {
                    return None;
                }
                RangeSpec::Closed { first, last }
            }
        };
        specs.push(spec);
    }
    if specs.is_empty() {
        None
    } else {
        Some(specs)
    }
}

/// Resolve a header value against a representation of `len` bytes.
pub fn resolve(value: &str, len: u64) -> RangeOutcome {
    let specs = match parse_byte_range_set(value) {
        Some(s) => s,
        None => return RangeOutcome::Ignore,
    };
    let mut spans = Vec::new();
    for spec in specs {
        let span = match spec {
            RangeSpec::Closed { first, last } if first < len => Some(Span {
                first,
                last: last.min(len - 1),
            }),
            RangeSpec::From { first } if first < len => Some(Span { first, last: len - 1 }),
            RangeSpec::Suffix { length } if length > 0 && len > 0 => Some(Span {
                first: len.saturating_sub(length),
                last: len - 1,
            }),
            _ => None,
        };
        spans.extend(span);
    }
    if spans.is_empty() {
        RangeOutcome::Unsatisfiable
    } else {
        RangeOutcome::Spans(spans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_spec_forms() {
        assert_eq!(
            parse_byte_range_set("bytes=0-99, 200-, -5").unwrap(),
            vec![
                RangeSpec::Closed { first: 0, last: 99 },
                RangeSpec::From { first: 200 },
                RangeSpec::Suffix { length: 5 },
            ]
        );
    }

    #[test]
    fn rejects_bad_grammar() {
        for bad in [
            "bytes=",
            "bytes=-",
            "bytes=9-1",
            "bytes=a-b",
            "items=0-1",
            "bytes=1-2-3",
        ] {
            assert!(parse_byte_range_set(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn resolves_against_length() {
        assert_eq!(
            resolve("bytes=0-3,10-13", 20),
            RangeOutcome::Spans(vec![Span { first: 0, last: 3 }, Span { first: 10, last: 13 }])
        );
        assert_eq!(
            resolve("bytes=690-709", 700),
            RangeOutcome::Spans(vec![Span { first: 690, last: 699 }])
        );
        assert_eq!(resolve("bytes=700-800", 700), RangeOutcome::Unsatisfiable);
        assert_eq!(
            resolve("bytes=-10", 700),
            RangeOutcome::Spans(vec![Span { first: 690, last: 699 }])
        );
        assert_eq!(resolve("garbage", 700), RangeOutcome::Ignore);
    }

    #[test]
    fn drops_only_unsatisfiable_members() {
        assert_eq!(
            resolve("bytes=0-9,800-900", 700),
            RangeOutcome::Spans(vec![Span { first: 0, last: 9 }])
        );
    }
}
