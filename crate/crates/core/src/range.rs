//! Byte ranges and the RFC 7233 header grammar.

use std::fmt;

use crate::error::{Error, Result};

/// A non-empty `(offset, length)` slice of a remote object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ByteRange {
    offset: u64,
    length: u64,
}

impl ByteRange {
    pub fn new(offset: u64, length: u64) -> Result<Self> {
        if length == 0 || offset.checked_add(length).is_none() {
            return Err(Error::InvalidRange { offset, length });
        }
        Ok(ByteRange { offset, length })
    }

    /// Range covering the inclusive positions `first..=last`.
    pub fn inclusive(first: u64, last: u64) -> Result<Self> {
        if last < first || last == u64::MAX {
            return Err(Error::InvalidRange {
                offset: first,
                length: last.wrapping_sub(first).wrapping_add(1),
            });
        }
        ByteRange::new(first, last - first + 1)
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn len(&self) -> u64 {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exclusive end position.
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }

    /// Inclusive last-byte position, as used on the wire.
    pub fn last(&self) -> u64 {
        self.end() - 1
    }

    pub fn contains(&self, other: &ByteRange) -> bool {
        self.offset <= other.offset && other.end() <= self.end()
    }

    /// The portion of this range below `limit`, if any.
    pub fn clamp_to(&self, limit: u64) -> Option<ByteRange> {
        if self.offset >= limit {
            None
        } else {
            Some(ByteRange {
                offset: self.offset,
                length: self.end().min(limit) - self.offset,
            })
        }
    }
}

impl fmt::Display for ByteRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.offset, self.last())
    }
}

/// Parsed `Content-Range: bytes first-last/total` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentRangeInfo {
    pub first: u64,
    pub last: u64,
    /// `None` for `/*`.
    pub total: Option<u64>,
}

impl ContentRangeInfo {
    pub fn range(&self) -> ByteRange {
        ByteRange {
            offset: self.first,
            length: self.last - self.first + 1,
        }
    }
}

/// Build a `Range` header value for sorted, non-overlapping ranges.
pub fn compose_range_header(ranges: &[ByteRange]) -> Result<String> {
    if ranges.is_empty() {
        return Err(Error::EmptyRangeSet);
    }
    for (i, pair) in ranges.windows(2).enumerate() {
        if pair[1].offset < pair[0].end() {
            return Err(Error::OverlappingRanges { index: i + 1 });
        }
    }
    let mut out = String::with_capacity(6 + ranges.len() * 16);
    out.push_str("bytes=");
    for (i, r) in ranges.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&r.to_string());
    }
    Ok(out)
}

/// Length in bytes of `compose_range_header` output, without building it.
pub(crate) fn range_spec_len(r: &ByteRange) -> usize {
    fn digits(mut n: u64) -> usize {
        let mut d = 1;
        while n >= 10 {
            n /= 10;
            d += 1;
        }
        d
    }
    digits(r.offset) + 1 + digits(r.last())
}

fn parse_pos(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub fn parse_content_range(value: &str) -> Result<ContentRangeInfo> {
    let bad = || Error::MalformedContentRange(value.to_string());
    let rest = value.trim().strip_prefix("bytes ").ok_or_else(bad)?;
    let (span, total) = rest.trim_start().split_once('/').ok_or_else(bad)?;
    let (first, last) = span.split_once('-').ok_or_else(bad)?;
    let first = parse_pos(first).ok_or_else(bad)?;
    let last = parse_pos(last).ok_or_else(bad)?;
    let total = match total {
        "*" => None,
        t => Some(parse_pos(t).ok_or_else(bad)?),
    };
    if first > last || last == u64::MAX || total.is_some_and(|t| t <= last) {
        return Err(bad());
    }
    Ok(ContentRangeInfo { first, last, total })
}

/// Total size from an unsatisfied-range value (`bytes */total`).
pub(crate) fn parse_unsatisfied_total(value: &str) -> Option<u64> {
    value.trim().strip_prefix("bytes */").and_then(|t| parse_pos(t.trim()))
}
