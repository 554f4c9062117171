//! Ranged GET execution with normalization of every legal server reply.
//!
//! | reply                               | result                                   |
//! |-------------------------------------|------------------------------------------|
//! | 206 `multipart/byteranges`          | `Multipart`, parts sorted by offset      |
//! | 206 with one `Content-Range`        | `Single` (may cover a superset)          |
//! | 200 (Range ignored), small enough   | `FullBody`, one part at offset 0         |
//! | 200, above the fallback limit       | `FullBodyTooLarge`, connection dropped   |
//! | 416                                 | `RangeNotSatisfiable { total }`          |

use std::io::{BufReader, Read};

use url::Url;

use crate::error::{Error, Result};
use crate::http::{Agent, Method, Response};
use crate::multipart::{boundary_from_content_type, MultipartReader, RangePart};
use crate::range::{compose_range_header, parse_content_range, parse_unsatisfied_total, ByteRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineLimits {
    /// Largest full body accepted when a server ignores `Range`.
    pub max_full_body_fallback: u64,
}

impl Default for EngineLimits {
    fn default() -> Self {
        EngineLimits {
            max_full_body_fallback: 64 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Single,
    Multipart,
    FullBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangedResponse {
    pub kind: ResponseKind,
    /// Server-returned parts, sorted by offset.
    pub parts: Vec<RangePart>,
    pub total_size: Option<u64>,
    pub connection_reusable: bool,
}

impl RangedResponse {
    /// Bytes for `want`, taken from whichever returned part contains it.
    pub fn slice(&self, want: &ByteRange) -> Option<&[u8]> {
        let idx = self.parts.partition_point(|p| p.range.offset() <= want.offset());
        // parts are sorted; the candidate is the last one starting at or before `want`
        self.parts[..idx].iter().rev().find_map(|p| p.slice(want))
    }

    pub fn covers(&self, want: &ByteRange) -> bool {
        self.slice(want).is_some()
    }
}

fn content_type(resp: &Response) -> String {
    resp.header("content-type").unwrap_or("").to_string()
}

/// Issue one GET carrying all `ranges` and normalize the reply.
pub fn execute_ranged_get(
    agent: &Agent,
    url: &Url,
    ranges: &[ByteRange],
    limits: &EngineLimits,
) -> Result<RangedResponse> {
    let header = compose_range_header(ranges)?;
    let mut resp = agent.fetch(
        Method::Get,
        url,
        &[("Range", header), ("Accept-Encoding", "identity".to_string())],
    )?;

    match resp.status {
        206 => {
            if let Some(boundary) = boundary_from_content_type(&content_type(&resp)) {
                read_multipart(resp, &boundary)
            } else {
                read_single(resp)
            }
        }
        200 => read_full_body(resp, limits),
        416 => {
            let total = resp.header("content-range").and_then(parse_unsatisfied_total);
            resp.drain();
            Err(Error::RangeNotSatisfiable { total })
        }
        _ => Err(resp.into_http_error()),
    }
}

fn read_multipart(mut resp: Response, boundary: &str) -> Result<RangedResponse> {
    let mut parts = Vec::new();
    let total = {
        let mut reader = MultipartReader::new(BufReader::with_capacity(64 * 1024, &mut resp), boundary);
        while let Some(part) = reader.next_part()? {
            parts.push(part);
        }
        reader.total()
    };
    // epilogue
    resp.drain();
    parts.sort_by_key(|p| p.range.offset());
    Ok(RangedResponse {
        kind: ResponseKind::Multipart,
        parts,
        total_size: total,
        connection_reusable: resp.connection_reusable(),
    })
}

fn read_single(mut resp: Response) -> Result<RangedResponse> {
    let value = resp
        .header("content-range")
        .ok_or_else(|| Error::UnexpectedResponse("206 without Content-Range".into()))?
        .to_string();
    let info = parse_content_range(&value)?;
    let range = info.range();
    if let Some(len) = resp.content_length() {
        if len != range.len() {
            return Err(Error::UnexpectedResponse(format!(
                "Content-Length {len} does not match Content-Range {value}"
            )));
        }
    }
    let mut data = Vec::with_capacity(range.len().min(1 << 26) as usize);
    (&mut resp)
        .take(range.len())
        .read_to_end(&mut data)
        .map_err(Error::transport)?;
    if (data.len() as u64) < range.len() {
        return Err(Error::Transport(format!(
            "206 body truncated at {} of {}",
            data.len(),
            range.len()
        )));
    }
    resp.drain();
    Ok(RangedResponse {
        kind: ResponseKind::Single,
        parts: vec![RangePart { range, data }],
        total_size: info.total,
        connection_reusable: resp.connection_reusable(),
    })
}

fn read_full_body(mut resp: Response, limits: &EngineLimits) -> Result<RangedResponse> {
    let limit = limits.max_full_body_fallback;
    let advertised = resp.content_length();
    if advertised.is_some_and(|n| n > limit) {
        // dropping the response closes the connection mid-body
        return Err(Error::FullBodyTooLarge {
            length: advertised,
            limit,
        });
    }
    let data = match resp.read_body(limit) {
        Ok(d) => d,
        Err(Error::UnexpectedResponse(_)) => {
            return Err(Error::FullBodyTooLarge { length: None, limit });
        }
        Err(e) => return Err(e),
    };
    if data.is_empty() {
        return Err(Error::RangeNotSatisfiable { total: Some(0) });
    }
    let total = data.len() as u64;
    Ok(RangedResponse {
        kind: ResponseKind::FullBody,
        parts: vec![RangePart {
            range: ByteRange::new(0, total)?,
            data,
        }],
        total_size: Some(total),
        connection_reusable: resp.connection_reusable(),
    })
}
