//! multipart/byteranges body composition (RFC 7233 appendix A, RFC 2046 framing).

use crate::error::TestbedError;

/// A body part: payload bytes located at `offset` in the origin object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub offset: u64,
    pub data: Vec<u8>,
}

impl Part {
    pub fn new(offset: u64, data: Vec<u8>) -> Self {
        Part { offset, data }
    }
}

const PART_CONTENT_TYPE: &str = "application/octet-stream";

fn valid_boundary(boundary: &str) -> bool {
    const SPECIALS: &[u8] = b"'()+_,-./:=? ";
    !boundary.is_empty()
        && boundary.len() <= 70
        && !boundary.ends_with(' ')
        && boundary
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || SPECIALS.contains(&b))
}

/// Compose a multipart/byteranges body with no preamble or epilogue.
pub fn compose_multipart(parts: &[Part], total: u64, boundary: &str) -> Result<Vec<u8>, TestbedError> {
    compose_multipart_framed(parts, total, boundary, b"", b"")
}

/// Compose a multipart/byteranges body, optionally surrounded by a preamble
/// and an epilogue (both ignored by conformant parsers).
pub fn compose_multipart_framed(
    parts: &[Part],
    total: u64,
    boundary: &str,
    preamble: &[u8],
    epilogue: &[u8],
) -> Result<Vec<u8>, TestbedError> {
    if parts.is_empty() {
        return Err(TestbedError::InvalidPart("no parts".into()));
    }
    if !valid_boundary(boundary) {
        return Err(TestbedError::InvalidPart(format!("bad boundary {boundary:?}")));
    }
    for p in parts {
        if p.data.is_empty() {
            return Err(TestbedError::InvalidPart(format!("empty part at {}", p.offset)));
        }
        let end = p.offset.checked_add(p.data.len() as u64);
        if end.is_none_or(|e| e > total) {
            return Err(TestbedError::InvalidPart(format!(
                "part at {} (+{}) exceeds total {total}",
                p.offset,
                p.data.len()
            )));
        }
    }

    let payload: usize = parts.iter().map(|p| p.data.len() + 128 + boundary.len()).sum();
    let mut out = Vec::with_capacity(payload + preamble.len() + epilogue.len());
    if !preamble.is_empty() {
        out.extend_from_slice(preamble);
        out.extend_from_slice(b"\r\n");
    }
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            out.extend_from_slice(b"\r\n");
        }
        let last = p.offset + p.data.len() as u64 - 1;
        out.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Type: {PART_CONTENT_TYPE}\r\nContent-Range: bytes {}-{last}/{total}\r\n\r\n",
                p.offset
            )
            .as_bytes(),
        );
        out.extend_from_slice(&p.data);
    }
    out.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    out.extend_from_slice(epilogue);
    Ok(out)
}
