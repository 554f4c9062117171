//! Streaming multipart/byteranges parser.
//!
//! Each part's payload length comes from its own `Content-Range` header, so
//! the parser never scans payload bytes for the boundary and never needs more
//! than one part in memory.

use std::io::{BufRead, Read};

use crate::error::{Error, Result};
use crate::range::{parse_content_range, ByteRange};

/// Upper bound on one part's header block.
pub const MAX_PART_HEADER_BYTES: usize = 8 * 1024;
const MAX_PREAMBLE_BYTES: usize = 64 * 1024;

/// One payload slice tagged with where it sits in the object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangePart {
    pub range: ByteRange,
    pub data: Vec<u8>,
}

impl RangePart {
    /// Bytes of `want` if this part fully contains it.
    pub fn slice(&self, want: &ByteRange) -> Option<&[u8]> {
        if !self.range.contains(want) {
            return None;
        }
        let start = (want.offset() - self.range.offset()) as usize;
        Some(&self.data[start..start + want.len() as usize])
    }
}

/// Extract the boundary parameter from a `multipart/byteranges` content type.
pub fn boundary_from_content_type(content_type: &str) -> Option<String> {
    let mut params = content_type.split(';');
    let media = params.next()?.trim();
    if !media.eq_ignore_ascii_case("multipart/byteranges") {
        return None;
    }
    params.find_map(|p| {
        let (k, v) = p.split_once('=')?;
        if !k.trim().eq_ignore_ascii_case("boundary") {
            return None;
        }
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        (!v.is_empty()).then(|| v.to_string())
    })
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedMultipart(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Preamble,
    Headers,
    Done,
}

enum Delimiter {
    Next,
    Close,
    Other,
}

/// Pull parser over a multipart/byteranges body.
pub struct MultipartReader<R> {
    reader: R,
    dash_boundary: Vec<u8>,
    state: State,
    total: Option<u64>,
}

impl<R: BufRead> MultipartReader<R> {
    pub fn new(reader: R, boundary: &str) -> Self {
        MultipartReader {
            reader,
            dash_boundary: format!("--{boundary}").into_bytes(),
            state: State::Preamble,
            total: None,
        }
    }

    /// Complete-length announced by the parts read so far.
    pub fn total(&self) -> Option<u64> {
        self.total
    }

    pub fn into_inner(self) -> R {
        self.reader
    }

    fn read_line(&mut self, limit: usize) -> Result<Vec<u8>> {
        let mut line = Vec::new();
        let mut limited = (&mut self.reader).take(limit as u64 + 1);
        limited
            .read_until(b'\n', &mut line)
            .map_err(|e| malformed(format!("read failed: {e}")))?;
        if line.len() > limit {
            return Err(malformed("line exceeds limit"));
        }
        Ok(line)
    }

    fn classify(&self, line: &[u8]) -> Delimiter {
        let mut end = line.len();
        while end > 0 && matches!(line[end - 1], b'\r' | b'\n' | b' ' | b'\t') {
            end -= 1;
        }
        let trimmed = &line[..end];
        match trimmed.strip_prefix(self.dash_boundary.as_slice()) {
            Some(b"") => Delimiter::Next,
            Some(b"--") => Delimiter::Close,
            _ => Delimiter::Other,
        }
    }

    fn skip_preamble(&mut self) -> Result<bool> {
        let mut consumed = 0;
        loop {
            let line = self.read_line(MAX_PREAMBLE_BYTES)?;
            if line.is_empty() {
                return Err(malformed("missing boundary delimiter"));
            }
            consumed += line.len();
            match self.classify(&line) {
                Delimiter::Next => return Ok(true),
                Delimiter::Close => return Ok(false),
                Delimiter::Other if consumed > MAX_PREAMBLE_BYTES => return Err(malformed("preamble too long")),
                Delimiter::Other => {}
            }
        }
    }

    fn read_part_headers(&mut self) -> Result<ByteRange> {
        let mut budget = MAX_PART_HEADER_BYTES;
        let mut content_range = None;
        loop {
            let line = self.read_line(budget)?;
            if line.is_empty() {
                return Err(malformed("truncated part headers"));
            }
            budget = budget
                .checked_sub(line.len())
                .ok_or_else(|| malformed("part headers too large"))?;
            let text = String::from_utf8_lossy(&line);
            let text = text.trim_end_matches(['\r', '\n']);
            if text.is_empty() {
                break;
            }
            if let Some((k, v)) = text.split_once(':') {
                if k.trim().eq_ignore_ascii_case("content-range") {
                    let info = parse_content_range(v.trim()).map_err(|e| malformed(e.to_string()))?;
                    content_range = Some(info.range());
                    self.total = self.total.or(info.total);
                }
            }
        }
        content_range.ok_or_else(|| malformed("part without Content-Range"))
    }

    /// Next part, or `None` after the close delimiter.
    pub fn next_part(&mut self) -> Result<Option<RangePart>> {
        match self.state {
            State::Done => return Ok(None),
            State::Preamble => {
                if !self.skip_preamble()? {
                    self.state = State::Done;
                    return Err(malformed("body contains no parts"));
                }
                self.state = State::Headers;
            }
            State::Headers => {}
        }

        let range = self.read_part_headers()?;
        let mut data = Vec::with_capacity(range.len().min(1 << 20) as usize);
        (&mut self.reader)
            .take(range.len())
            .read_to_end(&mut data)
            .map_err(|e| malformed(format!("read failed: {e}")))?;
        if (data.len() as u64) < range.len() {
            return Err(malformed(format!("part {range} truncated after {} bytes", data.len())));
        }

        // CRLF that opens the next delimiter, then the delimiter itself
        let crlf = self.read_line(2)?;
        if crlf != b"\r\n" && crlf != b"\n" {
            return Err(malformed(format!("expected CRLF after part {range}")));
        }
        let line = self.read_line(self.dash_boundary.len() + 256)?;
        match self.classify(&line) {
            Delimiter::Next => {}
            Delimiter::Close => self.state = State::Done,
            Delimiter::Other => return Err(malformed(format!("missing delimiter after part {range}"))),
        }
        Ok(Some(RangePart { range, data }))
    }
}

/// Parse a whole multipart/byteranges body into its parts, in body order.
pub fn parse_multipart_byteranges(body: impl BufRead, boundary: &str) -> Result<Vec<RangePart>> {
    let mut reader = MultipartReader::new(body, boundary);
    let mut parts = Vec::new();
    while let Some(p) = reader.next_part()? {
        parts.push(p);
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BODY: &[u8] = b"--B\r\nContent-Type: application/octet-stream\r\nContent-Range: bytes 0-3/20\r\n\r\nabcd\r\n--B\r\nContent-Range: bytes 10-13/20\r\n\r\nklmn\r\n--B--\r\n";

    #[test]
    fn parses_two_parts() {
        let parts = parse_multipart_byteranges(BODY, "B").unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].range, ByteRange::new(0, 4).unwrap());
        assert_eq!(parts[1].data, b"klmn");
    }

    #[test]
    fn truncated_final_part_is_malformed() {
        let cut = &BODY[..BODY.len() - 14];
        assert!(matches!(
            parse_multipart_byteranges(cut, "B"),
            Err(Error::MalformedMultipart(_))
        ));
    }

    #[test]
    fn missing_close_delimiter_is_malformed() {
        let cut = &BODY[..BODY.len() - 9];
        assert!(parse_multipart_byteranges(cut, "B").is_err());
    }

    #[test]
    fn part_without_content_range() {
        let body = b"--B\r\nContent-Type: text/plain\r\n\r\nabcd\r\n--B--\r\n";
        assert!(matches!(
            parse_multipart_byteranges(&body[..], "B"),
            Err(Error::MalformedMultipart(m)) if m.contains("Content-Range")
        ));
    }

    #[test]
    fn missing_boundary() {
        assert!(parse_multipart_byteranges(&b"no delimiters here\r\n"[..], "B").is_err());
        assert!(parse_multipart_byteranges(&b""[..], "B").is_err());
    }

    #[test]
    fn oversized_headers_rejected() {
        let mut body = b"--B\r\n".to_vec();
        body.extend(std::iter::repeat_n(b"X-Pad: yyyyyyyyyyyyyyyyyyyyyyyyyyyyyy\r\n", 400).flatten());
        body.extend_from_slice(b"Content-Range: bytes 0-0/1\r\n\r\na\r\n--B--");
        assert!(parse_multipart_byteranges(&body[..], "B").is_err());
    }

    #[test]
    fn boundary_extraction() {
        assert_eq!(
            boundary_from_content_type("multipart/byteranges; boundary=THIS_STRING").as_deref(),
            Some("THIS_STRING")
        );
        assert_eq!(
            boundary_from_content_type("Multipart/ByteRanges;charset=x; boundary=\"q b\"").as_deref(),
            Some("q b")
        );
        assert_eq!(boundary_from_content_type("text/plain; boundary=x"), None);
    }
}
