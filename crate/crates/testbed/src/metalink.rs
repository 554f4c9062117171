//! Metalink/4 (RFC 5854) documents generated from the replica layout.

use std::fmt::Write as _;

pub const METALINK_MEDIA_TYPE: &str = "application/metalink4+xml";

#[derive(Debug, Clone)]
pub struct MetalinkUrl {
    pub url: String,
    pub priority: u32,
    pub location: Option<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_metalink(name: &str, size: u64, sha256_hex: &str, urls: &[MetalinkUrl]) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<metalink xmlns=\"urn:ietf:params:xml:ns:metalink\">\n");
    let _ = writeln!(out, "  <file name=\"{}\">", escape(name));
    let _ = writeln!(out, "    <size>{size}</size>");
    let _ = writeln!(out, "    <hash type=\"sha-256\">{sha256_hex}</hash>");
    for u in urls {
        match &u.location {
            Some(loc) => {
                let _ = writeln!(
                    out,
                    "    <url location=\"{}\" priority=\"{}\">{}</url>",
                    escape(loc),
                    u.priority,
                    escape(&u.url)
                );
            }
            None => {
                let _ = writeln!(out, "    <url priority=\"{}\">{}</url>", u.priority, escape(&u.url));
            }
        }
    }
    out.push_str("  </file>\n</metalink>\n");
    out
}
