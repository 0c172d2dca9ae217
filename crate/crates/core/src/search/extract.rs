//! Text extraction, dispatched on file extension.
//!
//! Only plain text and HTML ship here. Other formats plug in by
//! registering an [`Extractor`] for their extensions.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("unsupported file type \"{0}\"")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Extractor: Send + Sync {
    /// Lower-case extensions (without the dot) handled by this extractor.
    fn extensions(&self) -> &[&str];
    fn extract(&self, bytes: &[u8]) -> Result<String, ExtractError>;
}

pub struct PlainTextExtractor;

impl Extractor for PlainTextExtractor {
    fn extensions(&self) -> &[&str] {
        &["txt", "md"]
    }

    fn extract(&self, bytes: &[u8]) -> Result<String, ExtractError> {
        Ok(String::from_utf8_lossy(bytes).into_owned())
    }
}

pub struct HtmlExtractor;

impl Extractor for HtmlExtractor {
    fn extensions(&self) -> &[&str] {
        &["html", "htm"]
    }

    fn extract(&self, bytes: &[u8]) -> Result<String, ExtractError> {
        Ok(html_to_text(&String::from_utf8_lossy(bytes)))
    }
}

pub struct ExtractorRegistry {
    by_ext: BTreeMap<String, usize>,
    extractors: Vec<Box<dyn Extractor>>,
}

impl Default for ExtractorRegistry {
    fn default() -> Self {
        let mut r = ExtractorRegistry::empty();
        r.register(Box::new(PlainTextExtractor));
        r.register(Box::new(HtmlExtractor));
        r
    }
}

impl ExtractorRegistry {
    pub fn empty() -> Self {
        ExtractorRegistry {
            by_ext: BTreeMap::new(),
            extractors: Vec::new(),
        }
    }

    /// Registers an extractor; later registrations win on shared extensions.
    pub fn register(&mut self, extractor: Box<dyn Extractor>) {
        let idx = self.extractors.len();
        for ext in extractor.extensions() {
            self.by_ext.insert(ext.to_ascii_lowercase(), idx);
        }
        self.extractors.push(extractor);
    }

    fn lookup(&self, path: &Path) -> Result<&dyn Extractor, ExtractError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        self.by_ext
            .get(&ext)
            .map(|&i| self.extractors[i].as_ref())
            .ok_or(ExtractError::Unsupported(ext))
    }

    pub fn supports(&self, path: &Path) -> bool {
        self.lookup(path).is_ok()
    }

    /// Reads and extracts a file. The caller is responsible for having
    /// resolved `path` inside a sandbox.
    pub fn extract_text(&self, path: &Path) -> Result<String, ExtractError> {
        let extractor = self.lookup(path)?;
        let bytes = std::fs::read(path)?;
        extractor.extract(&bytes)
    }
}

/// Strips tags, drops `<script>`/`<style>` bodies and comments, decodes
/// entities and collapses whitespace.
pub fn html_to_text(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let lower = html.to_ascii_lowercase();
    let mut i = 0;
    let bytes = html.as_bytes();
    while i < bytes.len() {
        if lower[i..].starts_with("<!--") {
            i = match lower[i + 4..].find("-->") {
                Some(end) => i + 4 + end + 3,
                None => bytes.len(),
            };
            out.push(' ');
            continue;
        }
        if bytes[i] == b'<' {
            let Some(end) = html[i..].find('>') else {
                // dangling '<' is text
                out.push('<');
                i += 1;
                continue;
            };
            let tag = &lower[i + 1..i + end];
            let name: String = tag
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect();
            i += end + 1;
            if name == "script" || name == "style" {
                let close = format!("</{name}");
                i = match lower[i..].find(&close) {
                    Some(pos) => {
                        let after = i + pos;
                        match html[after..].find('>') {
                            Some(gt) => after + gt + 1,
                            None => bytes.len(),
                        }
                    }
                    None => bytes.len(),
                };
            }
            out.push(' ');
            continue;
        }
        if bytes[i] == b'&' {
            if let Some((decoded, used)) = decode_entity(&html[i..]) {
                out.push(decoded);
                i += used;
                continue;
            }
        }
        let ch = html[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let (end, _) = s.char_indices().take(12).find(|(_, c)| *c == ';')?;
    let body = &s[1..end];
    let ch = match body {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        _ => {
            let code = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok()?
            } else {
                body.strip_prefix('#')?.parse().ok()?
            };
            char::from_u32(code)?
        }
    };
    Some((ch, end + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn html_examples() {
        assert_eq!(html_to_text("<p>hi &amp; bye</p>"), "hi & bye");
        assert_eq!(html_to_text("<p>a</p><p>b</p>"), "a b");
        assert_eq!(
            html_to_text("<html><head><style>p{x:1}</style><script>var a='<b>';</script></head><body>Text</body>"),
            "Text"
        );
        assert_eq!(html_to_text("x<!-- hidden -->y"), "x y");
        assert_eq!(html_to_text("&#65;&#x42;&lt;&bogus;"), "AB<&bogus;");
        assert_eq!(html_to_text("1 < 2"), "1 < 2");
    }

    #[test]
    fn dispatch_table() {
        let dir = tempfile::tempdir().unwrap();
        let reg = ExtractorRegistry::default();
        let txt = dir.path().join("a.txt");
        std::fs::write(&txt, "hello").unwrap();
        assert_eq!(reg.extract_text(&txt).unwrap(), "hello");
        let md = dir.path().join("B.MD");
        std::fs::write(&md, b"caf\xffe").unwrap();
        assert_eq!(reg.extract_text(&md).unwrap(), "caf\u{fffd}e");
        let exe = dir.path().join("a.exe");
        std::fs::write(&exe, [0u8, 1, 2]).unwrap();
        assert!(matches!(reg.extract_text(&exe), Err(ExtractError::Unsupported(e)) if e == "exe"));
        let missing = dir.path().join("nope.txt");
        assert!(matches!(reg.extract_text(&missing), Err(ExtractError::Io(_))));
    }

    struct Upper;
    impl Extractor for Upper {
        fn extensions(&self) -> &[&str] {
            &["up"]
        }
        fn extract(&self, bytes: &[u8]) -> Result<String, ExtractError> {
            Ok(String::from_utf8_lossy(bytes).to_uppercase())
        }
    }

    #[test]
    fn pluggable() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.up");
        std::fs::write(&f, "abc").unwrap();
        let mut reg = ExtractorRegistry::default();
        assert!(!reg.supports(&f));
        reg.register(Box::new(Upper));
        assert_eq!(reg.extract_text(&f).unwrap(), "ABC");
    }
}
