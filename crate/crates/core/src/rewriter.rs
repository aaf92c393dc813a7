//! Span-based scanning and rewriting of `img` elements in HTML documents.
//!
//! Scanning works on raw bytes and records the byte span of every `src`
//! attribute value, so rewriting can substitute those spans while leaving
//! every other byte of the document untouched.

use std::ops::Range;
use std::str::FromStr;
use std::sync::LazyLock;

use base64::Engine as _;
use regex::bytes::Regex;
use thiserror::Error;

use crate::filter::{subtype_from_url, ElementDescriptor};
use crate::html::{escape, unescape};
use crate::store::ContentItem;

static IMG_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<img\b[^>]*>").expect("static regex"));

static ATTRIBUTE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)([a-z_:][-a-z0-9_:.]*)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'=<>`]+)))?"#)
        .expect("static regex")
});

static FOLLOWING_CAPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)\A\s*<figcaption\b[^>]*>(.*?)</figcaption\s*>").expect("static regex")
});

/// One `img` element together with the byte span of its `src` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedElement {
    pub descriptor: ElementDescriptor,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanResult {
    pub elements: Vec<ScannedElement>,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn descriptors(&self) -> Vec<ElementDescriptor> {
        self.elements.iter().map(|e| e.descriptor.clone()).collect()
    }
}

struct Attr {
    name: String,
    value: Option<Range<usize>>,
}

fn attributes(tag: &[u8], tag_start: usize) -> Vec<Attr> {
    // Skip "<img".
    let body_start = 4;
    let body_end = tag.len() - 1;
    let body = &tag[body_start..body_end];
    ATTRIBUTE
        .captures_iter(body)
        .map(|c| {
            let name = String::from_utf8_lossy(&c[1]).to_ascii_lowercase();
            let value = c
                .get(2)
                .or_else(|| c.get(3))
                .or_else(|| c.get(4))
                .map(|m| tag_start + body_start + m.start()..tag_start + body_start + m.end());
            Attr { name, value }
        })
        .collect()
}

fn dimension(document: &[u8], range: Option<&Range<usize>>) -> u32 {
    range
        .and_then(|r| std::str::from_utf8(&document[r.clone()]).ok())
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

/// Extracts every `img` element in document order. Tolerates malformed markup.
pub fn scan_html(document: &[u8]) -> ScanResult {
    let mut elements = Vec::new();
    for tag in IMG_TAG.find_iter(document) {
        let attrs = attributes(tag.as_bytes(), tag.start());
        let find = |name: &str| attrs.iter().find(|a| a.name == name).and_then(|a| a.value.as_ref());
        let Some(src) = find("src") else { continue };
        let source_url = String::from_utf8_lossy(&document[src.clone()]).into_owned();
        let width = dimension(document, find("width"));
        let height = dimension(document, find("height"));
        let subtype = subtype_from_url(&source_url);
        let mut descriptor = ElementDescriptor::new(source_url, width, height, &subtype);
        if let Some(c) = FOLLOWING_CAPTION.captures(&document[tag.end()..]) {
            descriptor.caption = Some(unescape(&String::from_utf8_lossy(&c[1])));
        }
        elements.push(ScannedElement {
            descriptor,
            span: src.clone(),
        });
    }
    ScanResult { elements }
}

/// Substitutes `span` (which must currently read `expected`) with `new_src`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replacement {
    pub span: Range<usize>,
    pub expected: String,
    pub new_src: String,
}

impl Replacement {
    /// A replacement for a scanned element; `new_src` is attribute-escaped.
    pub fn for_element(element: &ScannedElement, new_src: &str) -> Self {
        Self {
            span: element.span.clone(),
            expected: element.descriptor.source_url.clone(),
            new_src: escape(new_src),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("replacement span {start}..{end} does not match the document")]
    SpanMismatch { start: usize, end: usize },
}

/// Applies replacements, which must be sorted and non-overlapping.
pub fn rewrite_html(document: &[u8], replacements: &[Replacement]) -> Result<Vec<u8>, RewriteError> {
    let mut out = Vec::with_capacity(document.len());
    let mut cursor = 0;
    for r in replacements {
        let mismatch = RewriteError::SpanMismatch {
            start: r.span.start,
            end: r.span.end,
        };
        if r.span.start < cursor || r.span.end < r.span.start || r.span.end > document.len() {
            return Err(mismatch);
        }
        if &document[r.span.clone()] != r.expected.as_bytes() {
            return Err(mismatch);
        }
        out.extend_from_slice(&document[cursor..r.span.start]);
        out.extend_from_slice(r.new_src.as_bytes());
        cursor = r.span.end;
    }
    out.extend_from_slice(&document[cursor..]);
    Ok(out)
}

/// How resolved elements are written back into the page.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReplacementMode {
    /// Point `src` at the off-site locator.
    #[default]
    SrcSwap,
    /// Embed the fetched bytes as a `data:` URL.
    Inline,
}

impl FromStr for ReplacementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "src-swap" | "srcswap" => Ok(Self::SrcSwap),
            "inline" => Ok(Self::Inline),
            other => Err(format!("unknown replacement mode {other:?} (expected src-swap or inline)")),
        }
    }
}

pub fn data_url(item: &ContentItem) -> String {
    format!(
        "data:{};base64,{}",
        item.media_type,
        base64::engine::general_purpose::STANDARD.encode(&item.bytes)
    )
}
