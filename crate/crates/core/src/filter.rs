//! Cheap pre-decode heuristics deciding whether a page element may be a schema.
//!
//! Filtering only saves work. An element that passes is still subject to
//! decoding, and a failed decode is what finally rules it out.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// One scanned page element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementDescriptor {
    pub source_url: String,
    /// 0 when unknown.
    pub width: u32,
    /// 0 when unknown.
    pub height: u32,
    /// Lower-case container subtype, e.g. `png`.
    pub media_subtype: String,
    pub caption: Option<String>,
}

impl ElementDescriptor {
    pub fn new(source_url: impl Into<String>, width: u32, height: u32, subtype: &str) -> Self {
        Self {
            source_url: source_url.into(),
            width,
            height,
            media_subtype: subtype.to_ascii_lowercase(),
            caption: None,
        }
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = Some(caption.into());
        self
    }

    /// URL path, whether `source_url` is absolute or site-relative.
    pub fn path(&self) -> String {
        match url::Url::parse(&self.source_url) {
            Ok(u) => u.path().to_owned(),
            Err(_) => {
                let base = url::Url::parse("http://relative.invalid/").expect("static base");
                base.join(&self.source_url)
                    .map(|u| u.path().to_owned())
                    .unwrap_or_else(|_| self.source_url.clone())
            }
        }
    }
}

/// Subtype implied by a URL's file extension (`jpg` is reported as `jpeg`).
pub fn subtype_from_url(url: &str) -> String {
    let path = url.split(['?', '#']).next().unwrap_or_default();
    let file = path.rsplit('/').next().unwrap_or_default();
    match file.rsplit_once('.') {
        Some((_, ext)) => match ext.to_ascii_lowercase().as_str() {
            "jpg" => "jpeg".to_owned(),
            other => other.to_owned(),
        },
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub path_prefixes: Vec<String>,
    pub min_edge: u32,
    pub max_edge: u32,
    pub require_square: bool,
    pub excluded_subtypes: BTreeSet<String>,
    pub caption_marker: Option<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            path_prefixes: vec!["/fp/photos/".to_owned()],
            min_edge: 64,
            max_edge: 1024,
            require_square: true,
            excluded_subtypes: BTreeSet::from(["gif".to_owned()]),
            caption_marker: Some("r2o:1".to_owned()),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.path_prefixes.is_empty() {
            return Err("filter.path_prefixes must not be empty".into());
        }
        if self.min_edge > self.max_edge {
            return Err(format!(
                "filter.min_edge {} exceeds max_edge {}",
                self.min_edge, self.max_edge
            ));
        }
        Ok(())
    }
}

/// The first rule an element failed, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Prefix,
    Subtype,
    Bounds,
    AspectRatio,
    Caption,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Prefix => "prefix",
            RejectReason::Subtype => "subtype",
            RejectReason::Bounds => "bounds",
            RejectReason::AspectRatio => "aspect_ratio",
            RejectReason::Caption => "caption",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Candidate,
    Rejected(RejectReason),
}

impl Decision {
    pub fn is_candidate(self) -> bool {
        self == Decision::Candidate
    }
}

pub fn is_candidate(e: &ElementDescriptor, cfg: &FilterConfig) -> Decision {
    let path = e.path();
    if !cfg.path_prefixes.iter().any(|p| path.starts_with(p.as_str())) {
        return Decision::Rejected(RejectReason::Prefix);
    }
    if cfg
        .excluded_subtypes
        .iter()
        .any(|s| s.eq_ignore_ascii_case(&e.media_subtype))
    {
        return Decision::Rejected(RejectReason::Subtype);
    }
    let dims_known = e.width > 0 && e.height > 0;
    if dims_known {
        let in_bounds = |d: u32| (cfg.min_edge..=cfg.max_edge).contains(&d);
        if !in_bounds(e.width) || !in_bounds(e.height) {
            return Decision::Rejected(RejectReason::Bounds);
        }
        if cfg.require_square && e.width != e.height {
            return Decision::Rejected(RejectReason::AspectRatio);
        }
    }
    if let (Some(marker), Some(caption)) = (&cfg.caption_marker, &e.caption) {
        if !caption.contains(marker.as_str()) {
            return Decision::Rejected(RejectReason::Caption);
        }
    }
    Decision::Candidate
}

/// Caption to attach when uploading a schema: marker first, then the user's text.
pub fn make_caption(user_caption: Option<&str>, cfg: &FilterConfig) -> String {
    match (&cfg.caption_marker, user_caption) {
        (Some(marker), Some(c)) => format!("{marker} {c}"),
        (Some(marker), None) => marker.clone(),
        (None, Some(c)) => c.to_owned(),
        (None, None) => String::new(),
    }
}
