use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on locator length, in bytes.
pub const MAX_LOCATOR_LEN: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocatorError {
    #[error("locator is empty")]
    Empty,
    #[error("locator is longer than {MAX_LOCATOR_LEN} bytes")]
    TooLong,
    #[error("locator contains non-ASCII, whitespace or control characters")]
    BadCharacters,
    #[error("locator must start with http:// or https://")]
    BadScheme,
    #[error("locator is not an absolute URL: {0}")]
    Malformed(String),
}

/// An absolute `http`/`https` URL naming a piece of content.
///
/// The string is kept verbatim; no normalization is applied, so two locators
/// compare equal only when their bytes do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentLocator(String);

impl ContentLocator {
    pub fn parse(s: &str) -> Result<Self, LocatorError> {
        if s.is_empty() {
            return Err(LocatorError::Empty);
        }
        if s.len() > MAX_LOCATOR_LEN {
            return Err(LocatorError::TooLong);
        }
        if !s.bytes().all(|b| b.is_ascii_graphic()) {
            return Err(LocatorError::BadCharacters);
        }
        if !(s.starts_with("http://") || s.starts_with("https://")) {
            return Err(LocatorError::BadScheme);
        }
        let parsed = url::Url::parse(s).map_err(|e| LocatorError::Malformed(e.to_string()))?;
        if parsed.host_str().is_none_or(str::is_empty) {
            return Err(LocatorError::Malformed("missing host".into()));
        }
        Ok(Self(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The path component, e.g. `/fp/photos/1.png`.
    pub fn path(&self) -> String {
        url::Url::parse(&self.0)
            .map(|u| u.path().to_owned())
            .unwrap_or_default()
    }

    pub fn has_fragment(&self) -> bool {
        self.0.contains('#')
    }
}

impl fmt::Display for ContentLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ContentLocator {
    type Err = LocatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<String> for ContentLocator {
    type Error = LocatorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<ContentLocator> for String {
    fn from(l: ContentLocator) -> Self {
        l.0
    }
}

impl AsRef<str> for ContentLocator {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Media class of a piece of content and of the pseudo-content standing in for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaClass {
    Image,
    Text,
}

impl MediaClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaClass::Image => "image",
            MediaClass::Text => "text",
        }
    }
}

impl fmt::Display for MediaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MediaClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(MediaClass::Image),
            "text" => Ok(MediaClass::Text),
            _ => Err(()),
        }
    }
}
