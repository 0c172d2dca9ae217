//! Hierarchical domain paths rooted at `all`.
//!
//! A [`DomainPath`] is the semantic address of a node: nodes join the
//! classification they want to share under and queries are scoped to a
//! path. Routing only ever needs prefix arithmetic on these paths, which
//! lives here as pure functions.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Label of the root domain.
pub const ROOT_LABEL: &str = "all";

/// Maximum depth of a path (number of labels below the root).
pub const MAX_DEPTH: usize = 16;

/// Maximum label length, in characters.
pub const MAX_LABEL_CHARS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("empty domain label at position {0}")]
    EmptyLabel(usize),
    #[error("domain path must start with \"{ROOT_LABEL}\", found \"{0}\"")]
    MissingRoot(String),
    #[error("illegal character {ch:?} in domain label \"{label}\"")]
    IllegalChar { label: String, ch: char },
    #[error("domain path deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("domain label longer than {MAX_LABEL_CHARS} characters")]
    LabelTooLong,
}

/// One normalized segment of a domain path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainLabel(String);

impl DomainLabel {
    pub fn new(raw: &str) -> Result<Self, DomainError> {
        let text = raw.trim().to_lowercase();
        if text.is_empty() {
            return Err(DomainError::EmptyLabel(0));
        }
        if let Some(ch) = text.chars().find(|c| *c == '.' || *c == '@') {
            return Err(DomainError::IllegalChar { label: text, ch });
        }
        if text.chars().count() > MAX_LABEL_CHARS {
            return Err(DomainError::LabelTooLong);
        }
        Ok(DomainLabel(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A dot-separated path in the domain tree, e.g. `all.education.cs`.
///
/// The first label is always `all`. Ordering is lexicographic by label,
/// which is only used to keep maps deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainPath {
    labels: Vec<DomainLabel>,
}

impl DomainPath {
    /// The root path `all`.
    pub fn root() -> Self {
        DomainPath {
            labels: vec![DomainLabel(ROOT_LABEL.to_string())],
        }
    }

    pub fn parse(text: &str) -> Result<Self, DomainError> {
        parse_domain_path(text)
    }

    pub fn labels(&self) -> &[DomainLabel] {
        &self.labels
    }

    /// Number of labels, root included.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: a path holds at least the root label.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distance from the root; `all` has depth 0.
    pub fn depth(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn is_root(&self) -> bool {
        self.labels.len() == 1
    }

    pub fn parent(&self) -> Option<DomainPath> {
        if self.is_root() {
            None
        } else {
            Some(self.truncate(self.labels.len() - 1))
        }
    }

    /// The first `len` labels of this path (clamped to `1..=self.len()`).
    pub fn truncate(&self, len: usize) -> DomainPath {
        let len = len.clamp(1, self.labels.len());
        DomainPath {
            labels: self.labels[..len].to_vec(),
        }
    }

    pub fn child(&self, label: &str) -> Result<DomainPath, DomainError> {
        if self.depth() >= MAX_DEPTH {
            return Err(DomainError::TooDeep);
        }
        let mut labels = self.labels.clone();
        labels.push(DomainLabel::new(label)?);
        Ok(DomainPath { labels })
    }

    /// Canonical text form: labels joined by '.'.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (i, label) in self.labels.iter().enumerate() {
            if i > 0 {
                out.push('.');
            }
            out.push_str(label.as_str());
        }
        out
    }
}

impl fmt::Display for DomainPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for DomainPath {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_domain_path(s)
    }
}

/// Parses dotted text into a normalized [`DomainPath`].
///
/// Each label is trimmed and lower-cased, so `"ALL. Education "` and
/// `"all.education"` denote the same path.
pub fn parse_domain_path(text: &str) -> Result<DomainPath, DomainError> {
    let mut labels = Vec::new();
    for (i, raw) in text.split('.').enumerate() {
        let label = DomainLabel::new(raw).map_err(|e| match e {
            DomainError::EmptyLabel(_) => DomainError::EmptyLabel(i),
            other => other,
        })?;
        labels.push(label);
    }
    if labels[0].as_str() != ROOT_LABEL {
        return Err(DomainError::MissingRoot(labels[0].0.clone()));
    }
    if labels.len() - 1 > MAX_DEPTH {
        return Err(DomainError::TooDeep);
    }
    Ok(DomainPath { labels })
}

/// Number of leading labels shared by both paths; at least 1 (the root).
pub fn common_prefix_len(a: &DomainPath, b: &DomainPath) -> usize {
    a.labels
        .iter()
        .zip(b.labels.iter())
        .take_while(|(x, y)| x == y)
        .count()
}

/// True iff `a` is a prefix of `b` (including `a == b`).
pub fn is_ancestor_or_self(a: &DomainPath, b: &DomainPath) -> bool {
    a.len() <= b.len() && common_prefix_len(a, b) == a.len()
}

/// Hop distance between two vertices of the domain tree.
pub fn domain_distance(a: &DomainPath, b: &DomainPath) -> usize {
    let cpl = common_prefix_len(a, b);
    (a.len() - cpl) + (b.len() - cpl)
}
