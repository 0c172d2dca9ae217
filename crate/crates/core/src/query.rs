//! `keywords@domain` queries and their outcomes.

use std::fmt;

use thiserror::Error;

use crate::domain::{parse_domain_path, DomainError, DomainPath};
use crate::router::MergedHit;
use crate::search::tokenize;
use crate::wire::{NodeId, QueryMode};

pub const DEFAULT_K: u16 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub keywords: Vec<String>,
    pub target: DomainPath,
    pub mode: QueryMode,
    /// Maximum hits per responder.
    pub k: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseQueryError {
    #[error("query must have the form keywords@domain")]
    NoAtSign,
    #[error("query has no usable keywords")]
    EmptyKeywords,
    #[error("bad domain: {0}")]
    Domain(#[from] DomainError),
}

/// Parses `keywords@domain`, splitting at the last '@'.
pub fn parse_query(input: &str) -> Result<Query, ParseQueryError> {
    let at = input.rfind('@').ok_or(ParseQueryError::NoAtSign)?;
    let (left, right) = (&input[..at], &input[at + 1..]);
    let target = parse_domain_path(right)?;
    let keywords = tokenize(left);
    if keywords.is_empty() {
        return Err(ParseQueryError::EmptyKeywords);
    }
    Ok(Query {
        keywords,
        target,
        mode: QueryMode::Or,
        k: DEFAULT_K,
    })
}

impl Query {
    pub fn with_mode(mut self, mode: QueryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_k(mut self, k: u16) -> Self {
        self.k = k;
        self
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.keywords.join(" "), self.target)
    }
}

impl std::str::FromStr for Query {
    type Err = ParseQueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_query(s)
    }
}

/// Everything the originator collected for one query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryReport {
    pub query_id: u64,
    pub hits: Vec<MergedHit>,
    /// Nodes that served the query, sorted.
    pub responders: Vec<NodeId>,
    pub dead_end: bool,
    pub duplicate_results: u32,
    pub late_results: u32,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseQueryError),
    #[error("node has not joined the overlay")]
    NotJoined,
    #[error("no results{}", if *dead_end { " (routing dead end: nobody joined that domain)" } else { "" })]
    NoResults { dead_end: bool },
}

impl QueryReport {
    /// Turns a report into the user-facing outcome.
    pub fn into_result(self) -> Result<QueryReport, QueryError> {
        if self.hits.is_empty() {
            Err(QueryError::NoResults {
                dead_end: self.dead_end,
            })
        } else {
            Ok(self)
        }
    }
}
