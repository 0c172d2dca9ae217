//! Node daemon, command-line client and their shared plumbing.

pub mod client;
pub mod config;
pub mod daemon;
pub mod runtime;

use serde::Serialize;
use sp2p_core::file_access::{FetchError, ListError};
use sp2p_core::query::QueryReport;
use sp2p_core::router::MergedHit;
use sp2p_core::wire::{DirEntry, EntryKind};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const NETWORK: i32 = 4;
    pub const NO_RESULTS: i32 = 5;
    pub const REMOTE_REJECTED: i32 = 6;
    pub const TIMEOUT: i32 = 7;
    pub const INTEGRITY: i32 = 8;
}

pub fn fetch_exit_code(e: &FetchError) -> i32 {
    match e {
        FetchError::NotFound | FetchError::OutsideSandbox | FetchError::NotAFile | FetchError::Unavailable => {
            exit::REMOTE_REJECTED
        }
        FetchError::ChecksumMismatch => exit::INTEGRITY,
        FetchError::TooManyRetries { .. } => exit::TIMEOUT,
        FetchError::Protocol(_) => exit::OTHER,
    }
}

pub fn list_exit_code(e: &ListError) -> i32 {
    match e {
        ListError::Timeout => exit::TIMEOUT,
        _ => exit::REMOTE_REJECTED,
    }
}

#[derive(Debug, Serialize)]
pub struct JsonResponder {
    pub id: u64,
    pub endpoint: String,
}

#[derive(Debug, Serialize)]
pub struct JsonHit {
    pub responder: JsonResponder,
    pub path: String,
    pub score_micros: u64,
    pub size: u64,
    pub snippet: String,
}

#[derive(Debug, Serialize)]
pub struct JsonReport {
    pub query_id: u64,
    pub responders: Vec<u64>,
    pub dead_end: bool,
    pub retried: bool,
    pub hits: Vec<JsonHit>,
}

impl From<&MergedHit> for JsonHit {
    fn from(h: &MergedHit) -> Self {
        JsonHit {
            responder: JsonResponder {
                id: h.responder.node.0,
                endpoint: h.responder.endpoint.clone(),
            },
            path: h.path.clone(),
            score_micros: h.score_micros,
            size: h.size,
            snippet: h.snippet.clone(),
        }
    }
}

impl From<&QueryReport> for JsonReport {
    fn from(r: &QueryReport) -> Self {
        JsonReport {
            query_id: r.query_id,
            responders: r.responders.iter().map(|n| n.0).collect(),
            dead_end: r.dead_end,
            retried: r.retried,
            hits: r.hits.iter().map(JsonHit::from).collect(),
        }
    }
}

/// Human-readable hit list, one block per hit.
pub fn format_report(r: &QueryReport) -> String {
    let mut out = String::new();
    for (i, h) in r.hits.iter().enumerate() {
        out.push_str(&format!(
            "{:>3}. {:.6}  {}  {}  ({} bytes)\n",
            i + 1,
            h.score_micros as f64 / 1e6,
            h.responder,
            h.path,
            h.size
        ));
        if !h.snippet.is_empty() {
            out.push_str(&format!("     {}\n", h.snippet));
        }
    }
    out.push_str(&format!(
        "{} hit(s) from {} node(s)\n",
        r.hits.len(),
        r.responders.len()
    ));
    out
}

pub fn format_listing(entries: &[DirEntry], truncated: bool) -> String {
    let mut out = String::new();
    for e in entries {
        match e.kind {
            EntryKind::Dir => out.push_str(&format!("{:>12}  {}/\n", "-", e.name)),
            EntryKind::File => out.push_str(&format!("{:>12}  {}\n", e.size, e.name)),
        }
    }
    if truncated {
        out.push_str("(listing truncated)\n");
    }
    out
}
