use std::collections::{BTreeMap, HashMap};
use std::time::UNIX_EPOCH;

use thiserror::Error;
use walkdir::WalkDir;

use super::extract::{ExtractError, ExtractorRegistry};
use super::sandbox::SandboxRoot;
use super::tokenize::tokenize;
use crate::wire::QueryMode;

pub const SNIPPET_CHARS: usize = crate::wire::MAX_SNIPPET_CHARS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocRecord {
    pub doc_id: u32,
    /// '/'-separated, relative to the sandbox root, never containing "..".
    pub rel_path: String,
    pub size: u64,
    pub token_count: u32,
    pub mtime: u64,
    pub snippet: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_id: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub doc_id: u32,
    pub path: String,
    pub score_micros: u64,
    pub size: u64,
    pub snippet: String,
}

/// Term to postings map plus the document store.
///
/// Postings lists are sorted by `doc_id` because documents are only ever
/// appended with increasing ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    docs: Vec<DocRecord>,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("sandbox root {0} is missing")]
    RootMissing(std::path::PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexReport {
    pub indexed: usize,
    pub unsupported: usize,
    /// Symbolic links that resolve outside the sandbox (or nowhere).
    pub escaping: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn make_snippet(text: &str) -> String {
    let mut out = String::new();
    let mut n = 0;
    for word in text.split_whitespace() {
        for ch in (if n == 0 { "" } else { " " }).chars().chain(word.chars()) {
            if n == SNIPPET_CHARS {
                return out;
            }
            out.push(ch);
            n += 1;
        }
    }
    out
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a document and returns its id.
    pub fn add_document(&mut self, rel_path: &str, size: u64, mtime: u64, text: &str) -> u32 {
        let doc_id = self.docs.len() as u32;
        let tokens = tokenize(text);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for (term, tf) in counts {
            self.postings.entry(term).or_default().push(Posting { doc_id, tf });
        }
        self.docs.push(DocRecord {
            doc_id,
            rel_path: rel_path.to_string(),
            size,
            token_count: tokens.len() as u32,
            mtime,
            snippet: make_snippet(text),
        });
        doc_id
    }

    pub(crate) fn from_parts(docs: Vec<DocRecord>, postings: BTreeMap<String, Vec<Posting>>) -> Self {
        InvertedIndex { postings, docs }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &[DocRecord] {
        &self.docs
    }

    pub fn doc(&self, id: u32) -> Option<&DocRecord> {
        self.docs.get(id as usize)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&String, &Vec<Posting>)> {
        self.postings.iter()
    }

    /// TF-IDF retrieval.
    ///
    /// `score(d) = Σ_t round(tf(t,d) · ln(1 + N/df(t)) · 10⁶)` over the
    /// distinct query terms; zero-score documents are dropped and ties go
    /// to the smaller doc id.
    pub fn search(&self, keywords: &[String], k: usize, mode: QueryMode) -> Vec<SearchHit> {
        let mut terms: Vec<&str> = Vec::new();
        for kw in keywords {
            if !terms.contains(&kw.as_str()) {
                terms.push(kw);
            }
        }
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.docs.len() as f64;
        let mut scores: HashMap<u32, (u64, usize)> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = (1.0 + n / list.len() as f64).ln();
            for p in list {
                let s = scores.entry(p.doc_id).or_default();
                s.0 += (p.tf as f64 * idf * 1e6).round() as u64;
                s.1 += 1;
            }
        }
        let mut ranked: Vec<(u32, u64)> = scores
            .into_iter()
            .filter(|(_, (score, matched))| {
                *score > 0 && (mode == QueryMode::Or || *matched == terms.len())
            })
            .map(|(doc, (score, _))| (doc, score))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(doc_id, score_micros)| {
                let d = &self.docs[doc_id as usize];
                SearchHit {
                    doc_id,
                    path: d.rel_path.clone(),
                    score_micros,
                    size: d.size,
                    snippet: d.snippet.clone(),
                }
            })
            .collect()
    }
}

fn mtime_secs(meta: &std::fs::Metadata) -> u64 {
    meta.modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Files eligible for indexing, in deterministic order, as
/// (relative path, canonical path, metadata).
pub(crate) fn walk_files(
    root: &SandboxRoot,
    report: &mut IndexReport,
) -> Vec<(String, std::path::PathBuf, std::fs::Metadata)> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root.path())
        .follow_links(false)
        .sort_by_file_name()
        .min_depth(1);
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e
                    .path()
                    .and_then(|p| root.relative(p))
                    .unwrap_or_default();
                report.failed.push((path, e.to_string()));
                continue;
            }
        };
        let Some(rel) = root.relative(entry.path()) else {
            report.failed.push((entry.path().display().to_string(), "non-UTF-8 path".into()));
            continue;
        };
        let ft = entry.file_type();
        if ft.is_symlink() {
            match entry.path().canonicalize() {
                Ok(target) if root.contains(&target) => {
                    // directory links are not followed
                    if let Ok(meta) = std::fs::metadata(&target) {
                        if meta.is_file() {
                            out.push((rel, target, meta));
                        }
                    }
                }
                _ => report.escaping.push(rel),
            }
        } else if ft.is_file() {
            match entry.metadata() {
                Ok(meta) => out.push((rel, entry.path().to_path_buf(), meta)),
                Err(e) => report.failed.push((rel, e.to_string())),
            }
        }
    }
    out
}

/// Indexes every supported file under the sandbox.
///
/// Files that fail extraction are reported, never fatal.
pub fn index_directory(
    root: &SandboxRoot,
    registry: &ExtractorRegistry,
) -> Result<(InvertedIndex, IndexReport), IndexError> {
    if !root.path().is_dir() {
        return Err(IndexError::RootMissing(root.path().to_path_buf()));
    }
    let mut report = IndexReport::default();
    let mut index = InvertedIndex::new();
    for (rel, path, meta) in walk_files(root, &mut report) {
        match registry.extract_text(&path) {
            Ok(text) => {
                index.add_document(&rel, meta.len(), mtime_secs(&meta), &text);
                report.indexed += 1;
            }
            Err(ExtractError::Unsupported(_)) => report.unsupported += 1,
            Err(e) => report.failed.push((rel, e.to_string())),
        }
    }
    Ok((index, report))
}

pub(crate) fn file_mtime(meta: &std::fs::Metadata) -> u64 {
    mtime_secs(meta)
}
