//! Independent reference implementations checked against the library.

use std::collections::BTreeMap;

use proptest::prelude::*;
use sp2p_core::query::parse_query;
use sp2p_core::router::{sort_hits, MergedHit, QueryState};
use sp2p_core::search::{html_to_text, tokenize, InvertedIndex};
use sp2p_core::wire::{NodeAddr, QueryMode, WireHit};

/// Straightforward tokenizer: maximal alphanumeric runs, lower-cased,
/// kept when 2 to 40 characters long.
fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            let lower = cur.to_lowercase();
            let n = lower.chars().count();
            if (2..=40).contains(&n) {
                out.push(lower);
            }
            cur.clear();
        }
    }
    out
}

/// Brute-force TF-IDF: recount every term in every document.
fn oracle_search(docs: &[String], query: &[String], k: usize, and: bool) -> Vec<(u32, u64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(d)).collect();
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let n = docs.len() as f64;
    let mut out = Vec::new();
    for (i, doc) in toks.iter().enumerate() {
        let mut score = 0u64;
        let mut matched = 0;
        for t in &terms {
            let tf = doc.iter().filter(|x| x == t).count();
            if tf == 0 {
                continue;
            }
            matched += 1;
            let df = toks.iter().filter(|d| d.contains(t)).count() as f64;
            score += (tf as f64 * (1.0 + n / df).ln() * 1e6).round() as u64;
        }
        if score > 0 && (!and || matched == terms.len()) {
            out.push((i as u32, score));
        }
    }
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

fn corpus() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let vocab: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
    let v2 = vocab.clone();
    (
        prop::collection::vec(prop::collection::vec(prop::sample::select(vocab), 0..40), 0..20),
        prop::collection::vec(prop::sample::select(v2), 1..4),
    )
        .prop_map(|(docs, q)| (docs.into_iter().map(|d| d.join(" ")).collect(), q))
}

proptest! {
    #[test]
    fn tokenizer_matches_oracle(s in "\\PC{0,80}") {
        prop_assert_eq!(tokenize(&s), oracle_tokens(&s));
    }

    #[test]
    fn search_matches_brute_force((docs, query) in corpus(), k in 1usize..15, and in any::<bool>()) {
        let mut ix = InvertedIndex::new();
        for (i, d) in docs.iter().enumerate() {
            ix.add_document(&format!("d{i}"), d.len() as u64, 0, d);
        }
        let mode = if and { QueryMode::And } else { QueryMode::Or };
        let got: Vec<(u32, u64)> = ix.search(&query, k, mode).iter().map(|h| (h.doc_id, h.score_micros)).collect();
        prop_assert_eq!(got, oracle_search(&docs, &query, k, and));
    }

    #[test]
    fn merge_equals_flat_resort(lists in prop::collection::vec(
        prop::collection::btree_map("[a-d]{1,2}", 0u64..5, 0..6), 5..=5)
    ) {
        let q = parse_query("zz@all").unwrap();
        let mut qs = QueryState::new(1, NodeAddr::sim(100), &q, 10, None);
        let mut flat = Vec::new();
        for (i, hits) in lists.iter().enumerate() {
            let responder = NodeAddr::sim(10 - i as u64);
            let wire: Vec<WireHit> = hits
                .iter()
                .map(|(p, s)| WireHit { path: p.clone(), score_micros: *s, size: 0, snippet: String::new() })
                .collect();
            qs.collect(1, &responder, &wire, false).unwrap();
            for (p, s) in hits {
                flat.push((std::cmp::Reverse(*s), responder.node, p.clone()));
            }
        }
        flat.sort();
        let got: Vec<_> = qs
            .merged()
            .into_iter()
            .map(|h| (std::cmp::Reverse(h.score_micros), h.responder.node, h.path))
            .collect();
        prop_assert_eq!(got, flat);
    }

    #[test]
    fn sort_hits_is_a_total_order(hits in prop::collection::vec((0u64..4, 0u64..3, "[ab]{1,2}"), 0..12)) {
        let mk = |v: &[(u64, u64, String)]| -> Vec<MergedHit> {
            v.iter().map(|(s, r, p)| MergedHit {
                responder: NodeAddr::sim(*r),
                path: p.clone(),
                score_micros: *s,
                size: 0,
                snippet: String::new(),
            }).collect()
        };
        let mut a = mk(&hits);
        let mut rev = hits.clone();
        rev.reverse();
        let mut b = mk(&rev);
        sort_hits(&mut a);
        sort_hits(&mut b);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn html_fixture_matches_reference_text() {
    let html = include_str!("fixtures/page.html");
    let expected = include_str!("fixtures/page.txt").trim_end();
    assert_eq!(html_to_text(html), expected);
}

#[test]
fn index_tf_counts_match_oracle() {
    let docs = ["Alpha beta, BETA! gamma_delta", "beta beta beta x y"];
    let mut ix = InvertedIndex::new();
    for (i, d) in docs.iter().enumerate() {
        ix.add_document(&format!("{i}"), 0, 0, d);
    }
    let mut oracle: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in oracle_tokens(d) {
            *counts.entry(t).or_default() += 1;
        }
        for (t, c) in counts {
            oracle.entry(t).or_default().push((i as u32, c));
        }
    }
    let got: BTreeMap<String, Vec<(u32, u32)>> = ix
        .terms()
        .map(|(t, p)| (t.clone(), p.iter().map(|x| (x.doc_id, x.tf)).collect()))
        .collect();
    assert_eq!(got, oracle);
}
