//! Query routing decisions and result aggregation.
//!
//! A query travels in two phases. While the receiving node is outside the
//! target domain it is forwarded greedily to the nearest known peer
//! ([`RouteTable::candidates_for`]). The first node inside the target
//! serves it and becomes responsible for the whole target subtree: it
//! hands every other group inside the target to one of that group's
//! gateways, each of which recursively covers its own group. Every node in
//! the target therefore receives the query exactly once.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::domain::{is_ancestor_or_self, DomainPath};
use crate::overlay::{GroupKind, RouteEntry, RouteTable};
use crate::query::QueryReport;
use crate::wire::{NodeAddr, NodeId, PeerInfo, QueryMode, Scope, WireHit};

pub const DEFAULT_TTL: u8 = 16;
pub const DEFAULT_DEADLINE: u64 = 2000;
pub const DEDUP_WINDOW: usize = 4096;

/// One hit in the originator's merged list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedHit {
    pub responder: NodeAddr,
    pub path: String,
    pub score_micros: u64,
    pub size: u64,
    pub snippet: String,
}

impl MergedHit {
    fn sort_key(&self) -> (std::cmp::Reverse<u64>, NodeId, &str) {
        (std::cmp::Reverse(self.score_micros), self.responder.node, &self.path)
    }
}

/// Sorts by descending score, then responder id, then path.
pub fn sort_hits(hits: &mut [MergedHit]) {
    hits.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Last `capacity` (origin, msg_id) pairs seen, evicted first-in first-out.
#[derive(Debug, Clone)]
pub struct DedupWindow {
    capacity: usize,
    order: VecDeque<(NodeId, u64)>,
    seen: HashSet<(NodeId, u64)>,
}

impl Default for DedupWindow {
    fn default() -> Self {
        DedupWindow::new(DEDUP_WINDOW)
    }
}

impl DedupWindow {
    pub fn new(capacity: usize) -> Self {
        DedupWindow {
            capacity: capacity.max(1),
            order: VecDeque::new(),
            seen: HashSet::new(),
        }
    }

    /// Records the pair; false if it was already inside the window.
    pub fn insert(&mut self, origin: NodeId, msg_id: u64) -> bool {
        if !self.seen.insert((origin, msg_id)) {
            return false;
        }
        self.order.push_back((origin, msg_id));
        if self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        true
    }

    pub fn contains(&self, origin: NodeId, msg_id: u64) -> bool {
        self.seen.contains(&(origin, msg_id))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// This node lies in the target: serve locally and cover the scope.
    Serve { cover: Vec<(PeerInfo, Scope)> },
    /// Forward toward the target through this peer.
    Forward(RouteEntry),
    /// Not in the target and nobody known is nearer.
    DeadEnd,
}

/// Decides what a node does with a routed message for `target`.
pub fn decide(table: &RouteTable, target: &DomainPath, scope: &Scope) -> Decision {
    let own = table.self_domain();
    match scope {
        Scope::Route => {
            if is_ancestor_or_self(target, own) {
                Decision::Serve {
                    cover: cover_targets(table, &Scope::Subtree(target.clone())),
                }
            } else {
                match table.candidates_for(target).into_iter().next() {
                    Some(e) => Decision::Forward(e),
                    None => Decision::DeadEnd,
                }
            }
        }
        delegated => Decision::Serve {
            cover: cover_targets(table, delegated),
        },
    }
}

/// Who to hand a delegated scope to, one entry per group.
///
/// * `Subtree(S)`: one gateway of every group inside `S`, plus every other
///   member of the own leaf.
/// * `Exact(D)`: every other member of the own leaf.
/// * `Single`: nobody.
pub fn cover_targets(table: &RouteTable, scope: &Scope) -> Vec<(PeerInfo, Scope)> {
    let own = table.self_domain();
    let mut out = Vec::new();
    let leaf_too = match scope {
        Scope::Subtree(s) => {
            if !is_ancestor_or_self(s, own) {
                return out;
            }
            for group in table.groups_within(s) {
                let Some(gw) = group.gateways.first() else { continue };
                let key = &group.group.prefix;
                let delegated = match table.group_kind(key) {
                    GroupKind::Exact => Scope::Exact(key.clone()),
                    GroupKind::Subtree => Scope::Subtree(key.clone()),
                };
                out.push((gw.clone(), delegated));
            }
            true
        }
        Scope::Exact(d) => d == own,
        Scope::Route | Scope::Single => false,
    };
    if leaf_too {
        let me = table.self_peer().id();
        for m in &table.leaf().members {
            if m.id() != me {
                out.push((m.clone(), Scope::Single));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("result for query {0} arrived after its deadline")]
pub struct LateResult(pub u64);

/// Originator-side state of one query.
#[derive(Debug, Clone)]
pub struct QueryState {
    pub query_id: u64,
    /// Message ids of every attempt (the first equals `query_id`).
    pub msg_ids: Vec<u64>,
    pub origin: NodeAddr,
    pub target: DomainPath,
    pub keywords: Vec<String>,
    pub mode: QueryMode,
    pub k: u16,
    pub deadline: u64,
    pub results_received: u32,
    pub expected: Option<u32>,
    hits: BTreeMap<(NodeId, String), MergedHit>,
    responders: BTreeSet<NodeId>,
    dead_end: bool,
    duplicates: u32,
    pub retried: bool,
}

impl QueryState {
    pub fn new(
        query_id: u64,
        origin: NodeAddr,
        query: &crate::query::Query,
        deadline: u64,
        expected: Option<u32>,
    ) -> Self {
        QueryState {
            query_id,
            msg_ids: vec![query_id],
            origin,
            target: query.target.clone(),
            keywords: query.keywords.clone(),
            mode: query.mode,
            k: query.k,
            deadline,
            results_received: 0,
            expected,
            hits: BTreeMap::new(),
            responders: BTreeSet::new(),
            dead_end: false,
            duplicates: 0,
            retried: false,
        }
    }

    /// Merges one RESULT.
    pub fn collect(
        &mut self,
        now: u64,
        responder: &NodeAddr,
        hits: &[WireHit],
        dead_end: bool,
    ) -> Result<(), LateResult> {
        if now > self.deadline {
            return Err(LateResult(self.query_id));
        }
        self.results_received += 1;
        if dead_end {
            self.dead_end = true;
            return Ok(());
        }
        if !self.responders.insert(responder.node) {
            self.duplicates += 1;
        }
        for h in hits {
            self.hits
                .entry((responder.node, h.path.clone()))
                .or_insert_with(|| MergedHit {
                    responder: responder.clone(),
                    path: h.path.clone(),
                    score_micros: h.score_micros,
                    size: h.size,
                    snippet: h.snippet.clone(),
                });
        }
        Ok(())
    }

    /// True once the expected number of responders has answered.
    pub fn is_complete(&self) -> bool {
        self.expected
            .is_some_and(|n| self.responders.len() as u32 >= n)
    }

    pub fn merged(&self) -> Vec<MergedHit> {
        let mut hits: Vec<MergedHit> = self.hits.values().cloned().collect();
        sort_hits(&mut hits);
        hits
    }

    pub fn report(&self, late_results: u32) -> QueryReport {
        QueryReport {
            query_id: self.query_id,
            hits: self.merged(),
            responders: self.responders.iter().copied().collect(),
            dead_end: self.dead_end,
            duplicate_results: self.duplicates,
            late_results,
            retried: self.retried,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_path;
    use crate::overlay::CachePolicy;
    use crate::query::parse_query;

    fn peer(id: u64, d: &str) -> PeerInfo {
        PeerInfo {
            addr: NodeAddr::sim(id),
            domain: parse_domain_path(d).unwrap(),
        }
    }

    fn hit(path: &str, score: u64) -> WireHit {
        WireHit {
            path: path.into(),
            score_micros: score,
            size: 1,
            snippet: String::new(),
        }
    }

    fn state() -> QueryState {
        QueryState::new(1, NodeAddr::sim(1), &parse_query("ab@all").unwrap(), 100, None)
    }

    #[test]
    fn disjoint_results_union_sorted() {
        let mut qs = state();
        qs.collect(5, &NodeAddr::sim(2), &[hit("a", 10), hit("b", 30)], false).unwrap();
        qs.collect(6, &NodeAddr::sim(3), &[hit("c", 20)], false).unwrap();
        let order: Vec<(u64, String)> = qs.merged().into_iter().map(|h| (h.responder.node.0, h.path)).collect();
        assert_eq!(order, [(2, "b".into()), (3, "c".into()), (2, "a".into())]);
    }

    #[test]
    fn retransmitted_hit_appears_once() {
        let mut qs = state();
        qs.collect(5, &NodeAddr::sim(2), &[hit("a", 10)], false).unwrap();
        qs.collect(6, &NodeAddr::sim(2), &[hit("a", 10)], false).unwrap();
        assert_eq!(qs.merged().len(), 1);
        assert_eq!(qs.report(0).duplicate_results, 1);
        assert_eq!(qs.report(0).responders, [NodeId(2)]);
    }

    #[test]
    fn late_results_rejected() {
        let mut qs = state();
        assert_eq!(qs.collect(101, &NodeAddr::sim(2), &[], false), Err(LateResult(1)));
    }

    #[test]
    fn ties_break_on_responder_then_path() {
        let mut qs = state();
        qs.collect(1, &NodeAddr::sim(9), &[hit("z", 5), hit("a", 5)], false).unwrap();
        qs.collect(1, &NodeAddr::sim(4), &[hit("m", 5)], false).unwrap();
        let got: Vec<(u64, String)> = qs.merged().into_iter().map(|h| (h.responder.node.0, h.path)).collect();
        assert_eq!(got, [(4, "m".into()), (9, "a".into()), (9, "z".into())]);
    }

    #[test]
    fn dedup_window_is_fifo() {
        let mut w = DedupWindow::new(2);
        assert!(w.insert(NodeId(1), 1));
        assert!(!w.insert(NodeId(1), 1));
        assert!(w.insert(NodeId(1), 2));
        assert!(w.insert(NodeId(1), 3));
        assert!(!w.contains(NodeId(1), 1));
        assert!(w.insert(NodeId(1), 1));
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn serve_inside_target_and_cover_groups() {
        let mut rt = RouteTable::new(peer(5, "all.a.b"), 2, CachePolicy::Lru, 0);
        rt.offer_member(peer(6, "all.a.b"));
        rt.offer_member(peer(2, "all.a.c.x"));
        rt.offer_member(peer(3, "all.a.c.y"));
        rt.offer_member(peer(1, "all.a"));
        rt.offer_member(peer(4, "all.d"));
        rt.offer_member(peer(7, "all.a.b.q"));
        let target = parse_domain_path("all.a").unwrap();
        let Decision::Serve { cover } = decide(&rt, &target, &Scope::Route) else {
            panic!("expected serve")
        };
        let got: Vec<(u64, Scope)> = cover.into_iter().map(|(p, s)| (p.id().0, s)).collect();
        assert_eq!(
            got,
            [
                (1, Scope::Exact(parse_domain_path("all.a").unwrap())),
                (7, Scope::Subtree(parse_domain_path("all.a.b.q").unwrap())),
                (2, Scope::Subtree(parse_domain_path("all.a.c").unwrap())),
                (6, Scope::Single),
            ]
        );
    }

    #[test]
    fn forward_or_dead_end() {
        let mut rt = RouteTable::new(peer(5, "all.a"), 2, CachePolicy::Lru, 0);
        let far = parse_domain_path("all.z").unwrap();
        assert_eq!(decide(&rt, &far, &Scope::Route), Decision::DeadEnd);
        rt.offer_member(peer(9, "all.z.q"));
        match decide(&rt, &far, &Scope::Route) {
            Decision::Forward(e) => assert_eq!(e.id(), NodeId(9)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
