//! Per-node view of the virtual group tree.
//!
//! Relative to a node whose domain is `D`, the rest of the overlay splits
//! into disjoint groups:
//!
//! * for every proper prefix `Q` of `D`: the nodes joined to exactly `Q`,
//!   and for every child `Q.x` not on the path to `D`, the whole subtree
//!   under `Q.x`;
//! * the nodes joined to exactly `D` (the node's own leaf group);
//! * for every child `D.x`, the subtree under `D.x`.
//!
//! A group is keyed by its domain prefix. For each group the table keeps
//! the `n` members with the smallest [`NodeId`] as gateways (the tree
//! routes) plus up to `n` standby members, so a failed gateway can be
//! replaced without another round trip. Alongside the tree routes sits a
//! bounded cache of opportunistically learned peers.

use std::collections::BTreeMap;

use crate::domain::{common_prefix_len, domain_distance, is_ancestor_or_self, DomainPath};
use crate::wire::{NodeAddr, NodeId, PeerInfo};

/// Upper bound on the own-leaf member list.
pub const MAX_LEAF_MEMBERS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId {
    pub prefix: DomainPath,
    pub layer: usize,
}

impl GroupId {
    pub fn new(prefix: DomainPath) -> Self {
        let layer = prefix.depth();
        GroupId { prefix, layer }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupView {
    pub group: GroupId,
    /// Known members, sorted by id.
    pub members: Vec<PeerInfo>,
    /// The elected members, sorted by id.
    pub gateways: Vec<PeerInfo>,
}

impl GroupView {
    pub fn new(group: GroupId) -> Self {
        GroupView {
            group,
            members: Vec::new(),
            gateways: Vec::new(),
        }
    }

    /// Adds or refreshes a member. Returns false if it was already known
    /// with the same address and domain.
    fn upsert(&mut self, peer: PeerInfo) -> bool {
        match self.members.binary_search_by_key(&peer.id(), PeerInfo::id) {
            Ok(i) if self.members[i] == peer => false,
            Ok(i) => {
                self.members[i] = peer;
                true
            }
            Err(i) => {
                self.members.insert(i, peer);
                true
            }
        }
    }

    fn remove(&mut self, id: NodeId) -> bool {
        match self.members.binary_search_by_key(&id, PeerInfo::id) {
            Ok(i) => {
                self.members.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members.binary_search_by_key(&id, PeerInfo::id).is_ok()
    }
}

/// Gateways are the `n` members with the smallest ids.
pub fn elect_gateways(view: &GroupView, n: usize) -> GroupView {
    let mut members = view.members.clone();
    members.sort_by_key(PeerInfo::id);
    members.dedup_by_key(|p| p.id());
    let gateways = members.iter().take(n).cloned().collect();
    GroupView {
        group: view.group.clone(),
        members,
        gateways,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RouteKind {
    Tree,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub peer: NodeAddr,
    pub peer_domain: DomainPath,
    pub kind: RouteKind,
    pub last_used: u64,
    pub inserted_at: u64,
}

impl RouteEntry {
    pub fn cached(peer: PeerInfo, now: u64) -> Self {
        RouteEntry {
            peer: peer.addr,
            peer_domain: peer.domain,
            kind: RouteKind::Cached,
            last_used: now,
            inserted_at: now,
        }
    }

    pub fn id(&self) -> NodeId {
        self.peer.node
    }

    pub fn info(&self) -> PeerInfo {
        PeerInfo {
            addr: self.peer.clone(),
            domain: self.peer_domain.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CachePolicy {
    /// Evict the least recently used entry.
    #[default]
    Lru,
    /// Evict the entry whose domain is closest to our own; nearby peers are
    /// redundant with tree routes while distant ones extend reach.
    MinDistance,
}

impl std::str::FromStr for CachePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(CachePolicy::Lru),
            "mind" | "min-distance" | "mindistance" => Ok(CachePolicy::MinDistance),
            other => Err(format!("unknown cache policy \"{other}\" (expected lru or mind)")),
        }
    }
}

/// How a group relates to the owning node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    /// Nodes joined to exactly the key domain.
    Exact,
    /// Every node under the key domain.
    Subtree,
}

#[derive(Debug, Clone)]
pub struct RouteTable {
    self_peer: PeerInfo,
    n_tuple: usize,
    policy: CachePolicy,
    capacity: usize,
    groups: BTreeMap<DomainPath, GroupView>,
    cache: Vec<RouteEntry>,
    clock: u64,
}

/// Ordering key used by [`RouteTable::candidates_for`]; smaller is nearer.
pub fn nearness_key(peer_domain: &DomainPath, target: &DomainPath) -> (std::cmp::Reverse<usize>, usize) {
    (
        std::cmp::Reverse(common_prefix_len(peer_domain, target)),
        domain_distance(peer_domain, target),
    )
}

impl RouteTable {
    pub fn new(self_peer: PeerInfo, n_tuple: usize, policy: CachePolicy, capacity: usize) -> Self {
        let mut groups = BTreeMap::new();
        let mut leaf = GroupView::new(GroupId::new(self_peer.domain.clone()));
        leaf.upsert(self_peer.clone());
        groups.insert(self_peer.domain.clone(), elect_gateways(&leaf, n_tuple.max(1)));
        RouteTable {
            self_peer,
            n_tuple: n_tuple.max(1),
            policy,
            capacity,
            groups,
            cache: Vec::new(),
            clock: 0,
        }
    }

    pub fn self_peer(&self) -> &PeerInfo {
        &self.self_peer
    }

    pub fn self_domain(&self) -> &DomainPath {
        &self.self_peer.domain
    }

    pub fn n_tuple(&self) -> usize {
        self.n_tuple
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    /// The group key under which `domain` falls, relative to this node.
    pub fn group_key(&self, domain: &DomainPath) -> (DomainPath, GroupKind) {
        let own = self.self_domain();
        let cpl = common_prefix_len(domain, own);
        if cpl == domain.len() {
            (domain.clone(), GroupKind::Exact)
        } else {
            (domain.truncate(cpl + 1), GroupKind::Subtree)
        }
    }

    pub fn group_kind(&self, key: &DomainPath) -> GroupKind {
        if is_ancestor_or_self(key, self.self_domain()) {
            GroupKind::Exact
        } else {
            GroupKind::Subtree
        }
    }

    /// Learns about a peer's membership. Returns true if the table changed.
    pub fn offer_member(&mut self, peer: PeerInfo) -> bool {
        if peer.id() == self.self_peer.id() {
            return false;
        }
        // a peer that moved domains must not linger in its old group
        let stale: Vec<DomainPath> = self
            .groups
            .iter()
            .filter(|(_, g)| g.members.iter().any(|m| m.id() == peer.id() && m.domain != peer.domain))
            .map(|(k, _)| k.clone())
            .collect();
        for key in stale {
            self.remove_from_group(&key, peer.id());
        }
        let (key, _) = self.group_key(&peer.domain);
        let own_leaf = key == *self.self_domain();
        let keep = if own_leaf { MAX_LEAF_MEMBERS } else { 2 * self.n_tuple };
        let n = self.n_tuple;
        let view = self
            .groups
            .entry(key.clone())
            .or_insert_with(|| GroupView::new(GroupId::new(key)));
        let changed = view.upsert(peer.clone());
        let mut truncated = false;
        if view.members.len() > keep {
            view.members.truncate(keep);
            truncated = true;
        }
        *view = elect_gateways(view, n);
        changed && !(truncated && !view.contains(peer.id()))
    }

    fn remove_from_group(&mut self, key: &DomainPath, id: NodeId) -> bool {
        let n = self.n_tuple;
        let Some(view) = self.groups.get_mut(key) else {
            return false;
        };
        if !view.remove(id) {
            return false;
        }
        *view = elect_gateways(view, n);
        if view.members.is_empty() {
            self.groups.remove(key);
        }
        true
    }

    /// Drops a failed peer from tree and cache, re-electing gateways.
    pub fn handle_peer_failure(&mut self, peer: NodeId) -> bool {
        if peer == self.self_peer.id() {
            return false;
        }
        let keys: Vec<DomainPath> = self.groups.keys().cloned().collect();
        let mut changed = false;
        for key in keys {
            changed |= self.remove_from_group(&key, peer);
        }
        let before = self.cache.len();
        self.cache.retain(|e| e.id() != peer);
        changed || before != self.cache.len()
    }

    /// Whether the peer appears anywhere in the table.
    pub fn references(&self, peer: NodeId) -> bool {
        self.groups.values().any(|g| g.contains(peer)) || self.cache.iter().any(|e| e.id() == peer)
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupView> {
        self.groups.values()
    }

    pub fn group(&self, key: &DomainPath) -> Option<&GroupView> {
        self.groups.get(key)
    }

    /// The node's own leaf group (always contains the node itself).
    pub fn leaf(&self) -> &GroupView {
        &self.groups[self.self_domain()]
    }

    /// Groups other than the own leaf whose key lies inside `scope`.
    pub fn groups_within<'a>(&'a self, scope: &'a DomainPath) -> impl Iterator<Item = &'a GroupView> + 'a {
        let own = self.self_domain();
        self.groups
            .iter()
            .filter(move |(key, _)| *key != own && is_ancestor_or_self(scope, key))
            .map(|(_, g)| g)
    }

    /// Tree routes: the gateways of every group except the own leaf.
    pub fn tree_routes(&self) -> Vec<RouteEntry> {
        let own = self.self_domain();
        self.groups
            .iter()
            .filter(|(key, _)| *key != own)
            .flat_map(|(_, g)| g.gateways.iter())
            .map(|p| RouteEntry {
                peer: p.addr.clone(),
                peer_domain: p.domain.clone(),
                kind: RouteKind::Tree,
                last_used: 0,
                inserted_at: 0,
            })
            .collect()
    }

    /// Every peer known to the table, tree or cache, without duplicates.
    pub fn known_peers(&self) -> Vec<PeerInfo> {
        let mut out: BTreeMap<NodeId, PeerInfo> = BTreeMap::new();
        for g in self.groups.values() {
            for m in &g.members {
                out.entry(m.id()).or_insert_with(|| m.clone());
            }
        }
        for e in &self.cache {
            out.entry(e.id()).or_insert_with(|| e.info());
        }
        out.remove(&self.self_peer.id());
        out.into_values().collect()
    }

    pub fn cached(&self) -> &[RouteEntry] {
        &self.cache
    }

    pub fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Inserts a cached route, evicting one entry by policy when full.
    /// Returns the evicted entry, if any.
    pub fn cache_insert(&mut self, mut entry: RouteEntry) -> Option<RouteEntry> {
        entry.kind = RouteKind::Cached;
        if self.capacity == 0 || entry.id() == self.self_peer.id() {
            return None;
        }
        if let Some(existing) = self.cache.iter_mut().find(|e| e.id() == entry.id()) {
            existing.last_used = existing.last_used.max(entry.last_used);
            existing.peer = entry.peer;
            existing.peer_domain = entry.peer_domain;
            return None;
        }
        let evicted = if self.cache.len() >= self.capacity {
            let victim = match self.policy {
                CachePolicy::Lru => self
                    .cache
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, e)| (e.last_used, e.inserted_at))
                    .map(|(i, _)| i),
                CachePolicy::MinDistance => {
                    let own = &self.self_peer.domain;
                    self.cache
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, e)| (domain_distance(&e.peer_domain, own), e.inserted_at))
                        .map(|(i, _)| i)
                }
            };
            victim.map(|i| self.cache.remove(i))
        } else {
            None
        };
        self.cache.push(entry);
        evicted
    }

    /// Offers a peer to the cache using the table's logical clock.
    pub fn cache_offer(&mut self, peer: PeerInfo) {
        let now = self.tick();
        self.cache_insert(RouteEntry::cached(peer, now));
    }

    /// Marks a cached entry as used for forwarding.
    pub fn touch(&mut self, peer: NodeId) {
        let now = self.tick();
        if let Some(e) = self.cache.iter_mut().find(|e| e.id() == peer) {
            e.last_used = now;
        }
    }

    /// Peers strictly nearer to `target` than this node, nearest first.
    ///
    /// Nearness is (longest common prefix with the target, then smallest
    /// tree distance); ties go to the smaller id.
    pub fn candidates_for(&self, target: &DomainPath) -> Vec<RouteEntry> {
        let own_key = nearness_key(self.self_domain(), target);
        let mut seen = std::collections::BTreeSet::new();
        let mut out: Vec<RouteEntry> = self
            .tree_routes()
            .into_iter()
            .chain(self.cache.iter().cloned())
            .filter(|e| seen.insert(e.id()))
            .filter(|e| nearness_key(&e.peer_domain, target) < own_key)
            .collect();
        out.sort_by(|a, b| {
            (nearness_key(&a.peer_domain, target), a.id()).cmp(&(nearness_key(&b.peer_domain, target), b.id()))
        });
        out
    }

    /// The view a node joining at `joiner.domain` should start from, built
    /// from everything this table knows plus this node itself.
    ///
    /// Returns the joiner's leaf members and the members of every other
    /// group it tracks.
    pub fn view_for(&self, joiner: &PeerInfo) -> (Vec<NodeAddr>, Vec<PeerInfo>) {
        let mut fresh = RouteTable::new(joiner.clone(), self.n_tuple, self.policy, 0);
        fresh.offer_member(self.self_peer.clone());
        for g in self.groups.values() {
            for m in &g.members {
                fresh.offer_member(m.clone());
            }
        }
        let members = fresh
            .leaf()
            .members
            .iter()
            .filter(|m| m.id() != joiner.id())
            .map(|m| m.addr.clone())
            .collect();
        let own = joiner.domain.clone();
        let gateways = fresh
            .groups
            .iter()
            .filter(|(k, _)| **k != own)
            .flat_map(|(_, g)| g.members.iter().cloned())
            .collect();
        (members, gateways)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_path;

    fn peer(id: u64, domain: &str) -> PeerInfo {
        PeerInfo {
            addr: NodeAddr::sim(id),
            domain: parse_domain_path(domain).unwrap(),
        }
    }

    fn view(ids: &[u64]) -> GroupView {
        GroupView {
            group: GroupId::new(DomainPath::root()),
            members: ids.iter().map(|&i| peer(i, "all")).collect(),
            gateways: vec![],
        }
    }

    fn ids(ps: &[PeerInfo]) -> Vec<u64> {
        ps.iter().map(|p| p.id().0).collect()
    }

    #[test]
    fn election_examples() {
        assert_eq!(ids(&elect_gateways(&view(&[5]), 2).gateways), [5]);
        assert_eq!(ids(&elect_gateways(&view(&[9, 4, 7]), 2).gateways), [4, 7]);
        let mut v = elect_gateways(&view(&[9, 4, 7]), 2);
        v.remove(NodeId(4));
        assert_eq!(ids(&elect_gateways(&v, 2).gateways), [7, 9]);
        let mut v = elect_gateways(&view(&[9, 4, 7]), 2);
        v.remove(NodeId(9));
        assert_eq!(ids(&elect_gateways(&v, 2).gateways), [4, 7]);
    }

    #[test]
    fn singleton_leaf() {
        let rt = RouteTable::new(peer(1, "all.education"), 2, CachePolicy::Lru, 4);
        assert_eq!(ids(&rt.leaf().members), [1]);
        assert_eq!(ids(&rt.leaf().gateways), [1]);
        assert!(rt.candidates_for(&parse_domain_path("all.education").unwrap()).is_empty());
    }

    #[test]
    fn three_members_two_gateways() {
        let mut rt = RouteTable::new(peer(3, "all.x"), 2, CachePolicy::Lru, 4);
        rt.offer_member(peer(1, "all.x"));
        rt.offer_member(peer(2, "all.x"));
        assert_eq!(ids(&rt.leaf().gateways), [1, 2]);
        rt.handle_peer_failure(NodeId(1));
        assert_eq!(ids(&rt.leaf().gateways), [2, 3]);
    }

    #[test]
    fn group_keys() {
        let rt = RouteTable::new(peer(1, "all.a.b"), 2, CachePolicy::Lru, 4);
        let k = |d: &str| rt.group_key(&parse_domain_path(d).unwrap());
        assert_eq!(k("all.c.d").0.canonical(), "all.c");
        assert_eq!(k("all.c.d").1, GroupKind::Subtree);
        assert_eq!(k("all.a").0.canonical(), "all.a");
        assert_eq!(k("all.a").1, GroupKind::Exact);
        assert_eq!(k("all.a.b.c.d").0.canonical(), "all.a.b.c");
        assert_eq!(k("all.a.e.f").0.canonical(), "all.a.e");
        assert_eq!(k("all").1, GroupKind::Exact);
    }

    #[test]
    fn standby_promoted_on_failure() {
        let mut rt = RouteTable::new(peer(100, "all.a"), 2, CachePolicy::Lru, 4);
        for id in [7, 3, 9, 5, 11] {
            rt.offer_member(peer(id, "all.b.c"));
        }
        let g = rt.group(&parse_domain_path("all.b").unwrap()).unwrap();
        assert_eq!(ids(&g.gateways), [3, 5]);
        assert_eq!(ids(&g.members), [3, 5, 7, 9]);
        rt.handle_peer_failure(NodeId(3));
        let g = rt.group(&parse_domain_path("all.b").unwrap()).unwrap();
        assert_eq!(ids(&g.gateways), [5, 7]);
        // non-gateway removal leaves gateways alone
        rt.handle_peer_failure(NodeId(9));
        let g = rt.group(&parse_domain_path("all.b").unwrap()).unwrap();
        assert_eq!(ids(&g.gateways), [5, 7]);
    }

    #[test]
    fn cache_below_capacity_grows() {
        let mut rt = RouteTable::new(peer(1, "all.a"), 2, CachePolicy::Lru, 3);
        assert!(rt.cache_insert(RouteEntry::cached(peer(2, "all.b"), 1)).is_none());
        assert_eq!(rt.cached().len(), 1);
        // duplicate refreshes
        assert!(rt.cache_insert(RouteEntry::cached(peer(2, "all.b"), 5)).is_none());
        assert_eq!(rt.cached().len(), 1);
        assert_eq!(rt.cached()[0].last_used, 5);
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut rt = RouteTable::new(peer(1, "all.a"), 2, CachePolicy::Lru, 3);
        rt.cache_insert(RouteEntry::cached(peer(2, "all.b"), 1));
        rt.cache_insert(RouteEntry::cached(peer(3, "all.c"), 2));
        rt.cache_insert(RouteEntry::cached(peer(4, "all.d"), 3));
        rt.clock = 10;
        rt.touch(NodeId(2));
        let evicted = rt.cache_insert(RouteEntry::cached(peer(5, "all.e"), 12)).unwrap();
        assert_eq!(evicted.id(), NodeId(3));
        assert_eq!(rt.cached().len(), 3);
    }

    #[test]
    fn min_distance_evicts_nearest() {
        // own domain all.a.b; distances 0, 2, 6 and the newcomer at 4
        let mut rt = RouteTable::new(peer(1, "all.a.b"), 2, CachePolicy::MinDistance, 3);
        let d0 = peer(2, "all.a.b");
        let d2 = peer(3, "all.a.c");
        let d6 = peer(4, "all.x.y.z.w");
        let d4 = peer(5, "all.x.y");
        let own = parse_domain_path("all.a.b").unwrap();
        let dists: Vec<usize> = [&d0, &d2, &d6, &d4]
            .iter()
            .map(|p| domain_distance(&p.domain, &own))
            .collect();
        assert_eq!(dists, [0, 2, 6, 4]);
        for (i, p) in [d0, d2, d6].into_iter().enumerate() {
            rt.cache_insert(RouteEntry::cached(p, i as u64));
        }
        let evicted = rt.cache_insert(RouteEntry::cached(d4, 9)).unwrap();
        // linear-scan oracle over the previous entries
        assert_eq!(evicted.id(), NodeId(2));
    }

    #[test]
    fn zero_capacity_cache_stays_empty() {
        let mut rt = RouteTable::new(peer(1, "all.a"), 2, CachePolicy::Lru, 0);
        rt.cache_offer(peer(2, "all.b"));
        assert!(rt.cached().is_empty());
    }

    #[test]
    fn exact_target_peer_first() {
        let mut rt = RouteTable::new(peer(1, "all.a.b"), 2, CachePolicy::Lru, 8);
        rt.offer_member(peer(2, "all.c.d"));
        rt.cache_offer(peer(9, "all.c.e.f"));
        rt.cache_offer(peer(8, "all.c.e"));
        let c = rt.candidates_for(&parse_domain_path("all.c.e").unwrap());
        let got: Vec<u64> = c.iter().map(|e| e.id().0).collect();
        assert_eq!(got, [8, 9, 2]);
    }

    #[test]
    fn view_for_joiner_partitions_knowledge() {
        let mut rt = RouteTable::new(peer(5, "all.a.b"), 2, CachePolicy::Lru, 0);
        rt.offer_member(peer(6, "all.a.b"));
        rt.offer_member(peer(2, "all.a.c"));
        rt.offer_member(peer(3, "all.d"));
        let joiner = peer(10, "all.a.e");
        let (members, gateways) = rt.view_for(&joiner);
        assert!(members.is_empty());
        let mut g: Vec<u64> = gateways.iter().map(|p| p.id().0).collect();
        g.sort();
        assert_eq!(g, [2, 3, 5, 6]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn domain_strategy() -> impl Strategy<Value = DomainPath> {
            prop::collection::vec(0u8..3, 0..4).prop_map(|labels| {
                let mut d = DomainPath::root();
                for l in labels {
                    d = d.child(&format!("d{l}")).unwrap();
                }
                d
            })
        }

        fn peer_strategy() -> impl Strategy<Value = PeerInfo> {
            (2u64..40, domain_strategy()).prop_map(|(id, domain)| PeerInfo {
                addr: NodeAddr::sim(id),
                domain,
            })
        }

        proptest! {
            #[test]
            fn cache_never_exceeds_capacity(
                cap in 0usize..6,
                mind in any::<bool>(),
                peers in prop::collection::vec(peer_strategy(), 0..60),
            ) {
                let policy = if mind { CachePolicy::MinDistance } else { CachePolicy::Lru };
                let mut rt = RouteTable::new(peer(1, "all.d0.d1"), 2, policy, cap);
                for p in peers {
                    let before: Vec<RouteEntry> = rt.cached().to_vec();
                    let full = before.len() == cap && !before.iter().any(|e| e.id() == p.id());
                    let evicted = {
                        let now = rt.tick();
                        rt.cache_insert(RouteEntry::cached(p.clone(), now))
                    };
                    prop_assert!(rt.cached().len() <= cap);
                    let mut ids: Vec<NodeId> = rt.cached().iter().map(RouteEntry::id).collect();
                    ids.sort();
                    ids.dedup();
                    prop_assert_eq!(ids.len(), rt.cached().len());
                    if cap > 0 {
                        prop_assert!(rt.cached().iter().any(|e| e.id() == p.id()));
                    }
                    if full && cap > 0 {
                        let evicted = evicted.expect("full cache must evict");
                        if policy == CachePolicy::MinDistance {
                            let own = parse_domain_path("all.d0.d1").unwrap();
                            let min = before.iter().map(|e| domain_distance(&e.peer_domain, &own)).min().unwrap();
                            prop_assert_eq!(domain_distance(&evicted.peer_domain, &own), min);
                        }
                    }
                }
            }

            #[test]
            fn candidates_match_sort_oracle(
                self_domain in domain_strategy(),
                target in domain_strategy(),
                tree in prop::collection::vec(peer_strategy(), 0..30),
                cache in prop::collection::vec(peer_strategy(), 0..10),
            ) {
                let mut rt = RouteTable::new(PeerInfo { addr: NodeAddr::sim(1), domain: self_domain.clone() }, 2, CachePolicy::Lru, 16);
                for p in tree { rt.offer_member(p); }
                for p in cache { rt.cache_offer(p); }
                let got: Vec<NodeId> = rt.candidates_for(&target).iter().map(RouteEntry::id).collect();

                // oracle: brute-force over the union, independent comparator
                let mut pool: Vec<RouteEntry> = rt.tree_routes();
                for e in rt.cached() {
                    if !pool.iter().any(|x| x.id() == e.id()) { pool.push(e.clone()); }
                }
                let score = |d: &DomainPath| {
                    let cpl = common_prefix_len(d, &target);
                    let dist = domain_distance(d, &target);
                    (cpl, dist)
                };
                let (scpl, sdist) = score(&self_domain);
                let mut expected: Vec<(usize, usize, NodeId)> = pool
                    .iter()
                    .map(|e| { let (c, d) = score(&e.peer_domain); (c, d, e.id()) })
                    .filter(|&(c, d, _)| c > scpl || (c == scpl && d < sdist))
                    .collect();
                expected.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let expected: Vec<NodeId> = expected.into_iter().map(|x| x.2).collect();
                prop_assert_eq!(got, expected);
            }

            #[test]
            fn gateways_are_a_pure_function(ids in prop::collection::btree_set(1u64..500, 1..20), n in 1usize..4) {
                let mut members: Vec<u64> = ids.iter().copied().collect();
                let a = elect_gateways(&view(&members), n);
                members.reverse();
                let b = elect_gateways(&view(&members), n);
                prop_assert_eq!(&a.gateways, &b.gateways);
                prop_assert!(a.gateways.len() <= n);
                let expect: Vec<u64> = ids.iter().copied().take(n).collect();
                prop_assert_eq!(super::ids(&a.gateways), expect);
            }
        }
    }
}
