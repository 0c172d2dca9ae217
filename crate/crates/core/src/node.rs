//! The per-node protocol state machine.
//!
//! A [`Node`] never touches a socket or a clock. Drivers feed it decoded
//! messages and expired timers together with the current time and carry
//! out the returned [`Effect`]s. The simulator and the UDP daemon both
//! drive this same type.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::domain::{DomainPath, is_ancestor_or_self};
use crate::file_access::{
    list_error, serve_file_request, serve_list, ChunkTimer, FetchError, FetchSession, ListError, Step, CHUNK_TIMEOUT,
    LIST_RETRIES, LIST_TIMEOUT,
};
use crate::overlay::{CachePolicy, RouteTable};
use crate::query::{Query, QueryError, QueryReport};
use crate::router::{cover_targets, decide, Decision, DedupWindow, QueryState, DEFAULT_DEADLINE, DEFAULT_TTL};
use crate::search::{InvertedIndex, SandboxRoot};
use crate::wire::{
    Body, DirEntry, JoinStatus, Message, NodeAddr, NodeId, PeerInfo, Scope, Status, WireHit, MAX_KEYWORDS,
};

pub const PING_TIMEOUT: u64 = 500;
pub const PING_RETRIES: u32 = 3;
pub const JOIN_TIMEOUT: u64 = 1000;
pub const JOIN_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    /// A full overlay member.
    Peer,
    /// A detached client that sends its queries to an entry peer.
    Client { entry: NodeAddr },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSettings {
    pub addr: NodeAddr,
    pub domain: DomainPath,
    pub n_tuple: usize,
    pub policy: CachePolicy,
    pub capacity: usize,
    pub ttl: u8,
    pub deadline: u64,
    /// Interval between liveness probes of tree routes; `None` disables them.
    pub probe_interval: Option<u64>,
    pub role: Role,
    /// First message id handed out; distinct starts keep restarted nodes
    /// clear of stale dedup entries.
    pub first_msg_id: u64,
}

impl NodeSettings {
    pub fn new(addr: NodeAddr, domain: DomainPath) -> Self {
        NodeSettings {
            addr,
            domain,
            n_tuple: 2,
            policy: CachePolicy::Lru,
            capacity: 32,
            ttl: DEFAULT_TTL,
            deadline: DEFAULT_DEADLINE,
            probe_interval: None,
            role: Role::Peer,
            first_msg_id: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Timer {
    JoinRetry { msg_id: u64, attempt: u32 },
    QueryDeadline { query_id: u64, attempt: u8 },
    Ping { peer: NodeId, nonce: u64 },
    Fetch { session_id: u64, chunk: ChunkTimer },
    List { request_id: u64, attempt: u32 },
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("no JOIN_ACK after {JOIN_RETRIES} retries")]
    NoAck,
    #[error("node id is already used by another endpoint")]
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Joined(Result<(), JoinError>),
    Query { query_id: u64, report: QueryReport },
    Fetch { session_id: u64, result: Result<Vec<u8>, FetchError> },
    List { request_id: u64, result: Result<(Vec<DirEntry>, bool), ListError> },
    PeerFailed(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send { to: NodeAddr, msg: Message },
    SetTimer { delay: u64, timer: Timer },
    /// This node served a query locally.
    Served { origin: NodeId, msg_id: u64 },
    Done(Completion),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub served: u64,
    pub forwarded: u64,
    pub dead_ends: u64,
    pub duplicates_dropped: u64,
    pub late_results: u64,
    pub pings_sent: u64,
    pub failures_detected: u64,
    pub joins_answered: u64,
}

struct PendingPing {
    addr: NodeAddr,
    nonce: u64,
    attempt: u32,
}

struct PendingList {
    peer: NodeAddr,
    path: String,
}

enum JoinState {
    Idle,
    Joining { bootstrap: NodeAddr, msg_id: u64 },
    Joined,
    Failed,
}

pub struct Node {
    settings: NodeSettings,
    table: RouteTable,
    index: InvertedIndex,
    sandbox: Option<SandboxRoot>,
    dedup: DedupWindow,
    join: JoinState,
    next_id: u64,
    queries: BTreeMap<u64, QueryState>,
    /// Maps every attempt's msg_id to its query.
    query_ids: HashMap<u64, u64>,
    pings: HashMap<NodeId, PendingPing>,
    fetches: HashMap<u64, FetchSession>,
    lists: HashMap<u64, PendingList>,
    metrics: Metrics,
}

impl Node {
    pub fn new(settings: NodeSettings, index: InvertedIndex, sandbox: Option<SandboxRoot>) -> Self {
        let me = PeerInfo {
            addr: settings.addr.clone(),
            domain: settings.domain.clone(),
        };
        Node {
            table: RouteTable::new(me, settings.n_tuple, settings.policy, settings.capacity),
            next_id: settings.first_msg_id,
            settings,
            index,
            sandbox,
            dedup: DedupWindow::default(),
            join: JoinState::Idle,
            queries: BTreeMap::new(),
            query_ids: HashMap::new(),
            pings: HashMap::new(),
            fetches: HashMap::new(),
            lists: HashMap::new(),
            metrics: Metrics::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.settings.addr.node
    }

    pub fn addr(&self) -> &NodeAddr {
        &self.settings.addr
    }

    pub fn domain(&self) -> &DomainPath {
        &self.settings.domain
    }

    pub fn settings(&self) -> &NodeSettings {
        &self.settings
    }

    pub fn table(&self) -> &RouteTable {
        &self.table
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn sandbox(&self) -> Option<&SandboxRoot> {
        self.sandbox.as_ref()
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics
    }

    pub fn is_joined(&self) -> bool {
        matches!(self.join, JoinState::Joined) || matches!(self.settings.role, Role::Client { .. })
    }

    pub fn open_queries(&self) -> usize {
        self.queries.len()
    }

    /// Swaps in a freshly built index.
    pub fn replace_index(&mut self, index: InvertedIndex) {
        self.index = index;
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        id
    }

    fn me(&self) -> PeerInfo {
        self.table.self_peer().clone()
    }

    fn send(&self, out: &mut Vec<Effect>, to: NodeAddr, msg_id: u64, ttl: u8, src: NodeAddr, body: Body) {
        out.push(Effect::Send {
            to,
            msg: Message::new(msg_id, ttl, src, body),
        });
    }

    fn reply(&self, out: &mut Vec<Effect>, to: NodeAddr, msg_id: u64, body: Body) {
        let src = self.settings.addr.clone();
        self.send(out, to, msg_id, 0, src, body);
    }

    // -----------------------------------------------------------------
    // Joining

    /// Starts the node. Without a bootstrap it founds a new overlay.
    pub fn start(&mut self, bootstrap: Option<NodeAddr>) -> Vec<Effect> {
        let mut out = Vec::new();
        if let Some(iv) = self.settings.probe_interval {
            out.push(Effect::SetTimer { delay: iv, timer: Timer::Probe });
        }
        match (bootstrap, &self.settings.role) {
            (_, Role::Client { .. }) | (None, _) => {
                self.join = JoinState::Joined;
                out.push(Effect::Done(Completion::Joined(Ok(()))));
            }
            (Some(b), Role::Peer) => {
                let msg_id = self.fresh_id();
                self.join = JoinState::Joining { bootstrap: b.clone(), msg_id };
                self.send_join(&mut out, b, msg_id, 0);
            }
        }
        out
    }

    fn send_join(&mut self, out: &mut Vec<Effect>, to: NodeAddr, msg_id: u64, attempt: u32) {
        let me = self.settings.addr.clone();
        let body = Body::JoinReq {
            joiner: me.clone(),
            domain: self.settings.domain.clone(),
            scope: Scope::Route,
        };
        self.send(out, to, msg_id, self.settings.ttl, me, body);
        out.push(Effect::SetTimer {
            delay: JOIN_TIMEOUT,
            timer: Timer::JoinRetry { msg_id, attempt },
        });
    }

    fn on_join_req(&mut self, out: &mut Vec<Effect>, msg: &Message, joiner: &NodeAddr, domain: &DomainPath, scope: &Scope) {
        if !self.dedup.insert(joiner.node, msg.msg_id) {
            self.metrics.duplicates_dropped += 1;
            return;
        }
        let joiner_info = PeerInfo {
            addr: joiner.clone(),
            domain: domain.clone(),
        };
        if joiner.node == self.id() && *joiner != self.settings.addr {
            self.reject_join(out, joiner, msg.msg_id);
            return;
        }
        match scope {
            Scope::Route => {
                let clash = self
                    .table
                    .known_peers()
                    .into_iter()
                    .any(|p| p.id() == joiner.node && p.addr.endpoint != joiner.endpoint);
                if clash {
                    self.reject_join(out, joiner, msg.msg_id);
                    return;
                }
                let next = self
                    .table
                    .candidates_for(domain)
                    .into_iter()
                    .find(|e| e.id() != joiner.node);
                match next {
                    Some(e) if msg.ttl > 0 => {
                        self.table.touch(e.id());
                        self.send(out, e.peer, msg.msg_id, msg.ttl - 1, msg.src.clone(), msg.body.clone());
                    }
                    _ => {
                        let (members, gateways) = self.table.view_for(&joiner_info);
                        self.metrics.joins_answered += 1;
                        self.reply(
                            out,
                            joiner.clone(),
                            msg.msg_id,
                            Body::JoinAck {
                                status: JoinStatus::Accepted,
                                members,
                                gateways,
                            },
                        );
                    }
                }
            }
            delegated => {
                // computed before learning the joiner so its own group is covered
                let cover = cover_targets(&self.table, delegated);
                self.table.offer_member(joiner_info);
                if msg.ttl == 0 {
                    return;
                }
                for (peer, sub) in cover {
                    if peer.id() == joiner.node {
                        continue;
                    }
                    let body = Body::JoinReq {
                        joiner: joiner.clone(),
                        domain: domain.clone(),
                        scope: sub,
                    };
                    self.send(out, peer.addr, msg.msg_id, msg.ttl - 1, msg.src.clone(), body);
                }
            }
        }
    }

    fn reject_join(&mut self, out: &mut Vec<Effect>, joiner: &NodeAddr, msg_id: u64) {
        self.reply(
            out,
            joiner.clone(),
            msg_id,
            Body::JoinAck {
                status: JoinStatus::DuplicateId,
                members: Vec::new(),
                gateways: Vec::new(),
            },
        );
    }

    fn on_join_ack(&mut self, out: &mut Vec<Effect>, msg: &Message, status: JoinStatus, members: &[NodeAddr], gateways: &[PeerInfo]) {
        let JoinState::Joining { msg_id, .. } = self.join else {
            return;
        };
        if msg.msg_id != msg_id {
            return;
        }
        if status == JoinStatus::DuplicateId {
            self.join = JoinState::Failed;
            out.push(Effect::Done(Completion::Joined(Err(JoinError::DuplicateId))));
            return;
        }
        for m in members {
            self.table.offer_member(PeerInfo {
                addr: m.clone(),
                domain: self.settings.domain.clone(),
            });
        }
        for g in gateways {
            self.table.offer_member(g.clone());
        }
        self.join = JoinState::Joined;
        // announce ourselves to every node through the group tree
        let announce = self.fresh_id();
        self.dedup.insert(self.id(), announce);
        let me = self.settings.addr.clone();
        for (peer, scope) in cover_targets(&self.table, &Scope::Subtree(DomainPath::root())) {
            let body = Body::JoinReq {
                joiner: me.clone(),
                domain: self.settings.domain.clone(),
                scope,
            };
            self.send(out, peer.addr, announce, self.settings.ttl, me.clone(), body);
        }
        out.push(Effect::Done(Completion::Joined(Ok(()))));
    }

    fn on_join_timer(&mut self, out: &mut Vec<Effect>, msg_id: u64, attempt: u32) {
        let JoinState::Joining { bootstrap, msg_id: current } = &self.join else {
            return;
        };
        if *current != msg_id {
            return;
        }
        if attempt >= JOIN_RETRIES {
            self.join = JoinState::Failed;
            out.push(Effect::Done(Completion::Joined(Err(JoinError::NoAck))));
            return;
        }
        let bootstrap = bootstrap.clone();
        let msg_id = self.fresh_id();
        self.join = JoinState::Joining {
            bootstrap: bootstrap.clone(),
            msg_id,
        };
        self.send_join(out, bootstrap, msg_id, attempt + 1);
    }

    // -----------------------------------------------------------------
    // Queries

    /// Starts a query from this node. `expected` closes aggregation early
    /// once that many distinct nodes answered.
    pub fn start_query(&mut self, now: u64, query: &Query, expected: Option<u32>) -> (u64, Vec<Effect>) {
        let query_id = self.fresh_id();
        let mut out = Vec::new();
        if !self.is_joined() {
            out.push(Effect::Done(Completion::Query {
                query_id,
                report: QueryReport {
                    query_id,
                    ..QueryReport::default()
                },
            }));
            return (query_id, out);
        }
        let mut q = query.clone();
        q.keywords.truncate(MAX_KEYWORDS);
        let state = QueryState::new(query_id, self.settings.addr.clone(), &q, now + self.settings.deadline, expected);
        self.queries.insert(query_id, state);
        self.query_ids.insert(query_id, query_id);
        self.dispatch_query(now, &mut out, query_id, query_id, 0);
        (query_id, out)
    }

    /// Whether the node can run queries at all.
    pub fn check_query(&self) -> Result<(), QueryError> {
        if self.is_joined() {
            Ok(())
        } else {
            Err(QueryError::NotJoined)
        }
    }

    fn query_body(&self, qs: &QueryState, scope: Scope) -> Body {
        Body::Query {
            target: qs.target.clone(),
            keywords: qs.keywords.clone(),
            mode: qs.mode,
            k: qs.k,
            origin_domain: match self.settings.role {
                Role::Peer => Some(self.settings.domain.clone()),
                Role::Client { .. } => None,
            },
            scope,
        }
    }

    fn dispatch_query(&mut self, now: u64, out: &mut Vec<Effect>, query_id: u64, msg_id: u64, attempt: u8) {
        let qs = &self.queries[&query_id];
        let body = self.query_body(qs, Scope::Route);
        let msg = Message::new(msg_id, self.settings.ttl, self.settings.addr.clone(), body);
        match self.settings.role.clone() {
            Role::Client { entry } => out.push(Effect::Send { to: entry, msg }),
            Role::Peer => self.on_query(now, out, &msg),
        }
        out.push(Effect::SetTimer {
            delay: self.settings.deadline,
            timer: Timer::QueryDeadline { query_id, attempt },
        });
    }

    fn on_query(&mut self, now: u64, out: &mut Vec<Effect>, msg: &Message) {
        let Body::Query {
            target,
            keywords,
            mode,
            k,
            origin_domain,
            scope,
        } = &msg.body
        else {
            return;
        };
        let origin = msg.src.clone();
        if !self.dedup.insert(origin.node, msg.msg_id) {
            self.metrics.duplicates_dropped += 1;
            return;
        }
        let local = origin.node == self.id();
        if *scope == Scope::Route && !local {
            if let Some(d) = origin_domain {
                self.table.cache_offer(PeerInfo {
                    addr: origin.clone(),
                    domain: d.clone(),
                });
            }
        }
        match decide(&self.table, target, scope) {
            Decision::Serve { cover } => {
                if *scope == Scope::Route || is_ancestor_or_self(target, self.domain()) {
                    let hits: Vec<WireHit> = self
                        .index
                        .search(keywords, *k as usize, *mode)
                        .into_iter()
                        .map(|h| WireHit {
                            path: h.path,
                            score_micros: h.score_micros,
                            size: h.size,
                            snippet: h.snippet,
                        })
                        .collect();
                    self.metrics.served += 1;
                    out.push(Effect::Served {
                        origin: origin.node,
                        msg_id: msg.msg_id,
                    });
                    self.answer(now, out, &origin, msg.msg_id, hits, false);
                }
                if msg.ttl == 0 {
                    return;
                }
                for (peer, sub) in cover {
                    let mut body = msg.body.clone();
                    if let Body::Query { scope, .. } = &mut body {
                        *scope = sub;
                    }
                    self.send(out, peer.addr, msg.msg_id, msg.ttl - 1, origin.clone(), body);
                }
            }
            Decision::Forward(entry) if msg.ttl > 0 => {
                self.metrics.forwarded += 1;
                self.table.touch(entry.id());
                self.send(out, entry.peer, msg.msg_id, msg.ttl - 1, origin, msg.body.clone());
            }
            Decision::Forward(_) | Decision::DeadEnd => {
                self.metrics.dead_ends += 1;
                self.answer(now, out, &origin, msg.msg_id, Vec::new(), true);
            }
        }
    }

    /// Delivers a RESULT to the origin, internally when that is us.
    fn answer(&mut self, now: u64, out: &mut Vec<Effect>, origin: &NodeAddr, msg_id: u64, mut hits: Vec<WireHit>, dead_end: bool) {
        let me = self.me();
        if origin.node == self.id() {
            self.on_result(now, out, msg_id, &me, &hits, dead_end);
            return;
        }
        loop {
            let body = Body::Result {
                query_id: msg_id,
                responder: me.clone(),
                hits: hits.clone(),
                dead_end,
            };
            let msg = Message::new(msg_id, 0, self.settings.addr.clone(), body);
            if msg.encode().is_ok() || hits.is_empty() {
                out.push(Effect::Send { to: origin.clone(), msg });
                return;
            }
            hits.pop();
        }
    }

    fn on_result(&mut self, now: u64, out: &mut Vec<Effect>, query_id: u64, responder: &PeerInfo, hits: &[WireHit], dead_end: bool) {
        let Some(&qid) = self.query_ids.get(&query_id) else {
            self.metrics.late_results += 1;
            return;
        };
        let Some(qs) = self.queries.get_mut(&qid) else {
            self.metrics.late_results += 1;
            return;
        };
        if qs.collect(now, &responder.addr, hits, dead_end).is_err() {
            self.metrics.late_results += 1;
            return;
        }
        let complete = qs.is_complete();
        if !dead_end && responder.id() != self.id() && matches!(self.settings.role, Role::Peer) {
            self.table.cache_offer(responder.clone());
        }
        if complete {
            self.close_query(out, qid);
        }
    }

    fn close_query(&mut self, out: &mut Vec<Effect>, query_id: u64) {
        let Some(qs) = self.queries.remove(&query_id) else { return };
        for id in &qs.msg_ids {
            self.query_ids.remove(id);
        }
        let report = qs.report(0);
        out.push(Effect::Done(Completion::Query { query_id, report }));
    }

    fn on_query_deadline(&mut self, now: u64, out: &mut Vec<Effect>, query_id: u64, attempt: u8) {
        let Some(qs) = self.queries.get_mut(&query_id) else { return };
        if attempt as usize + 1 != qs.msg_ids.len() {
            return;
        }
        if qs.results_received == 0 && !qs.retried {
            qs.retried = true;
            let msg_id = self.next_id;
            self.next_id = self.next_id.wrapping_add(1);
            let deadline = now + self.settings.deadline;
            let qs = self.queries.get_mut(&query_id).expect("present");
            qs.msg_ids.push(msg_id);
            qs.deadline = deadline;
            self.query_ids.insert(msg_id, query_id);
            self.dispatch_query(now, out, query_id, msg_id, attempt + 1);
            return;
        }
        self.close_query(out, query_id);
    }

    // -----------------------------------------------------------------
    // Liveness

    /// Sends a PING to `peer` and arms its timeout.
    pub fn probe(&mut self, peer: &NodeAddr) -> Vec<Effect> {
        let mut out = Vec::new();
        if peer.node == self.id() || self.pings.contains_key(&peer.node) {
            return out;
        }
        let nonce = self.fresh_id();
        self.pings.insert(
            peer.node,
            PendingPing {
                addr: peer.clone(),
                nonce,
                attempt: 0,
            },
        );
        self.send_ping(&mut out, peer.clone(), nonce);
        out
    }

    fn send_ping(&mut self, out: &mut Vec<Effect>, to: NodeAddr, nonce: u64) {
        self.metrics.pings_sent += 1;
        let node = to.node;
        self.reply(out, to, nonce, Body::Ping);
        out.push(Effect::SetTimer {
            delay: PING_TIMEOUT,
            timer: Timer::Ping { peer: node, nonce },
        });
    }

    fn on_ping_timer(&mut self, out: &mut Vec<Effect>, peer: NodeId, nonce: u64) {
        let Some(p) = self.pings.get_mut(&peer) else { return };
        if p.nonce != nonce {
            return;
        }
        if p.attempt < PING_RETRIES {
            p.attempt += 1;
            let addr = p.addr.clone();
            self.send_ping(out, addr, nonce);
            return;
        }
        self.pings.remove(&peer);
        self.peer_failed(out, peer);
    }

    /// Drops a peer declared dead from the route table.
    pub fn peer_failed(&mut self, out: &mut Vec<Effect>, peer: NodeId) {
        if self.table.handle_peer_failure(peer) {
            self.metrics.failures_detected += 1;
        }
        out.push(Effect::Done(Completion::PeerFailed(peer)));
    }

    fn on_probe_timer(&mut self, out: &mut Vec<Effect>) {
        let peers: Vec<NodeAddr> = self.table.tree_routes().into_iter().map(|e| e.peer).collect();
        for p in peers {
            out.extend(self.probe(&p));
        }
        if let Some(iv) = self.settings.probe_interval {
            out.push(Effect::SetTimer { delay: iv, timer: Timer::Probe });
        }
    }

    // -----------------------------------------------------------------
    // Files

    pub fn start_fetch(&mut self, peer: NodeAddr, path: &str) -> (u64, Vec<Effect>) {
        let session_id = self.fresh_id();
        let mut session = FetchSession::new(session_id, peer, path);
        let step = session.start();
        self.fetches.insert(session_id, session);
        let mut out = Vec::new();
        self.apply_step(&mut out, session_id, step);
        (session_id, out)
    }

    fn apply_step(&mut self, out: &mut Vec<Effect>, session_id: u64, step: Step) {
        let Some(s) = self.fetches.get(&session_id) else { return };
        let (peer, path) = (s.peer.clone(), s.rel_path.clone());
        for req in step.requests {
            for _ in 0..req.sends.max(1) {
                let msg_id = self.fresh_id();
                let body = Body::FileReq {
                    session_id,
                    path: path.clone(),
                    offsets: req.offsets.clone(),
                    copies: req.copies,
                };
                self.reply(out, peer.clone(), msg_id, body);
            }
        }
        for chunk in step.timers {
            out.push(Effect::SetTimer {
                delay: CHUNK_TIMEOUT,
                timer: Timer::Fetch { session_id, chunk },
            });
        }
        if let Some(result) = step.done {
            self.fetches.remove(&session_id);
            out.push(Effect::Done(Completion::Fetch { session_id, result }));
        }
    }

    pub fn fetch_retries(&self, session_id: u64) -> Option<u32> {
        self.fetches.get(&session_id).map(|s| s.retries_total)
    }

    pub fn start_list(&mut self, peer: NodeAddr, path: &str) -> (u64, Vec<Effect>) {
        let request_id = self.fresh_id();
        self.lists.insert(
            request_id,
            PendingList {
                peer,
                path: path.to_string(),
            },
        );
        let mut out = Vec::new();
        self.send_list(&mut out, request_id, 0);
        (request_id, out)
    }

    fn send_list(&mut self, out: &mut Vec<Effect>, request_id: u64, attempt: u32) {
        let Some(p) = self.lists.get(&request_id) else { return };
        let (peer, path) = (p.peer.clone(), p.path.clone());
        self.reply(out, peer, request_id, Body::ListDirReq { request_id, path });
        out.push(Effect::SetTimer {
            delay: LIST_TIMEOUT,
            timer: Timer::List { request_id, attempt },
        });
    }

    // -----------------------------------------------------------------
    // Dispatch

    pub fn handle_message(&mut self, now: u64, msg: Message) -> Vec<Effect> {
        let mut out = Vec::new();
        match &msg.body {
            Body::JoinReq { joiner, domain, scope } => {
                if matches!(self.settings.role, Role::Peer) && self.is_joined() {
                    self.on_join_req(&mut out, &msg, joiner, domain, scope);
                }
            }
            Body::JoinAck { status, members, gateways } => {
                self.on_join_ack(&mut out, &msg, *status, members, gateways);
            }
            Body::Query { .. } => {
                if matches!(self.settings.role, Role::Peer) && self.is_joined() {
                    self.on_query(now, &mut out, &msg);
                }
            }
            Body::Result {
                query_id,
                responder,
                hits,
                dead_end,
            } => self.on_result(now, &mut out, *query_id, responder, hits, *dead_end),
            Body::ListDirReq { request_id, path } => {
                let body = serve_list(self.sandbox.as_ref(), *request_id, path);
                self.reply(&mut out, msg.src.clone(), msg.msg_id, body);
            }
            Body::ListDirResp {
                request_id,
                status,
                truncated,
                entries,
            } => {
                if self.lists.remove(request_id).is_some() {
                    let result = if *status == Status::Ok {
                        Ok((entries.clone(), *truncated))
                    } else {
                        Err(list_error(*status))
                    };
                    out.push(Effect::Done(Completion::List {
                        request_id: *request_id,
                        result,
                    }));
                }
            }
            Body::FileReq {
                session_id,
                path,
                offsets,
                copies,
            } => {
                for body in serve_file_request(self.sandbox.as_ref(), *session_id, path, offsets, *copies) {
                    self.reply(&mut out, msg.src.clone(), msg.msg_id, body);
                }
            }
            Body::FileChunk {
                session_id,
                status,
                offset,
                file_size,
                digest,
                data,
                ..
            } => {
                if let Some(s) = self.fetches.get_mut(session_id) {
                    let step = s.on_chunk(*status, *offset, *file_size, *digest, data);
                    self.apply_step(&mut out, *session_id, step);
                }
            }
            Body::Ping => self.reply(&mut out, msg.src.clone(), msg.msg_id, Body::Pong),
            Body::Pong => {
                if self.pings.get(&msg.src.node).is_some_and(|p| p.nonce == msg.msg_id) {
                    self.pings.remove(&msg.src.node);
                }
            }
        }
        out
    }

    pub fn handle_timer(&mut self, now: u64, timer: Timer) -> Vec<Effect> {
        let mut out = Vec::new();
        match timer {
            Timer::JoinRetry { msg_id, attempt } => self.on_join_timer(&mut out, msg_id, attempt),
            Timer::QueryDeadline { query_id, attempt } => self.on_query_deadline(now, &mut out, query_id, attempt),
            Timer::Ping { peer, nonce } => self.on_ping_timer(&mut out, peer, nonce),
            Timer::Fetch { session_id, chunk } => {
                if let Some(s) = self.fetches.get_mut(&session_id) {
                    let step = s.on_timeout(chunk);
                    self.apply_step(&mut out, session_id, step);
                }
            }
            Timer::List { request_id, attempt } => {
                if self.lists.contains_key(&request_id) {
                    if attempt < LIST_RETRIES {
                        self.send_list(&mut out, request_id, attempt + 1);
                    } else {
                        self.lists.remove(&request_id);
                        out.push(Effect::Done(Completion::List {
                            request_id,
                            result: Err(ListError::Timeout),
                        }));
                    }
                }
            }
            Timer::Probe => self.on_probe_timer(&mut out),
        }
        out
    }
}
