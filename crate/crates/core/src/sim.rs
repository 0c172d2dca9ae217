//! Deterministic discrete-event simulator.
//!
//! Every node is a real [`Node`]; messages are encoded when sent and
//! decoded on delivery, exactly as over UDP. Events are ordered by
//! `(tick, insertion order)` and all randomness (latency, loss) comes from
//! one seeded ChaCha8 stream, so a configuration always produces the same
//! trace.
//!
//! Nodes join one at a time through the bootstrap node and the network is
//! run to quiescence after each join. Loss applies only after the network
//! is built.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::domain::{is_ancestor_or_self, parse_domain_path, DomainPath};
use crate::node::{Completion, Effect, JoinError, Node, NodeSettings, Timer};
use crate::overlay::CachePolicy;
use crate::query::{parse_query, Query, QueryReport};
use crate::router::{DEFAULT_DEADLINE, DEFAULT_TTL};
use crate::search::{index_directory, ExtractorRegistry, InvertedIndex, SandboxRoot};
use crate::wire::{tag, tag_name, Body, Message, NodeAddr, NodeId, QueryMode, Scope, MAX_TTL};

#[derive(Debug, Clone, PartialEq)]
pub struct SimNodeSpec {
    pub id: NodeId,
    pub domain: DomainPath,
    /// Directory to index and serve.
    pub sandbox: Option<PathBuf>,
    /// In-memory documents as (path, text), indexed after `sandbox`.
    pub docs: Vec<(String, String)>,
}

impl SimNodeSpec {
    pub fn new(id: u64, domain: DomainPath) -> Self {
        SimNodeSpec {
            id: NodeId(id),
            domain,
            sandbox: None,
            docs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub latency_min: u64,
    pub latency_max: u64,
    pub loss_rate: f64,
    pub nodes: Vec<SimNodeSpec>,
    pub n_tuple: usize,
    pub policy: CachePolicy,
    pub capacity: usize,
    pub ttl: u8,
    pub deadline: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency_min: 1,
            latency_max: 10,
            loss_rate: 0.0,
            nodes: Vec::new(),
            n_tuple: 2,
            policy: CachePolicy::Lru,
            capacity: 32,
            ttl: DEFAULT_TTL,
            deadline: DEFAULT_DEADLINE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    ConfigInvalid(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("not quiescent after {budget} ticks (at tick {tick})")]
    NotQuiescent { tick: u64, budget: u64 },
    #[error("node {0} failed to join: {1}")]
    JoinFailed(NodeId, JoinError),
    #[error("bad query: {0}")]
    BadQuery(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if !(0.0..1.0).contains(&self.loss_rate) {
            return bad(format!("loss_rate {} must be in [0, 1)", self.loss_rate));
        }
        if self.latency_min > self.latency_max {
            return bad(format!("latency_min {} exceeds latency_max {}", self.latency_min, self.latency_max));
        }
        if self.nodes.is_empty() {
            return bad("at least one node is required".into());
        }
        if self.n_tuple == 0 {
            return bad("n_tuple must be at least 1".into());
        }
        if self.ttl == 0 || self.ttl > MAX_TTL {
            return bad(format!("ttl {} must be in 1..={MAX_TTL}", self.ttl));
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.0 == 0 {
                return bad("node id 0 is reserved".into());
            }
            if n.id.0 >= 1 << 32 {
                return bad(format!("node id {} must be below 2^32", n.id));
            }
            if !ids.insert(n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
        }
        Ok(())
    }

    /// Parses the TOML form described in the README.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<(SimConfig, SimScript), SimError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
        let policy = raw
            .cache
            .as_deref()
            .map(str::parse::<CachePolicy>)
            .transpose()
            .map_err(SimError::ConfigInvalid)?
            .unwrap_or_default();
        let d = SimConfig::default();
        let mut nodes = Vec::new();
        for n in raw.node {
            let domain = parse_domain_path(&n.domain)
                .map_err(|e| SimError::ConfigInvalid(format!("node {}: domain: {e}", n.id)))?;
            nodes.push(SimNodeSpec {
                id: NodeId(n.id),
                domain,
                sandbox: n.sandbox.map(|p| base_dir.join(p)),
                docs: n.docs.into_iter().collect(),
            });
        }
        let cfg = SimConfig {
            seed: raw.seed.unwrap_or(d.seed),
            latency_min: raw.latency_min.unwrap_or(d.latency_min),
            latency_max: raw.latency_max.unwrap_or(d.latency_max),
            loss_rate: raw.loss_rate.unwrap_or(d.loss_rate),
            nodes,
            n_tuple: raw.n_tuple.unwrap_or(d.n_tuple),
            policy,
            capacity: raw.capacity.unwrap_or(d.capacity),
            ttl: raw.ttl.unwrap_or(d.ttl),
            deadline: raw.deadline.unwrap_or(d.deadline),
        };
        cfg.validate()?;
        let mut script = SimScript {
            max_ticks: raw.max_ticks.unwrap_or(10_000_000),
            actions: Vec::new(),
        };
        for q in raw.query {
            let mut query = parse_query(&q.input).map_err(|e| SimError::ConfigInvalid(format!("query \"{}\": {e}", q.input)))?;
            if q.and.unwrap_or(false) {
                query.mode = QueryMode::And;
            }
            script.actions.push((q.at.unwrap_or(0), Action::Query(NodeId(q.origin), query)));
        }
        for k in raw.kill {
            script.actions.push((k.at.unwrap_or(0), Action::Kill(NodeId(k.node))));
        }
        script.actions.sort_by_key(|(at, _)| *at);
        Ok((cfg, script))
    }
}

impl SimConfig {
    /// A random network: `nodes` nodes with distinct random ids, each joined
    /// to a random domain of a `branching`-ary tree of the given depth
    /// (labels `d0`, `d1`, ...). Depths are drawn uniformly from 1..=depth.
    pub fn random_tree(seed: u64, nodes: usize, depth: usize, branching: usize) -> SimConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = BTreeSet::new();
        let mut specs = Vec::new();
        while specs.len() < nodes {
            let id = rng.gen_range(1..1u64 << 20);
            if !ids.insert(id) {
                continue;
            }
            let levels = rng.gen_range(1..=depth.max(1));
            let mut domain = DomainPath::root();
            for _ in 0..levels {
                let label = format!("d{}", rng.gen_range(0..branching.max(1)));
                domain = domain.child(&label).expect("valid label");
            }
            specs.push(SimNodeSpec::new(id, domain));
        }
        SimConfig {
            seed,
            nodes: specs,
            ..SimConfig::default()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    latency_min: Option<u64>,
    latency_max: Option<u64>,
    loss_rate: Option<f64>,
    n_tuple: Option<usize>,
    cache: Option<String>,
    capacity: Option<usize>,
    ttl: Option<u8>,
    deadline: Option<u64>,
    max_ticks: Option<u64>,
    #[serde(default)]
    node: Vec<RawNode>,
    #[serde(default)]
    query: Vec<RawQuery>,
    #[serde(default)]
    kill: Vec<RawKill>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: u64,
    domain: String,
    sandbox: Option<PathBuf>,
    #[serde(default)]
    docs: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    origin: u64,
    input: String,
    at: Option<u64>,
    and: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKill {
    node: u64,
    at: Option<u64>,
}

/// Work scheduled after the network is built, by tick offset.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Query(NodeId, Query),
    Kill(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScript {
    pub max_ticks: u64,
    pub actions: Vec<(u64, Action)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
    Timer,
    Serve,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Send => "SEND",
            TraceKind::Deliver => "DELIVER",
            TraceKind::Drop => "DROP",
            TraceKind::Timer => "TIMER",
            TraceKind::Serve => "SERVE",
        }
    }
}

/// One trace line. For TIMER and SERVE events `src == dst` is the node
/// itself and `tag` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: TraceKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub tag: u8,
    pub msg_id: u64,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = tag_name(self.tag).unwrap_or("-");
        write!(
            f,
            "{} {} {} {} {} {}",
            self.tick,
            self.kind.as_str(),
            self.src,
            self.dst,
            tag,
            self.msg_id
        )
    }
}

pub fn trace_text(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in trace {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

/// Message counters for one query attempt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MsgStats {
    /// Greedy forwards toward the target.
    pub route_forwards: u32,
    /// Every QUERY datagram sent.
    pub query_sends: u32,
    pub result_sends: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub route_forwards: u64,
    /// Greedy forwards whose receiver is a root-layer gateway.
    pub root_transits: u64,
    pub sends: u64,
    pub drops: u64,
}

impl SimStats {
    pub fn root_fraction(&self) -> f64 {
        if self.route_forwards == 0 {
            0.0
        } else {
            self.root_transits as f64 / self.route_forwards as f64
        }
    }
}

enum Event {
    Deliver { from: NodeId, to: NodeId, bytes: Vec<u8> },
    Timer { node: NodeId, timer: Timer },
    Act(Action),
}

struct Scheduled {
    tick: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.tick, self.seq).cmp(&(other.tick, other.seq))
    }
}

pub struct Simulation {
    cfg: SimConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: BTreeMap<NodeId, Node>,
    domains: BTreeMap<NodeId, DomainPath>,
    rng: ChaCha8Rng,
    loss_rate: f64,
    trace: Vec<TraceEvent>,
    completions: Vec<(NodeId, Completion)>,
    reports: BTreeMap<(NodeId, u64), QueryReport>,
    msg_stats: HashMap<(NodeId, u64), MsgStats>,
    stats: SimStats,
    root_gateways: BTreeSet<NodeId>,
}

pub fn build_network(cfg: SimConfig) -> Result<Simulation, SimError> {
    Simulation::build(cfg)
}

fn node_index(spec: &SimNodeSpec) -> Result<(InvertedIndex, Option<SandboxRoot>), SimError> {
    let mut index = InvertedIndex::new();
    let mut sandbox = None;
    if let Some(dir) = &spec.sandbox {
        let sb = SandboxRoot::open(dir)
            .map_err(|e| SimError::ConfigInvalid(format!("node {}: sandbox: {e}", spec.id)))?;
        let (ix, _) = index_directory(&sb, &ExtractorRegistry::default())
            .map_err(|e| SimError::ConfigInvalid(format!("node {}: {e}", spec.id)))?;
        index = ix;
        sandbox = Some(sb);
    }
    for (path, text) in &spec.docs {
        index.add_document(path, text.len() as u64, 0, text);
    }
    Ok((index, sandbox))
}

impl Simulation {
    pub fn build(cfg: SimConfig) -> Result<Simulation, SimError> {
        cfg.validate()?;
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            loss_rate: 0.0,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            domains: BTreeMap::new(),
            trace: Vec::new(),
            completions: Vec::new(),
            reports: BTreeMap::new(),
            msg_stats: HashMap::new(),
            stats: SimStats::default(),
            root_gateways: BTreeSet::new(),
            cfg,
        };
        let specs = sim.cfg.nodes.clone();
        let bootstrap = NodeAddr::sim(specs[0].id.0);
        for (i, spec) in specs.iter().enumerate() {
            let (index, sandbox) = node_index(spec)?;
            let mut settings = NodeSettings::new(NodeAddr::sim(spec.id.0), spec.domain.clone());
            settings.n_tuple = sim.cfg.n_tuple;
            settings.policy = sim.cfg.policy;
            settings.capacity = sim.cfg.capacity;
            settings.ttl = sim.cfg.ttl;
            settings.deadline = sim.cfg.deadline;
            // globally unique message ids make traces easy to audit
            settings.first_msg_id = spec.id.0 << 32;
            let mut node = Node::new(settings, index, sandbox);
            let effects = node.start(if i == 0 { None } else { Some(bootstrap.clone()) });
            sim.nodes.insert(spec.id, node);
            sim.domains.insert(spec.id, spec.domain.clone());
            sim.apply(spec.id, effects);
            sim.run_until_quiescent(u64::MAX / 4)?;
            let joined = sim.completions.iter().rev().find_map(|(n, c)| match c {
                Completion::Joined(r) if *n == spec.id => Some(r.clone()),
                _ => None,
            });
            match joined {
                Some(Ok(())) => {}
                Some(Err(e)) => return Err(SimError::JoinFailed(spec.id, e)),
                None => return Err(SimError::JoinFailed(spec.id, JoinError::NoAck)),
            }
        }
        sim.completions.clear();
        sim.loss_rate = sim.cfg.loss_rate;
        sim.refresh_ground_truth();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SimStats::default();
        self.msg_stats.clear();
    }

    pub fn msg_stats(&self, origin: NodeId, msg_id: u64) -> MsgStats {
        self.msg_stats.get(&(origin, msg_id)).copied().unwrap_or_default()
    }

    pub fn set_loss_rate(&mut self, rate: f64) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(SimError::ConfigInvalid(format!("loss_rate {rate} must be in [0, 1)")));
        }
        self.loss_rate = rate;
        Ok(())
    }

    pub fn completions(&self) -> &[(NodeId, Completion)] {
        &self.completions
    }

    pub fn take_completions(&mut self) -> Vec<(NodeId, Completion)> {
        std::mem::take(&mut self.completions)
    }

    /// The finished report of a query started at `origin`.
    pub fn query_report(&self, origin: NodeId, query_id: u64) -> Option<&QueryReport> {
        self.reports.get(&(origin, query_id))
    }

    fn push(&mut self, tick: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            tick,
            seq: self.seq,
            event,
        }));
    }

    fn record(&mut self, kind: TraceKind, src: NodeId, dst: NodeId, tag: u8, msg_id: u64) {
        self.trace.push(TraceEvent {
            tick: self.now,
            kind,
            src,
            dst,
            tag,
            msg_id,
        });
    }

    fn apply(&mut self, at: NodeId, effects: Vec<Effect>) {
        for e in effects {
            match e {
                Effect::Send { to, msg } => self.send(at, to.node, msg),
                Effect::SetTimer { delay, timer } => {
                    let tick = self.now.saturating_add(delay);
                    self.push(tick, Event::Timer { node: at, timer });
                }
                Effect::Served { origin, msg_id } => {
                    let _ = origin;
                    self.record(TraceKind::Serve, at, at, 0, msg_id);
                }
                Effect::Done(c) => {
                    if let Completion::Query { query_id, report } = &c {
                        self.reports.insert((at, *query_id), report.clone());
                    }
                    self.completions.push((at, c));
                }
            }
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let tag = msg.tag();
        self.stats.sends += 1;
        match &msg.body {
            Body::Query { scope, .. } => {
                let s = self.msg_stats.entry((msg.src.node, msg.msg_id)).or_default();
                s.query_sends += 1;
                if *scope == Scope::Route {
                    s.route_forwards += 1;
                    self.stats.route_forwards += 1;
                    if self.root_gateways.contains(&to) {
                        self.stats.root_transits += 1;
                    }
                }
            }
            Body::Result { query_id, .. } => {
                self.msg_stats.entry((to, *query_id)).or_default().result_sends += 1;
            }
            _ => {}
        }
        self.record(TraceKind::Send, from, to, tag, msg.msg_id);
        let bytes = match msg.encode() {
            Ok(b) => b,
            Err(e) => {
                log::warn!("node {from} produced an unencodable message: {e}");
                self.stats.drops += 1;
                self.record(TraceKind::Drop, from, to, tag, msg.msg_id);
                return;
            }
        };
        if self.loss_rate > 0.0 && self.rng.gen_bool(self.loss_rate) {
            self.stats.drops += 1;
            self.record(TraceKind::Drop, from, to, tag, msg.msg_id);
            return;
        }
        let latency = self.rng.gen_range(self.cfg.latency_min..=self.cfg.latency_max);
        self.push(self.now + latency, Event::Deliver { from, to, bytes });
    }

    /// Processes events until none remain or `max_ticks` elapse.
    pub fn run_until_quiescent(&mut self, max_ticks: u64) -> Result<&[TraceEvent], SimError> {
        let start = self.now;
        let limit = start.saturating_add(max_ticks);
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.tick > limit {
                self.now = limit;
                return Err(SimError::NotQuiescent {
                    tick: self.now,
                    budget: max_ticks,
                });
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            self.now = ev.tick;
            self.dispatch(ev.event);
        }
        Ok(&self.trace)
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Deliver { from, to, bytes } => {
                let msg = match Message::decode(&bytes) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("undecodable datagram from {from}: {e}");
                        return;
                    }
                };
                let Some(node) = self.nodes.get_mut(&to) else {
                    self.stats.drops += 1;
                    self.record(TraceKind::Drop, from, to, msg.tag(), msg.msg_id);
                    return;
                };
                let (tag, id) = (msg.tag(), msg.msg_id);
                let effects = node.handle_message(self.now, msg);
                self.record(TraceKind::Deliver, from, to, tag, id);
                self.apply(to, effects);
            }
            Event::Timer { node, timer } => {
                let Some(n) = self.nodes.get_mut(&node) else { return };
                let effects = n.handle_timer(self.now, timer);
                if !effects.is_empty() {
                    self.record(TraceKind::Timer, node, node, 0, 0);
                }
                self.apply(node, effects);
            }
            Event::Act(Action::Query(origin, q)) => {
                if let Err(e) = self.start_query(origin, &q, None) {
                    log::warn!("scripted query failed: {e}");
                }
            }
            Event::Act(Action::Kill(id)) => {
                if let Err(e) = self.kill_node(id) {
                    log::warn!("scripted kill failed: {e}");
                }
            }
        }
    }

    /// Schedules scripted actions relative to the current tick.
    pub fn schedule(&mut self, script: &SimScript) {
        for (at, action) in &script.actions {
            self.push(self.now + at, Event::Act(action.clone()));
        }
    }

    pub fn start_query(&mut self, origin: NodeId, query: &Query, expected: Option<u32>) -> Result<u64, SimError> {
        let now = self.now;
        let node = self.nodes.get_mut(&origin).ok_or(SimError::UnknownNode(origin))?;
        let (qid, effects) = node.start_query(now, query, expected);
        self.apply(origin, effects);
        Ok(qid)
    }

    /// Parses `input` and starts it at `origin`; returns the query id.
    pub fn inject_query(&mut self, origin: NodeId, input: &str) -> Result<u64, SimError> {
        let q = parse_query(input).map_err(|e| SimError::BadQuery(e.to_string()))?;
        self.start_query(origin, &q, None)
    }

    pub fn start_fetch(&mut self, node: NodeId, peer: NodeId, path: &str) -> Result<u64, SimError> {
        if !self.nodes.contains_key(&peer) {
            return Err(SimError::UnknownNode(peer));
        }
        let n = self.nodes.get_mut(&node).ok_or(SimError::UnknownNode(node))?;
        let (sid, effects) = n.start_fetch(NodeAddr::sim(peer.0), path);
        self.apply(node, effects);
        Ok(sid)
    }

    pub fn start_list(&mut self, node: NodeId, peer: NodeId, path: &str) -> Result<u64, SimError> {
        let n = self.nodes.get_mut(&node).ok_or(SimError::UnknownNode(node))?;
        let (rid, effects) = n.start_list(NodeAddr::sim(peer.0), path);
        self.apply(node, effects);
        Ok(rid)
    }

    /// Removes a node. Every node whose table references it starts probing
    /// it and drops it once the probes time out.
    pub fn kill_node(&mut self, id: NodeId) -> Result<(), SimError> {
        if self.nodes.remove(&id).is_none() {
            return Err(SimError::UnknownNode(id));
        }
        self.domains.remove(&id);
        let dead = NodeAddr::sim(id.0);
        let watchers: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.table().references(id))
            .map(|(k, _)| *k)
            .collect();
        for w in watchers {
            let effects = self.nodes.get_mut(&w).expect("present").probe(&dead);
            self.apply(w, effects);
        }
        self.refresh_ground_truth();
        Ok(())
    }

    // -----------------------------------------------------------------
    // Ground truth

    fn refresh_ground_truth(&mut self) {
        self.root_gateways = self.root_layer_gateways();
    }

    pub fn domains(&self) -> &BTreeMap<NodeId, DomainPath> {
        &self.domains
    }

    /// Live nodes joined at or below `target`.
    pub fn members_under(&self, target: &DomainPath) -> BTreeSet<NodeId> {
        self.domains
            .iter()
            .filter(|(_, d)| is_ancestor_or_self(target, d))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Live nodes joined exactly at `domain`.
    pub fn members_at(&self, domain: &DomainPath) -> BTreeSet<NodeId> {
        self.domains
            .iter()
            .filter(|(_, d)| *d == domain)
            .map(|(id, _)| *id)
            .collect()
    }

    fn smallest(&self, set: BTreeSet<NodeId>) -> Vec<NodeId> {
        set.into_iter().take(self.cfg.n_tuple).collect()
    }

    /// Every domain prefix occupied by at least one live node.
    pub fn occupied_prefixes(&self) -> BTreeSet<DomainPath> {
        let mut out = BTreeSet::new();
        for d in self.domains.values() {
            for len in 1..=d.len() {
                out.insert(d.truncate(len));
            }
        }
        out
    }

    /// The true n-tuples: for every occupied prefix `P`, the gateways of
    /// the subtree under `P` and of the nodes joined exactly at `P`.
    pub fn true_tuples(&self) -> Vec<(DomainPath, Vec<NodeId>)> {
        let mut out = Vec::new();
        for p in self.occupied_prefixes() {
            out.push((p.clone(), self.smallest(self.members_under(&p))));
            let exact = self.members_at(&p);
            if !exact.is_empty() {
                out.push((p, self.smallest(exact)));
            }
        }
        out
    }

    /// Gateways of the groups directly below the root, plus those of the
    /// nodes joined at the root itself.
    pub fn root_layer_gateways(&self) -> BTreeSet<NodeId> {
        let root = DomainPath::root();
        let mut out: BTreeSet<NodeId> = self.smallest(self.members_at(&root)).into_iter().collect();
        let children: BTreeSet<DomainPath> = self.domains.values().filter(|d| d.len() > 1).map(|d| d.truncate(2)).collect();
        for c in children {
            out.extend(self.smallest(self.members_under(&c)));
        }
        out
    }

    /// Depth of the deepest joined domain.
    pub fn tree_height(&self) -> usize {
        self.domains.values().map(DomainPath::depth).max().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------
// Trace audits

/// Checks a predicate over a trace, naming the first violation.
pub fn assert_trace(trace: &[TraceEvent], predicate: impl Fn(&[TraceEvent]) -> Result<(), String>) -> Result<(), String> {
    predicate(trace)
}

/// Ticks never go backwards.
pub fn monotone_ticks(trace: &[TraceEvent]) -> Result<(), String> {
    for w in trace.windows(2) {
        if w[1].tick < w[0].tick {
            return Err(format!("tick went backwards: {} then {}", w[0], w[1]));
        }
    }
    Ok(())
}

/// No node receives the same QUERY twice.
pub fn no_loop(trace: &[TraceEvent]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for e in trace {
        if e.kind == TraceKind::Deliver && e.tag == tag::QUERY && !seen.insert((e.dst, e.msg_id)) {
            return Err(format!("query delivered twice: {e}"));
        }
    }
    Ok(())
}

/// No node serves the same message twice.
pub fn at_most_once_serve(trace: &[TraceEvent]) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for e in trace {
        if e.kind == TraceKind::Serve && !seen.insert((e.dst, e.msg_id)) {
            return Err(format!("served twice: {e}"));
        }
    }
    Ok(())
}

/// Number of QUERY sends before the first SERVE, per query message id.
/// A query that was never served is absent.
pub fn hops_to_first_serve(trace: &[TraceEvent]) -> BTreeMap<u64, usize> {
    let mut sends: BTreeMap<u64, usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for e in trace {
        match (e.kind, e.tag) {
            (TraceKind::Send, tag::QUERY) if !out.contains_key(&e.msg_id) => {
                *sends.entry(e.msg_id).or_default() += 1;
            }
            (TraceKind::Serve, _) => {
                out.entry(e.msg_id)
                    .or_insert_with(|| sends.get(&e.msg_id).copied().unwrap_or(0));
            }
            _ => {}
        }
    }
    out
}

/// Every served query reached its first in-domain node within `limit` forwards.
pub fn hop_bound(limit: usize) -> impl Fn(&[TraceEvent]) -> Result<(), String> {
    move |trace| {
        for (msg_id, hops) in hops_to_first_serve(trace) {
            if hops > limit {
                return Err(format!("message {msg_id} took {hops} hops (limit {limit})"));
            }
        }
        Ok(())
    }
}

/// Nodes that served message `msg_id`.
pub fn servers_of(trace: &[TraceEvent], msg_id: u64) -> BTreeSet<NodeId> {
    trace
        .iter()
        .filter(|e| e.kind == TraceKind::Serve && e.msg_id == msg_id)
        .map(|e| e.dst)
        .collect()
}
