//! The long-running node process.

use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use sp2p_core::node::{Completion, Node, NodeSettings, Role};
use sp2p_core::query::{Query, QueryReport};
use sp2p_core::search::{load_or_build, ExtractorRegistry, IndexReport, InvertedIndex, PersistError, SandboxError, SandboxRoot};
use sp2p_core::wire::{NodeAddr, NodeId};
use thiserror::Error;

use crate::config::NodeConfig;
use crate::runtime::{resolve_endpoint, Output, Runtime};

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed { addr: SocketAddr, source: std::io::Error },
    #[error("sandbox: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("indexing failed: {0}")]
    Index(#[from] PersistError),
    #[error("join failed: {0}")]
    JoinFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

enum Command {
    Query(Query, Sender<QueryReport>),
    Reindex(Sender<Result<IndexReport, String>>),
}

type Built = Result<(InvertedIndex, IndexReport), String>;
type ReindexWaiters = Vec<Sender<Result<IndexReport, String>>>;

pub struct DaemonHandle {
    addr: NodeAddr,
    commands: Sender<Command>,
    shutdown: Arc<AtomicBool>,
    served: Arc<Mutex<Vec<(NodeId, u64)>>>,
    thread: Option<JoinHandle<Result<(), DaemonError>>>,
    index_report: IndexReport,
}

fn build_index(root: &SandboxRoot, cache: Option<&std::path::Path>) -> Result<(InvertedIndex, IndexReport), PersistError> {
    let (index, report, loaded) = load_or_build(root, &ExtractorRegistry::default(), cache)?;
    log::info!(
        "index {}: {} documents, {} unsupported, {} escaping links skipped",
        if loaded { "loaded from cache" } else { "built" },
        index.doc_count(),
        report.unsupported,
        report.escaping.len()
    );
    for (path, err) in &report.failed {
        log::warn!("could not index {path}: {err}");
    }
    Ok((index, report))
}

/// The address other nodes should use to reach `bind`.
fn advertised(bind: SocketAddr, socket: &UdpSocket, bootstrap: Option<SocketAddr>) -> SocketAddr {
    let port = socket.local_addr().map(|a| a.port()).unwrap_or(bind.port());
    if !bind.ip().is_unspecified() {
        return SocketAddr::new(bind.ip(), port);
    }
    let ip = bootstrap
        .and_then(|b| {
            let probe = UdpSocket::bind((if b.is_ipv4() { "0.0.0.0" } else { "::" }, 0)).ok()?;
            probe.connect(b).ok()?;
            probe.local_addr().ok().map(|a| a.ip())
        })
        .unwrap_or(IpAddr::from([127, 0, 0, 1]));
    SocketAddr::new(ip, port)
}

/// Binds, indexes, joins, and starts serving on a background thread.
/// Returns once the node has joined (or failed to).
pub fn start(config: NodeConfig) -> Result<DaemonHandle, DaemonError> {
    let socket = UdpSocket::bind(config.bind).map_err(|source| DaemonError::BindFailed {
        addr: config.bind,
        source,
    })?;
    let root = SandboxRoot::open(&config.sandbox)?;
    let (index, index_report) = build_index(&root, config.index_cache.as_deref())?;
    let bootstrap = match &config.bootstrap {
        Some(b) => Some(resolve_endpoint(b).map_err(|e| DaemonError::JoinFailed(format!("bootstrap {b}: {e}")))?),
        None => None,
    };
    let addr = NodeAddr::new(config.node_id, advertised(config.bind, &socket, bootstrap).to_string());
    let mut settings = NodeSettings::new(addr.clone(), config.domain.clone());
    settings.n_tuple = config.n_tuple;
    settings.policy = config.policy;
    settings.capacity = config.capacity;
    settings.ttl = config.ttl;
    settings.deadline = config.deadline_ms;
    settings.probe_interval = config.probe_interval_ms;
    settings.role = Role::Peer;
    // restarts must not reuse message ids still in peers' dedup windows
    settings.first_msg_id = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(1)
        .max(1);
    let node = Node::new(settings, index, Some(root.clone()));
    let mut rt = Runtime::new(node, socket);

    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (join_tx, join_rx) = mpsc::channel();
    let shutdown = Arc::new(AtomicBool::new(false));
    let served = Arc::new(Mutex::new(Vec::new()));
    let ctx = LoopCtx {
        commands: cmd_rx,
        shutdown: shutdown.clone(),
        served: served.clone(),
        root,
        cache: config.index_cache.clone(),
        rescan: config.rescan_interval_ms.map(Duration::from_millis),
    };
    let boot_addr = config.bootstrap.as_ref().map(|b| NodeAddr::new(0, b.clone()));
    let thread = std::thread::Builder::new()
        .name(format!("sp2p-node-{}", config.node_id))
        .spawn(move || {
            let effects = rt.node_mut().start(boot_addr);
            let first = rt.apply(effects);
            run_loop(rt, ctx, first, join_tx)
        })?;
    let join_wait = Duration::from_millis(sp2p_core::node::JOIN_TIMEOUT * (sp2p_core::node::JOIN_RETRIES as u64 + 2));
    let mut handle = DaemonHandle {
        addr,
        commands: cmd_tx,
        shutdown,
        served,
        thread: Some(thread),
        index_report,
    };
    match join_rx.recv_timeout(join_wait) {
        Ok(Ok(())) => Ok(handle),
        Ok(Err(e)) => {
            handle.stop();
            Err(DaemonError::JoinFailed(e))
        }
        Err(_) => {
            // the loop died before reporting; surface its error
            match handle.thread.take().map(|t| t.join()) {
                Some(Ok(Err(e))) => Err(e),
                _ => Err(DaemonError::JoinFailed("no join outcome".into())),
            }
        }
    }
}

struct LoopCtx {
    commands: Receiver<Command>,
    shutdown: Arc<AtomicBool>,
    served: Arc<Mutex<Vec<(NodeId, u64)>>>,
    root: SandboxRoot,
    cache: Option<std::path::PathBuf>,
    rescan: Option<Duration>,
}

fn spawn_reindex(root: SandboxRoot, cache: Option<std::path::PathBuf>) -> Receiver<Built> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let built = build_index(&root, cache.as_deref()).map_err(|e| e.to_string());
        let _ = tx.send(built);
    });
    rx
}

fn run_loop(mut rt: Runtime, ctx: LoopCtx, first: Vec<Output>, join_tx: Sender<Result<(), String>>) -> Result<(), DaemonError> {
    let mut join_tx = Some(join_tx);
    let mut queries: Vec<(u64, Sender<QueryReport>)> = Vec::new();
    let mut reindex: Option<(Receiver<Built>, ReindexWaiters)> = None;
    let mut next_rescan = ctx.rescan.map(|d| Instant::now() + d);
    let mut pending = first;
    loop {
        for o in pending.drain(..) {
            match o {
                Output::Served { origin, msg_id } => ctx.served.lock().expect("served log").push((origin, msg_id)),
                Output::Done(Completion::Joined(r)) => {
                    if let Some(tx) = join_tx.take() {
                        let failed = r.is_err();
                        let _ = tx.send(r.map_err(|e| e.to_string()));
                        if failed {
                            return Ok(());
                        }
                    }
                }
                Output::Done(Completion::Query { query_id, report }) => {
                    if let Some(i) = queries.iter().position(|(q, _)| *q == query_id) {
                        let (_, tx) = queries.swap_remove(i);
                        let _ = tx.send(report);
                    }
                }
                Output::Done(Completion::PeerFailed(p)) => log::info!("peer {p} declared failed"),
                Output::Done(_) => {}
            }
        }
        if ctx.shutdown.load(Ordering::Relaxed) {
            return Ok(());
        }
        while let Ok(cmd) = ctx.commands.try_recv() {
            match cmd {
                Command::Query(q, tx) => {
                    let now = rt.now();
                    let (qid, effects) = rt.node_mut().start_query(now, &q, None);
                    queries.push((qid, tx));
                    pending.extend(rt.apply(effects));
                }
                Command::Reindex(tx) => match &mut reindex {
                    Some((_, waiters)) => waiters.push(tx),
                    None => reindex = Some((spawn_reindex(ctx.root.clone(), ctx.cache.clone()), vec![tx])),
                },
            }
        }
        if next_rescan.is_some_and(|t| Instant::now() >= t) {
            next_rescan = ctx.rescan.map(|d| Instant::now() + d);
            if reindex.is_none() {
                reindex = Some((spawn_reindex(ctx.root.clone(), ctx.cache.clone()), Vec::new()));
            }
        }
        if let Some((rx, _)) = &reindex {
            if let Ok(built) = rx.try_recv() {
                let (_, waiters) = reindex.take().expect("present");
                let outcome = built.map(|(index, report)| {
                    rt.node_mut().replace_index(index);
                    report
                });
                for w in waiters {
                    let _ = w.send(outcome.clone());
                }
            }
        }
        pending.extend(rt.step(Duration::from_millis(20))?);
    }
}

impl DaemonHandle {
    pub fn addr(&self) -> &NodeAddr {
        &self.addr
    }

    pub fn endpoint(&self) -> &str {
        &self.addr.endpoint
    }

    pub fn index_report(&self) -> &IndexReport {
        &self.index_report
    }

    /// Runs a query from this node and waits for its report.
    pub fn query(&self, q: Query, timeout: Duration) -> Option<QueryReport> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::Query(q, tx)).ok()?;
        rx.recv_timeout(timeout).ok()
    }

    /// Rebuilds the index off the event loop and swaps it in.
    pub fn reindex(&self, timeout: Duration) -> Result<IndexReport, String> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::Reindex(tx)).map_err(|_| "daemon stopped".to_string())?;
        rx.recv_timeout(timeout).map_err(|_| "reindex timed out".to_string())?
    }

    /// Every (origin, msg_id) this node has served so far.
    pub fn served(&self) -> Vec<(NodeId, u64)> {
        self.served.lock().expect("served log").clone()
    }

    fn stop(&mut self) -> Option<Result<(), DaemonError>> {
        self.shutdown.store(true, Ordering::Relaxed);
        self.thread.take().map(|t| t.join().unwrap_or(Ok(())))
    }

    pub fn shutdown(mut self) -> Result<(), DaemonError> {
        self.stop().unwrap_or(Ok(()))
    }

    /// Blocks until the event loop exits.
    pub fn wait(mut self) -> Result<(), DaemonError> {
        self.thread.take().map(|t| t.join().unwrap_or(Ok(()))).unwrap_or(Ok(()))
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.stop();
    }
}
