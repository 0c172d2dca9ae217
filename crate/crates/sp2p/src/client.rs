//! One-shot client operations against a running node.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use rand::Rng;
use sp2p_core::domain::DomainPath;
use sp2p_core::file_access::{FetchError, ListError, LIST_RETRIES, LIST_TIMEOUT};
use sp2p_core::node::{Completion, Node, NodeSettings, Role};
use sp2p_core::query::{Query, QueryReport};
use sp2p_core::search::InvertedIndex;
use sp2p_core::wire::{DirEntry, NodeAddr};

use crate::runtime::{resolve_endpoint, Output, Runtime};

/// Binds an ephemeral socket on the interface that routes to `remote`.
fn bind_towards(remote: SocketAddr) -> io::Result<UdpSocket> {
    let any = if remote.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let probe = UdpSocket::bind(any)?;
    probe.connect(remote)?;
    let ip = probe.local_addr()?.ip();
    drop(probe);
    UdpSocket::bind(SocketAddr::new(ip, 0))
}

pub struct Client {
    rt: Runtime,
    entry: NodeAddr,
}

impl Client {
    /// A detached node that sends its queries through `entry`.
    pub fn connect(entry: &str, deadline_ms: u64) -> io::Result<Client> {
        let remote = resolve_endpoint(entry)?;
        let socket = bind_towards(remote)?;
        let local = socket.local_addr()?;
        let mut rng = rand::thread_rng();
        let id = rng.gen_range(1..=u64::MAX);
        let entry = NodeAddr::new(0, remote.to_string());
        let mut settings = NodeSettings::new(NodeAddr::new(id, local.to_string()), DomainPath::root());
        settings.role = Role::Client { entry: entry.clone() };
        settings.deadline = deadline_ms;
        settings.first_msg_id = rng.gen_range(1..u64::MAX / 2);
        let node = Node::new(settings, InvertedIndex::new(), None);
        let mut rt = Runtime::new(node, socket);
        let effects = rt.node_mut().start(None);
        rt.apply(effects);
        Ok(Client { rt, entry })
    }

    pub fn entry(&self) -> &NodeAddr {
        &self.entry
    }

    /// Runs a query and returns whatever was collected by the deadline.
    pub fn query(&mut self, q: &Query) -> io::Result<QueryReport> {
        let now = self.rt.now();
        let (qid, effects) = self.rt.node_mut().start_query(now, q, None);
        let mut early = None;
        for o in self.rt.apply(effects) {
            if let Output::Done(Completion::Query { query_id, report }) = o {
                if query_id == qid {
                    early = Some(report);
                }
            }
        }
        if let Some(r) = early {
            return Ok(r);
        }
        // the deadline timer plus one retry bounds the wait
        let limit = Duration::from_millis(self.rt.node().settings().deadline * 2 + 1000);
        let got = self.rt.run_until(limit, |o| match o {
            Output::Done(Completion::Query { query_id, report }) if *query_id == qid => Some(report.clone()),
            _ => None,
        })?;
        Ok(got.unwrap_or_default())
    }

    /// Downloads one file from `peer` (an endpoint).
    pub fn fetch(&mut self, peer: &str, path: &str) -> io::Result<Result<Vec<u8>, FetchError>> {
        let peer = NodeAddr::new(0, resolve_endpoint(peer)?.to_string());
        let (sid, effects) = self.rt.node_mut().start_fetch(peer, path);
        let mut done = None;
        for o in self.rt.apply(effects) {
            if let Output::Done(Completion::Fetch { session_id, result }) = o {
                if session_id == sid {
                    done = Some(result);
                }
            }
        }
        if let Some(r) = done {
            return Ok(r);
        }
        // progress keeps the session alive; this is only a backstop
        let limit = Duration::from_secs(600);
        let got = self.rt.run_until(limit, |o| match o {
            Output::Done(Completion::Fetch { session_id, result }) if *session_id == sid => Some(result.clone()),
            _ => None,
        })?;
        Ok(got.unwrap_or(Err(FetchError::Unavailable)))
    }

    /// Lists one directory on `peer` (an endpoint).
    pub fn list(&mut self, peer: &str, path: &str) -> io::Result<Result<(Vec<DirEntry>, bool), ListError>> {
        let peer = NodeAddr::new(0, resolve_endpoint(peer)?.to_string());
        let (rid, effects) = self.rt.node_mut().start_list(peer, path);
        self.rt.apply(effects);
        let limit = Duration::from_millis(LIST_TIMEOUT * (LIST_RETRIES as u64 + 2));
        let got = self.rt.run_until(limit, |o| match o {
            Output::Done(Completion::List { request_id, result }) if *request_id == rid => Some(result.clone()),
            _ => None,
        })?;
        Ok(got.unwrap_or(Err(ListError::Timeout)))
    }
}
