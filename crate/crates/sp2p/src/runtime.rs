//! Drives a [`Node`] over a real UDP socket and the wall clock.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use sp2p_core::node::{Completion, Effect, Node, Timer};
use sp2p_core::wire::{tag_name, Message, NodeId};

struct Pending {
    at: Instant,
    seq: u64,
    timer: Timer,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

/// Something the event loop did that callers may want to observe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Done(Completion),
    Served { origin: NodeId, msg_id: u64 },
}

pub struct Runtime {
    node: Node,
    socket: UdpSocket,
    epoch: Instant,
    timers: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    buf: Vec<u8>,
}

pub fn resolve_endpoint(endpoint: &str) -> io::Result<SocketAddr> {
    endpoint
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("{endpoint} resolves to nothing")))
}

impl Runtime {
    pub fn new(node: Node, socket: UdpSocket) -> Runtime {
        Runtime {
            node,
            socket,
            epoch: Instant::now(),
            timers: BinaryHeap::new(),
            seq: 0,
            buf: vec![0u8; 65_536],
        }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn node_mut(&mut self) -> &mut Node {
        &mut self.node
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Milliseconds since the runtime started; the node's clock.
    pub fn now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    /// Carries out effects, returning the observable ones.
    pub fn apply(&mut self, effects: Vec<Effect>) -> Vec<Output> {
        let mut out = Vec::new();
        for e in effects {
            match e {
                Effect::Send { to, msg } => self.send(&to.endpoint, to.node, &msg),
                Effect::SetTimer { delay, timer } => {
                    self.seq += 1;
                    self.timers.push(Reverse(Pending {
                        at: Instant::now() + Duration::from_millis(delay),
                        seq: self.seq,
                        timer,
                    }));
                }
                Effect::Served { origin, msg_id } => {
                    log::info!("SERVE {} {} {}", self.node.id(), origin, msg_id);
                    out.push(Output::Served { origin, msg_id });
                }
                Effect::Done(c) => out.push(Output::Done(c)),
            }
        }
        out
    }

    fn send(&self, endpoint: &str, to: NodeId, msg: &Message) {
        let bytes = match msg.encode() {
            Ok(b) => b,
            Err(e) => {
                log::warn!("dropping unencodable {}: {e}", msg.body.name());
                return;
            }
        };
        let addr = match resolve_endpoint(endpoint) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("cannot resolve {endpoint}: {e}");
                return;
            }
        };
        log::debug!("SEND {} {} {} {}", self.node.id(), to, msg.body.name(), msg.msg_id);
        if let Err(e) = self.socket.send_to(&bytes, addr) {
            log::warn!("send to {addr} failed: {e}");
        }
    }

    /// Waits at most `max_wait` for one datagram or due timer and handles
    /// everything that is ready.
    pub fn step(&mut self, max_wait: Duration) -> io::Result<Vec<Output>> {
        let mut out = Vec::new();
        let now = Instant::now();
        while let Some(Reverse(p)) = self.timers.peek() {
            if p.at > now {
                break;
            }
            let Reverse(p) = self.timers.pop().expect("peeked");
            let effects = self.node.handle_timer(self.now(), p.timer);
            out.extend(self.apply(effects));
        }
        if !out.is_empty() {
            return Ok(out);
        }
        let wait = match self.timers.peek() {
            Some(Reverse(p)) => p.at.saturating_duration_since(now).min(max_wait),
            None => max_wait,
        };
        self.socket.set_read_timeout(Some(wait.max(Duration::from_millis(1))))?;
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, from)) => match Message::decode(&self.buf[..n]) {
                Ok(msg) => {
                    log::debug!(
                        "DELIVER {} {} {} {}",
                        msg.src.node,
                        self.node.id(),
                        tag_name(msg.tag()).unwrap_or("?"),
                        msg.msg_id
                    );
                    let effects = self.node.handle_message(self.now(), msg);
                    out.extend(self.apply(effects));
                }
                Err(e) => log::warn!("undecodable datagram from {from}: {e}"),
            },
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            // ICMP port-unreachable from an earlier send surfaces here on some systems
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => {}
            Err(e) => return Err(e),
        }
        Ok(out)
    }

    /// Runs until `done` picks an output or `timeout` passes.
    pub fn run_until<T>(&mut self, timeout: Duration, mut done: impl FnMut(&Output) -> Option<T>) -> io::Result<Option<T>> {
        let end = Instant::now() + timeout;
        loop {
            let now = Instant::now();
            if now >= end {
                return Ok(None);
            }
            for o in self.step(end - now)? {
                if let Some(v) = done(&o) {
                    return Ok(Some(v));
                }
            }
        }
    }
}
