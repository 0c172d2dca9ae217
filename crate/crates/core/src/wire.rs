//! The closed message set and its binary encoding.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! "SP2P" | version:u8 = 1 | tag:u8 | msg_id:u64 | ttl:u8 | src:NodeAddr | payload
//! ```
//!
//! Strings are a `u16` byte length followed by UTF-8. Lists are a `u16`
//! count followed by the elements. Optional values carry a `0`/`1` presence
//! byte. A `NodeAddr` is `node:u64` then `endpoint:string`; a domain is its
//! canonical text. Decoding is strict: every frame that decodes re-encodes
//! to the identical bytes.

use std::fmt;

use thiserror::Error;

use crate::domain::{parse_domain_path, DomainPath};

pub const MAGIC: &[u8; 4] = b"SP2P";
pub const VERSION: u8 = 1;

/// Largest encoded message, sized to fit one UDP/IPv4 datagram.
pub const MAX_MESSAGE_BYTES: usize = 65_507;
pub const MAX_TTL: u8 = 64;
/// Payload bytes per file chunk.
pub const CHUNK_SIZE: usize = 8 * 1024;
pub const MAX_KEYWORDS: usize = 32;
pub const MAX_KEYWORD_CHARS: usize = 40;
pub const MAX_SNIPPET_CHARS: usize = 160;
pub const MAX_OFFSETS_PER_REQUEST: usize = 64;
pub const MAX_COPIES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A node identity plus the transport endpoint it listens on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeAddr {
    pub node: NodeId,
    pub endpoint: String,
}

impl NodeAddr {
    pub fn new(node: u64, endpoint: impl Into<String>) -> Self {
        NodeAddr {
            node: NodeId(node),
            endpoint: endpoint.into(),
        }
    }

    /// Address used inside the simulator.
    pub fn sim(node: u64) -> Self {
        NodeAddr::new(node, format!("sim:{node}"))
    }
}

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.node, self.endpoint)
    }
}

/// A peer as seen by routing: address plus joined domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerInfo {
    pub addr: NodeAddr,
    pub domain: DomainPath,
}

impl PeerInfo {
    pub fn id(&self) -> NodeId {
        self.addr.node
    }
}

/// How far a routed message still has to travel.
///
/// `Route` messages are greedily forwarded toward their target domain.
/// The other variants are delegations inside the target: the receiver is
/// responsible for covering the named subtree, the named exact group, or
/// only itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Scope {
    Route,
    Subtree(DomainPath),
    Exact(DomainPath),
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QueryMode {
    #[default]
    Or,
    And,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JoinStatus {
    Accepted,
    /// Joiner id collides with a different endpoint already in the overlay.
    DuplicateId,
}

/// Outcome code carried by directory and file responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    NotFound,
    OutsideSandbox,
    NotAFile,
    BadOffset,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WireHit {
    pub path: String,
    pub score_micros: u64,
    pub size: u64,
    pub snippet: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    File,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DirEntry {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    JoinReq {
        joiner: NodeAddr,
        domain: DomainPath,
        scope: Scope,
    },
    JoinAck {
        status: JoinStatus,
        /// Members of the joiner's own leaf group.
        members: Vec<NodeAddr>,
        /// Gateways (and standby members) of every other group the joiner tracks.
        gateways: Vec<PeerInfo>,
    },
    Query {
        target: DomainPath,
        keywords: Vec<String>,
        mode: QueryMode,
        k: u16,
        /// Domain of the originator; `None` for detached clients.
        origin_domain: Option<DomainPath>,
        scope: Scope,
    },
    Result {
        query_id: u64,
        responder: PeerInfo,
        hits: Vec<WireHit>,
        dead_end: bool,
    },
    ListDirReq {
        request_id: u64,
        path: String,
    },
    ListDirResp {
        request_id: u64,
        status: Status,
        truncated: bool,
        entries: Vec<DirEntry>,
    },
    FileReq {
        session_id: u64,
        path: String,
        offsets: Vec<u64>,
        /// How many times the server should send each chunk.
        copies: u8,
    },
    FileChunk {
        session_id: u64,
        status: Status,
        offset: u64,
        file_size: u64,
        /// SHA-256 of the whole file; present on the chunk at offset 0.
        digest: Option<[u8; 32]>,
        eof: bool,
        data: Vec<u8>,
    },
    Ping,
    Pong,
}

/// Wire tags.
pub mod tag {
    pub const JOIN_REQ: u8 = 0x01;
    pub const JOIN_ACK: u8 = 0x02;
    pub const QUERY: u8 = 0x03;
    pub const RESULT: u8 = 0x04;
    pub const LIST_DIR_REQ: u8 = 0x05;
    pub const LIST_DIR_RESP: u8 = 0x06;
    pub const FILE_REQ: u8 = 0x07;
    pub const PING: u8 = 0x08;
    pub const FILE_CHUNK: u8 = 0x09;
    pub const PONG: u8 = 0x0A;
}

impl Body {
    pub fn tag(&self) -> u8 {
        match self {
            Body::JoinReq { .. } => tag::JOIN_REQ,
            Body::JoinAck { .. } => tag::JOIN_ACK,
            Body::Query { .. } => tag::QUERY,
            Body::Result { .. } => tag::RESULT,
            Body::ListDirReq { .. } => tag::LIST_DIR_REQ,
            Body::ListDirResp { .. } => tag::LIST_DIR_RESP,
            Body::FileReq { .. } => tag::FILE_REQ,
            Body::FileChunk { .. } => tag::FILE_CHUNK,
            Body::Ping => tag::PING,
            Body::Pong => tag::PONG,
        }
    }

    pub fn name(&self) -> &'static str {
        tag_name(self.tag()).unwrap_or("?")
    }
}

pub fn tag_name(tag: u8) -> Option<&'static str> {
    Some(match tag {
        tag::JOIN_REQ => "JOIN_REQ",
        tag::JOIN_ACK => "JOIN_ACK",
        tag::QUERY => "QUERY",
        tag::RESULT => "RESULT",
        tag::LIST_DIR_REQ => "LIST_DIR_REQ",
        tag::LIST_DIR_RESP => "LIST_DIR_RESP",
        tag::FILE_REQ => "FILE_REQ",
        tag::PING => "PING",
        tag::FILE_CHUNK => "FILE_CHUNK",
        tag::PONG => "PONG",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_id: u64,
    pub ttl: u8,
    pub src: NodeAddr,
    pub body: Body,
}

impl Message {
    pub fn new(msg_id: u64, ttl: u8, src: NodeAddr, body: Body) -> Self {
        Message {
            msg_id,
            ttl,
            src,
            body,
        }
    }

    pub fn tag(&self) -> u8 {
        self.body.tag()
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        decode(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("encoded message is {size} bytes, above the {MAX_MESSAGE_BYTES} byte cap")]
    Oversize { size: usize },
    #[error("field {0} exceeds its limit")]
    LimitExceeded(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input at byte {offset}")]
    Truncated { offset: usize },
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at byte {offset}")]
    UnsupportedVersion { offset: usize, version: u8 },
    #[error("unknown tag 0x{tag:02x} at byte {offset}")]
    UnknownTag { offset: usize, tag: u8 },
    #[error("invalid UTF-8 at byte {offset}")]
    BadUtf8 { offset: usize },
    #[error("{what} exceeds its limit at byte {offset}")]
    LimitExceeded { offset: usize, what: &'static str },
    #[error("invalid {what} at byte {offset}")]
    Invalid { offset: usize, what: &'static str },
    #[error("{count} trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

impl DecodeError {
    pub fn offset(&self) -> usize {
        match *self {
            DecodeError::Truncated { offset }
            | DecodeError::BadMagic { offset }
            | DecodeError::UnsupportedVersion { offset, .. }
            | DecodeError::UnknownTag { offset, .. }
            | DecodeError::BadUtf8 { offset }
            | DecodeError::LimitExceeded { offset, .. }
            | DecodeError::Invalid { offset, .. }
            | DecodeError::TrailingBytes { offset, .. } => offset,
        }
    }
}

// ---------------------------------------------------------------------------
// Encoding

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn len(&mut self, n: usize, what: &'static str) -> Result<(), EncodeError> {
        let n = u16::try_from(n).map_err(|_| EncodeError::LimitExceeded(what))?;
        self.u16(n);
        Ok(())
    }
    fn str(&mut self, s: &str, what: &'static str) -> Result<(), EncodeError> {
        self.len(s.len(), what)?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn bytes(&mut self, b: &[u8], what: &'static str) -> Result<(), EncodeError> {
        self.len(b.len(), what)?;
        self.buf.extend_from_slice(b);
        Ok(())
    }
    fn addr(&mut self, a: &NodeAddr) -> Result<(), EncodeError> {
        if a.endpoint.is_empty() {
            return Err(EncodeError::LimitExceeded("endpoint"));
        }
        self.u64(a.node.0);
        self.str(&a.endpoint, "endpoint")
    }
    fn domain(&mut self, d: &DomainPath) -> Result<(), EncodeError> {
        self.str(&d.canonical(), "domain")
    }
    fn peer(&mut self, p: &PeerInfo) -> Result<(), EncodeError> {
        self.addr(&p.addr)?;
        self.domain(&p.domain)
    }
    fn scope(&mut self, s: &Scope) -> Result<(), EncodeError> {
        match s {
            Scope::Route => self.u8(0),
            Scope::Subtree(d) => {
                self.u8(1);
                self.domain(d)?;
            }
            Scope::Exact(d) => {
                self.u8(2);
                self.domain(d)?;
            }
            Scope::Single => self.u8(3),
        }
        Ok(())
    }
    fn status(&mut self, s: Status) {
        self.u8(match s {
            Status::Ok => 0,
            Status::NotFound => 1,
            Status::OutsideSandbox => 2,
            Status::NotAFile => 3,
            Status::BadOffset => 4,
            Status::Unavailable => 5,
        });
    }
}

/// Encodes a message into its canonical byte form.
pub fn encode(m: &Message) -> Result<Vec<u8>, EncodeError> {
    if m.ttl > MAX_TTL {
        return Err(EncodeError::LimitExceeded("ttl"));
    }
    let mut w = Writer {
        buf: Vec::with_capacity(64),
    };
    w.buf.extend_from_slice(MAGIC);
    w.u8(VERSION);
    w.u8(m.tag());
    w.u64(m.msg_id);
    w.u8(m.ttl);
    w.addr(&m.src)?;
    match &m.body {
        Body::JoinReq {
            joiner,
            domain,
            scope,
        } => {
            w.addr(joiner)?;
            w.domain(domain)?;
            w.scope(scope)?;
        }
        Body::JoinAck {
            status,
            members,
            gateways,
        } => {
            w.u8(match status {
                JoinStatus::Accepted => 0,
                JoinStatus::DuplicateId => 1,
            });
            w.len(members.len(), "members")?;
            for a in members {
                w.addr(a)?;
            }
            w.len(gateways.len(), "gateways")?;
            for p in gateways {
                w.peer(p)?;
            }
        }
        Body::Query {
            target,
            keywords,
            mode,
            k,
            origin_domain,
            scope,
        } => {
            w.domain(target)?;
            if keywords.len() > MAX_KEYWORDS {
                return Err(EncodeError::LimitExceeded("keywords"));
            }
            w.len(keywords.len(), "keywords")?;
            for kw in keywords {
                if kw.chars().count() > MAX_KEYWORD_CHARS {
                    return Err(EncodeError::LimitExceeded("keyword"));
                }
                w.str(kw, "keyword")?;
            }
            w.u8(match mode {
                QueryMode::Or => 0,
                QueryMode::And => 1,
            });
            w.u16(*k);
            match origin_domain {
                None => w.u8(0),
                Some(d) => {
                    w.u8(1);
                    w.domain(d)?;
                }
            }
            w.scope(scope)?;
        }
        Body::Result {
            query_id,
            responder,
            hits,
            dead_end,
        } => {
            w.u64(*query_id);
            w.peer(responder)?;
            w.len(hits.len(), "hits")?;
            for h in hits {
                if h.snippet.chars().count() > MAX_SNIPPET_CHARS {
                    return Err(EncodeError::LimitExceeded("snippet"));
                }
                w.str(&h.path, "path")?;
                w.u64(h.score_micros);
                w.u64(h.size);
                w.str(&h.snippet, "snippet")?;
            }
            w.bool(*dead_end);
        }
        Body::ListDirReq { request_id, path } => {
            w.u64(*request_id);
            w.str(path, "path")?;
        }
        Body::ListDirResp {
            request_id,
            status,
            truncated,
            entries,
        } => {
            w.u64(*request_id);
            w.status(*status);
            w.bool(*truncated);
            w.len(entries.len(), "entries")?;
            for e in entries {
                w.str(&e.name, "name")?;
                w.u8(match e.kind {
                    EntryKind::File => 0,
                    EntryKind::Dir => 1,
                });
                w.u64(e.size);
            }
        }
        Body::FileReq {
            session_id,
            path,
            offsets,
            copies,
        } => {
            w.u64(*session_id);
            w.str(path, "path")?;
            if offsets.len() > MAX_OFFSETS_PER_REQUEST {
                return Err(EncodeError::LimitExceeded("offsets"));
            }
            w.len(offsets.len(), "offsets")?;
            for o in offsets {
                w.u64(*o);
            }
            if *copies == 0 || *copies > MAX_COPIES {
                return Err(EncodeError::LimitExceeded("copies"));
            }
            w.u8(*copies);
        }
        Body::FileChunk {
            session_id,
            status,
            offset,
            file_size,
            digest,
            eof,
            data,
        } => {
            w.u64(*session_id);
            w.status(*status);
            w.u64(*offset);
            w.u64(*file_size);
            match digest {
                None => w.u8(0),
                Some(d) => {
                    w.u8(1);
                    w.buf.extend_from_slice(d);
                }
            }
            w.bool(*eof);
            if data.len() > CHUNK_SIZE {
                return Err(EncodeError::LimitExceeded("chunk data"));
            }
            w.bytes(data, "chunk data")?;
        }
        Body::Ping | Body::Pong => {}
    }
    if w.buf.len() > MAX_MESSAGE_BYTES {
        return Err(EncodeError::Oversize { size: w.buf.len() });
    }
    Ok(w.buf)
}

// ---------------------------------------------------------------------------
// Decoding

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }
    fn bool(&mut self, what: &'static str) -> Result<bool, DecodeError> {
        let offset = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid { offset, what }),
        }
    }
    fn count(&mut self, max: usize, what: &'static str) -> Result<usize, DecodeError> {
        let offset = self.pos;
        let n = self.u16()? as usize;
        if n > max {
            return Err(DecodeError::LimitExceeded { offset, what });
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, DecodeError> {
        let n = self.u16()? as usize;
        let offset = self.pos;
        let b = self.take(n)?;
        std::str::from_utf8(b)
            .map(str::to_owned)
            .map_err(|e| DecodeError::BadUtf8 {
                offset: offset + e.valid_up_to(),
            })
    }
    fn addr(&mut self) -> Result<NodeAddr, DecodeError> {
        let node = NodeId(self.u64()?);
        let offset = self.pos;
        let endpoint = self.str()?;
        if endpoint.is_empty() {
            return Err(DecodeError::Invalid {
                offset,
                what: "endpoint",
            });
        }
        Ok(NodeAddr { node, endpoint })
    }
    fn domain(&mut self) -> Result<DomainPath, DecodeError> {
        let offset = self.pos;
        let text = self.str()?;
        match parse_domain_path(&text) {
            Ok(d) if d.canonical() == text => Ok(d),
            _ => Err(DecodeError::Invalid {
                offset,
                what: "domain",
            }),
        }
    }
    fn peer(&mut self) -> Result<PeerInfo, DecodeError> {
        let addr = self.addr()?;
        let domain = self.domain()?;
        Ok(PeerInfo { addr, domain })
    }
    fn scope(&mut self) -> Result<Scope, DecodeError> {
        let offset = self.pos;
        Ok(match self.u8()? {
            0 => Scope::Route,
            1 => Scope::Subtree(self.domain()?),
            2 => Scope::Exact(self.domain()?),
            3 => Scope::Single,
            _ => {
                return Err(DecodeError::Invalid {
                    offset,
                    what: "scope",
                })
            }
        })
    }
    fn status(&mut self) -> Result<Status, DecodeError> {
        let offset = self.pos;
        Ok(match self.u8()? {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::OutsideSandbox,
            3 => Status::NotAFile,
            4 => Status::BadOffset,
            5 => Status::Unavailable,
            _ => {
                return Err(DecodeError::Invalid {
                    offset,
                    what: "status",
                })
            }
        })
    }
}

/// Decodes one message; never panics on arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    if bytes.len() > MAX_MESSAGE_BYTES {
        return Err(DecodeError::LimitExceeded {
            offset: MAX_MESSAGE_BYTES,
            what: "message size",
        });
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DecodeError::BadMagic { offset: 0 });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion { offset: 4, version });
    }
    let tag_offset = r.pos;
    let tag = r.u8()?;
    if tag_name(tag).is_none() {
        return Err(DecodeError::UnknownTag {
            offset: tag_offset,
            tag,
        });
    }
    let msg_id = r.u64()?;
    let ttl_offset = r.pos;
    let ttl = r.u8()?;
    if ttl > MAX_TTL {
        return Err(DecodeError::LimitExceeded {
            offset: ttl_offset,
            what: "ttl",
        });
    }
    let src = r.addr()?;
    let body = match tag {
        tag::JOIN_REQ => Body::JoinReq {
            joiner: r.addr()?,
            domain: r.domain()?,
            scope: r.scope()?,
        },
        tag::JOIN_ACK => {
            let offset = r.pos;
            let status = match r.u8()? {
                0 => JoinStatus::Accepted,
                1 => JoinStatus::DuplicateId,
                _ => {
                    return Err(DecodeError::Invalid {
                        offset,
                        what: "join status",
                    })
                }
            };
            let n = r.count(usize::MAX, "members")?;
            let mut members = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                members.push(r.addr()?);
            }
            let n = r.count(usize::MAX, "gateways")?;
            let mut gateways = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                gateways.push(r.peer()?);
            }
            Body::JoinAck {
                status,
                members,
                gateways,
            }
        }
        tag::QUERY => {
            let target = r.domain()?;
            let n = r.count(MAX_KEYWORDS, "keywords")?;
            let mut keywords = Vec::with_capacity(n);
            for _ in 0..n {
                let offset = r.pos;
                let kw = r.str()?;
                if kw.chars().count() > MAX_KEYWORD_CHARS {
                    return Err(DecodeError::LimitExceeded {
                        offset,
                        what: "keyword",
                    });
                }
                keywords.push(kw);
            }
            let offset = r.pos;
            let mode = match r.u8()? {
                0 => QueryMode::Or,
                1 => QueryMode::And,
                _ => {
                    return Err(DecodeError::Invalid {
                        offset,
                        what: "query mode",
                    })
                }
            };
            let k = r.u16()?;
            let offset = r.pos;
            let origin_domain = match r.u8()? {
                0 => None,
                1 => Some(r.domain()?),
                _ => {
                    return Err(DecodeError::Invalid {
                        offset,
                        what: "origin domain flag",
                    })
                }
            };
            Body::Query {
                target,
                keywords,
                mode,
                k,
                origin_domain,
                scope: r.scope()?,
            }
        }
        tag::RESULT => {
            let query_id = r.u64()?;
            let responder = r.peer()?;
            let n = r.count(usize::MAX, "hits")?;
            let mut hits = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let path = r.str()?;
                let score_micros = r.u64()?;
                let size = r.u64()?;
                let offset = r.pos;
                let snippet = r.str()?;
                if snippet.chars().count() > MAX_SNIPPET_CHARS {
                    return Err(DecodeError::LimitExceeded {
                        offset,
                        what: "snippet",
                    });
                }
                hits.push(WireHit {
                    path,
                    score_micros,
                    size,
                    snippet,
                });
            }
            Body::Result {
                query_id,
                responder,
                hits,
                dead_end: r.bool("dead-end flag")?,
            }
        }
        tag::LIST_DIR_REQ => Body::ListDirReq {
            request_id: r.u64()?,
            path: r.str()?,
        },
        tag::LIST_DIR_RESP => {
            let request_id = r.u64()?;
            let status = r.status()?;
            let truncated = r.bool("truncated flag")?;
            let n = r.count(usize::MAX, "entries")?;
            let mut entries = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let name = r.str()?;
                let offset = r.pos;
                let kind = match r.u8()? {
                    0 => EntryKind::File,
                    1 => EntryKind::Dir,
                    _ => {
                        return Err(DecodeError::Invalid {
                            offset,
                            what: "entry kind",
                        })
                    }
                };
                entries.push(DirEntry {
                    name,
                    kind,
                    size: r.u64()?,
                });
            }
            Body::ListDirResp {
                request_id,
                status,
                truncated,
                entries,
            }
        }
        tag::FILE_REQ => {
            let session_id = r.u64()?;
            let path = r.str()?;
            let n = r.count(MAX_OFFSETS_PER_REQUEST, "offsets")?;
            let mut offsets = Vec::with_capacity(n);
            for _ in 0..n {
                offsets.push(r.u64()?);
            }
            let offset = r.pos;
            let copies = r.u8()?;
            if copies == 0 || copies > MAX_COPIES {
                return Err(DecodeError::LimitExceeded {
                    offset,
                    what: "copies",
                });
            }
            Body::FileReq {
                session_id,
                path,
                offsets,
                copies,
            }
        }
        tag::FILE_CHUNK => {
            let session_id = r.u64()?;
            let status = r.status()?;
            let offset = r.u64()?;
            let file_size = r.u64()?;
            let flag_offset = r.pos;
            let digest = match r.u8()? {
                0 => None,
                1 => {
                    let mut d = [0u8; 32];
                    d.copy_from_slice(r.take(32)?);
                    Some(d)
                }
                _ => {
                    return Err(DecodeError::Invalid {
                        offset: flag_offset,
                        what: "digest flag",
                    })
                }
            };
            let eof = r.bool("eof flag")?;
            let len_offset = r.pos;
            let n = r.u16()? as usize;
            if n > CHUNK_SIZE {
                return Err(DecodeError::LimitExceeded {
                    offset: len_offset,
                    what: "chunk data",
                });
            }
            let data = r.take(n)?.to_vec();
            Body::FileChunk {
                session_id,
                status,
                offset,
                file_size,
                digest,
                eof,
                data,
            }
        }
        tag::PING => Body::Ping,
        tag::PONG => Body::Pong,
        _ => unreachable!("tag validated above"),
    };
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes {
            offset: r.pos,
            count: bytes.len() - r.pos,
        });
    }
    Ok(Message {
        msg_id,
        ttl,
        src,
        body,
    })
}
