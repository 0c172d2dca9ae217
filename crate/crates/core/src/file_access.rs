//! Remote directory listing and chunked file transfer.
//!
//! The client learns the file size and digest from the chunk at offset 0,
//! then keeps up to [`FETCH_WINDOW`] chunk requests outstanding. Each
//! request has its own timer; a timed-out chunk is asked for again with
//! the request sent twice and the server asked to send two copies, which
//! keeps a fetch alive under heavy loss in both directions.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::search::{SandboxError, SandboxRoot};
use crate::wire::{Body, DirEntry, NodeAddr, Status, CHUNK_SIZE, MAX_COPIES, MAX_MESSAGE_BYTES, MAX_OFFSETS_PER_REQUEST};

pub const FETCH_WINDOW: usize = 8;
pub const MAX_IN_FLIGHT: usize = 64;
pub const CHUNK_TIMEOUT: u64 = 500;
pub const MAX_CHUNK_RETRIES: u32 = 5;
pub const RETRY_COPIES: u8 = 2;
pub const RETRY_SENDS: u8 = 2;
pub const LIST_TIMEOUT: u64 = 500;
pub const LIST_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("file not found on peer")]
    NotFound,
    #[error("path escapes the peer's sandbox")]
    OutsideSandbox,
    #[error("path is not a regular file")]
    NotAFile,
    #[error("peer does not share files")]
    Unavailable,
    #[error("assembled file does not match the announced SHA-256")]
    ChecksumMismatch,
    #[error("chunk at offset {offset} still missing after {MAX_CHUNK_RETRIES} retries")]
    TooManyRetries { offset: u64 },
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListError {
    #[error("directory not found on peer")]
    NotFound,
    #[error("path escapes the peer's sandbox")]
    OutsideSandbox,
    #[error("path is not a directory")]
    NotADirectory,
    #[error("peer does not share files")]
    Unavailable,
    #[error("no answer from peer")]
    Timeout,
}

pub fn status_of(err: &SandboxError) -> Status {
    match err {
        SandboxError::OutsideSandbox(_) => Status::OutsideSandbox,
        SandboxError::NotFound(_) | SandboxError::RootMissing(_) => Status::NotFound,
        SandboxError::NotAFile(_) | SandboxError::NotADirectory(_) => Status::NotAFile,
        SandboxError::Io(_) => Status::Unavailable,
    }
}

fn fetch_error(status: Status) -> FetchError {
    match status {
        Status::NotFound => FetchError::NotFound,
        Status::OutsideSandbox => FetchError::OutsideSandbox,
        Status::NotAFile => FetchError::NotAFile,
        Status::Unavailable => FetchError::Unavailable,
        Status::BadOffset => FetchError::Protocol("server rejected an offset"),
        Status::Ok => FetchError::Protocol("ok status treated as error"),
    }
}

pub fn list_error(status: Status) -> ListError {
    match status {
        Status::OutsideSandbox => ListError::OutsideSandbox,
        Status::NotAFile => ListError::NotADirectory,
        Status::Unavailable => ListError::Unavailable,
        _ => ListError::NotFound,
    }
}

/// Number of chunks in a file of `size` bytes (an empty file has one,
/// empty, chunk).
pub fn chunk_count(size: u64) -> u64 {
    size.div_ceil(CHUNK_SIZE as u64).max(1)
}

/// A FILE_REQ the session wants sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRequest {
    pub offsets: Vec<u64>,
    pub copies: u8,
    /// How many times to send the request itself.
    pub sends: u8,
}

/// A per-chunk timer the session wants armed for [`CHUNK_TIMEOUT`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkTimer {
    pub offset: u64,
    pub generation: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Step {
    pub requests: Vec<ChunkRequest>,
    pub timers: Vec<ChunkTimer>,
    pub done: Option<Result<Vec<u8>, FetchError>>,
}

#[derive(Debug, Clone)]
struct Pending {
    retries: u32,
    generation: u32,
}

/// Client side of one file transfer.
#[derive(Debug, Clone)]
pub struct FetchSession {
    pub session_id: u64,
    pub peer: NodeAddr,
    pub rel_path: String,
    file_size: Option<u64>,
    digest: Option<[u8; 32]>,
    next_offset: u64,
    received: BTreeMap<u64, Vec<u8>>,
    in_flight: BTreeMap<u64, Pending>,
    window: usize,
    finished: bool,
    pub retries_total: u32,
}

impl FetchSession {
    pub fn new(session_id: u64, peer: NodeAddr, rel_path: impl Into<String>) -> Self {
        FetchSession {
            session_id,
            peer,
            rel_path: rel_path.into(),
            file_size: None,
            digest: None,
            next_offset: 0,
            received: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            window: FETCH_WINDOW,
            finished: false,
            retries_total: 0,
        }
    }

    pub fn file_size(&self) -> Option<u64> {
        self.file_size
    }

    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Initial request for offset 0, which also announces size and digest.
    pub fn start(&mut self) -> Step {
        self.next_offset = CHUNK_SIZE as u64;
        self.in_flight.insert(0, Pending { retries: 0, generation: 0 });
        Step {
            requests: vec![ChunkRequest {
                offsets: vec![0],
                copies: 1,
                sends: 1,
            }],
            timers: vec![ChunkTimer { offset: 0, generation: 0 }],
            done: None,
        }
    }

    fn finish(&mut self, result: Result<Vec<u8>, FetchError>) -> Step {
        self.finished = true;
        self.in_flight.clear();
        Step {
            done: Some(result),
            ..Step::default()
        }
    }

    fn refill(&mut self, step: &mut Step) {
        let Some(size) = self.file_size else { return };
        let limit = self.window.min(MAX_IN_FLIGHT);
        let mut batch = Vec::new();
        while self.in_flight.len() < limit && self.next_offset < size {
            let off = self.next_offset;
            self.next_offset += CHUNK_SIZE as u64;
            if self.received.contains_key(&off) {
                continue;
            }
            self.in_flight.insert(off, Pending { retries: 0, generation: 0 });
            step.timers.push(ChunkTimer { offset: off, generation: 0 });
            batch.push(off);
        }
        for offsets in batch.chunks(MAX_OFFSETS_PER_REQUEST) {
            step.requests.push(ChunkRequest {
                offsets: offsets.to_vec(),
                copies: 1,
                sends: 1,
            });
        }
    }

    /// Handles one FILE_CHUNK for this session.
    pub fn on_chunk(&mut self, status: Status, offset: u64, file_size: u64, digest: Option<[u8; 32]>, data: &[u8]) -> Step {
        if self.finished {
            return Step::default();
        }
        if status != Status::Ok {
            return self.finish(Err(fetch_error(status)));
        }
        match self.file_size {
            None => {
                if offset != 0 {
                    // chunks beyond 0 are only requested once the size is known
                    return Step::default();
                }
                let Some(d) = digest else {
                    return self.finish(Err(FetchError::Protocol("first chunk carries no digest")));
                };
                self.file_size = Some(file_size);
                self.digest = Some(d);
            }
            Some(size) if size != file_size => {
                return self.finish(Err(FetchError::Protocol("file size changed during transfer")));
            }
            Some(_) => {}
        }
        let size = file_size;
        let expect_len = size.saturating_sub(offset).min(CHUNK_SIZE as u64) as usize;
        if !offset.is_multiple_of(CHUNK_SIZE as u64) || (offset >= size && offset != 0) || data.len() != expect_len {
            return Step::default();
        }
        let mut step = Step::default();
        self.received.entry(offset).or_insert_with(|| data.to_vec());
        self.in_flight.remove(&offset);
        if self.received.len() as u64 == chunk_count(size) {
            return self.assemble();
        }
        self.refill(&mut step);
        step
    }

    fn assemble(&mut self) -> Step {
        let mut bytes = Vec::with_capacity(self.file_size.unwrap_or(0) as usize);
        for chunk in self.received.values() {
            bytes.extend_from_slice(chunk);
        }
        let actual: [u8; 32] = Sha256::digest(&bytes).into();
        if Some(actual) == self.digest {
            self.finish(Ok(bytes))
        } else {
            self.finish(Err(FetchError::ChecksumMismatch))
        }
    }

    /// Handles a chunk timer; stale timers are ignored.
    pub fn on_timeout(&mut self, timer: ChunkTimer) -> Step {
        if self.finished {
            return Step::default();
        }
        let Some(p) = self.in_flight.get_mut(&timer.offset) else {
            return Step::default();
        };
        if p.generation != timer.generation {
            return Step::default();
        }
        p.retries += 1;
        if p.retries > MAX_CHUNK_RETRIES {
            return self.finish(Err(FetchError::TooManyRetries { offset: timer.offset }));
        }
        p.generation += 1;
        self.retries_total += 1;
        Step {
            requests: vec![ChunkRequest {
                offsets: vec![timer.offset],
                copies: RETRY_COPIES,
                sends: RETRY_SENDS,
            }],
            timers: vec![ChunkTimer {
                offset: timer.offset,
                generation: p.generation,
            }],
            done: None,
        }
    }
}

fn chunk_body(session_id: u64, status: Status, offset: u64) -> Body {
    Body::FileChunk {
        session_id,
        status,
        offset,
        file_size: 0,
        digest: None,
        eof: true,
        data: Vec::new(),
    }
}

/// Answers a FILE_REQ: one FILE_CHUNK per offset, each repeated `copies`
/// times. Errors are reported in-band with a status code.
pub fn serve_file_request(sandbox: Option<&SandboxRoot>, session_id: u64, path: &str, offsets: &[u64], copies: u8) -> Vec<Body> {
    let Some(sb) = sandbox else {
        return vec![chunk_body(session_id, Status::Unavailable, offsets.first().copied().unwrap_or(0))];
    };
    let size = match sb.file_size(path) {
        Ok(s) => s,
        Err(e) => return vec![chunk_body(session_id, status_of(&e), offsets.first().copied().unwrap_or(0))],
    };
    let copies = copies.clamp(1, MAX_COPIES) as usize;
    let mut out = Vec::new();
    for &offset in offsets.iter().take(MAX_OFFSETS_PER_REQUEST) {
        let valid = offset % CHUNK_SIZE as u64 == 0 && (offset < size || offset == 0);
        if !valid {
            out.push(chunk_body(session_id, Status::BadOffset, offset));
            continue;
        }
        let digest = if offset == 0 {
            match sb.digest(path) {
                Ok((_, d)) => Some(d),
                Err(e) => {
                    out.push(chunk_body(session_id, status_of(&e), offset));
                    continue;
                }
            }
        } else {
            None
        };
        let body = match sb.read_at(path, offset, CHUNK_SIZE) {
            Ok(data) => Body::FileChunk {
                session_id,
                status: Status::Ok,
                offset,
                file_size: size,
                digest,
                eof: offset + data.len() as u64 >= size,
                data,
            },
            Err(e) => chunk_body(session_id, status_of(&e), offset),
        };
        for _ in 0..copies {
            out.push(body.clone());
        }
    }
    out
}

/// Byte budget for listing entries so a LIST_DIR_RESP stays one datagram.
const LIST_BUDGET: usize = MAX_MESSAGE_BYTES - 1024;

/// Answers a LIST_DIR_REQ. Listings that would not fit in one datagram are
/// cut short and flagged as truncated.
pub fn serve_list(sandbox: Option<&SandboxRoot>, request_id: u64, path: &str) -> Body {
    let fail = |status| Body::ListDirResp {
        request_id,
        status,
        truncated: false,
        entries: Vec::new(),
    };
    let Some(sb) = sandbox else {
        return fail(Status::Unavailable);
    };
    match sb.list_dir(path) {
        Ok(all) => {
            let mut used = 0;
            let mut entries: Vec<DirEntry> = Vec::new();
            let mut truncated = false;
            for e in all {
                let cost = 2 + e.name.len() + 1 + 8;
                if used + cost > LIST_BUDGET || entries.len() == u16::MAX as usize {
                    truncated = true;
                    break;
                }
                used += cost;
                entries.push(e);
            }
            Body::ListDirResp {
                request_id,
                status: Status::Ok,
                truncated,
                entries,
            }
        }
        Err(e) => fail(status_of(&e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(files: &[(&str, Vec<u8>)]) -> (tempfile::TempDir, SandboxRoot) {
        let d = tempfile::tempdir().unwrap();
        for (name, data) in files {
            std::fs::write(d.path().join(name), data).unwrap();
        }
        let sb = SandboxRoot::open(d.path()).unwrap();
        (d, sb)
    }

    /// Runs a session against the server helpers with a perfect channel.
    fn fetch_direct(sb: &SandboxRoot, path: &str) -> (Result<Vec<u8>, FetchError>, usize) {
        let mut s = FetchSession::new(7, NodeAddr::sim(2), path);
        let mut queue = s.start().requests;
        let mut chunks_seen = 0;
        while let Some(req) = queue.pop() {
            for body in serve_file_request(Some(sb), 7, path, &req.offsets, req.copies) {
                let Body::FileChunk { status, offset, file_size, digest, data, .. } = body else { unreachable!() };
                chunks_seen += 1;
                let step = s.on_chunk(status, offset, file_size, digest, &data);
                assert!(s.in_flight() <= FETCH_WINDOW);
                if let Some(done) = step.done {
                    return (done, chunks_seen);
                }
                queue.extend(step.requests);
            }
        }
        panic!("session stalled");
    }

    #[test]
    fn empty_file() {
        let (_d, sb) = share(&[("e.txt", vec![])]);
        let (got, n) = fetch_direct(&sb, "e.txt");
        assert_eq!(got.unwrap(), Vec::<u8>::new());
        assert_eq!(n, 1);
    }

    #[test]
    fn twenty_kib_is_three_chunks() {
        let data: Vec<u8> = (0..20 * 1024).map(|i| (i % 251) as u8).collect();
        let (_d, sb) = share(&[("f.bin", data.clone())]);
        assert_eq!(chunk_count(data.len() as u64), 3);
        let (got, n) = fetch_direct(&sb, "f.bin");
        assert_eq!(got.unwrap(), data);
        assert_eq!(n, 3);
    }

    #[test]
    fn out_of_order_and_duplicates() {
        let data: Vec<u8> = (0..40_000).map(|i| (i * 7 % 256) as u8).collect();
        let (_d, sb) = share(&[("f.bin", data.clone())]);
        let mut s = FetchSession::new(1, NodeAddr::sim(2), "f.bin");
        s.start();
        let mut bodies = serve_file_request(Some(&sb), 1, "f.bin", &[0], 1);
        let Body::FileChunk { status, offset, file_size, digest, data: d0, .. } = bodies.remove(0) else { unreachable!() };
        let step = s.on_chunk(status, offset, file_size, digest, &d0);
        let mut offsets: Vec<u64> = step.requests.iter().flat_map(|r| r.offsets.clone()).collect();
        offsets.reverse();
        let mut result = None;
        for off in offsets {
            for _ in 0..2 {
                for b in serve_file_request(Some(&sb), 1, "f.bin", &[off], 1) {
                    let Body::FileChunk { status, offset, file_size, digest, data, .. } = b else { unreachable!() };
                    if let Some(done) = s.on_chunk(status, offset, file_size, digest, &data).done {
                        result = Some(done);
                    }
                }
            }
        }
        assert_eq!(result.unwrap().unwrap(), data);
    }

    #[test]
    fn retries_then_gives_up() {
        let mut s = FetchSession::new(1, NodeAddr::sim(2), "x");
        let first = s.start();
        let mut timer = first.timers[0];
        for i in 0..MAX_CHUNK_RETRIES {
            let step = s.on_timeout(timer);
            assert_eq!(step.requests[0].copies, RETRY_COPIES, "retry {i}");
            assert_eq!(step.requests[0].sends, RETRY_SENDS);
            // a stale timer does nothing
            assert_eq!(s.on_timeout(timer), Step::default());
            timer = step.timers[0];
        }
        let step = s.on_timeout(timer);
        assert_eq!(step.done, Some(Err(FetchError::TooManyRetries { offset: 0 })));
    }

    #[test]
    fn corrupted_chunk_fails_checksum() {
        let data = vec![1u8; 10_000];
        let (_d, sb) = share(&[("f.bin", data)]);
        let mut s = FetchSession::new(1, NodeAddr::sim(2), "f.bin");
        s.start();
        let mut done = None;
        let mut queue = vec![vec![0u64]];
        while let Some(offsets) = queue.pop() {
            for b in serve_file_request(Some(&sb), 1, "f.bin", &offsets, 1) {
                let Body::FileChunk { status, offset, file_size, digest, mut data, .. } = b else { unreachable!() };
                if offset > 0 {
                    data[0] ^= 0xff;
                }
                let step = s.on_chunk(status, offset, file_size, digest, &data);
                queue.extend(step.requests.into_iter().map(|r| r.offsets));
                if step.done.is_some() {
                    done = step.done;
                }
            }
        }
        assert_eq!(done, Some(Err(FetchError::ChecksumMismatch)));
    }

    #[test]
    fn server_statuses() {
        let (_d, sb) = share(&[("a.txt", b"hi".to_vec())]);
        let status = |p: &str, off: u64| match &serve_file_request(Some(&sb), 1, p, &[off], 1)[0] {
            Body::FileChunk { status, .. } => *status,
            _ => unreachable!(),
        };
        assert_eq!(status("missing", 0), Status::NotFound);
        assert_eq!(status("../a.txt", 0), Status::OutsideSandbox);
        assert_eq!(status("a.txt", 3), Status::BadOffset);
        assert_eq!(status("a.txt", CHUNK_SIZE as u64), Status::BadOffset);
        assert_eq!(status("a.txt", 0), Status::Ok);
        assert_eq!(serve_file_request(Some(&sb), 1, "a.txt", &[0], 3).len(), 3);
        match serve_file_request(None, 1, "a.txt", &[0], 1).remove(0) {
            Body::FileChunk { status, .. } => assert_eq!(status, Status::Unavailable),
            _ => unreachable!(),
        }
    }

    #[test]
    fn listing() {
        let (_d, sb) = share(&[("b.txt", b"bb".to_vec()), ("a.txt", b"a".to_vec())]);
        let Body::ListDirResp { status, entries, truncated, .. } = serve_list(Some(&sb), 3, "") else { unreachable!() };
        assert_eq!(status, Status::Ok);
        assert!(!truncated);
        let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a.txt", "b.txt"]);
        let Body::ListDirResp { status, .. } = serve_list(Some(&sb), 3, "../etc") else { unreachable!() };
        assert_eq!(list_error(status), ListError::OutsideSandbox);
    }
}
