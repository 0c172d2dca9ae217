//! On-disk index cache.
//!
//! ```text
//! "SIDX" | version:u8 | fingerprint:[u8;32]
//! | docs:u32 | { rel_path:str size:u64 token_count:u32 mtime:u64 snippet:str }*
//! | terms:u32 | { term:str postings:u32 { doc_id:u32 tf:u32 }* }*
//! | sha256(all preceding bytes):[u8;32]
//! ```
//!
//! Integers are big-endian and strings are `u16`-length-prefixed UTF-8,
//! as on the wire. The fingerprint hashes the sandbox listing (path, size,
//! mtime); a cache whose fingerprint or checksum does not match is rebuilt.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::extract::ExtractorRegistry;
use super::index::{file_mtime, index_directory, walk_files, DocRecord, IndexError, IndexReport, InvertedIndex, Posting};
use super::sandbox::SandboxRoot;

pub const CACHE_MAGIC: &[u8; 4] = b"SIDX";
pub const CACHE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index cache is corrupt: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Hash of the sandbox listing used to detect a stale cache.
pub fn tree_fingerprint(root: &SandboxRoot) -> [u8; 32] {
    let mut report = IndexReport::default();
    let mut h = Sha256::new();
    for (rel, _, meta) in walk_files(root, &mut report) {
        h.update((rel.len() as u64).to_be_bytes());
        h.update(rel.as_bytes());
        h.update(meta.len().to_be_bytes());
        h.update(file_mtime(&meta).to_be_bytes());
    }
    h.finalize().into()
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    let n = bytes.len().min(u16::MAX as usize);
    buf.extend_from_slice(&(n as u16).to_be_bytes());
    buf.extend_from_slice(&bytes[..n]);
}

/// Serializes an index; deterministic for equal inputs.
pub fn serialize(index: &InvertedIndex, fingerprint: &[u8; 32]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.push(CACHE_VERSION);
    buf.extend_from_slice(fingerprint);
    buf.extend_from_slice(&(index.doc_count() as u32).to_be_bytes());
    for d in index.docs() {
        put_str(&mut buf, &d.rel_path);
        buf.extend_from_slice(&d.size.to_be_bytes());
        buf.extend_from_slice(&d.token_count.to_be_bytes());
        buf.extend_from_slice(&d.mtime.to_be_bytes());
        put_str(&mut buf, &d.snippet);
    }
    let terms: Vec<_> = index.terms().collect();
    buf.extend_from_slice(&(terms.len() as u32).to_be_bytes());
    for (term, list) in terms {
        put_str(&mut buf, term);
        buf.extend_from_slice(&(list.len() as u32).to_be_bytes());
        for p in list {
            buf.extend_from_slice(&p.doc_id.to_be_bytes());
            buf.extend_from_slice(&p.tf.to_be_bytes());
        }
    }
    let sum: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&sum);
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.buf.len() - self.pos < n {
            return Err(PersistError::Corrupt("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, PersistError> {
        let n = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PersistError::Corrupt("bad utf-8"))
    }
}

/// Parses a cache file, verifying magic, version and checksum.
pub fn deserialize(bytes: &[u8]) -> Result<(InvertedIndex, [u8; 32]), PersistError> {
    if bytes.len() < 4 + 1 + 32 + 32 {
        return Err(PersistError::Corrupt("truncated"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    let expect: [u8; 32] = Sha256::digest(body).into();
    if expect.as_slice() != sum {
        return Err(PersistError::Corrupt("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4)? != CACHE_MAGIC {
        return Err(PersistError::Corrupt("bad magic"));
    }
    if c.take(1)?[0] != CACHE_VERSION {
        return Err(PersistError::Corrupt("unsupported version"));
    }
    let fingerprint: [u8; 32] = c.take(32)?.try_into().unwrap();
    let ndocs = c.u32()?;
    let mut docs = Vec::new();
    for doc_id in 0..ndocs {
        docs.push(DocRecord {
            doc_id,
            rel_path: c.str()?,
            size: c.u64()?,
            token_count: c.u32()?,
            mtime: c.u64()?,
            snippet: c.str()?,
        });
    }
    let nterms = c.u32()?;
    let mut postings = BTreeMap::new();
    for _ in 0..nterms {
        let term = c.str()?;
        let n = c.u32()?;
        let mut list = Vec::new();
        let mut last = None;
        for _ in 0..n {
            let p = Posting {
                doc_id: c.u32()?,
                tf: c.u32()?,
            };
            if p.doc_id >= ndocs || p.tf == 0 || last.is_some_and(|l| l >= p.doc_id) {
                return Err(PersistError::Corrupt("invalid posting"));
            }
            last = Some(p.doc_id);
            list.push(p);
        }
        postings.insert(term, list);
    }
    if c.pos != body.len() {
        return Err(PersistError::Corrupt("trailing bytes"));
    }
    Ok((InvertedIndex::from_parts(docs, postings), fingerprint))
}

/// Writes the cache atomically: a temporary sibling file is renamed over
/// the destination, so readers see either the old or the new file.
pub fn write_index(path: &Path, index: &InvertedIndex, fingerprint: &[u8; 32]) -> Result<(), PersistError> {
    let bytes = serialize(index, fingerprint);
    let tmp = path.with_extension("sidx.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<(InvertedIndex, [u8; 32]), PersistError> {
    deserialize(&std::fs::read(path)?)
}

/// Loads a verified, up-to-date cache or rebuilds (and rewrites) it.
/// The flag is true when the cache was used.
pub fn load_or_build(
    root: &SandboxRoot,
    registry: &ExtractorRegistry,
    cache: Option<&Path>,
) -> Result<(InvertedIndex, IndexReport, bool), PersistError> {
    let fingerprint = tree_fingerprint(root);
    if let Some(path) = cache {
        match read_index(path) {
            Ok((index, fp)) if fp == fingerprint => {
                let report = IndexReport {
                    indexed: index.doc_count(),
                    ..IndexReport::default()
                };
                return Ok((index, report, true));
            }
            Ok(_) => log::info!("index cache {} is stale, rebuilding", path.display()),
            Err(PersistError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => log::warn!("ignoring index cache {}: {e}", path.display()),
        }
    }
    let (index, report) = index_directory(root, registry)?;
    if let Some(path) = cache {
        write_index(path, &index, &fingerprint)?;
    }
    Ok((index, report, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> (tempfile::TempDir, SandboxRoot) {
        let d = tempfile::tempdir().unwrap();
        let root = d.path().join("share");
        std::fs::create_dir_all(root.join("sub")).unwrap();
        std::fs::write(root.join("a.txt"), "alpha beta beta").unwrap();
        std::fs::write(root.join("sub/b.html"), "<b>beta</b> gamma").unwrap();
        let sb = SandboxRoot::open(&root).unwrap();
        (d, sb)
    }

    #[test]
    fn serialization_round_trips_and_is_deterministic() {
        let (_d, sb) = corpus();
        let reg = ExtractorRegistry::default();
        let (a, _) = index_directory(&sb, &reg).unwrap();
        let (b, _) = index_directory(&sb, &reg).unwrap();
        let fp = tree_fingerprint(&sb);
        assert_eq!(serialize(&a, &fp), serialize(&b, &fp));
        let (back, fp2) = deserialize(&serialize(&a, &fp)).unwrap();
        assert_eq!(back, a);
        assert_eq!(fp2, fp);
    }

    #[test]
    fn corrupt_cache_triggers_rebuild() {
        let (d, sb) = corpus();
        let reg = ExtractorRegistry::default();
        let cache = d.path().join("index.sidx");
        let (fresh, _, loaded) = load_or_build(&sb, &reg, Some(&cache)).unwrap();
        assert!(!loaded);
        let (again, _, loaded) = load_or_build(&sb, &reg, Some(&cache)).unwrap();
        assert!(loaded);
        assert_eq!(again, fresh);

        // a write cut short leaves a truncated file behind
        let bytes = std::fs::read(&cache).unwrap();
        std::fs::write(&cache, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_index(&cache), Err(PersistError::Corrupt(_))));
        let (rebuilt, _, loaded) = load_or_build(&sb, &reg, Some(&cache)).unwrap();
        assert!(!loaded);
        assert_eq!(rebuilt, fresh);
        assert!(read_index(&cache).is_ok());

        let mut bytes = std::fs::read(&cache).unwrap();
        bytes[10] ^= 1;
        std::fs::write(&cache, &bytes).unwrap();
        assert!(matches!(read_index(&cache), Err(PersistError::Corrupt("checksum mismatch"))));
    }

    #[test]
    fn stale_cache_rebuilt() {
        let (d, sb) = corpus();
        let reg = ExtractorRegistry::default();
        let cache = d.path().join("index.sidx");
        load_or_build(&sb, &reg, Some(&cache)).unwrap();
        std::fs::write(sb.path().join("c.txt"), "delta").unwrap();
        let (ix, _, loaded) = load_or_build(&sb, &reg, Some(&cache)).unwrap();
        assert!(!loaded);
        assert_eq!(ix.doc_count(), 3);
    }
}
