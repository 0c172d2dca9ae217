use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{DirEntry, EntryKind};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox root {0} does not exist or is not a directory")]
    RootMissing(PathBuf),
    #[error("path \"{0}\" escapes the sandbox")]
    OutsideSandbox(String),
    #[error("path \"{0}\" not found")]
    NotFound(String),
    #[error("path \"{0}\" is not a regular file")]
    NotAFile(String),
    #[error("path \"{0}\" is not a directory")]
    NotADirectory(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The only directory subtree a node indexes and serves.
///
/// Every path handed out by this type has been canonicalized (symbolic
/// links resolved) and checked to lie under the canonical root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxRoot {
    root: PathBuf,
}

impl SandboxRoot {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SandboxError> {
        let path = path.as_ref();
        let root = path
            .canonicalize()
            .map_err(|_| SandboxError::RootMissing(path.to_path_buf()))?;
        if !root.is_dir() {
            return Err(SandboxError::RootMissing(path.to_path_buf()));
        }
        Ok(SandboxRoot { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// True iff an already-canonical path lies under the root.
    pub fn contains(&self, canonical: &Path) -> bool {
        canonical.starts_with(&self.root)
    }

    /// Resolves a sandbox-relative path ("" and "/" both mean the root).
    ///
    /// Any `..` component is rejected outright; the joined path is then
    /// canonicalized and must still be under the root.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, SandboxError> {
        let mut joined = self.root.clone();
        for part in rel.split(['/', '\\']) {
            match part {
                "" | "." => {}
                ".." => return Err(SandboxError::OutsideSandbox(rel.to_string())),
                p => {
                    // reject things like "C:" that would reset the path
                    if Path::new(p).components().any(|c| !matches!(c, Component::Normal(_))) {
                        return Err(SandboxError::OutsideSandbox(rel.to_string()));
                    }
                    joined.push(p);
                }
            }
        }
        let canonical = match joined.canonicalize() {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                // a dangling link may still point outside; report that first
                if std::fs::symlink_metadata(&joined).is_ok() {
                    return Err(SandboxError::OutsideSandbox(rel.to_string()));
                }
                return Err(SandboxError::NotFound(rel.to_string()));
            }
            Err(e) => return Err(e.into()),
        };
        if !self.contains(&canonical) {
            return Err(SandboxError::OutsideSandbox(rel.to_string()));
        }
        Ok(canonical)
    }

    /// Sandbox-relative, '/'-separated form of a path under the root.
    pub fn relative(&self, path: &Path) -> Option<String> {
        let rel = path.strip_prefix(&self.root).ok()?;
        let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
        Some(parts?.join("/"))
    }

    /// Entries of a sandbox directory sorted by name. Links that resolve
    /// outside the sandbox (or nowhere) are omitted.
    pub fn list_dir(&self, rel: &str) -> Result<Vec<DirEntry>, SandboxError> {
        let dir = self.resolve(rel)?;
        if !dir.is_dir() {
            return Err(SandboxError::NotADirectory(rel.to_string()));
        }
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let Ok(name) = entry.file_name().into_string() else {
                continue;
            };
            let Ok(target) = entry.path().canonicalize() else {
                continue;
            };
            if !self.contains(&target) {
                continue;
            }
            let Ok(meta) = std::fs::metadata(&target) else {
                continue;
            };
            let (kind, size) = if meta.is_dir() {
                (EntryKind::Dir, 0)
            } else if meta.is_file() {
                (EntryKind::File, meta.len())
            } else {
                continue;
            };
            out.push(DirEntry { name, kind, size });
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    fn open_file(&self, rel: &str) -> Result<File, SandboxError> {
        let path = self.resolve(rel)?;
        if !path.is_file() {
            return Err(SandboxError::NotAFile(rel.to_string()));
        }
        Ok(File::open(path)?)
    }

    pub fn file_size(&self, rel: &str) -> Result<u64, SandboxError> {
        Ok(self.open_file(rel)?.metadata()?.len())
    }

    /// Reads up to `len` bytes at `offset`.
    pub fn read_at(&self, rel: &str, offset: u64, len: usize) -> Result<Vec<u8>, SandboxError> {
        let mut f = self.open_file(rel)?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = Vec::with_capacity(len);
        f.take(len as u64).read_to_end(&mut buf)?;
        Ok(buf)
    }

    pub fn read_all(&self, rel: &str) -> Result<Vec<u8>, SandboxError> {
        let mut buf = Vec::new();
        self.open_file(rel)?.read_to_end(&mut buf)?;
        Ok(buf)
    }

    /// File size and SHA-256 of the whole file.
    pub fn digest(&self, rel: &str) -> Result<(u64, [u8; 32]), SandboxError> {
        let mut f = self.open_file(rel)?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        let mut total = 0u64;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            total += n as u64;
            hasher.update(&buf[..n]);
        }
        Ok((total, hasher.finalize().into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, SandboxRoot) {
        let outer = tempfile::tempdir().unwrap();
        let root = outer.path().join("share");
        std::fs::create_dir_all(root.join("docs")).unwrap();
        std::fs::write(root.join("b.txt"), "bee").unwrap();
        std::fs::write(root.join("a.txt"), "ay").unwrap();
        std::fs::write(outer.path().join("secret.txt"), "secret").unwrap();
        let sb = SandboxRoot::open(&root).unwrap();
        (outer, sb)
    }

    #[test]
    fn lists_root_sorted() {
        let (_d, sb) = fixture();
        let names: Vec<String> = sb.list_dir("").unwrap().into_iter().map(|e| e.name).collect();
        assert_eq!(names, ["a.txt", "b.txt", "docs"]);
        assert_eq!(sb.list_dir("/").unwrap().len(), 3);
    }

    #[test]
    fn dotdot_rejected() {
        let (_d, sb) = fixture();
        assert!(matches!(sb.resolve("../etc"), Err(SandboxError::OutsideSandbox(_))));
        assert!(matches!(sb.resolve("docs/../../secret.txt"), Err(SandboxError::OutsideSandbox(_))));
        assert!(matches!(sb.list_dir("../"), Err(SandboxError::OutsideSandbox(_))));
        assert!(matches!(sb.read_all("../secret.txt"), Err(SandboxError::OutsideSandbox(_))));
    }

    #[test]
    fn absolute_paths_are_sandbox_relative() {
        let (_d, sb) = fixture();
        assert_eq!(sb.read_all("/a.txt").unwrap(), b"ay");
        assert!(matches!(sb.read_all("/etc/passwd"), Err(SandboxError::NotFound(_))));
    }

    #[cfg(unix)]
    #[test]
    fn escaping_symlinks_rejected() {
        let (d, sb) = fixture();
        std::os::unix::fs::symlink(d.path().join("secret.txt"), sb.path().join("link.txt")).unwrap();
        std::os::unix::fs::symlink(d.path(), sb.path().join("up")).unwrap();
        std::os::unix::fs::symlink(sb.path().join("a.txt"), sb.path().join("inside.txt")).unwrap();
        assert!(matches!(sb.read_all("link.txt"), Err(SandboxError::OutsideSandbox(_))));
        assert!(matches!(sb.read_all("up/secret.txt"), Err(SandboxError::OutsideSandbox(_))));
        assert_eq!(sb.read_all("inside.txt").unwrap(), b"ay");
        let names: Vec<String> = sb.list_dir("").unwrap().into_iter().map(|e| e.name).collect();
        assert_eq!(names, ["a.txt", "b.txt", "docs", "inside.txt"]);
    }

    #[test]
    fn reads_and_digest() {
        let (_d, sb) = fixture();
        assert_eq!(sb.read_at("b.txt", 1, 10).unwrap(), b"ee");
        assert_eq!(sb.read_at("b.txt", 10, 10).unwrap(), b"");
        let (size, digest) = sb.digest("b.txt").unwrap();
        assert_eq!(size, 3);
        assert_eq!(digest, <[u8; 32]>::from(Sha256::digest(b"bee")));
        assert!(matches!(sb.read_all("docs"), Err(SandboxError::NotAFile(_))));
        assert!(matches!(sb.list_dir("a.txt"), Err(SandboxError::NotADirectory(_))));
    }
}
