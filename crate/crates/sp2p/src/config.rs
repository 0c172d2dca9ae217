//! Daemon configuration file.
//!
//! ```toml
//! node_id = 17
//! bind = "0.0.0.0:4000"
//! domain = "all.education.operating systems"
//! bootstrap = "10.0.0.1:4000"   # omit to found a new network
//! sandbox = "/srv/share"
//! n_tuple = 2
//! cache = "lru"                 # or "mind"
//! capacity = 32
//! ttl = 16
//! deadline_ms = 2000
//! probe_interval_ms = 10000     # 0 disables liveness probes
//! index_cache = "/var/lib/sp2p/index.sidx"
//! rescan_interval_ms = 0        # 0 disables periodic reindexing
//! ```
//!
//! `SP2P_BIND` and `SP2P_SANDBOX` override `bind` and `sandbox`.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sp2p_core::domain::{parse_domain_path, DomainPath};
use sp2p_core::overlay::CachePolicy;
use sp2p_core::wire::MAX_TTL;
use thiserror::Error;

pub const ENV_BIND: &str = "SP2P_BIND";
pub const ENV_SANDBOX: &str = "SP2P_SANDBOX";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    node_id: Option<u64>,
    bind: Option<String>,
    domain: Option<String>,
    bootstrap: Option<String>,
    sandbox: Option<PathBuf>,
    n_tuple: Option<i64>,
    cache: Option<String>,
    capacity: Option<i64>,
    ttl: Option<i64>,
    deadline_ms: Option<i64>,
    probe_interval_ms: Option<i64>,
    index_cache: Option<PathBuf>,
    rescan_interval_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub node_id: u64,
    pub bind: SocketAddr,
    pub domain: DomainPath,
    pub bootstrap: Option<String>,
    pub sandbox: PathBuf,
    pub n_tuple: usize,
    pub policy: CachePolicy,
    pub capacity: usize,
    pub ttl: u8,
    pub deadline_ms: u64,
    pub probe_interval_ms: Option<u64>,
    pub index_cache: Option<PathBuf>,
    pub rescan_interval_ms: Option<u64>,
}

fn ranged(name: &'static str, v: Option<i64>, default: i64, lo: i64, hi: i64) -> Result<i64, ConfigError> {
    let v = v.unwrap_or(default);
    if v < lo || v > hi {
        return Err(field(name, format!("{v} is outside {lo}..={hi}")));
    }
    Ok(v)
}

fn resolve(name: &'static str, s: &str) -> Result<SocketAddr, ConfigError> {
    s.to_socket_addrs()
        .map_err(|e| field(name, format!("\"{s}\": {e}")))?
        .next()
        .ok_or_else(|| field(name, format!("\"{s}\" resolves to no address")))
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let env = |k: &str| std::env::var(k).ok();
        NodeConfig::parse(&text, base, env)
    }

    /// Parses and validates config text. Relative paths are taken
    /// relative to `base`; `env` supplies override variables.
    pub fn parse(text: &str, base: &Path, env: impl Fn(&str) -> Option<String>) -> Result<NodeConfig, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let node_id = raw.node_id.ok_or_else(|| field("node_id", "missing"))?;
        if node_id == 0 {
            return Err(field("node_id", "0 is reserved"));
        }
        let bind_text = env(ENV_BIND).or(raw.bind).ok_or_else(|| field("bind", "missing"))?;
        let bind = resolve("bind", &bind_text)?;
        let domain_text = raw.domain.ok_or_else(|| field("domain", "missing"))?;
        let domain = parse_domain_path(&domain_text).map_err(|e| field("domain", e.to_string()))?;
        if let Some(b) = &raw.bootstrap {
            resolve("bootstrap", b)?;
        }
        let sandbox = env(ENV_SANDBOX)
            .map(PathBuf::from)
            .or(raw.sandbox)
            .ok_or_else(|| field("sandbox", "missing"))?;
        let sandbox = base.join(sandbox);
        if !sandbox.is_dir() {
            return Err(field("sandbox", format!("{} is not an existing directory", sandbox.display())));
        }
        let policy = match raw.cache.as_deref() {
            None => CachePolicy::default(),
            Some(s) => s.parse().map_err(|e: String| field("cache", e))?,
        };
        let opt = |v: i64| if v == 0 { None } else { Some(v as u64) };
        Ok(NodeConfig {
            node_id,
            bind,
            domain,
            bootstrap: raw.bootstrap,
            sandbox,
            n_tuple: ranged("n_tuple", raw.n_tuple, 2, 1, 16)? as usize,
            policy,
            capacity: ranged("capacity", raw.capacity, 32, 0, 4096)? as usize,
            ttl: ranged("ttl", raw.ttl, 16, 1, MAX_TTL as i64)? as u8,
            deadline_ms: ranged("deadline_ms", raw.deadline_ms, 2000, 1, 600_000)? as u64,
            probe_interval_ms: opt(ranged("probe_interval_ms", raw.probe_interval_ms, 10_000, 0, 3_600_000)?),
            index_cache: raw.index_cache.map(|p| base.join(p)),
            rescan_interval_ms: opt(ranged("rescan_interval_ms", raw.rescan_interval_ms, 0, 0, 86_400_000)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, env: &[(&str, &str)]) -> Result<NodeConfig, ConfigError> {
        let dir = std::env::temp_dir();
        let env: Vec<(String, String)> = env.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        NodeConfig::parse(text, &dir, move |k| env.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone()))
    }

    const GOOD: &str = r#"
        node_id = 5
        bind = "127.0.0.1:0"
        domain = "all.cs"
        sandbox = "."
    "#;

    #[test]
    fn defaults() {
        let c = parse(GOOD, &[]).unwrap();
        assert_eq!(c.n_tuple, 2);
        assert_eq!(c.capacity, 32);
        assert_eq!(c.ttl, 16);
        assert_eq!(c.deadline_ms, 2000);
        assert_eq!(c.policy, CachePolicy::Lru);
        assert_eq!(c.bootstrap, None);
        assert_eq!(c.probe_interval_ms, Some(10_000));
    }

    #[test]
    fn field_specific_errors() {
        let err = |text: &str| match parse(text, &[]) {
            Err(ConfigError::Field { field, .. }) => field,
            other => panic!("expected field error, got {other:?}"),
        };
        assert_eq!(err(&GOOD.replace("all.cs", "edu.cs")), "domain");
        assert_eq!(err(&GOOD.replace("node_id = 5", "node_id = 0")), "node_id");
        assert_eq!(err(&format!("{GOOD}\nttl = 65")), "ttl");
        assert_eq!(err(&format!("{GOOD}\ncache = \"fifo\"")), "cache");
        assert_eq!(err(&GOOD.replace("sandbox = \".\"", "sandbox = \"/definitely/missing\"")), "sandbox");
        assert_eq!(err(&GOOD.replace("127.0.0.1:0", "nonsense")), "bind");
        assert!(matches!(parse("node_id = [", &[]), Err(ConfigError::Syntax(_))));
        assert!(matches!(parse(&format!("{GOOD}\nbogus = 1"), &[]), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn env_overrides() {
        let tmp = tempfile::tempdir().unwrap();
        let sb = tmp.path().to_str().unwrap();
        let c = parse(GOOD, &[(ENV_BIND, "127.0.0.1:4555"), (ENV_SANDBOX, sb)]).unwrap();
        assert_eq!(c.bind.port(), 4555);
        assert_eq!(c.sandbox, PathBuf::from(sb));
    }
}
