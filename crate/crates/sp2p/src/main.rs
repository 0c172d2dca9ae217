use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sp2p::client::Client;
use sp2p::config::NodeConfig;
use sp2p::daemon::{self, DaemonError};
use sp2p::{exit, fetch_exit_code, format_listing, format_report, list_exit_code, JsonReport};
use sp2p_core::node::Completion;
use sp2p_core::query::parse_query;
use sp2p_core::search::{load_or_build, ExtractorRegistry, SandboxRoot};
use sp2p_core::sim::{trace_text, SimConfig, Simulation};
use sp2p_core::wire::QueryMode;

#[derive(Parser)]
#[command(name = "sp2p", version, about = "Domain-scoped peer-to-peer search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a node until killed.
    #[command(alias = "join")]
    Start {
        #[arg(long)]
        config: PathBuf,
    },
    /// Search, e.g. `sp2p query "windows 10@all.education"`.
    Query {
        input: String,
        /// Node to send the query through.
        #[arg(long, env = "SP2P_NODE", default_value = "127.0.0.1:4000")]
        node: String,
        /// Require every keyword.
        #[arg(long)]
        and: bool,
        /// Maximum hits per responding node.
        #[arg(long, default_value_t = 10)]
        k: u16,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
        #[arg(long)]
        json: bool,
    },
    /// Download a file from a peer.
    Fetch {
        /// Peer endpoint, host:port.
        peer: String,
        path: String,
        /// Output file; defaults to the file's name in the current directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List a directory on a peer.
    Ls {
        peer: String,
        #[arg(default_value = "/")]
        path: String,
    },
    /// Rebuild the index cache of a node configuration offline.
    Reindex {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scripted network in the simulator.
    Sim {
        #[arg(long)]
        config: PathBuf,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("sp2p: {msg}");
    code
}

fn load_config(path: &Path) -> Result<NodeConfig, i32> {
    NodeConfig::load(path).map_err(|e| fail(exit::CONFIG, format!("{}: {e}", path.display())))
}

fn run_start(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match daemon::start(cfg) {
        Ok(handle) => {
            log::info!("node {} serving on {}", handle.addr().node, handle.endpoint());
            match handle.wait() {
                Ok(()) => exit::OK,
                Err(e) => fail(exit::NETWORK, e),
            }
        }
        Err(e @ (DaemonError::BindFailed { .. } | DaemonError::JoinFailed(_) | DaemonError::Io(_))) => {
            fail(exit::NETWORK, e)
        }
        Err(e @ DaemonError::Sandbox(_)) => fail(exit::CONFIG, e),
        Err(e) => fail(exit::OTHER, e),
    }
}

fn run_query(input: &str, node: &str, and: bool, k: u16, timeout_ms: u64, json: bool) -> i32 {
    let q = match parse_query(input) {
        Ok(q) => q.with_k(k).with_mode(if and { QueryMode::And } else { QueryMode::Or }),
        Err(e) => return fail(exit::USAGE, e),
    };
    let mut client = match Client::connect(node, timeout_ms) {
        Ok(c) => c,
        Err(e) => return fail(exit::NETWORK, format!("{node}: {e}")),
    };
    let report = match client.query(&q) {
        Ok(r) => r,
        Err(e) => return fail(exit::NETWORK, e),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&JsonReport::from(&report)).expect("serializable"));
    } else if !report.hits.is_empty() {
        print!("{}", format_report(&report));
    }
    match report.into_result() {
        Ok(_) => exit::OK,
        Err(e) => fail(exit::NO_RESULTS, e),
    }
}

fn run_fetch(peer: &str, path: &str, output: Option<PathBuf>) -> i32 {
    let out = output.unwrap_or_else(|| {
        let name = path.rsplit('/').find(|s| !s.is_empty()).unwrap_or("download");
        PathBuf::from(name)
    });
    let mut client = match Client::connect(peer, 2000) {
        Ok(c) => c,
        Err(e) => return fail(exit::NETWORK, format!("{peer}: {e}")),
    };
    match client.fetch(peer, path) {
        Err(e) => fail(exit::NETWORK, e),
        Ok(Err(e)) => fail(fetch_exit_code(&e), e),
        Ok(Ok(bytes)) => match std::fs::write(&out, &bytes) {
            Ok(()) => {
                eprintln!("{} bytes written to {} (SHA-256 verified)", bytes.len(), out.display());
                exit::OK
            }
            Err(e) => fail(exit::OTHER, format!("{}: {e}", out.display())),
        },
    }
}

fn run_ls(peer: &str, path: &str) -> i32 {
    let mut client = match Client::connect(peer, 2000) {
        Ok(c) => c,
        Err(e) => return fail(exit::NETWORK, format!("{peer}: {e}")),
    };
    match client.list(peer, path) {
        Err(e) => fail(exit::NETWORK, e),
        Ok(Err(e)) => fail(list_exit_code(&e), e),
        Ok(Ok((entries, truncated))) => {
            print!("{}", format_listing(&entries, truncated));
            exit::OK
        }
    }
}

fn run_reindex(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let root = match SandboxRoot::open(&cfg.sandbox) {
        Ok(r) => r,
        Err(e) => return fail(exit::CONFIG, e),
    };
    if let Some(cache) = &cfg.index_cache {
        // force a rebuild
        let _ = std::fs::remove_file(cache);
    }
    match load_or_build(&root, &ExtractorRegistry::default(), cfg.index_cache.as_deref()) {
        Ok((index, report, _)) => {
            println!("indexed {} documents, {} distinct terms", index.doc_count(), index.terms().count());
            println!("skipped {} unsupported files", report.unsupported);
            for link in &report.escaping {
                println!("skipped link leaving the sandbox: {link}");
            }
            for (path, err) in &report.failed {
                println!("failed: {path}: {err}");
            }
            if let Some(cache) = &cfg.index_cache {
                println!("cache written to {}", cache.display());
            }
            exit::OK
        }
        Err(e) => fail(exit::OTHER, e),
    }
}

fn run_sim(config: &Path, trace: Option<PathBuf>) -> i32 {
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return fail(exit::CONFIG, format!("{}: {e}", config.display())),
    };
    let base = config.parent().unwrap_or(Path::new("."));
    let (cfg, script) = match SimConfig::from_toml(&text, base) {
        Ok(v) => v,
        Err(e) => return fail(exit::CONFIG, e),
    };
    let mut sim = match Simulation::build(cfg) {
        Ok(s) => s,
        Err(e) => return fail(exit::OTHER, e),
    };
    sim.clear_trace();
    sim.schedule(&script);
    let result = sim.run_until_quiescent(script.max_ticks).map(|_| ());
    if let Some(path) = trace {
        if let Err(e) = std::fs::write(&path, trace_text(sim.trace())) {
            return fail(exit::OTHER, format!("{}: {e}", path.display()));
        }
    }
    for (node, c) in sim.completions() {
        match c {
            Completion::Query { report, .. } => {
                println!("query {} from node {}:", report.query_id, node);
                print!("{}", format_report(report));
            }
            Completion::PeerFailed(p) => println!("node {node} declared {p} failed"),
            _ => {}
        }
    }
    let stats = sim.stats();
    println!(
        "ticks {}  sends {}  drops {}  route forwards {}  root transits {}",
        sim.now(),
        stats.sends,
        stats.drops,
        stats.route_forwards,
        stats.root_transits
    );
    match result {
        Ok(()) => exit::OK,
        Err(e) => fail(exit::OTHER, e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Start { .. }) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    let code = match cli.command {
        Command::Start { config } => run_start(&config),
        Command::Query {
            input,
            node,
            and,
            k,
            timeout_ms,
            json,
        } => run_query(&input, &node, and, k, timeout_ms, json),
        Command::Fetch { peer, path, output } => run_fetch(&peer, &path, output),
        Command::Ls { peer, path } => run_ls(&peer, &path),
        Command::Reindex { config } => run_reindex(&config),
        Command::Sim { config, trace } => run_sim(&config, trace),
    };
    ExitCode::from(code as u8)
}
