//! The command-line surface: exit statuses and diagnostics.

use std::process::Command;

fn sp2p() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sp2p"))
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = sp2p().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("node.toml");
    std::fs::write(
        &path,
        "node_id = 3\nbind = \"127.0.0.1:0\"\ndomain = \"education.os\"\nsandbox = \".\"\n",
    )
    .unwrap();
    let out = sp2p().args(["start", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("field `domain`"), "{err}");
}

#[test]
fn malformed_query_is_a_usage_error() {
    let out = sp2p().args(["query", "no at sign", "--node", "127.0.0.1:9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn silent_peer_times_out() {
    // nothing listens on the discard port of a fresh socket
    let sock = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let ep = sock.local_addr().unwrap().to_string();
    drop(sock);
    let out = sp2p().args(["ls", &ep]).output().unwrap();
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn sim_subcommand_runs_a_script() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("net.toml");
    std::fs::write(
        &path,
        r#"
seed = 7

[[node]]
id = 1
domain = "all.cs"
docs = { "a.txt" = "windows internals" }

[[node]]
id = 2
domain = "all.math"

[[query]]
origin = 2
input = "windows@all.cs"
at = 10
"#,
    )
    .unwrap();
    let trace = tmp.path().join("trace.txt");
    let out = sp2p().args(["sim", "--config"]).arg(&path).arg("--trace").arg(&trace).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("a.txt"), "{stdout}");
    assert!(std::fs::read_to_string(&trace).unwrap().contains("SERVE"));
}
