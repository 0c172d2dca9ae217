use std::collections::BTreeSet;

use sp2p_core::domain::{parse_domain_path, DomainPath};
use sp2p_core::node::Completion;
use sp2p_core::query::parse_query;
use sp2p_core::sim::{
    assert_trace, at_most_once_serve, build_network, hop_bound, monotone_ticks, no_loop, servers_of, trace_text,
    SimConfig, SimNodeSpec, Simulation, TraceKind,
};
use sp2p_core::wire::NodeId;

fn d(s: &str) -> DomainPath {
    parse_domain_path(s).unwrap()
}

const BUDGET: u64 = 50_000_000;

/// Runs one query to completion and returns (responders, query msg id).
fn run(sim: &mut Simulation, origin: NodeId, input: &str) -> (BTreeSet<NodeId>, u64) {
    let qid = sim.inject_query(origin, input).unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let report = sim.query_report(origin, qid).expect("query closed");
    (report.responders.iter().copied().collect(), qid)
}

fn fig1() -> SimConfig {
    // three leaf groups under one parent, two-tuple gateways
    let mut cfg = SimConfig {
        seed: 1,
        ..SimConfig::default()
    };
    let leaves = ["all.edu.os", "all.edu.db", "all.edu.net"];
    let mut id = 1;
    for (i, leaf) in leaves.iter().enumerate() {
        for _ in 0..=i + 1 {
            cfg.nodes.push(SimNodeSpec::new(id * 7 % 97, d(leaf)));
            id += 1;
        }
    }
    cfg
}

#[test]
fn fig1_leaf_groups_expose_min_two_gateways() {
    let sim = build_network(fig1()).unwrap();
    for leaf in ["all.edu.os", "all.edu.db", "all.edu.net"] {
        let members = sim.members_at(&d(leaf));
        let expect: Vec<NodeId> = members.iter().copied().take(2).collect();
        // every node outside the leaf sees exactly those gateways
        for id in sim.node_ids() {
            if members.contains(&id) {
                continue;
            }
            let g = sim.node(id).unwrap().table().group(&d(leaf)).expect("group known");
            let got: Vec<NodeId> = g.gateways.iter().map(|p| p.id()).collect();
            assert_eq!(got, expect, "view of {leaf} at node {id}");
        }
    }
}

#[test]
fn paper_query_gets_three_results() {
    let target = "all.education.undergraduated course.operating systems";
    let mut cfg = SimConfig::default();
    for id in [11, 12, 13] {
        let mut spec = SimNodeSpec::new(id, d(target));
        spec.docs.push((format!("w{id}.txt"), "windows 10 internals".into()));
        cfg.nodes.push(spec);
    }
    cfg.nodes.push(SimNodeSpec::new(4, d("all.science.math")));
    cfg.nodes.push(SimNodeSpec::new(5, d("all.education.graduate")));
    let mut sim = build_network(cfg).unwrap();
    sim.clear_trace();
    let qid = sim.inject_query(NodeId(4), &format!("Windows 10@{target}")).unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let results = sim
        .trace()
        .iter()
        .filter(|e| e.kind == TraceKind::Deliver && e.tag == sp2p_core::wire::tag::RESULT && e.dst == NodeId(4))
        .count();
    assert_eq!(results, 3);
    let report = sim.query_report(NodeId(4), qid).unwrap();
    assert_eq!(report.responders, [NodeId(11), NodeId(12), NodeId(13)]);
    assert_eq!(report.hits.len(), 3);
}

#[test]
fn completeness_and_audits_on_random_network() {
    let mut sim = build_network(SimConfig::random_tree(42, 40, 3, 3)).unwrap();
    let height = sim.tree_height();
    let targets = sim.occupied_prefixes();
    let origins = sim.node_ids();
    for (i, target) in targets.iter().enumerate() {
        let origin = origins[i * 7 % origins.len()];
        sim.clear_trace();
        let (got, qid) = run(&mut sim, origin, &format!("zz@{target}"));
        assert_eq!(got, sim.members_under(target), "target {target} from {origin}");
        assert_eq!(servers_of(sim.trace(), qid), got);
        assert_trace(sim.trace(), no_loop).unwrap();
        assert_trace(sim.trace(), at_most_once_serve).unwrap();
        assert_trace(sim.trace(), monotone_ticks).unwrap();
        assert_trace(sim.trace(), hop_bound(2 * height)).unwrap();
        let stats = sim.msg_stats(origin, qid);
        assert!(stats.query_sends as usize <= got.len() + sim.config().ttl as usize);
        let remote = got.iter().filter(|n| **n != origin).count();
        assert_eq!(stats.result_sends as usize, remote);
    }
}

#[test]
fn unknown_domain_dead_ends() {
    let mut sim = build_network(SimConfig::random_tree(3, 10, 2, 2)).unwrap();
    let origin = sim.node_ids()[0];
    let qid = sim.inject_query(origin, "zz@all.nowhere").unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let report = sim.query_report(origin, qid).unwrap();
    assert!(report.dead_end);
    assert!(report.responders.is_empty());
}

#[test]
fn killing_gateways_keeps_completeness() {
    let mut sim = build_network(SimConfig::random_tree(9, 30, 2, 3)).unwrap();
    let target = d("all.d0");
    let before = sim.members_under(&target);
    let victim = *before.iter().next().expect("non-empty group");
    sim.kill_node(victim).unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let origin = *sim.node_ids().iter().find(|n| !before.contains(n)).unwrap();
    let (got, _) = run(&mut sim, origin, "zz@all.d0");
    assert_eq!(got, sim.members_under(&target));
}

#[test]
fn killing_a_bystander_changes_nothing() {
    let build = || {
        let mut cfg = SimConfig::default();
        for (id, dom) in [(1, "all.a"), (2, "all.a"), (3, "all.b"), (4, "all.b.c"), (9, "all.z")] {
            cfg.nodes.push(SimNodeSpec::new(id, d(dom)));
        }
        build_network(cfg).unwrap()
    };
    let mut base = build();
    base.clear_trace();
    run(&mut base, NodeId(1), "zz@all.b");
    let mut other = build();
    other.clear_trace();
    run(&mut other, NodeId(1), "zz@all.b");
    assert_eq!(trace_text(base.trace()), trace_text(other.trace()));
    // node 9 is not on the path; its removal only costs failure detection
    let mut killed = build();
    killed.kill_node(NodeId(9)).unwrap();
    killed.run_until_quiescent(BUDGET).unwrap();
    let (got, _) = run(&mut killed, NodeId(1), "zz@all.b");
    assert_eq!(got, [NodeId(3), NodeId(4)].into_iter().collect());
}

#[test]
fn same_seed_same_trace() {
    let a = build_network(SimConfig::random_tree(42, 64, 3, 3)).unwrap();
    let b = build_network(SimConfig::random_tree(42, 64, 3, 3)).unwrap();
    assert!(!a.trace().is_empty());
    assert_eq!(trace_text(a.trace()), trace_text(b.trace()));
}

#[test]
fn no_work_is_quiescent_after_joins() {
    let mut sim = build_network(SimConfig::random_tree(5, 8, 2, 2)).unwrap();
    let len = sim.trace().len();
    sim.run_until_quiescent(0).unwrap();
    assert_eq!(sim.trace().len(), len);
}

#[test]
fn originator_retries_once_when_nothing_answers() {
    let mut cfg = SimConfig::default();
    cfg.nodes.push(SimNodeSpec::new(1, d("all.a")));
    cfg.nodes.push(SimNodeSpec::new(2, d("all.b")));
    let mut sim = build_network(cfg).unwrap();
    sim.set_loss_rate(0.999).unwrap();
    let qid = sim.inject_query(NodeId(1), "zz@all.b").unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let report = sim.query_report(NodeId(1), qid).unwrap();
    assert!(report.retried);
    assert!(report.responders.is_empty());
}

#[test]
fn listing_and_fetch_between_sim_nodes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.txt"), "bee").unwrap();
    std::fs::write(dir.path().join("a.txt"), "ay ay").unwrap();
    let mut cfg = SimConfig::default();
    let mut server = SimNodeSpec::new(1, d("all.a"));
    server.sandbox = Some(dir.path().to_path_buf());
    cfg.nodes.push(server);
    cfg.nodes.push(SimNodeSpec::new(2, d("all.b")));
    let mut sim = build_network(cfg).unwrap();
    sim.start_list(NodeId(2), NodeId(1), "/").unwrap();
    sim.start_list(NodeId(2), NodeId(1), "../etc").unwrap();
    sim.start_fetch(NodeId(2), NodeId(1), "a.txt").unwrap();
    sim.run_until_quiescent(BUDGET).unwrap();
    let mut lists = Vec::new();
    let mut fetched = None;
    for (_, c) in sim.take_completions() {
        match c {
            Completion::List { result, .. } => lists.push(result),
            Completion::Fetch { result, .. } => fetched = Some(result),
            _ => {}
        }
    }
    let (entries, _) = lists[0].clone().unwrap();
    let names: Vec<String> = entries.into_iter().map(|e| e.name).collect();
    assert_eq!(names, ["a.txt", "b.txt"]);
    assert_eq!(lists[1], Err(sp2p_core::file_access::ListError::OutsideSandbox));
    assert_eq!(fetched.unwrap().unwrap(), b"ay ay");
}

#[test]
fn query_parse_matches_example() {
    let q = parse_query("Windows 10@all.education.undergraduated course.operating systems").unwrap();
    assert_eq!(q.keywords, ["windows", "10"]);
}
