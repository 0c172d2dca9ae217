//! Byte-exact encodings, one message per variant.
//!
//! `fixtures/golden.hex` holds `NAME HEX` lines. Set `SP2P_BLESS=1` to
//! rewrite the file after an intentional format change.

use sp2p_core::domain::parse_domain_path;
use sp2p_core::wire::{
    Body, DirEntry, EntryKind, JoinStatus, Message, NodeAddr, PeerInfo, QueryMode, Scope, Status, WireHit,
};

fn d(s: &str) -> sp2p_core::domain::DomainPath {
    parse_domain_path(s).unwrap()
}

fn samples() -> Vec<Message> {
    let src = NodeAddr::new(7, "127.0.0.1:4000");
    let peer = PeerInfo {
        addr: NodeAddr::new(9, "10.0.0.9:4000"),
        domain: d("all.cs.os"),
    };
    let bodies = vec![
        Body::JoinReq {
            joiner: src.clone(),
            domain: d("all.cs"),
            scope: Scope::Subtree(d("all")),
        },
        Body::JoinAck {
            status: JoinStatus::Accepted,
            members: vec![NodeAddr::new(8, "h:1")],
            gateways: vec![peer.clone()],
        },
        Body::Query {
            target: d("all.cs"),
            keywords: vec!["windows".into(), "10".into()],
            mode: QueryMode::And,
            k: 10,
            origin_domain: Some(d("all.math")),
            scope: Scope::Exact(d("all.cs")),
        },
        Body::Result {
            query_id: 42,
            responder: peer,
            hits: vec![WireHit {
                path: "a/b.txt".into(),
                score_micros: 693_147,
                size: 5,
                snippet: "hello".into(),
            }],
            dead_end: false,
        },
        Body::ListDirReq {
            request_id: 3,
            path: "/".into(),
        },
        Body::ListDirResp {
            request_id: 3,
            status: Status::Ok,
            truncated: false,
            entries: vec![
                DirEntry {
                    name: "a.txt".into(),
                    kind: EntryKind::File,
                    size: 2,
                },
                DirEntry {
                    name: "docs".into(),
                    kind: EntryKind::Dir,
                    size: 0,
                },
            ],
        },
        Body::FileReq {
            session_id: 5,
            path: "a.txt".into(),
            offsets: vec![0, 8192],
            copies: 2,
        },
        Body::FileChunk {
            session_id: 5,
            status: Status::Ok,
            offset: 0,
            file_size: 2,
            digest: Some([0xab; 32]),
            eof: true,
            data: b"hi".to_vec(),
        },
        Body::Ping,
        Body::Pong,
    ];
    bodies
        .into_iter()
        .enumerate()
        .map(|(i, b)| Message::new(0x0102_0304_0506_0700 + i as u64, 16, src.clone(), b))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn golden_encodings() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden.hex");
    let lines: Vec<String> = samples()
        .iter()
        .map(|m| format!("{} {}", m.body.name(), hex(&m.encode().unwrap())))
        .collect();
    let text = lines.join("\n") + "\n";
    if std::env::var_os("SP2P_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(golden, text);
    for m in samples() {
        assert_eq!(Message::decode(&m.encode().unwrap()).unwrap(), m);
    }
}

/// The QUERY frame assembled by hand from the documented layout.
#[test]
fn query_frame_by_hand() {
    let m = &samples()[2];
    let mut want = Vec::new();
    want.extend_from_slice(b"SP2P");
    want.push(1);
    want.push(0x03);
    want.extend_from_slice(&0x0102_0304_0506_0702u64.to_be_bytes());
    want.push(16);
    want.extend_from_slice(&7u64.to_be_bytes());
    let put = |v: &mut Vec<u8>, s: &str| {
        v.extend_from_slice(&(s.len() as u16).to_be_bytes());
        v.extend_from_slice(s.as_bytes());
    };
    put(&mut want, "127.0.0.1:4000");
    put(&mut want, "all.cs");
    want.extend_from_slice(&2u16.to_be_bytes());
    put(&mut want, "windows");
    put(&mut want, "10");
    want.push(1); // AND
    want.extend_from_slice(&10u16.to_be_bytes());
    want.push(1);
    put(&mut want, "all.math");
    want.push(2); // exact scope
    put(&mut want, "all.cs");
    assert_eq!(m.encode().unwrap(), want);
}
