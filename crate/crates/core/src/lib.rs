//! Domain-scoped distributed search over a hierarchical semantic overlay.
//!
//! Nodes join a domain path such as `all.education.operating systems`,
//! index a sandboxed directory, and answer `keywords@domain` queries that
//! the overlay routes to every node joined at or below that domain.

pub mod domain;
pub mod file_access;
pub mod node;
pub mod overlay;
pub mod query;
pub mod router;
pub mod search;
pub mod sim;
pub mod wire;

pub use domain::{common_prefix_len, domain_distance, is_ancestor_or_self, parse_domain_path, DomainPath};
pub use node::{Completion, Effect, Node, NodeSettings, Role, Timer};
pub use query::{parse_query, Query, QueryReport};
pub use wire::{Message, NodeAddr, NodeId, PeerInfo};
