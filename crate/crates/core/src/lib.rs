//! Informed swarm verification.
//!
//! A subsystem of a network of LTSs is preprocessed into a weighted LTS whose
//! maximal traces are numbered ([`trace_count`], [`trace_codec`]). A
//! coordinator ([`hive`]) hands those traces to workers ([`worker`]), each of
//! which runs a search of the full product restricted to its trace ([`iss`]),
//! and keeps a ledger of finished and pruned trace IDs ([`ledger`]) until every
//! trace is accounted for.

pub mod hive;
pub mod iss;
pub mod ledger;
pub mod lts;
pub mod network;
pub mod protocol;
pub mod trace_codec;
pub mod trace_count;
pub mod worker;

pub use iss::{run_full_bfs, run_iss, run_swarm_dfs, FeedbackVector, IssOptions, IssResult, Restriction};
pub use ledger::{pick_unexplored, LeaseTable, TraceRange, TraceRangeList};
pub use lts::{load_lts, parse_lts, Label, Lts, StateId};
pub use network::{check_network, load_manifest, Network, Product, ProductState, SyncRule};
pub use trace_codec::{decode, prefix_range, to_swarm, SubTrace, SwarmTrace};
pub use trace_count::{count_traces, load_weighted, save_weighted, WeightedLts};
