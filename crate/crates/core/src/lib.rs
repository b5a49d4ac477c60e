//! Running-consensus decentralized inference.
//!
//! Sensors sample iid data, inject it into a local state, and mix states with
//! neighbours through random pairwise gossip in the same time slot. This crate
//! provides the gossip machinery and its spectral summaries, the state
//! recursion together with the ideal centralized statistic it chases, the
//! estimation / fixed-sample / sequential / change-detection stacks built on
//! top of it, the closed-form predictions for all of them, and a seeded Monte
//! Carlo engine that checks one against the other.

pub mod analysis;
pub mod consensus;
pub mod detectors;
pub mod montecarlo;
pub mod network;
pub mod output;
pub mod quadrature;
pub mod runner;
pub mod scenario;
pub mod stats;

pub use consensus::{ConsensusError, ConsensusRun, WeightMode};
pub use network::{GossipMatrix, NetworkError, NetworkTopology, PairSequence, SpectralSummary, TopologyKind};
