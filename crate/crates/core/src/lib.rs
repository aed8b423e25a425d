//! Deterministic simulation of a blockchain-based marketplace: a simulated
//! chain with round-robin proposers, five trade types, commit-reveal reserve
//! prices, committee evaluation, and escrow settlement for physical goods.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chain;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod escrow;
pub mod market;
pub mod policy;
pub mod roles;
pub mod types;

pub use chain::{Block, ChainState, MarketConfig, Member, Roster, TxPool};
pub use encoding::Digest;
pub use engine::{Engine, EngineConfig, NodeOptions, TraceEvent};
pub use error::{InvalidBlock, Rule, Stage, ValidationFailed};
pub use types::*;
