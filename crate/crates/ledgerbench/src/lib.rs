//! In-process permissioned-ledger pipeline and benchmark harness.
//!
//! Clients endorse proposals on peers, broadcast the endorsed transactions
//! to a single orderer that cuts signed blocks by size or timeout, and every
//! peer validates delivered blocks (endorsement policies, then
//! multi-version concurrency control) before committing them to its state
//! database. The state database is either an embedded ordered map or a
//! document store reached over loopback HTTP.
//!
//! Pure domain logic lives in [`ledgerbench_core`]; this crate adds threads,
//! clocks, IO and the command line.

pub mod bench;
pub mod client;
pub mod clock;
pub mod export;
pub mod network;
pub mod orderer;
pub mod peer;
pub mod statedb;

pub use ledgerbench_core as core;
