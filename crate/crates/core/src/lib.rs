//! Domain model and validation logic for a permissioned-ledger transaction
//! pipeline (endorse, order, validate, commit).
//!
//! Everything here is allocation-only and runs without `std`: canonical
//! encoding, block hashing and chain verification, the simplified membership
//! service with its ARC-backed identity cache, the endorsement-policy engine,
//! workload simulation and the two block-validation passes (endorsement
//! policy checks and multi-version concurrency control). Threads, IO, clocks
//! and the network live in the `ledgerbench` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arc;
pub mod codec;
pub mod digest;
pub mod identity;
pub mod model;
pub mod mvcc;
pub mod policy;
pub mod profile;
pub mod vscc;

pub use digest::Digest;
pub use model::{
    Block, BlockHeader, BlockMetadata, Endorsement, KvRead, KvWrite, RangeQueryInfo, ReadWriteSet,
    Transaction, ValidationCode, Version, VersionedValue,
};
