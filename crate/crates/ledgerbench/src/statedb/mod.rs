//! Versioned key-value state with an embedded and a remote backend.
//!
//! Both backends expose the same [`StateBackend`] surface. The remote one
//! talks to [`server::StateServer`] over loopback HTTP, one request per
//! per-key operation and one per bulk operation, with a configurable delay
//! injected by the server on every request. Whole-database locking lives in
//! [`lock::DbLock`] on the peer side.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use ledgerbench_core::{Version, VersionedValue};
use serde::{Deserialize, Serialize};

pub mod embedded;
pub mod lock;
pub mod remote;
pub mod server;
pub mod wire;

pub use embedded::EmbeddedDb;
pub use lock::{DbLock, LockTimeout};
pub use remote::RemoteDb;
pub use server::StateServer;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum DbError {
    #[error("state database unavailable: {0}")]
    BackendUnavailable(String),
    #[error("revision conflict on key {key:?}")]
    RevisionConflict { key: String },
    #[error("state database protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitMode {
    PerKey,
    Bulk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Embedded,
    Remote,
}

#[derive(Debug, Default)]
pub struct DbStats {
    pub get_requests: AtomicU64,
    pub put_requests: AtomicU64,
    pub bulk_get_requests: AtomicU64,
    pub bulk_put_requests: AtomicU64,
    pub range_requests: AtomicU64,
    pub lock_wait_total_ns: AtomicU64,
    pub read_lock_hold_ns: AtomicU64,
    pub write_lock_hold_ns: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbStatsSnapshot {
    pub get_requests: u64,
    pub put_requests: u64,
    pub bulk_get_requests: u64,
    pub bulk_put_requests: u64,
    pub range_requests: u64,
    pub lock_wait_total_ns: u64,
    pub read_lock_hold_ns: u64,
    pub write_lock_hold_ns: u64,
}

impl DbStatsSnapshot {
    pub fn add(&mut self, o: &DbStatsSnapshot) {
        self.get_requests += o.get_requests;
        self.put_requests += o.put_requests;
        self.bulk_get_requests += o.bulk_get_requests;
        self.bulk_put_requests += o.bulk_put_requests;
        self.range_requests += o.range_requests;
        self.lock_wait_total_ns += o.lock_wait_total_ns;
        self.read_lock_hold_ns += o.read_lock_hold_ns;
        self.write_lock_hold_ns += o.write_lock_hold_ns;
    }

    pub fn since(&self, earlier: &DbStatsSnapshot) -> DbStatsSnapshot {
        DbStatsSnapshot {
            get_requests: self.get_requests - earlier.get_requests,
            put_requests: self.put_requests - earlier.put_requests,
            bulk_get_requests: self.bulk_get_requests - earlier.bulk_get_requests,
            bulk_put_requests: self.bulk_put_requests - earlier.bulk_put_requests,
            range_requests: self.range_requests - earlier.range_requests,
            lock_wait_total_ns: self.lock_wait_total_ns - earlier.lock_wait_total_ns,
            read_lock_hold_ns: self.read_lock_hold_ns - earlier.read_lock_hold_ns,
            write_lock_hold_ns: self.write_lock_hold_ns - earlier.write_lock_hold_ns,
        }
    }
}

impl DbStats {
    pub(crate) fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_ns(counter: &AtomicU64, d: Duration) {
        counter.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> DbStatsSnapshot {
        let r = |c: &AtomicU64| c.load(Ordering::Relaxed);
        DbStatsSnapshot {
            get_requests: r(&self.get_requests),
            put_requests: r(&self.put_requests),
            bulk_get_requests: r(&self.bulk_get_requests),
            bulk_put_requests: r(&self.bulk_put_requests),
            range_requests: r(&self.range_requests),
            lock_wait_total_ns: r(&self.lock_wait_total_ns),
            read_lock_hold_ns: r(&self.read_lock_hold_ns),
            write_lock_hold_ns: r(&self.write_lock_hold_ns),
        }
    }
}

/// One entry of a commit batch: key, value and the version the committer
/// assigned to it.
pub type BatchEntry = (String, Vec<u8>, Version);

pub trait StateBackend: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<VersionedValue>, DbError>;

    /// A read on behalf of chaincode simulation. Same request as `get`, but
    /// remembers nothing for the commit path.
    fn simulate_get(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        self.get(key)
    }

    /// One request regardless of key count; the empty list issues none.
    fn bulk_get(&self, keys: &[String]) -> Result<HashMap<String, Option<VersionedValue>>, DbError>;

    /// Applies the batch. In `PerKey` mode the remote backend fetches each
    /// key's revision (unless cached) and then PUTs it; in `Bulk` mode it
    /// sends the whole batch as one request.
    fn commit_batch(&self, writes: &[BatchEntry], mode: CommitMode) -> Result<(), DbError>;

    /// Entries with `start <= key < end`, ascending.
    fn range(&self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, DbError>;

    /// Every entry, for inspection and differential tests. Not counted as a
    /// request.
    fn dump(&self) -> Result<BTreeMap<String, VersionedValue>, DbError>;

    fn stats(&self) -> &DbStats;

    /// Forgets revisions remembered while processing the current block.
    fn end_block(&self) {}
}
