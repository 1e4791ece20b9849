//! Whole-database shared/exclusive lock held by endorsement (shared) and
//! ledger update (exclusive). Disabling it reproduces running without
//! repeatable-read isolation.

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::DbStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("timed out after {waited:?} waiting for the database lock")]
pub struct LockTimeout {
    pub waited: Duration,
}

pub struct DbLock {
    enabled: bool,
    inner: RwLock<()>,
    stats: Arc<DbStats>,
}

enum Held<'a> {
    Read(#[allow(dead_code)] RwLockReadGuard<'a, ()>),
    Write(#[allow(dead_code)] RwLockWriteGuard<'a, ()>),
    Disabled,
}

/// Releases the lock on drop and records how long it was held.
pub struct LockGuard<'a> {
    held: Held<'a>,
    since: Instant,
    stats: &'a DbStats,
}

impl Drop for LockGuard<'_> {
    fn drop(&mut self) {
        let held = self.since.elapsed();
        match self.held {
            Held::Read(_) => DbStats::add_ns(&self.stats.read_lock_hold_ns, held),
            Held::Write(_) => DbStats::add_ns(&self.stats.write_lock_hold_ns, held),
            Held::Disabled => {}
        }
    }
}

impl DbLock {
    pub fn new(enabled: bool, stats: Arc<DbStats>) -> Self {
        DbLock { enabled, inner: RwLock::new(()), stats }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn stats(&self) -> &DbStats {
        &self.stats
    }

    fn disabled(&self) -> LockGuard<'_> {
        LockGuard { held: Held::Disabled, since: Instant::now(), stats: &self.stats }
    }

    /// Shared lock; `None` waits indefinitely.
    pub fn read(&self, timeout: Option<Duration>) -> Result<LockGuard<'_>, LockTimeout> {
        if !self.enabled {
            return Ok(self.disabled());
        }
        let start = Instant::now();
        let guard = match timeout {
            Some(t) => self.inner.try_read_for(t),
            None => Some(self.inner.read()),
        };
        let waited = start.elapsed();
        DbStats::add_ns(&self.stats.lock_wait_total_ns, waited);
        let guard = guard.ok_or(LockTimeout { waited })?;
        Ok(LockGuard { held: Held::Read(guard), since: Instant::now(), stats: &self.stats })
    }

    /// Exclusive lock; `None` waits indefinitely.
    pub fn write(&self, timeout: Option<Duration>) -> Result<LockGuard<'_>, LockTimeout> {
        if !self.enabled {
            return Ok(self.disabled());
        }
        let start = Instant::now();
        let guard = match timeout {
            Some(t) => self.inner.try_write_for(t),
            None => Some(self.inner.write()),
        };
        let waited = start.elapsed();
        DbStats::add_ns(&self.stats.lock_wait_total_ns, waited);
        let guard = guard.ok_or(LockTimeout { waited })?;
        Ok(LockGuard { held: Held::Write(guard), since: Instant::now(), stats: &self.stats })
    }

    pub fn with_read_lock<T>(&self, timeout: Option<Duration>, f: impl FnOnce() -> T) -> Result<T, LockTimeout> {
        let _g = self.read(timeout)?;
        Ok(f())
    }

    pub fn with_write_lock<T>(&self, timeout: Option<Duration>, f: impl FnOnce() -> T) -> Result<T, LockTimeout> {
        let _g = self.write(timeout)?;
        Ok(f())
    }
}
