use std::collections::{BTreeMap, HashMap};
use std::ops::Bound;

use ledgerbench_core::VersionedValue;
use parking_lot::RwLock;

use super::{BatchEntry, CommitMode, DbError, DbStats, StateBackend};

/// In-process ordered map. Batches are applied under one internal write
/// guard, so they are atomic even when the peer-level lock is disabled.
#[derive(Default)]
pub struct EmbeddedDb {
    data: RwLock<BTreeMap<String, VersionedValue>>,
    stats: DbStats,
}

impl EmbeddedDb {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StateBackend for EmbeddedDb {
    fn get(&self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        DbStats::bump(&self.stats.get_requests);
        Ok(self.data.read().get(key).cloned())
    }

    fn bulk_get(&self, keys: &[String]) -> Result<HashMap<String, Option<VersionedValue>>, DbError> {
        if keys.is_empty() {
            return Ok(HashMap::new());
        }
        DbStats::bump(&self.stats.bulk_get_requests);
        let data = self.data.read();
        Ok(keys.iter().map(|k| (k.clone(), data.get(k).cloned())).collect())
    }

    fn commit_batch(&self, writes: &[BatchEntry], mode: CommitMode) -> Result<(), DbError> {
        if writes.is_empty() {
            return Ok(());
        }
        match mode {
            CommitMode::Bulk => DbStats::bump(&self.stats.bulk_put_requests),
            CommitMode::PerKey => {
                self.stats.put_requests.fetch_add(writes.len() as u64, std::sync::atomic::Ordering::Relaxed);
            }
        }
        let mut data = self.data.write();
        for (k, v, ver) in writes {
            data.insert(k.clone(), VersionedValue::new(v.clone(), *ver));
        }
        Ok(())
    }

    fn range(&self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, DbError> {
        DbStats::bump(&self.stats.range_requests);
        if start >= end {
            return Ok(Vec::new());
        }
        let data = self.data.read();
        Ok(data
            .range::<str, _>((Bound::Included(start), Bound::Excluded(end)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect())
    }

    fn dump(&self) -> Result<BTreeMap<String, VersionedValue>, DbError> {
        Ok(self.data.read().clone())
    }

    fn stats(&self) -> &DbStats {
        &self.stats
    }
}
