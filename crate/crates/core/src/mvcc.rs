//! Commit-time multi-version concurrency control.
//!
//! Transactions are checked in block order. A transaction is stale when a
//! version it read no longer matches the committed state as already updated
//! by earlier valid transactions of the same block, or when re-running one
//! of its range queries yields a different result hash.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{range_result_hash, Transaction, ValidationCode, Version, VersionedValue};

/// Committed state as seen by the validator.
pub trait CommittedState {
    type Error;

    fn version(&mut self, key: &str) -> Result<Option<Version>, Self::Error>;

    /// Entries with `start <= key < end`, ascending.
    fn range(&mut self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, Self::Error>;
}

/// Writes of the valid transactions of one block, last writer wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteBatch {
    entries: BTreeMap<String, (Vec<u8>, Version)>,
}

impl WriteBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: String, value: Vec<u8>, version: Version) {
        self.entries.insert(key, (value, version));
    }

    pub fn get(&self, key: &str) -> Option<&(Vec<u8>, Version)> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &(Vec<u8>, Version))> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn into_entries(self) -> Vec<(String, Vec<u8>, Version)> {
        self.entries.into_iter().map(|(k, (v, ver))| (k, v, ver)).collect()
    }
}

/// Validates the transactions of block `block_num`. Transactions already
/// rejected by endorsement validation keep their code and are not examined.
pub fn validate_block<S: CommittedState>(
    block_num: u64,
    transactions: &[Transaction],
    vscc_flags: &[ValidationCode],
    state: &mut S,
) -> Result<(Vec<ValidationCode>, WriteBatch), S::Error> {
    assert_eq!(transactions.len(), vscc_flags.len(), "one endorsement flag per transaction");
    let mut batch = WriteBatch::new();
    let mut flags = Vec::with_capacity(transactions.len());
    for (idx, (tx, vscc)) in transactions.iter().zip(vscc_flags).enumerate() {
        if !vscc.is_valid() {
            flags.push(*vscc);
            continue;
        }
        let code = check_transaction(tx, &batch, state)?;
        if code.is_valid() {
            let version = Version::new(block_num, idx as u64);
            for w in &tx.rwset.writes {
                batch.put(w.key.clone(), w.value.clone(), version);
            }
        }
        flags.push(code);
    }
    Ok((flags, batch))
}

fn check_transaction<S: CommittedState>(
    tx: &Transaction,
    batch: &WriteBatch,
    state: &mut S,
) -> Result<ValidationCode, S::Error> {
    for read in &tx.rwset.reads {
        let current = match batch.get(&read.key) {
            Some((_, v)) => Some(*v),
            None => state.version(&read.key)?,
        };
        if current != read.version {
            return Ok(ValidationCode::MvccConflict);
        }
    }
    for rq in &tx.rwset.range_queries {
        let mut merged: BTreeMap<String, (Vec<u8>, Version)> = state
            .range(&rq.start_key, &rq.end_key)?
            .into_iter()
            .map(|(k, v)| (k, (v.value, v.version)))
            .collect();
        for (k, (v, ver)) in batch.iter() {
            if k.as_str() >= rq.start_key.as_str() && k.as_str() < rq.end_key.as_str() {
                merged.insert(k.clone(), (v.clone(), *ver));
            }
        }
        let hash = range_result_hash(merged.iter().map(|(k, (v, ver))| (k.as_str(), v.as_slice(), *ver)));
        if hash != rq.result_hash {
            return Ok(ValidationCode::PhantomRead);
        }
    }
    Ok(ValidationCode::Valid)
}

/// In-memory committed state, used by tests and as the embedded backend's
/// view during validation.
impl CommittedState for BTreeMap<String, VersionedValue> {
    type Error = core::convert::Infallible;

    fn version(&mut self, key: &str) -> Result<Option<Version>, Self::Error> {
        Ok(self.get(key).map(|v| v.version))
    }

    fn range(&mut self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, Self::Error> {
        if start >= end {
            return Ok(Vec::new());
        }
        use core::ops::Bound;
        Ok(BTreeMap::range::<str, _>(self, (Bound::Included(start), Bound::Excluded(end)))
            .map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}
