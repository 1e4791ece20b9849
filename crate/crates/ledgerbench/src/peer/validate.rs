use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{bounded, unbounded, Sender};
use ledgerbench_core::identity::Membership;
use ledgerbench_core::mvcc::CommittedState;
use ledgerbench_core::policy::{parse_policy, PolicyExpr};
use ledgerbench_core::vscc::validate_transaction;
use ledgerbench_core::{Transaction, ValidationCode, Version, VersionedValue};
use parking_lot::Mutex;

use crate::statedb::{DbError, StateBackend};

/// State key under which a chaincode's endorsement policy is registered.
pub fn policy_key(chaincode: &str) -> String {
    format!("_lifecycle/{chaincode}")
}

/// Looks up endorsement policies in the channel's state database,
/// optionally memoizing them.
pub(crate) struct PolicySource {
    db: Arc<dyn StateBackend>,
    cache: Option<Mutex<HashMap<String, Option<Arc<PolicyExpr>>>>>,
    fetches: AtomicU64,
}

impl PolicySource {
    pub(crate) fn new(db: Arc<dyn StateBackend>, cached: bool) -> Self {
        PolicySource { db, cache: cached.then(|| Mutex::new(HashMap::new())), fetches: AtomicU64::new(0) }
    }

    pub(crate) fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }

    fn fetch(&self, chaincode: &str) -> Result<Option<Arc<PolicyExpr>>, DbError> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let Some(stored) = self.db.get(&policy_key(chaincode))? else {
            return Ok(None);
        };
        let text = String::from_utf8_lossy(&stored.value);
        Ok(parse_policy(&text).ok().map(Arc::new))
    }

    pub(crate) fn policy(&self, chaincode: &str) -> Result<Option<Arc<PolicyExpr>>, DbError> {
        let Some(cache) = &self.cache else {
            return self.fetch(chaincode);
        };
        // Held across the fetch so concurrent workers fetch at most once.
        let mut cache = cache.lock();
        if let Some(p) = cache.get(chaincode) {
            return Ok(p.clone());
        }
        let p = self.fetch(chaincode)?;
        cache.insert(chaincode.to_string(), p.clone());
        Ok(p)
    }
}

pub(crate) fn validate_one(
    tx: &Transaction,
    policies: &PolicySource,
    membership: &Membership,
) -> Result<ValidationCode, DbError> {
    Ok(match policies.policy(&tx.chaincode_id)? {
        Some(p) => validate_transaction(tx, &p, membership),
        None => ValidationCode::BadEndorsement,
    })
}

struct Job {
    txs: Arc<Vec<Transaction>>,
    index: usize,
    reply: Sender<(usize, Result<ValidationCode, DbError>)>,
}

/// Fixed pool of endorsement validators for one channel. Each task is one
/// transaction; results are placed back by position.
pub(crate) struct VsccPool {
    jobs: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
}

impl VsccPool {
    pub(crate) fn new(name: &str, size: usize, policies: Arc<PolicySource>, membership: Arc<Membership>) -> Self {
        let (tx, rx) = bounded::<Job>(size * 2);
        let workers = (0..size)
            .map(|i| {
                let rx = rx.clone();
                let policies = policies.clone();
                let membership = membership.clone();
                thread::Builder::new()
                    .name(format!("{name}-vscc-{i}"))
                    .spawn(move || {
                        for job in rx {
                            let result = validate_one(&job.txs[job.index], &policies, &membership);
                            let _ = job.reply.send((job.index, result));
                        }
                    })
                    .expect("spawn vscc worker")
            })
            .collect();
        VsccPool { jobs: Some(tx), workers }
    }

    pub(crate) fn validate(&self, txs: Arc<Vec<Transaction>>) -> Result<Vec<ValidationCode>, DbError> {
        let n = txs.len();
        let (reply, results) = unbounded();
        let jobs = self.jobs.as_ref().expect("pool is running");
        for index in 0..n {
            jobs.send(Job { txs: txs.clone(), index, reply: reply.clone() }).expect("vscc workers alive");
        }
        drop(reply);
        let mut flags = vec![ValidationCode::BadEndorsement; n];
        let mut first_err = None;
        for (i, r) in results.iter().take(n) {
            match r {
                Ok(code) => flags[i] = code,
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(flags),
        }
    }
}

impl Drop for VsccPool {
    fn drop(&mut self) {
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Reads versions one request per key.
pub(crate) struct PerKeyState<'a>(pub &'a dyn StateBackend);

impl CommittedState for PerKeyState<'_> {
    type Error = DbError;

    fn version(&mut self, key: &str) -> Result<Option<Version>, DbError> {
        Ok(self.0.get(key)?.map(|v| v.version))
    }

    fn range(&mut self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, DbError> {
        self.0.range(start, end)
    }
}

/// Serves versions from one bulk read of every key the block touches.
pub(crate) struct PreloadedState<'a> {
    db: &'a dyn StateBackend,
    loaded: HashMap<String, Option<VersionedValue>>,
}

impl<'a> PreloadedState<'a> {
    pub(crate) fn load(db: &'a dyn StateBackend, txs: &[Transaction], vscc: &[ValidationCode]) -> Result<Self, DbError> {
        let keys: BTreeSet<&str> = txs
            .iter()
            .zip(vscc)
            .filter(|(_, f)| f.is_valid())
            .flat_map(|(tx, _)| {
                tx.rwset.reads.iter().map(|r| r.key.as_str()).chain(tx.rwset.writes.iter().map(|w| w.key.as_str()))
            })
            .collect();
        let keys: Vec<String> = keys.into_iter().map(String::from).collect();
        Ok(PreloadedState { db, loaded: db.bulk_get(&keys)? })
    }
}

impl CommittedState for PreloadedState<'_> {
    type Error = DbError;

    fn version(&mut self, key: &str) -> Result<Option<Version>, DbError> {
        match self.loaded.get(key) {
            Some(v) => Ok(v.as_ref().map(|v| v.version)),
            None => Ok(self.db.get(key)?.map(|v| v.version)),
        }
    }

    fn range(&mut self, start: &str, end: &str) -> Result<Vec<(String, VersionedValue)>, DbError> {
        self.db.range(start, end)
    }
}
