//! Endorsing and committing peer.
//!
//! A peer holds one state database, one database lock and one ledger per
//! channel. Endorsement simulates a workload profile under the shared lock;
//! delivered blocks go through endorsement-policy validation (serially or
//! on a per-channel worker pool), MVCC and the ledger update, one block at
//! a time per channel.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use ledgerbench_core::codec::{Decode, Encode, Encoder};
use ledgerbench_core::identity::{self, Certificate, Membership, SigningIdentity};
use ledgerbench_core::mvcc::validate_block;
use ledgerbench_core::profile::{simulate, ChaincodeProfile, StateReader};
use ledgerbench_core::{Block, Digest, ReadWriteSet, Transaction, ValidationCode, Version, VersionedValue};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock;
use crate::orderer::Delivery;
use crate::statedb::{
    BackendKind, CommitMode, DbError, DbLock, DbStats, DbStatsSnapshot, EmbeddedDb, RemoteDb, StateBackend,
};

mod events;
mod validate;

pub use events::{spawn_commit_feed, CommitEvent, PhaseTimings};
pub use validate::policy_key;
use validate::{validate_one, PerKeyState, PolicySource, PreloadedState, VsccPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorConfig {
    pub vscc_workers: usize,
    pub msp_cache_enabled: bool,
    pub policy_cache_enabled: bool,
    pub bulk_ops_enabled: bool,
    pub block_queue_capacity: usize,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            vscc_workers: 1,
            msp_cache_enabled: false,
            policy_cache_enabled: false,
            bulk_ops_enabled: false,
            block_queue_capacity: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Embedded,
    /// Base URL of a state server; each peer-channel pair gets its own
    /// database named `{namespace}{peer}_{channel}`.
    Remote { endpoint: String, namespace: String },
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::Embedded => BackendKind::Embedded,
            BackendSpec::Remote { .. } => BackendKind::Remote,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PeerConfig {
    pub name: String,
    /// Committing-only peers refuse proposals but still validate and commit.
    pub endorser: bool,
    pub validator: ValidatorConfig,
    pub lock_mode: bool,
    pub endorsement_timeout: Duration,
    pub backend: BackendSpec,
    pub msp_cache_capacity: usize,
}

impl PeerConfig {
    pub fn new(name: impl Into<String>) -> Self {
        PeerConfig {
            name: name.into(),
            endorser: true,
            validator: ValidatorConfig::default(),
            lock_mode: true,
            endorsement_timeout: Duration::from_secs(5),
            backend: BackendSpec::Embedded,
            msp_cache_capacity: identity::DEFAULT_CACHE_CAPACITY,
        }
    }
}

/// A channel as the peer joins it: its id and the chaincodes installed on
/// it with their endorsement policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSetup {
    pub id: String,
    pub chaincodes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub channel_id: String,
    pub chaincode_id: String,
    pub profile: ChaincodeProfile,
    pub keys: Vec<String>,
    pub nonce: u64,
    /// Serialized certificate of the submitting client.
    pub creator: Vec<u8>,
}

impl Proposal {
    pub fn payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(&self.channel_id)
            .str(&self.chaincode_id)
            .str(&self.profile.to_string())
            .u64(self.profile.value_size as u64)
            .list(&self.keys)
            .u64(self.nonce)
            .bytes(&self.creator);
        enc.finish()
    }

    pub fn tx_id(&self, rwset: &ReadWriteSet) -> Digest {
        Transaction::compute_tx_id(&self.channel_id, &self.chaincode_id, self.nonce, rwset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedProposal {
    pub proposal: Proposal,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalResponse {
    pub tx_id: Digest,
    pub rwset: ReadWriteSet,
    pub response: Vec<u8>,
    pub endorser_identity: Vec<u8>,
    pub signature: Vec<u8>,
}

impl ProposalResponse {
    /// Checks the endorser's signature with the public key in its
    /// certificate.
    pub fn verify(&self) -> bool {
        let Ok(cert) = Certificate::from_bytes(&self.endorser_identity) else {
            return false;
        };
        let payload = Transaction::endorsement_payload(&self.tx_id, &self.rwset, &self.response);
        identity::verify(&cert.public_key, &payload, &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndorseError {
    #[error("peer does not endorse")]
    NotEndorser,
    #[error("peer has not joined channel {0:?}")]
    UnknownChannel(String),
    #[error("chaincode {0:?} is not installed")]
    UnknownChaincode(String),
    #[error("unauthorized proposal: {0}")]
    Unauthorized(String),
    #[error("endorsement timed out after {0:?}")]
    EndorsementTimeout(Duration),
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeerError {
    #[error("peer has not joined channel {0:?}")]
    UnknownChannel(String),
    #[error("block {number} on {channel:?} does not extend the ledger (height {height})")]
    OutOfOrder { channel: String, number: u64, height: u64 },
    #[error("block {0} carries an invalid orderer signature")]
    BadOrdererSignature(u64),
    #[error(transparent)]
    Db(#[from] DbError),
}

struct DbReader<'a>(&'a dyn StateBackend);

impl StateReader for DbReader<'_> {
    type Error = DbError;

    fn get(&mut self, key: &str) -> Result<Option<VersionedValue>, DbError> {
        self.0.simulate_get(key)
    }
}

#[derive(Default)]
struct Ledger {
    blocks: Vec<Block>,
    last_commit: Digest,
}

type Subscribers = Arc<Mutex<Vec<Sender<CommitEvent>>>>;

struct Channel {
    id: String,
    peer: String,
    db: Arc<dyn StateBackend>,
    lock: DbLock,
    lock_stats: Arc<DbStats>,
    chaincodes: BTreeSet<String>,
    policies: Arc<PolicySource>,
    pool: Option<VsccPool>,
    membership: Arc<Membership>,
    orderer_key: [u8; 32],
    commit_mode: CommitMode,
    /// Held for the whole of block processing.
    ledger: Mutex<Ledger>,
    timings: Mutex<Vec<PhaseTimings>>,
    fault: Mutex<Option<PeerError>>,
    subscribers: Subscribers,
}

fn elapsed_ns(since: Instant) -> u64 {
    since.elapsed().as_nanos() as u64
}

impl Channel {
    fn process(&self, block: &Block, cut_at_ns: u64, queue_length: usize) -> Result<CommitEvent, PeerError> {
        let mut ledger = self.ledger.lock();
        let height = ledger.blocks.len() as u64;
        let expected_prev = ledger.blocks.last().map_or(Digest::ZERO, |b| b.header.hash());
        if block.header.number != height || block.header.prev_hash != expected_prev {
            return Err(PeerError::OutOfOrder { channel: self.id.clone(), number: block.header.number, height });
        }
        if !identity::verify(&self.orderer_key, &block.header.to_bytes(), &block.metadata.orderer_sig) {
            return Err(PeerError::BadOrdererSignature(block.header.number));
        }
        let txs = Arc::new(block.transactions.clone());

        let t = Instant::now();
        let vscc = match &self.pool {
            Some(pool) => pool.validate(txs.clone())?,
            None => txs.iter().map(|tx| validate_one(tx, &self.policies, &self.membership)).collect::<Result<_, _>>()?,
        };
        let vscc_ns = elapsed_ns(t);

        let t = Instant::now();
        let guard = self.lock.write(None).expect("untimed lock wait");
        let write_lock_wait_ns = elapsed_ns(t);

        let t = Instant::now();
        let number = block.header.number;
        let (flags, batch) = match self.commit_mode {
            CommitMode::Bulk => validate_block(number, &txs, &vscc, &mut PreloadedState::load(&*self.db, &txs, &vscc)?)?,
            CommitMode::PerKey => validate_block(number, &txs, &vscc, &mut PerKeyState(&*self.db))?,
        };
        let mvcc_ns = elapsed_ns(t);

        let t = Instant::now();
        let entries = batch.into_entries();
        let written = self.db.commit_batch(&entries, self.commit_mode);
        self.db.end_block();
        written?;
        let mut committed = Block {
            header: block.header.clone(),
            transactions: Arc::try_unwrap(txs).unwrap_or_else(|shared| (*shared).clone()),
            metadata: block.metadata.clone(),
        };
        committed.seal(&ledger.last_commit, flags.clone());
        ledger.last_commit = committed.metadata.commit_hash;
        let tx_ids = committed.transactions.iter().map(|tx| tx.tx_id).collect();
        ledger.blocks.push(committed);
        drop(guard);
        let ledger_update_ns = elapsed_ns(t);
        drop(ledger);

        self.timings.lock().push(PhaseTimings {
            block_number: number,
            tx_count: flags.len(),
            vscc_ns,
            mvcc_ns,
            ledger_update_ns,
            write_lock_wait_ns,
            queue_length,
        });
        let event = CommitEvent {
            peer: self.peer.clone(),
            channel: self.id.clone(),
            block_number: number,
            tx_ids,
            flags,
            cut_at_ns,
            committed_at_ns: clock::now_ns(),
        };
        self.subscribers.lock().retain(|s| s.send(event.clone()).is_ok());
        Ok(event)
    }
}

pub struct Peer {
    name: String,
    identity: SigningIdentity,
    membership: Arc<Membership>,
    endorser: bool,
    endorsement_timeout: Duration,
    block_queue_capacity: usize,
    channels: BTreeMap<String, Arc<Channel>>,
    subscribers: Subscribers,
    loops: Mutex<Vec<JoinHandle<()>>>,
}

impl Peer {
    /// Joins the given channels and registers their chaincode policies in
    /// each channel's state database.
    pub fn new(
        config: PeerConfig,
        identity: SigningIdentity,
        membership: Membership,
        orderer_key: [u8; 32],
        channels: &[ChannelSetup],
    ) -> Result<Peer, DbError> {
        let v = config.validator;
        let membership =
            Arc::new(if v.msp_cache_enabled { membership.with_cache(config.msp_cache_capacity) } else { membership });
        let subscribers: Subscribers = Arc::default();
        let mut joined = BTreeMap::new();
        for setup in channels {
            let db: Arc<dyn StateBackend> = match &config.backend {
                BackendSpec::Embedded => Arc::new(EmbeddedDb::new()),
                BackendSpec::Remote { endpoint, namespace } => {
                    Arc::new(RemoteDb::new(endpoint, &format!("{namespace}{}_{}", config.name, setup.id)))
                }
            };
            let policies: Vec<_> = setup
                .chaincodes
                .iter()
                .map(|(cc, policy)| (policy_key(cc), policy.clone().into_bytes(), Version::new(0, 0)))
                .collect();
            db.commit_batch(&policies, CommitMode::PerKey)?;
            db.end_block();
            let policy_source = Arc::new(PolicySource::new(db.clone(), v.policy_cache_enabled));
            let pool = (v.vscc_workers > 1).then(|| {
                VsccPool::new(
                    &format!("{}-{}", config.name, setup.id),
                    v.vscc_workers,
                    policy_source.clone(),
                    membership.clone(),
                )
            });
            let lock_stats = Arc::new(DbStats::default());
            let channel = Channel {
                id: setup.id.clone(),
                peer: config.name.clone(),
                db,
                lock: DbLock::new(config.lock_mode, lock_stats.clone()),
                lock_stats,
                chaincodes: setup.chaincodes.iter().map(|(cc, _)| cc.clone()).collect(),
                policies: policy_source,
                pool,
                membership: membership.clone(),
                orderer_key,
                commit_mode: if v.bulk_ops_enabled { CommitMode::Bulk } else { CommitMode::PerKey },
                ledger: Mutex::default(),
                timings: Mutex::default(),
                fault: Mutex::default(),
                subscribers: subscribers.clone(),
            };
            joined.insert(setup.id.clone(), Arc::new(channel));
        }
        Ok(Peer {
            name: config.name,
            identity,
            membership,
            endorser: config.endorser,
            endorsement_timeout: config.endorsement_timeout,
            block_queue_capacity: v.block_queue_capacity.max(1),
            channels: joined,
            subscribers,
            loops: Mutex::default(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn org(&self) -> &str {
        &self.identity.cert.org_id
    }

    pub fn identity(&self) -> &SigningIdentity {
        &self.identity
    }

    pub fn is_endorser(&self) -> bool {
        self.endorser
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn channel_ids(&self) -> Vec<String> {
        self.channels.keys().cloned().collect()
    }

    fn channel(&self, id: &str) -> Option<&Arc<Channel>> {
        self.channels.get(id)
    }

    /// Simulates the proposal and signs the result. Nothing is committed.
    pub fn endorse(&self, signed: &SignedProposal) -> Result<ProposalResponse, EndorseError> {
        let start = Instant::now();
        let p = &signed.proposal;
        if !self.endorser {
            return Err(EndorseError::NotEndorser);
        }
        let ch = self.channel(&p.channel_id).ok_or_else(|| EndorseError::UnknownChannel(p.channel_id.clone()))?;
        if !ch.chaincodes.contains(&p.chaincode_id) {
            return Err(EndorseError::UnknownChaincode(p.chaincode_id.clone()));
        }
        let (cert, _) =
            self.membership.validate_identity(&p.creator).map_err(|e| EndorseError::Unauthorized(e.to_string()))?;
        if !self.membership.verify_signature(&cert, &p.payload(), &signed.signature) {
            return Err(EndorseError::Unauthorized("bad proposal signature".into()));
        }

        let remaining = self.endorsement_timeout.saturating_sub(start.elapsed());
        let guard = ch.lock.read(Some(remaining)).map_err(|_| EndorseError::EndorsementTimeout(start.elapsed()))?;
        let (rwset, response) = simulate(&p.profile, &p.keys, p.nonce, &mut DbReader(&*ch.db))?;
        drop(guard);
        let elapsed = start.elapsed();
        if elapsed > self.endorsement_timeout {
            return Err(EndorseError::EndorsementTimeout(elapsed));
        }

        let tx_id = p.tx_id(&rwset);
        let signature = self.identity.sign(&Transaction::endorsement_payload(&tx_id, &rwset, &response));
        Ok(ProposalResponse {
            tx_id,
            rwset,
            response,
            endorser_identity: self.identity.serialized().to_vec(),
            signature,
        })
    }

    /// Validates and commits one block of `channel` synchronously.
    pub fn process_block(&self, channel: &str, block: &Block, cut_at_ns: u64) -> Result<CommitEvent, PeerError> {
        let ch = self.channel(channel).ok_or_else(|| PeerError::UnknownChannel(channel.to_string()))?;
        ch.process(block, cut_at_ns, 0)
    }

    /// Starts the validation loop of `channel` and returns its delivery
    /// queue. The loop ends when every sender is dropped; a failing block
    /// stops it and is reported by [`Peer::faults`].
    pub fn attach(&self, channel: &str) -> Result<Sender<Delivery>, PeerError> {
        let ch = self.channel(channel).ok_or_else(|| PeerError::UnknownChannel(channel.to_string()))?.clone();
        let (tx, rx): (Sender<Delivery>, Receiver<Delivery>) = bounded(self.block_queue_capacity);
        let handle = thread::Builder::new()
            .name(format!("{}-{}-commit", self.name, channel))
            .spawn(move || {
                while let Ok(d) = rx.recv() {
                    let queued = rx.len();
                    if let Err(e) = ch.process(&d.block, d.cut_at_ns, queued) {
                        *ch.fault.lock() = Some(e);
                        break;
                    }
                }
            })
            .expect("spawn validation loop");
        self.loops.lock().push(handle);
        Ok(tx)
    }

    /// Waits for every validation loop started by [`Peer::attach`].
    pub fn join(&self) {
        let loops: Vec<_> = self.loops.lock().drain(..).collect();
        for l in loops {
            let _ = l.join();
        }
    }

    pub fn faults(&self) -> Vec<(String, PeerError)> {
        self.channels.values().filter_map(|c| c.fault.lock().clone().map(|e| (c.id.clone(), e))).collect()
    }

    /// Commit events of every channel, from now on.
    pub fn subscribe(&self) -> Receiver<CommitEvent> {
        let (tx, rx) = unbounded();
        self.subscribers.lock().push(tx);
        rx
    }

    pub fn ledger(&self, channel: &str) -> Vec<Block> {
        self.channel(channel).map(|c| c.ledger.lock().blocks.clone()).unwrap_or_default()
    }

    pub fn height(&self, channel: &str) -> u64 {
        self.channel(channel).map_or(0, |c| c.ledger.lock().blocks.len() as u64)
    }

    pub fn state(&self, channel: &str) -> Result<BTreeMap<String, VersionedValue>, PeerError> {
        let ch = self.channel(channel).ok_or_else(|| PeerError::UnknownChannel(channel.to_string()))?;
        Ok(ch.db.dump()?)
    }

    pub fn timings(&self, channel: &str) -> Vec<PhaseTimings> {
        self.channel(channel).map(|c| c.timings.lock().clone()).unwrap_or_default()
    }

    /// Database and lock counters summed over all channels.
    pub fn db_stats(&self) -> DbStatsSnapshot {
        let mut total = DbStatsSnapshot::default();
        for ch in self.channels.values() {
            total.add(&ch.db.stats().snapshot());
            total.add(&ch.lock_stats.snapshot());
        }
        total
    }

    /// Policy lookups in the state database, summed over all channels.
    pub fn policy_fetches(&self) -> u64 {
        self.channels.values().map(|c| c.policies.fetches()).sum()
    }

    pub fn validation_codes(&self, channel: &str) -> Vec<Vec<ValidationCode>> {
        self.channel(channel)
            .map(|c| c.ledger.lock().blocks.iter().map(|b| b.metadata.validity.clone()).collect())
            .unwrap_or_default()
    }
}
