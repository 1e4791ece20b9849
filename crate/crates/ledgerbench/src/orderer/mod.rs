//! Single ordering node.
//!
//! Each channel has a bounded FIFO intake and one cutter thread. A block is
//! cut when `block_size` transactions are pending, or when `block_timeout`
//! has passed since the first transaction that arrived after the previous
//! cut. Blocks are signed and handed to every subscriber of the channel in
//! order; a slow subscriber back-pressures the cutter and, through the
//! bounded intake, the clients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use ledgerbench_core::codec::Encode;
use ledgerbench_core::identity::{self, PrivateKey};
use ledgerbench_core::{Block, BlockHeader, Transaction};
use parking_lot::Mutex;

use crate::clock;

pub mod tcp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutterConfig {
    pub block_size: usize,
    pub block_timeout: Duration,
    /// Intake bound; `None` means ten blocks' worth.
    pub queue_capacity: Option<usize>,
}

impl Default for CutterConfig {
    fn default() -> Self {
        CutterConfig { block_size: 30, block_timeout: Duration::from_secs(1), queue_capacity: None }
    }
}

impl CutterConfig {
    pub fn capacity(&self) -> usize {
        self.queue_capacity.unwrap_or(10 * self.block_size).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub block: Arc<Block>,
    pub cut_at_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrdererError {
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("intake queue of channel {0:?} is full")]
    QueueFull(String),
    #[error("orderer is shut down")]
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BroadcastAck {
    pub enqueued_at_ns: u64,
}

type Subscribers = Arc<Mutex<Vec<Sender<Delivery>>>>;

#[derive(Debug, Default)]
pub struct ChannelCounters {
    pub blocks: AtomicU64,
    pub transactions: AtomicU64,
    pub timeout_cuts: AtomicU64,
}

struct ChannelQueue {
    intake: Mutex<Option<Sender<Transaction>>>,
    receiver: Mutex<Option<Receiver<Transaction>>>,
    queued: Receiver<Transaction>,
    subscribers: Subscribers,
    counters: Arc<ChannelCounters>,
}

pub struct Orderer {
    key: Arc<PrivateKey>,
    config: CutterConfig,
    channels: BTreeMap<String, ChannelQueue>,
    cutters: Mutex<Vec<JoinHandle<()>>>,
}

impl Orderer {
    pub fn new(key: PrivateKey, channels: &[String], config: CutterConfig) -> Orderer {
        assert!(config.block_size >= 1, "block size must be positive");
        assert!(!config.block_timeout.is_zero(), "block timeout must be positive");
        let channels = channels
            .iter()
            .map(|id| {
                let (tx, rx) = bounded(config.capacity());
                let q = ChannelQueue {
                    intake: Mutex::new(Some(tx)),
                    receiver: Mutex::new(Some(rx.clone())),
                    queued: rx,
                    subscribers: Arc::default(),
                    counters: Arc::default(),
                };
                (id.clone(), q)
            })
            .collect();
        Orderer { key: Arc::new(key), config, channels, cutters: Mutex::default() }
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }

    pub fn config(&self) -> CutterConfig {
        self.config
    }

    pub fn channel_ids(&self) -> Vec<String> {
        self.channels.keys().cloned().collect()
    }

    /// Registers a block consumer. Subscribe before [`Orderer::start`] to
    /// see every block.
    pub fn subscribe(&self, channel: &str, sink: Sender<Delivery>) -> Result<(), OrdererError> {
        let q = self.channels.get(channel).ok_or_else(|| OrdererError::UnknownChannel(channel.to_string()))?;
        q.subscribers.lock().push(sink);
        Ok(())
    }

    /// Starts one cutter per channel. Idempotent.
    pub fn start(&self) {
        let mut cutters = self.cutters.lock();
        for (id, q) in &self.channels {
            let Some(rx) = q.receiver.lock().take() else { continue };
            let key = self.key.clone();
            let config = self.config;
            // Shutdown detaches subscribers, so the cutter keeps its own
            // handles to deliver what is still pending.
            let sinks = q.subscribers.lock().clone();
            let counters = q.counters.clone();
            let handle = thread::Builder::new()
                .name(format!("cutter-{id}"))
                .spawn(move || cut_loop(rx, config, &key, sinks, &counters))
                .expect("spawn cutter");
            cutters.push(handle);
        }
    }

    /// Enqueues `tx` on its channel without inspecting it.
    pub fn broadcast(&self, tx: Transaction) -> Result<BroadcastAck, OrdererError> {
        let q = self.channels.get(&tx.channel_id).ok_or_else(|| OrdererError::UnknownChannel(tx.channel_id.clone()))?;
        let intake = q.intake.lock().clone().ok_or(OrdererError::Stopped)?;
        let channel = tx.channel_id.clone();
        match intake.try_send(tx) {
            Ok(()) => Ok(BroadcastAck { enqueued_at_ns: clock::now_ns() }),
            Err(TrySendError::Full(_)) => Err(OrdererError::QueueFull(channel)),
            Err(TrySendError::Disconnected(_)) => Err(OrdererError::Stopped),
        }
    }

    pub fn queue_len(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, |q| q.queued.len())
    }

    pub fn counters(&self, channel: &str) -> Option<Arc<ChannelCounters>> {
        self.channels.get(channel).map(|q| q.counters.clone())
    }

    /// Stops intake, cuts whatever is pending and waits for the cutters.
    /// Subscribers see their channels close afterwards.
    pub fn shutdown(&self) {
        for q in self.channels.values() {
            q.intake.lock().take();
            // Never started: nothing will drain these.
            q.receiver.lock().take();
            q.subscribers.lock().clear();
        }
        let cutters: Vec<_> = self.cutters.lock().drain(..).collect();
        for c in cutters {
            let _ = c.join();
        }
    }
}

impl Drop for Orderer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn cut_loop(
    intake: Receiver<Transaction>,
    config: CutterConfig,
    key: &PrivateKey,
    mut sinks: Vec<Sender<Delivery>>,
    counters: &ChannelCounters,
) {
    let mut prev: Option<BlockHeader> = None;
    let mut pending: Vec<Transaction> = Vec::with_capacity(config.block_size);
    let mut deadline: Option<Instant> = None;
    let mut cut = |pending: &mut Vec<Transaction>, by_timeout: bool, sinks: &mut Vec<Sender<Delivery>>| {
        let txs = std::mem::replace(pending, Vec::with_capacity(config.block_size));
        let mut block = Block::new(prev.as_ref(), txs);
        block.metadata.orderer_sig = identity::sign(key, &block.header.to_bytes());
        prev = Some(block.header.clone());
        counters.blocks.fetch_add(1, Ordering::Relaxed);
        counters.transactions.fetch_add(block.transactions.len() as u64, Ordering::Relaxed);
        if by_timeout {
            counters.timeout_cuts.fetch_add(1, Ordering::Relaxed);
        }
        let delivery = Delivery { block: Arc::new(block), cut_at_ns: clock::now_ns() };
        sinks.retain(|s| s.send(delivery.clone()).is_ok());
    };
    loop {
        let next = match deadline {
            Some(d) => intake.recv_deadline(d),
            None => intake.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match next {
            Ok(tx) => {
                if pending.is_empty() {
                    deadline = Some(Instant::now() + config.block_timeout);
                }
                pending.push(tx);
                if pending.len() >= config.block_size {
                    cut(&mut pending, false, &mut sinks);
                    deadline = None;
                }
            }
            Err(RecvTimeoutError::Timeout) => {
                if !pending.is_empty() {
                    cut(&mut pending, true, &mut sinks);
                }
                deadline = None;
            }
            Err(RecvTimeoutError::Disconnected) => {
                if !pending.is_empty() {
                    cut(&mut pending, false, &mut sinks);
                }
                break;
            }
        }
    }
}
