mod common;

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{fixture, Fixture, CHANNEL};
use crossbeam_channel::{unbounded, Receiver};
use ledgerbench::network::DEFAULT_POLICY;
use ledgerbench::orderer::{CutterConfig, Delivery, Orderer, OrdererError};
use ledgerbench_core::codec::Encode;
use ledgerbench_core::identity;
use ledgerbench_core::{Block, Transaction};

fn orderer(f: &Fixture, channels: &[&str], cfg: CutterConfig) -> (Arc<Orderer>, Vec<Receiver<Delivery>>) {
    let ids: Vec<String> = channels.iter().map(|c| c.to_string()).collect();
    let o = Arc::new(Orderer::new(f.orderer.clone(), &ids, cfg));
    let rxs = ids
        .iter()
        .map(|c| {
            let (tx, rx) = unbounded();
            o.subscribe(c, tx).unwrap();
            rx
        })
        .collect();
    (o, rxs)
}

fn cutter(block_size: usize, timeout_ms: u64) -> CutterConfig {
    CutterConfig { block_size, block_timeout: Duration::from_millis(timeout_ms), queue_capacity: None }
}

fn tagged(f: &Fixture, channel: &str, client: u64, seq: u64) -> Transaction {
    let mut tx = f.write_tx(&format!("c{client}-{seq}"), client << 32 | seq, &[0]);
    tx.channel_id = channel.to_string();
    tx
}

fn tag(tx: &Transaction) -> (u64, u64) {
    (tx.nonce >> 32, tx.nonce & 0xffff_ffff)
}

fn check_stream(f: &Fixture, blocks: &[Block], size: usize) {
    let pk = f.orderer_pk();
    let mut prev: Option<&Block> = None;
    for (i, b) in blocks.iter().enumerate() {
        assert_eq!(b.header.number, i as u64);
        assert_eq!(b.header.prev_hash, prev.map_or(Default::default(), |p| p.header.hash()));
        assert_eq!(b.header.data_hash, Block::data_hash(&b.transactions));
        assert!(identity::verify(&pk, &b.header.to_bytes(), &b.metadata.orderer_sig));
        assert!(!b.transactions.is_empty() && b.transactions.len() <= size);
        prev = Some(b);
    }
}

#[test]
fn broadcast_acks_and_queues() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, _rx) = orderer(&f, &[CHANNEL], cutter(30, 1000));
    assert_eq!(o.queue_len(CHANNEL), 0);
    o.broadcast(tagged(&f, CHANNEL, 0, 0)).unwrap();
    assert_eq!(o.queue_len(CHANNEL), 1);
    assert_eq!(o.broadcast(tagged(&f, "nowhere", 0, 1)).unwrap_err(), OrdererError::UnknownChannel("nowhere".into()));
}

#[test]
fn full_queue_rejects() {
    let f = fixture(4, DEFAULT_POLICY);
    let cfg = CutterConfig { queue_capacity: Some(2), ..cutter(30, 1000) };
    let (o, _rx) = orderer(&f, &[CHANNEL], cfg);
    o.broadcast(tagged(&f, CHANNEL, 0, 0)).unwrap();
    o.broadcast(tagged(&f, CHANNEL, 0, 1)).unwrap();
    assert_eq!(o.broadcast(tagged(&f, CHANNEL, 0, 2)).unwrap_err(), OrdererError::QueueFull(CHANNEL.into()));
    assert_eq!(CutterConfig::default().capacity(), 300);
}

#[test]
fn concurrent_clients_each_tx_once_in_client_order() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, rxs) = orderer(&f, &[CHANNEL], CutterConfig { queue_capacity: Some(2000), ..cutter(30, 50) });
    o.start();
    let txs: Vec<Vec<Transaction>> = (0..4).map(|c| (0..250).map(|s| tagged(&f, CHANNEL, c, s)).collect()).collect();
    thread::scope(|s| {
        for client in txs {
            let o = &o;
            s.spawn(move || {
                for tx in client {
                    o.broadcast(tx).unwrap();
                }
            });
        }
    });
    o.shutdown();
    let blocks: Vec<Block> = rxs[0].try_iter().map(|d| (*d.block).clone()).collect();
    check_stream(&f, &blocks, 30);
    let mut next: HashMap<u64, u64> = HashMap::new();
    let mut total = 0;
    for tx in blocks.iter().flat_map(|b| &b.transactions) {
        let (c, s) = tag(tx);
        let expected = next.entry(c).or_insert(0);
        assert_eq!(s, *expected, "client {c} out of order");
        *expected += 1;
        total += 1;
    }
    assert_eq!(total, 1000);
    assert!(next.values().all(|n| *n == 250));
    let c = o.counters(CHANNEL).unwrap();
    assert_eq!(c.transactions.load(Ordering::Relaxed), 1000);
    let small = blocks.iter().filter(|b| b.transactions.len() < 30).count() as u64;
    assert!(small <= c.timeout_cuts.load(Ordering::Relaxed) + 1, "short blocks only from timeouts or the final flush");
}

#[test]
fn cuts_by_timeout_and_never_empty() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, rxs) = orderer(&f, &[CHANNEL], cutter(30, 300));
    o.start();
    thread::sleep(Duration::from_millis(700));
    assert!(rxs[0].try_recv().is_err(), "idle orderer cut a block");
    let first = Instant::now();
    for s in 0..5 {
        o.broadcast(tagged(&f, CHANNEL, 0, s)).unwrap();
    }
    let d = rxs[0].recv_timeout(Duration::from_secs(2)).unwrap();
    let waited = first.elapsed();
    assert_eq!(d.block.transactions.len(), 5);
    assert!(waited >= Duration::from_millis(300) && waited < Duration::from_millis(550), "{waited:?}");
    thread::sleep(Duration::from_millis(700));
    assert!(rxs[0].try_recv().is_err());
    assert_eq!(o.counters(CHANNEL).unwrap().timeout_cuts.load(Ordering::Relaxed), 1);
}

#[test]
fn size_cut_is_immediate_and_rearms_timeout() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, rxs) = orderer(&f, &[CHANNEL], cutter(10, 400));
    o.start();
    let start = Instant::now();
    for s in 0..11 {
        o.broadcast(tagged(&f, CHANNEL, 0, s)).unwrap();
    }
    let full = rxs[0].recv_timeout(Duration::from_secs(1)).unwrap();
    assert_eq!(full.block.transactions.len(), 10);
    assert!(start.elapsed() < Duration::from_millis(200));
    let rest = rxs[0].recv_timeout(Duration::from_secs(2)).unwrap();
    assert_eq!(rest.block.transactions.len(), 1);
    assert!(start.elapsed() >= Duration::from_millis(400));
    assert!(full.cut_at_ns < rest.cut_at_ns);
}

#[test]
fn channels_are_ordered_independently() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, rxs) = orderer(&f, &["x", "y"], cutter(7, 50));
    o.start();
    for s in 0..40 {
        o.broadcast(tagged(&f, "x", 0, s)).unwrap();
        if s % 3 == 0 {
            o.broadcast(tagged(&f, "y", 1, s)).unwrap();
        }
    }
    o.shutdown();
    let x: Vec<Block> = rxs[0].try_iter().map(|d| (*d.block).clone()).collect();
    let y: Vec<Block> = rxs[1].try_iter().map(|d| (*d.block).clone()).collect();
    check_stream(&f, &x, 7);
    check_stream(&f, &y, 7);
    let xs: Vec<u64> = x.iter().flat_map(|b| &b.transactions).map(|t| tag(t).1).collect();
    let ys: Vec<u64> = y.iter().flat_map(|b| &b.transactions).map(|t| tag(t).1).collect();
    assert_eq!(xs, (0..40).collect::<Vec<_>>());
    assert_eq!(ys, (0..40).step_by(3).collect::<Vec<_>>());
    assert!(x.iter().flat_map(|b| &b.transactions).all(|t| t.channel_id == "x"));
}

#[test]
fn broadcast_after_shutdown_is_refused() {
    let f = fixture(4, DEFAULT_POLICY);
    let (o, rxs) = orderer(&f, &[CHANNEL], cutter(30, 1000));
    o.start();
    o.broadcast(tagged(&f, CHANNEL, 0, 0)).unwrap();
    o.shutdown();
    assert_eq!(rxs[0].try_iter().count(), 1, "pending transactions are flushed on shutdown");
    assert_eq!(o.broadcast(tagged(&f, CHANNEL, 0, 1)).unwrap_err(), OrdererError::Stopped);
}
