//! Load generator, commit tracker and report.
//!
//! Submissions are scheduled open-loop at fixed spacing and spread over
//! channels round-robin. A pool of client workers endorses each one at a
//! minimal satisfying set of peers, assembles the envelope and broadcasts
//! it. A tracker follows the commit events of the first peer. Throughput
//! and latencies are computed over a window that drops the first and last
//! tenth of the load period.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, Context};
use crossbeam_channel::{bounded, select, unbounded};
use ledgerbench_core::identity::CounterSnapshot;
use ledgerbench_core::policy::parse_policy;
use ledgerbench_core::{Digest, ValidationCode, VersionedValue};
use parking_lot::Mutex;
use rand::Rng;

use crate::clock::{self, ns_to_ms};
use crate::export::{encode_export, verify_export};
use crate::network::{Network, NetworkSpec, CHAINCODE};
use crate::peer::{spawn_commit_feed, Peer};
use crate::statedb::DbStatsSnapshot;

mod config;
pub mod load;
mod report;
pub mod sweep;

pub use config::{Optimizations, RunConfig};
pub use load::{choose_keys, endorse_transaction, key_name, submission_rng, EndorserPlan, Endorsed};
pub use report::{
    percentile, window_throughput, write_latency_csv, write_timeline_csv, BlockRecord, BlockReport, LatencyReport, Outcome, RunReport,
    Stats, TxRecord,
};

/// Everything a run produced.
pub struct RunOutput {
    pub report: RunReport,
    pub records: Vec<TxRecord>,
    pub blocks: Vec<BlockRecord>,
    /// Exported ledger of each channel, as committed by the first peer.
    pub ledgers: BTreeMap<String, Vec<u8>>,
    /// Final world state of each channel on the first peer.
    pub states: BTreeMap<String, BTreeMap<String, VersionedValue>>,
}

impl RunOutput {
    /// `report.json`, `latency.csv`, `timeline.csv` and one
    /// `ledger-<channel>.bin` per channel.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        write_latency_csv(&dir.join("latency.csv"), &self.records)?;
        write_timeline_csv(&dir.join("timeline.csv"), &self.blocks)?;
        for (ch, bytes) in &self.ledgers {
            std::fs::write(dir.join(format!("ledger-{ch}.bin")), bytes)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Progress {
    acked: AtomicU64,
    resolved: AtomicU64,
}

struct BlockSeen {
    cut_at_ns: u64,
    committed_at_ns: u64,
    valid: usize,
}

fn sleep_until(ns: u64) {
    let now = clock::now_ns();
    if ns > now {
        thread::sleep(Duration::from_nanos(ns - now));
    }
}

pub fn run(config: &RunConfig) -> anyhow::Result<RunOutput> {
    run_with_feed(config, None)
}

/// Runs the benchmark; with `commit_feed`, every commit event of the first
/// peer is also written there as JSON lines.
pub fn run_with_feed(config: &RunConfig, commit_feed: Option<&Path>) -> anyhow::Result<RunOutput> {
    config.validate()?;
    let spec = NetworkSpec::generate(&config.keygen());
    let mut net = Network::new(spec, &config.network_options())?;
    let policy = parse_policy(&config.policy).map_err(|e| anyhow!("policy: {e}"))?;
    let plan = EndorserPlan::new(&policy, &net.org_ids())
        .ok_or_else(|| anyhow!("no set of member endorsements satisfies the policy"))?;
    let mut peers_by_org: BTreeMap<String, Vec<Arc<Peer>>> = BTreeMap::new();
    for p in &net.peers {
        peers_by_org.entry(p.org().to_string()).or_default().push(p.clone());
    }
    let mut clients = Vec::new();
    for (o, org) in net.spec.orgs.iter().enumerate() {
        for c in 0..org.clients.len() {
            clients.push(net.spec.client(o, c)?);
        }
    }
    let channels: Vec<String> = net.spec.channels.iter().map(|c| c.id.clone()).collect();
    let observer = net.peers[0].clone();
    let events = observer.subscribe();
    let feed = match commit_feed {
        Some(path) => Some(spawn_commit_feed(observer.subscribe(), path)?),
        None => None,
    };

    let profile = config.profile();
    let n = config.submissions();
    let records: Vec<Mutex<TxRecord>> = (0..n)
        .map(|seq| {
            Mutex::new(TxRecord { seq, channel: channels[(seq % channels.len() as u64) as usize].clone(), ..Default::default() })
        })
        .collect();
    let index: Mutex<HashMap<Digest, u64>> = Mutex::default();
    let progress = Progress::default();
    let blocks_seen: Mutex<BTreeMap<(String, u64), BlockSeen>> = Mutex::default();

    net.start();
    let spacing_ns = 1e9 / config.arrival_rate;
    let duration_ns = (config.duration_s * 1e9) as u64;
    let t0 = clock::now_ns() + 50_000_000;

    let (stop_tx, stop_rx) = bounded::<()>(0);
    thread::scope(|s| {
        let tracker = s.spawn(|| loop {
            select! {
                recv(events) -> ev => {
                    let Ok(ev) = ev else { break };
                    let index = index.lock();
                    for (id, flag) in ev.tx_ids.iter().zip(&ev.flags) {
                        let Some(&seq) = index.get(id) else { continue };
                        let mut r = records[seq as usize].lock();
                        if r.t_committed.is_none() {
                            r.t_committed = Some(ev.committed_at_ns);
                            r.t_cut = Some(ev.cut_at_ns);
                            r.block = Some(ev.block_number);
                            r.outcome = Some(Outcome::from(*flag));
                            progress.resolved.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    drop(index);
                    blocks_seen.lock().insert(
                        (ev.channel.clone(), ev.block_number),
                        BlockSeen {
                            cut_at_ns: ev.cut_at_ns,
                            committed_at_ns: ev.committed_at_ns,
                            valid: ev.flags.iter().filter(|f| **f == ValidationCode::Valid).count(),
                        },
                    );
                }
                recv(stop_rx) -> _ => break,
            }
        });

        let (job_tx, job_rx) = unbounded::<u64>();
        let workers: Vec<_> = (0..config.client_workers.min(n.max(1) as usize))
            .map(|_| {
                let job_rx = job_rx.clone();
                let (records, index, progress, plan, peers_by_org, clients, net) =
                    (&records, &index, &progress, &plan, &peers_by_org, &clients, &net);
                s.spawn(move || {
                    for seq in job_rx {
                        let channel = records[seq as usize].lock().channel.clone();
                        let mut rng = submission_rng(config.seed, seq);
                        let keys = choose_keys(&mut rng, config.keyspace, profile.key_count);
                        let nonce: u64 = rng.gen();
                        let client = &clients[(seq % clients.len() as u64) as usize];
                        let targets = plan.targets(seq, peers_by_org);
                        let proposal = client.propose(&channel, CHAINCODE, profile, keys, nonce);
                        let sent = clock::now_ns();
                        let endorsed = endorse_transaction(client, &targets, &proposal);
                        let endorsed_at = clock::now_ns();
                        {
                            let mut r = records[seq as usize].lock();
                            r.t_proposal_sent = Some(sent);
                            r.t_endorsed = Some(endorsed_at);
                        }
                        let tx = match endorsed {
                            Endorsed::Ready(tx) => tx,
                            Endorsed::Timeout => {
                                records[seq as usize].lock().outcome = Some(Outcome::EndorsementTimeout);
                                continue;
                            }
                            Endorsed::Failed(_) => {
                                records[seq as usize].lock().outcome = Some(Outcome::EndorsementFailed);
                                continue;
                            }
                        };
                        let id = tx.tx_id;
                        index.lock().insert(id, seq);
                        records[seq as usize].lock().tx_id = Some(id);
                        let broadcast_at = clock::now_ns();
                        let result = net.orderer.broadcast(tx);
                        let acked_at = clock::now_ns();
                        let mut r = records[seq as usize].lock();
                        r.t_broadcast_sent = Some(broadcast_at);
                        match result {
                            Ok(_) => {
                                r.t_broadcast_acked = Some(acked_at);
                                progress.acked.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(_) => {
                                r.outcome = Some(Outcome::BroadcastRejected);
                                drop(r);
                                index.lock().remove(&id);
                            }
                        }
                    }
                })
            })
            .collect();
        drop(job_rx);

        for seq in 0..n {
            let at = t0 + (seq as f64 * spacing_ns) as u64;
            sleep_until(at);
            records[seq as usize].lock().t_scheduled = at;
            let _ = job_tx.send(seq);
        }
        drop(job_tx);
        for w in workers {
            w.join().expect("client worker panicked");
        }
        let deadline = clock::now_ns().max(t0 + duration_ns) + (config.grace_s * 1e9) as u64;
        while progress.resolved.load(Ordering::Relaxed) < progress.acked.load(Ordering::Relaxed)
            && clock::now_ns() < deadline
        {
            thread::sleep(Duration::from_millis(5));
        }
        let _ = stop_tx.send(());
        tracker.join().expect("tracker panicked");
    });

    let faults = net.shutdown();
    let records: Vec<TxRecord> = records.into_iter().map(Mutex::into_inner).collect();

    let window_start = t0 + duration_ns / 10;
    let window_end = t0 + duration_ns - duration_ns / 10;
    let window_s = (window_end - window_start) as f64 / 1e9;
    let in_window = |t: Option<u64>| t.is_some_and(|t| t >= window_start && t < window_end);
    let (throughput_tps, committed_tps) = window_throughput(&records, window_start, window_end);
    let windowed: Vec<&TxRecord> = records.iter().filter(|r| in_window(r.t_proposal_sent)).collect();
    let lat = |f: fn(&TxRecord) -> Option<u64>| Stats::of(windowed.iter().filter_map(|r| f(r)).map(ns_to_ms));
    let latency_ms = LatencyReport {
        endorsement: lat(TxRecord::endorsement_ns),
        broadcast: lat(TxRecord::broadcast_ns),
        commit: lat(TxRecord::commit_ns),
        total: lat(TxRecord::total_ns),
        ordering_noncomparable: lat(TxRecord::ordering_ns),
    };

    let mut outcomes = BTreeMap::new();
    for r in &records {
        *outcomes.entry(r.outcome()).or_insert(0u64) += 1;
    }

    let seen = blocks_seen.into_inner();
    let mut blocks = Vec::new();
    for ch in &channels {
        for t in observer.timings(ch) {
            let info = seen.get(&(ch.clone(), t.block_number));
            blocks.push(BlockRecord {
                channel: ch.clone(),
                timings: t,
                valid: info.map_or(0, |i| i.valid),
                cut_at_ns: info.map_or(0, |i| i.cut_at_ns),
                committed_at_ns: info.map_or(0, |i| i.committed_at_ns),
            });
        }
    }
    let bstat = |f: fn(&BlockRecord) -> f64| Stats::of(blocks.iter().map(f));
    let block_report = BlockReport {
        count: blocks.len(),
        vscc_ms: bstat(|b| ns_to_ms(b.timings.vscc_ns)),
        mvcc_ms: bstat(|b| ns_to_ms(b.timings.mvcc_ns)),
        ledger_update_ms: bstat(|b| ns_to_ms(b.timings.ledger_update_ns)),
        write_lock_wait_ms: bstat(|b| ns_to_ms(b.timings.write_lock_wait_ns)),
        vscc_queue_length: bstat(|b| b.timings.queue_length as f64),
    };

    let mut crypto = CounterSnapshot::default();
    let mut db = DbStatsSnapshot::default();
    for p in &net.peers {
        crypto.add(&p.membership().counters());
        db.add(&p.db_stats());
    }
    let policy_fetches = net.peers.iter().map(|p| p.policy_fetches()).sum();
    let (mut orderer_blocks, mut orderer_timeout_cuts) = (0, 0);
    for ch in &channels {
        if let Some(c) = net.orderer.counters(ch) {
            orderer_blocks += c.blocks.load(Ordering::Relaxed);
            orderer_timeout_cuts += c.timeout_cuts.load(Ordering::Relaxed);
        }
    }

    let orderer_key = net.orderer.public_key();
    let mut ledgers = BTreeMap::new();
    let mut states = BTreeMap::new();
    let mut ledger_verified = true;
    for ch in &channels {
        let bytes = encode_export(&orderer_key, &observer.ledger(ch));
        ledger_verified &= verify_export(&bytes, Some(&orderer_key)).is_ok();
        ledgers.insert(ch.clone(), bytes);
        states.insert(ch.clone(), observer.state(ch)?);
    }
    // The feed ends once every peer, and with it every event sender, is gone.
    drop((net, observer, peers_by_org));
    if let Some(feed) = feed {
        feed.join().map_err(|_| anyhow!("commit feed panicked"))??;
    }

    let report = RunReport {
        config: config.clone(),
        submitted: n,
        outcomes,
        window_start_s: (window_start.saturating_sub(t0)) as f64 / 1e9,
        window_s,
        throughput_tps,
        committed_tps,
        latency_ms,
        blocks: block_report,
        crypto,
        db,
        policy_fetches,
        orderer_blocks,
        orderer_timeout_cuts,
        peer_faults: faults.iter().map(|(p, ch, e)| format!("{p} on {ch}: {e}")).collect(),
        ledger_verified,
    };
    Ok(RunOutput { report, records, blocks, ledgers, states })
}

/// Valid-commit throughput of `config` driven well past capacity at
/// `overload_rate`.
pub fn saturation_throughput(config: &RunConfig, overload_rate: f64) -> anyhow::Result<f64> {
    let cfg = RunConfig { arrival_rate: overload_rate, ..config.clone() };
    Ok(run(&cfg)?.report.throughput_tps)
}
