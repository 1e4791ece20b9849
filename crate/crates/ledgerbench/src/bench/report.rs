use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ledgerbench_core::identity::CounterSnapshot;
use ledgerbench_core::{Digest, ValidationCode};
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::clock::ns_to_ms;
use crate::peer::PhaseTimings;
use crate::statedb::DbStatsSnapshot;

/// How a submission ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Valid,
    BadEndorsement,
    MvccConflict,
    PhantomRead,
    EndorsementTimeout,
    /// Endorsement refused or responses that still disagreed after a retry.
    EndorsementFailed,
    /// The orderer's intake was full.
    BroadcastRejected,
    /// Acknowledged by the orderer but not seen committed in time.
    Unresolved,
}

impl Outcome {
    pub const ALL: [Outcome; 8] = [
        Outcome::Valid,
        Outcome::BadEndorsement,
        Outcome::MvccConflict,
        Outcome::PhantomRead,
        Outcome::EndorsementTimeout,
        Outcome::EndorsementFailed,
        Outcome::BroadcastRejected,
        Outcome::Unresolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Valid => "VALID",
            Outcome::BadEndorsement => "BAD_ENDORSEMENT",
            Outcome::MvccConflict => "MVCC_CONFLICT",
            Outcome::PhantomRead => "PHANTOM_READ",
            Outcome::EndorsementTimeout => "ENDORSEMENT_TIMEOUT",
            Outcome::EndorsementFailed => "ENDORSEMENT_FAILED",
            Outcome::BroadcastRejected => "BROADCAST_REJECTED",
            Outcome::Unresolved => "UNRESOLVED",
        }
    }
}

impl From<ValidationCode> for Outcome {
    fn from(c: ValidationCode) -> Self {
        match c {
            ValidationCode::Valid => Outcome::Valid,
            ValidationCode::BadEndorsement => Outcome::BadEndorsement,
            ValidationCode::MvccConflict => Outcome::MvccConflict,
            ValidationCode::PhantomRead => Outcome::PhantomRead,
        }
    }
}

/// Timestamps are nanoseconds on the process clock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub seq: u64,
    pub channel: String,
    pub tx_id: Option<Digest>,
    pub t_scheduled: u64,
    pub t_proposal_sent: Option<u64>,
    pub t_endorsed: Option<u64>,
    pub t_broadcast_sent: Option<u64>,
    pub t_broadcast_acked: Option<u64>,
    pub t_cut: Option<u64>,
    pub t_committed: Option<u64>,
    pub block: Option<u64>,
    pub outcome: Option<Outcome>,
}

impl TxRecord {
    pub fn outcome(&self) -> Outcome {
        self.outcome.unwrap_or(Outcome::Unresolved)
    }

    fn span(a: Option<u64>, b: Option<u64>) -> Option<u64> {
        Some(b?.saturating_sub(a?))
    }

    pub fn endorsement_ns(&self) -> Option<u64> {
        Self::span(self.t_proposal_sent, self.t_endorsed)
    }

    pub fn broadcast_ns(&self) -> Option<u64> {
        Self::span(self.t_broadcast_sent, self.t_broadcast_acked)
    }

    pub fn ordering_ns(&self) -> Option<u64> {
        Self::span(self.t_broadcast_acked, self.t_cut)
    }

    pub fn commit_ns(&self) -> Option<u64> {
        Self::span(self.t_broadcast_acked, self.t_committed)
    }

    pub fn total_ns(&self) -> Option<u64> {
        Self::span(self.t_proposal_sent, self.t_committed)
    }
}

/// Valid and all committed transactions per second, counting commits in
/// `[start_ns, end_ns)`.
pub fn window_throughput(records: &[TxRecord], start_ns: u64, end_ns: u64) -> (f64, f64) {
    let secs = end_ns.saturating_sub(start_ns) as f64 / 1e9;
    if secs <= 0.0 {
        return (0.0, 0.0);
    }
    let committed: Vec<&TxRecord> =
        records.iter().filter(|r| r.t_committed.is_some_and(|t| t >= start_ns && t < end_ns)).collect();
    let valid = committed.iter().filter(|r| r.outcome == Some(Outcome::Valid)).count();
    (valid as f64 / secs, committed.len() as f64 / secs)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(samples: impl IntoIterator<Item = f64>) -> Stats {
        let mut v: Vec<f64> = samples.into_iter().collect();
        if v.is_empty() {
            return Stats::default();
        }
        v.sort_by(f64::total_cmp);
        Stats {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: percentile(&v, 50.0),
            p95: percentile(&v, 95.0),
            p99: percentile(&v, 99.0),
            max: v[v.len() - 1],
        }
    }
}

/// Milliseconds throughout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub endorsement: Stats,
    pub broadcast: Stats,
    pub commit: Stats,
    pub total: Stats,
    /// Time from orderer acknowledgement to block cut. Not comparable with
    /// a production ordering service.
    pub ordering_noncomparable: Stats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub count: usize,
    pub vscc_ms: Stats,
    pub mvcc_ms: Stats,
    pub ledger_update_ms: Stats,
    pub write_lock_wait_ms: Stats,
    pub vscc_queue_length: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub submitted: u64,
    pub outcomes: BTreeMap<Outcome, u64>,
    pub window_start_s: f64,
    pub window_s: f64,
    /// VALID commits inside the window per second of window.
    pub throughput_tps: f64,
    /// Commits of any validation code inside the window per second.
    pub committed_tps: f64,
    /// Over submissions whose proposal was sent inside the window.
    pub latency_ms: LatencyReport,
    /// Blocks committed by the observing peer, all channels.
    pub blocks: BlockReport,
    /// Summed over all peers.
    pub crypto: CounterSnapshot,
    /// Summed over all peers and channels.
    pub db: DbStatsSnapshot,
    pub policy_fetches: u64,
    pub orderer_blocks: u64,
    pub orderer_timeout_cuts: u64,
    pub peer_faults: Vec<String>,
    /// Every exported channel ledger passed verification.
    pub ledger_verified: bool,
}

impl RunReport {
    pub fn count(&self, o: Outcome) -> u64 {
        self.outcomes.get(&o).copied().unwrap_or(0)
    }

    /// Every submission has exactly one outcome.
    pub fn is_conserved(&self) -> bool {
        self.outcomes.values().sum::<u64>() == self.submitted
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "profile {} | {} channel(s) | block {} / {} ms | {:?} db | rate {} tps for {} s",
            c.profile, c.channels, c.block_size, c.block_timeout_ms, c.backend, c.arrival_rate, c.duration_s
        );
        let _ = writeln!(s, "submitted {:>8}", self.submitted);
        for o in Outcome::ALL {
            let n = self.count(o);
            if n > 0 {
                let _ = writeln!(s, "  {:<20} {:>8}", o.as_str(), n);
            }
        }
        let _ = writeln!(s, "throughput {:>10.1} tps (valid), {:.1} tps (all committed)", self.throughput_tps, self.committed_tps);
        let _ = writeln!(s, "{:<24}{:>10}{:>10}{:>10}{:>10}{:>10}", "latency (ms)", "mean", "p50", "p95", "p99", "max");
        let l = &self.latency_ms;
        let b = &self.blocks;
        for (name, st) in [
            ("endorsement", &l.endorsement),
            ("broadcast", &l.broadcast),
            ("commit", &l.commit),
            ("total", &l.total),
            ("ordering (bonus)", &l.ordering_noncomparable),
            ("block vscc", &b.vscc_ms),
            ("block mvcc", &b.mvcc_ms),
            ("block ledger update", &b.ledger_update_ms),
        ] {
            let _ = writeln!(s, "{name:<24}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}", st.mean, st.p50, st.p95, st.p99, st.max);
        }
        let _ = writeln!(s, "vscc queue length mean {:.2} max {:.0}", b.vscc_queue_length.mean, b.vscc_queue_length.max);
        let k = &self.crypto;
        let _ = writeln!(
            s,
            "crypto: deserialize {} verify {} msp validations {} root checks {} (failed {}) cache hits {} misses {}",
            k.deserialize_count,
            k.verify_count,
            k.msp_validation_count,
            k.msp_root_checks,
            k.msp_validation_failures,
            k.cache_hits,
            k.cache_misses
        );
        let d = &self.db;
        let _ = writeln!(
            s,
            "db: get {} put {} bulk get {} bulk put {} range {} lock wait {:.1} ms; policy fetches {}",
            d.get_requests,
            d.put_requests,
            d.bulk_get_requests,
            d.bulk_put_requests,
            d.range_requests,
            ns_to_ms(d.lock_wait_total_ns),
            self.policy_fetches
        );
        for f in &self.peer_faults {
            let _ = writeln!(s, "peer fault: {f}");
        }
        s
    }
}

fn opt_ms(ns: Option<u64>) -> String {
    ns.map(|n| format!("{:.3}", ns_to_ms(n))).unwrap_or_default()
}

pub fn write_latency_csv(path: &Path, records: &[TxRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "seq,channel,tx_id,outcome,block,proposal_sent_ms,endorsement_ms,broadcast_ms,ordering_ms,commit_ms,total_ms")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.seq,
            r.channel,
            r.tx_id.map(|d| d.to_hex()).unwrap_or_default(),
            r.outcome().as_str(),
            r.block.map(|b| b.to_string()).unwrap_or_default(),
            opt_ms(r.t_proposal_sent),
            opt_ms(r.endorsement_ns()),
            opt_ms(r.broadcast_ns()),
            opt_ms(r.ordering_ns()),
            opt_ms(r.commit_ns()),
            opt_ms(r.total_ns()),
        )?;
    }
    out.flush()
}

/// One committed block as seen by the observing peer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub channel: String,
    pub timings: PhaseTimings,
    pub valid: usize,
    pub cut_at_ns: u64,
    pub committed_at_ns: u64,
}

pub fn write_timeline_csv(path: &Path, blocks: &[BlockRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "channel,block,tx_count,valid,cut_ms,committed_ms,vscc_ms,mvcc_ms,ledger_update_ms,write_lock_wait_ms,vscc_queue_length")?;
    for b in blocks {
        let t = &b.timings;
        writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
            b.channel,
            t.block_number,
            t.tx_count,
            b.valid,
            ns_to_ms(b.cut_at_ns),
            ns_to_ms(b.committed_at_ns),
            ns_to_ms(t.vscc_ns),
            ns_to_ms(t.mvcc_ns),
            ns_to_ms(t.ledger_update_ns),
            ns_to_ms(t.write_lock_wait_ns),
            t.queue_length
        )?;
    }
    out.flush()
}
