use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::thread::{self, JoinHandle};

use crossbeam_channel::Receiver;
use ledgerbench_core::{Digest, ValidationCode};
use serde::{Deserialize, Serialize};

/// Published once per committed block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub peer: String,
    pub channel: String,
    pub block_number: u64,
    pub tx_ids: Vec<Digest>,
    pub flags: Vec<ValidationCode>,
    /// When the orderer cut the block.
    pub cut_at_ns: u64,
    pub committed_at_ns: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub block_number: u64,
    pub tx_count: usize,
    pub vscc_ns: u64,
    pub mvcc_ns: u64,
    pub ledger_update_ns: u64,
    /// Time spent waiting for the exclusive database lock before MVCC.
    pub write_lock_wait_ns: u64,
    /// Blocks waiting in the delivery queue when this one was taken.
    pub queue_length: usize,
}

#[derive(Serialize)]
struct FeedLine<'a> {
    peer: &'a str,
    channel: &'a str,
    block: u64,
    committed_at_ns: u64,
    txs: Vec<FeedTx>,
}

#[derive(Serialize)]
struct FeedTx {
    tx_id: Digest,
    code: ValidationCode,
}

/// Writes every event received on `events` as one JSON line to `path` until
/// the sender side disconnects.
pub fn spawn_commit_feed(events: Receiver<CommitEvent>, path: &Path) -> io::Result<JoinHandle<io::Result<()>>> {
    let mut out = BufWriter::new(File::create(path)?);
    Ok(thread::Builder::new().name("commit-feed".into()).spawn(move || {
        for ev in events {
            let line = FeedLine {
                peer: &ev.peer,
                channel: &ev.channel,
                block: ev.block_number,
                committed_at_ns: ev.committed_at_ns,
                txs: ev.tx_ids.iter().zip(&ev.flags).map(|(id, code)| FeedTx { tx_id: *id, code: *code }).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    })?)
}
