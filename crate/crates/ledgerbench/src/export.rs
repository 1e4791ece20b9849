//! Ledger export: a header record (magic, format version, orderer public
//! key) followed by one length-prefixed canonical block per record.
//!
//! [`verify_export`] accepts a file only if it decodes strictly, the chain
//! verifies, and every block header carries a valid orderer signature, so
//! any single-byte change to an exported file is rejected.

use std::fs;
use std::path::Path;

use ledgerbench_core::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use ledgerbench_core::identity;
use ledgerbench_core::model::verify_chain;
use ledgerbench_core::Block;
use serde_json::{json, Value};

pub const MAGIC: &[u8; 8] = b"LBLEDGER";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerExport {
    pub orderer_key: [u8; 32],
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExportError {
    #[error("not a ledger export")]
    BadMagic,
    #[error("unsupported export format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed export: {0}")]
    Decode(#[from] DecodeError),
    #[error("hash chain does not verify")]
    BrokenChain,
    #[error("block {0} has an invalid orderer signature")]
    BadOrdererSignature(u64),
    #[error("exported by an unexpected orderer")]
    UnexpectedOrderer,
}

pub fn encode_export(orderer_key: &[u8; 32], blocks: &[Block]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(MAGIC).u32(FORMAT_VERSION).raw(orderer_key);
    for b in blocks {
        enc.bytes(&b.to_bytes());
    }
    enc.finish()
}

pub fn decode_export(bytes: &[u8]) -> Result<LedgerExport, ExportError> {
    let mut dec = Decoder::new(bytes);
    if dec.array::<8>().map_err(|_| ExportError::BadMagic)? != *MAGIC {
        return Err(ExportError::BadMagic);
    }
    let version = dec.u32()?;
    if version != FORMAT_VERSION {
        return Err(ExportError::UnsupportedVersion(version));
    }
    let orderer_key = dec.array::<32>()?;
    let mut blocks = Vec::new();
    while dec.remaining() > 0 {
        blocks.push(Block::from_bytes(&dec.bytes()?)?);
    }
    dec.finish()?;
    Ok(LedgerExport { orderer_key, blocks })
}

/// Decodes and checks an export. With `expected_orderer`, the embedded
/// orderer key must also match it.
pub fn verify_export(bytes: &[u8], expected_orderer: Option<&[u8; 32]>) -> Result<LedgerExport, ExportError> {
    let export = decode_export(bytes)?;
    if expected_orderer.is_some_and(|k| *k != export.orderer_key) {
        return Err(ExportError::UnexpectedOrderer);
    }
    if !verify_chain(&export.blocks) {
        return Err(ExportError::BrokenChain);
    }
    for b in &export.blocks {
        if !identity::verify(&export.orderer_key, &b.header.to_bytes(), &b.metadata.orderer_sig) {
            return Err(ExportError::BadOrdererSignature(b.header.number));
        }
    }
    Ok(export)
}

pub fn write_export(path: &Path, orderer_key: &[u8; 32], blocks: &[Block]) -> std::io::Result<()> {
    fs::write(path, encode_export(orderer_key, blocks))
}

/// Human-readable rendering for debugging; not a stable format.
pub fn render_json(export: &LedgerExport) -> Value {
    let blocks: Vec<Value> = export
        .blocks
        .iter()
        .map(|b| {
            let txs: Vec<Value> = b
                .transactions
                .iter()
                .zip(b.metadata.validity.iter().map(Some).chain(std::iter::repeat(None)))
                .map(|(tx, code)| {
                    json!({
                        "tx_id": tx.tx_id,
                        "channel": tx.channel_id,
                        "chaincode": tx.chaincode_id,
                        "validation": code,
                        "reads": tx.rwset.reads.iter().map(|r| json!({"key": r.key, "version": r.version})).collect::<Vec<_>>(),
                        "writes": tx.rwset.writes.iter().map(|w| json!({"key": w.key, "value": hex::encode(&w.value)})).collect::<Vec<_>>(),
                        "endorsements": tx.endorsements.len(),
                    })
                })
                .collect();
            json!({
                "number": b.header.number,
                "prev_hash": b.header.prev_hash,
                "data_hash": b.header.data_hash,
                "commit_hash": b.metadata.commit_hash,
                "orderer_sig": hex::encode(&b.metadata.orderer_sig),
                "transactions": txs,
            })
        })
        .collect();
    json!({ "orderer_key": hex::encode(export.orderer_key), "blocks": blocks })
}
