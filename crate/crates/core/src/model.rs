//! Transactions, read-write sets, blocks and the hash chain.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::digest::{Digest, Hasher};

/// Position of the transaction that last wrote a key: block height, then
/// index inside that block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Version {
    pub block_num: u64,
    pub tx_num: u64,
}

impl Version {
    pub const fn new(block_num: u64, tx_num: u64) -> Self {
        Version { block_num, tx_num }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.block_num, self.tx_num)
    }
}

impl Encode for Version {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.block_num).u64(self.tx_num);
    }
}

impl Decode for Version {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Version { block_num: dec.u64()?, tx_num: dec.u64()? })
    }
}

impl Encode for Option<Version> {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            None => {
                enc.u8(0);
            }
            Some(v) => {
                enc.u8(1).put(v);
            }
        }
    }
}

impl Decode for Option<Version> {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(None),
            1 => Ok(Some(dec.get()?)),
            tag => Err(DecodeError::InvalidTag { what: "optional version", tag }),
        }
    }
}

/// A state-database cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub version: Version,
    /// Per-key write counter kept by the remote document store.
    pub revision: Option<u64>,
}

impl VersionedValue {
    pub fn new(value: Vec<u8>, version: Version) -> Self {
        VersionedValue { value, version, revision: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvRead {
    pub key: String,
    /// `None` when the key did not exist at simulation time.
    pub version: Option<Version>,
}

impl Encode for KvRead {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.key).put(&self.version);
    }
}

impl Decode for KvRead {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(KvRead { key: dec.str()?, version: dec.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeQueryInfo {
    pub start_key: String,
    pub end_key: String,
    pub result_hash: Digest,
}

impl Encode for RangeQueryInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.start_key).str(&self.end_key).put(&self.result_hash);
    }
}

impl Decode for RangeQueryInfo {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(RangeQueryInfo { start_key: dec.str()?, end_key: dec.str()?, result_hash: dec.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvWrite {
    pub key: String,
    pub value: Vec<u8>,
}

impl Encode for KvWrite {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.key).bytes(&self.value);
    }
}

impl Decode for KvWrite {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(KvWrite { key: dec.str()?, value: dec.bytes()? })
    }
}

/// Hash of a range query's result: the ordered `(key, value, version)`
/// triples as seen by the query.
pub fn range_result_hash<'a, I>(results: I) -> Digest
where
    I: IntoIterator<Item = (&'a str, &'a [u8], Version)>,
{
    let mut enc = Encoder::new();
    for (key, value, version) in results {
        enc.str(key).bytes(value).put(&version);
    }
    Digest::of(&enc.finish())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadWriteSet {
    pub reads: Vec<KvRead>,
    pub range_queries: Vec<RangeQueryInfo>,
    pub writes: Vec<KvWrite>,
}

impl ReadWriteSet {
    /// Keys must be unique within `reads` and within `writes`.
    pub fn is_well_formed(&self) -> bool {
        fn unique<'a>(mut keys: Vec<&'a str>) -> bool {
            let n = keys.len();
            keys.sort_unstable();
            keys.dedup();
            keys.len() == n
        }
        unique(self.reads.iter().map(|r| r.key.as_str()).collect())
            && unique(self.writes.iter().map(|w| w.key.as_str()).collect())
    }
}

impl Encode for ReadWriteSet {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.reads).list(&self.range_queries).list(&self.writes);
    }
}

impl Decode for ReadWriteSet {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let rw = ReadWriteSet { reads: dec.list()?, range_queries: dec.list()?, writes: dec.list()? };
        if !rw.is_well_formed() {
            return Err(DecodeError::Invalid("duplicate key in read-write set"));
        }
        Ok(rw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    /// Serialized certificate of the endorsing peer.
    pub identity: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Encode for Endorsement {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.identity).bytes(&self.signature);
    }
}

impl Decode for Endorsement {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Endorsement { identity: dec.bytes()?, signature: dec.bytes()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub channel_id: String,
    pub chaincode_id: String,
    pub nonce: u64,
    /// Serialized certificate of the submitting client.
    pub creator: Vec<u8>,
    pub rwset: ReadWriteSet,
    pub response: Vec<u8>,
    pub endorsements: Vec<Endorsement>,
    pub client_sig: Vec<u8>,
    /// Nanoseconds on the submitting process's monotonic clock.
    pub created_at: u64,
}

impl Transaction {
    pub fn compute_tx_id(channel_id: &str, chaincode_id: &str, nonce: u64, rwset: &ReadWriteSet) -> Digest {
        let mut enc = Encoder::new();
        enc.str(channel_id).str(chaincode_id).u64(nonce).put(rwset);
        Digest::of(&enc.finish())
    }

    /// The message every endorser signs: transaction id, canonical
    /// read-write set and response value.
    pub fn endorsement_payload(tx_id: &Digest, rwset: &ReadWriteSet, response: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put(tx_id).put(rwset).bytes(response);
        enc.finish()
    }

    /// The message the client signs when it submits the envelope.
    pub fn envelope_payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put(&self.tx_id)
            .str(&self.channel_id)
            .str(&self.chaincode_id)
            .bytes(&self.creator)
            .list(&self.endorsements);
        enc.finish()
    }

    pub fn has_consistent_id(&self) -> bool {
        self.tx_id == Self::compute_tx_id(&self.channel_id, &self.chaincode_id, self.nonce, &self.rwset)
    }
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.tx_id)
            .str(&self.channel_id)
            .str(&self.chaincode_id)
            .u64(self.nonce)
            .bytes(&self.creator)
            .put(&self.rwset)
            .bytes(&self.response)
            .list(&self.endorsements)
            .bytes(&self.client_sig)
            .u64(self.created_at);
    }
}

impl Decode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            tx_id: dec.get()?,
            channel_id: dec.str()?,
            chaincode_id: dec.str()?,
            nonce: dec.u64()?,
            creator: dec.bytes()?,
            rwset: dec.get()?,
            response: dec.bytes()?,
            endorsements: dec.list()?,
            client_sig: dec.bytes()?,
            created_at: dec.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
#[repr(u8)]
pub enum ValidationCode {
    Valid = 0,
    BadEndorsement = 1,
    MvccConflict = 2,
    PhantomRead = 3,
}

impl ValidationCode {
    pub const ALL: [ValidationCode; 4] = [
        ValidationCode::Valid,
        ValidationCode::BadEndorsement,
        ValidationCode::MvccConflict,
        ValidationCode::PhantomRead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValidationCode::Valid => "VALID",
            ValidationCode::BadEndorsement => "BAD_ENDORSEMENT",
            ValidationCode::MvccConflict => "MVCC_CONFLICT",
            ValidationCode::PhantomRead => "PHANTOM_READ",
        }
    }

    pub fn from_u8(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn is_valid(self) -> bool {
        self == ValidationCode::Valid
    }
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Encode for ValidationCode {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(*self as u8);
    }
}

impl Decode for ValidationCode {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.u8()?;
        ValidationCode::from_u8(tag).ok_or(DecodeError::InvalidTag { what: "validation code", tag })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub number: u64,
    pub prev_hash: Digest,
    pub data_hash: Digest,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest {
        hash_header(self)
    }
}

impl Encode for BlockHeader {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.number).put(&self.prev_hash).put(&self.data_hash);
    }
}

impl Decode for BlockHeader {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader { number: dec.u64()?, prev_hash: dec.get()?, data_hash: dec.get()? })
    }
}

pub fn hash_header(header: &BlockHeader) -> Digest {
    Digest::of(&header.to_bytes())
}

/// Fields filled in after ordering. `validity` and `commit_hash` are set by
/// the committing peer; the orderer only provides the signature.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockMetadata {
    pub validity: Vec<ValidationCode>,
    pub orderer_sig: Vec<u8>,
    /// Chains the validity flags: `H(prev commit hash ‖ header hash ‖ flags)`.
    pub commit_hash: Digest,
}

impl Encode for BlockMetadata {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.validity).bytes(&self.orderer_sig).put(&self.commit_hash);
    }
}

impl Decode for BlockMetadata {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BlockMetadata { validity: dec.list()?, orderer_sig: dec.bytes()?, commit_hash: dec.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub metadata: BlockMetadata,
}

impl Block {
    /// Builds an unsigned, unvalidated block on top of `prev` (or as block 0).
    pub fn new(prev: Option<&BlockHeader>, transactions: Vec<Transaction>) -> Block {
        let (number, prev_hash) = match prev {
            Some(h) => (h.number + 1, h.hash()),
            None => (0, Digest::ZERO),
        };
        let data_hash = Self::data_hash(&transactions);
        Block {
            header: BlockHeader { number, prev_hash, data_hash },
            transactions,
            metadata: BlockMetadata::default(),
        }
    }

    pub fn data_hash(transactions: &[Transaction]) -> Digest {
        let mut enc = Encoder::new();
        enc.list(transactions);
        Digest::of(&enc.finish())
    }

    pub fn commit_hash(prev_commit: &Digest, header: &BlockHeader, validity: &[ValidationCode]) -> Digest {
        let mut h = Hasher::new();
        h.update(&prev_commit.0).update(&header.hash().0);
        let flags: Vec<u8> = validity.iter().map(|c| *c as u8).collect();
        h.update(&flags);
        h.finish()
    }

    /// Records the validation outcome and chains it onto `prev_commit`.
    pub fn seal(&mut self, prev_commit: &Digest, validity: Vec<ValidationCode>) {
        self.metadata.commit_hash = Self::commit_hash(prev_commit, &self.header, &validity);
        self.metadata.validity = validity;
    }
}

impl Encode for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.header).list(&self.transactions).put(&self.metadata);
    }
}

impl Decode for Block {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Block { header: dec.get()?, transactions: dec.list()?, metadata: dec.get()? })
    }
}

/// Checks a committed ledger: numbering from 0, `prev_hash` links, data
/// hashes, one validity flag per transaction and the commit-hash chain.
pub fn verify_chain(blocks: &[Block]) -> bool {
    let mut prev_header: Option<&BlockHeader> = None;
    let mut prev_commit = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        let h = &block.header;
        if h.number != i as u64 {
            return false;
        }
        let expected_prev = prev_header.map_or(Digest::ZERO, hash_header);
        if h.prev_hash != expected_prev {
            return false;
        }
        if h.data_hash != Block::data_hash(&block.transactions) {
            return false;
        }
        if block.metadata.validity.len() != block.transactions.len() {
            return false;
        }
        let commit = Block::commit_hash(&prev_commit, h, &block.metadata.validity);
        if block.metadata.commit_hash != commit {
            return false;
        }
        prev_header = Some(h);
        prev_commit = commit;
    }
    true
}
