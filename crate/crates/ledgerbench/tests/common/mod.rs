#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use ledgerbench::client::Client;
use ledgerbench::network::{KeygenOptions, NetworkSpec, CHAINCODE};
use ledgerbench::peer::{Peer, PeerConfig};
use ledgerbench_core::codec::Encode;
use ledgerbench_core::identity::{self, Membership, PrivateKey, SigningIdentity};
use ledgerbench_core::{Block, Endorsement, KvWrite, ReadWriteSet, Transaction};

pub const CHANNEL: &str = "ch0";

/// Generated identities of a small network, without anything running.
pub struct Fixture {
    pub spec: NetworkSpec,
    pub orderer: PrivateKey,
    /// First peer of each organization.
    pub peers: Vec<SigningIdentity>,
    pub clients: Vec<Client>,
}

pub fn fixture(orgs: usize, policy: &str) -> Fixture {
    let spec = NetworkSpec::generate(&KeygenOptions { orgs, policy: policy.to_string(), ..Default::default() });
    spec.check().unwrap();
    let orderer = spec.orderer_key().unwrap();
    let peers = spec.orgs.iter().map(|o| o.peers[0].identity().unwrap()).collect();
    let clients = (0..orgs).map(|o| spec.client(o, 0).unwrap()).collect();
    Fixture { spec, orderer, peers, clients }
}

impl Fixture {
    pub fn membership(&self) -> Membership {
        self.spec.membership().unwrap()
    }

    pub fn orderer_pk(&self) -> [u8; 32] {
        self.orderer.verifying_key().to_bytes()
    }

    pub fn peer(&self, org: usize, config: PeerConfig) -> Peer {
        self.peer_with(org, config, self.membership())
    }

    pub fn peer_with(&self, org: usize, config: PeerConfig, membership: Membership) -> Peer {
        Peer::new(config, self.peers[org].clone(), membership, self.orderer_pk(), &self.spec.channel_setups()).unwrap()
    }

    /// A transaction carrying `rwset`, endorsed by the peers of `orgs`.
    pub fn endorsed(&self, rwset: ReadWriteSet, nonce: u64, orgs: &[usize]) -> Transaction {
        self.endorsed_for(CHAINCODE, rwset, nonce, orgs)
    }

    pub fn endorsed_for(&self, chaincode: &str, rwset: ReadWriteSet, nonce: u64, orgs: &[usize]) -> Transaction {
        let tx_id = Transaction::compute_tx_id(CHANNEL, chaincode, nonce, &rwset);
        let payload = Transaction::endorsement_payload(&tx_id, &rwset, b"ok");
        let endorsements = orgs
            .iter()
            .map(|&o| Endorsement {
                identity: self.peers[o].serialized().to_vec(),
                signature: self.peers[o].sign(&payload),
            })
            .collect();
        Transaction {
            tx_id,
            channel_id: CHANNEL.into(),
            chaincode_id: chaincode.into(),
            nonce,
            creator: self.clients[0].identity().serialized().to_vec(),
            rwset,
            response: b"ok".to_vec(),
            endorsements,
            client_sig: Vec::new(),
            created_at: 0,
        }
    }

    pub fn write_tx(&self, key: &str, nonce: u64, orgs: &[usize]) -> Transaction {
        let rwset = ReadWriteSet { writes: vec![KvWrite { key: key.into(), value: vec![b'v'; 20] }], ..Default::default() };
        self.endorsed(rwset, nonce, orgs)
    }

    /// Cuts and signs the next block as the orderer would.
    pub fn cut(&self, prev: Option<&Block>, txs: Vec<Transaction>) -> Block {
        let mut b = Block::new(prev.map(|p| &p.header), txs);
        b.metadata.orderer_sig = identity::sign(&self.orderer, &b.header.to_bytes());
        b
    }

    /// Cuts `txs` into consecutive signed blocks of `size`.
    pub fn chain(&self, txs: Vec<Transaction>, size: usize) -> Vec<Block> {
        let mut blocks: Vec<Block> = Vec::new();
        for chunk in txs.chunks(size) {
            let b = self.cut(blocks.last(), chunk.to_vec());
            blocks.push(b);
        }
        blocks
    }
}

pub fn sleeping_hook(d: Duration) -> Arc<dyn Fn() + Send + Sync> {
    Arc::new(move || std::thread::sleep(d))
}
