//! Network bootstrap: the JSON description of organizations, identities,
//! the orderer key and channels, and the in-process wiring of peers and
//! orderer built from it.

use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use ledgerbench_core::codec::Decode;
use ledgerbench_core::identity::{key_from_seed, Certificate, Membership, MspConfig, PrivateKey, Role, SigningIdentity};
use ledgerbench_core::policy::parse_policy;
use serde::{Deserialize, Serialize};

use crate::client::Client;
use crate::orderer::{tcp, CutterConfig, Orderer};
use crate::peer::{BackendSpec, ChannelSetup, Peer, PeerConfig, PeerError, ValidatorConfig};
use crate::statedb::server::ServerConfig;
use crate::statedb::{BackendKind, StateServer};

/// The chaincode every generated channel carries.
pub const CHAINCODE: &str = "bench";

/// Any three of four organizations.
pub const DEFAULT_POLICY: &str = "OR(AND('a.member','b.member','c.member'),AND('a.member','b.member','d.member'),AND('b.member','c.member','d.member'),AND('a.member','c.member','d.member'))";

/// Organization ids: `a`, `b`, ... then `org26`, `org27`, ...
pub fn org_id(index: usize) -> String {
    if index < 26 {
        ((b'a' + index as u8) as char).to_string()
    } else {
        format!("org{index}")
    }
}

pub fn channel_id(index: usize) -> String {
    format!("ch{index}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub orgs: Vec<OrgSpec>,
    pub orderer: OrdererSpec,
    pub channels: Vec<ChannelSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgSpec {
    pub id: String,
    pub root_public_key: String,
    #[serde(default)]
    pub revoked: Vec<String>,
    pub peers: Vec<MemberSpec>,
    pub clients: Vec<MemberSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub subject: String,
    pub role: Role,
    pub secret_key: String,
    pub certificate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdererSpec {
    pub secret_key: String,
    pub public_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: String,
    pub chaincodes: Vec<ChaincodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChaincodeSpec {
    pub id: String,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeygenOptions {
    pub orgs: usize,
    pub peers_per_org: usize,
    pub clients_per_org: usize,
    pub channels: usize,
    pub policy: String,
    pub seed: u64,
}

impl Default for KeygenOptions {
    fn default() -> Self {
        KeygenOptions {
            orgs: 4,
            peers_per_org: 1,
            clients_per_org: 1,
            channels: 1,
            policy: DEFAULT_POLICY.to_string(),
            seed: 1,
        }
    }
}

fn decode_key(hex_str: &str) -> anyhow::Result<PrivateKey> {
    let bytes: [u8; 32] = hex::decode(hex_str)?.try_into().map_err(|_| anyhow!("secret key must be 32 bytes"))?;
    Ok(PrivateKey::from_bytes(&bytes))
}

fn decode_public(hex_str: &str) -> anyhow::Result<[u8; 32]> {
    hex::decode(hex_str)?.try_into().map_err(|_| anyhow!("public key must be 32 bytes"))
}

impl MemberSpec {
    fn generate(root: &PrivateKey, org: &str, subject: &str, role: Role, seed: u64) -> MemberSpec {
        let key = key_from_seed(format!("{seed}/{org}/{subject}").as_bytes());
        let id = SigningIdentity::issue(root, org, subject, role, key);
        MemberSpec {
            subject: subject.to_string(),
            role,
            secret_key: hex::encode(id.secret_bytes()),
            certificate: hex::encode(id.serialized()),
        }
    }

    pub fn identity(&self) -> anyhow::Result<SigningIdentity> {
        let cert = Certificate::from_bytes(&hex::decode(&self.certificate)?)
            .map_err(|e| anyhow!("certificate of {}: {e}", self.subject))?;
        let key = decode_key(&self.secret_key)?;
        if key.verifying_key().to_bytes() != cert.public_key {
            bail!("secret key of {} does not match its certificate", self.subject);
        }
        Ok(SigningIdentity::new(cert, key))
    }
}

impl NetworkSpec {
    /// Deterministic key material for `opts.seed`.
    pub fn generate(opts: &KeygenOptions) -> NetworkSpec {
        let orgs = (0..opts.orgs)
            .map(|o| {
                let id = org_id(o);
                let root = key_from_seed(format!("{}/{id}/root", opts.seed).as_bytes());
                OrgSpec {
                    root_public_key: hex::encode(root.verifying_key().to_bytes()),
                    revoked: Vec::new(),
                    peers: (0..opts.peers_per_org)
                        .map(|i| MemberSpec::generate(&root, &id, &format!("peer{i}"), Role::Member, opts.seed))
                        .collect(),
                    clients: (0..opts.clients_per_org)
                        .map(|i| MemberSpec::generate(&root, &id, &format!("client{i}"), Role::Member, opts.seed))
                        .collect(),
                    id,
                }
            })
            .collect();
        let orderer = key_from_seed(format!("{}/orderer", opts.seed).as_bytes());
        NetworkSpec {
            orgs,
            orderer: OrdererSpec {
                secret_key: hex::encode(orderer.to_bytes()),
                public_key: hex::encode(orderer.verifying_key().to_bytes()),
            },
            channels: (0..opts.channels)
                .map(|c| ChannelSpec {
                    id: channel_id(c),
                    chaincodes: vec![ChaincodeSpec { id: CHAINCODE.into(), policy: opts.policy.clone() }],
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<NetworkSpec> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: NetworkSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    /// Structural checks: keys decode, certificates belong to their
    /// organization, policies parse.
    pub fn check(&self) -> anyhow::Result<()> {
        if self.orgs.is_empty() {
            bail!("network has no organizations");
        }
        let membership = self.membership()?;
        for org in &self.orgs {
            for m in org.peers.iter().chain(&org.clients) {
                let id = m.identity()?;
                let resolved = membership.resolve_msp(&id.cert);
                if !matches!(&resolved, Ok(o) if *o == org.id) && !org.revoked.contains(&m.subject) {
                    bail!("{} is not issued by organization {}", m.subject, org.id);
                }
            }
        }
        for ch in &self.channels {
            for cc in &ch.chaincodes {
                parse_policy(&cc.policy).map_err(|e| anyhow!("policy of {}/{}: {e}", ch.id, cc.id))?;
            }
        }
        self.orderer_key()?;
        Ok(())
    }

    pub fn msp_configs(&self) -> anyhow::Result<Vec<MspConfig>> {
        self.orgs
            .iter()
            .map(|o| {
                let mut msp = MspConfig::new(o.id.clone(), decode_public(&o.root_public_key)?);
                msp.revoked = o.revoked.iter().cloned().collect();
                Ok(msp)
            })
            .collect()
    }

    pub fn membership(&self) -> anyhow::Result<Membership> {
        Ok(Membership::new(self.msp_configs()?))
    }

    pub fn orderer_key(&self) -> anyhow::Result<PrivateKey> {
        let key = decode_key(&self.orderer.secret_key)?;
        if hex::encode(key.verifying_key().to_bytes()) != self.orderer.public_key {
            bail!("orderer secret key does not match its public key");
        }
        Ok(key)
    }

    pub fn channel_setups(&self) -> Vec<ChannelSetup> {
        self.channels
            .iter()
            .map(|c| ChannelSetup {
                id: c.id.clone(),
                chaincodes: c.chaincodes.iter().map(|cc| (cc.id.clone(), cc.policy.clone())).collect(),
            })
            .collect()
    }

    pub fn client(&self, org: usize, index: usize) -> anyhow::Result<Client> {
        let spec = self.orgs.get(org).and_then(|o| o.clients.get(index)).ok_or_else(|| anyhow!("no client {org}/{index}"))?;
        Ok(Client::new(spec.identity()?))
    }
}

#[derive(Debug, Clone)]
pub struct NetworkOptions {
    pub validator: ValidatorConfig,
    pub lock_mode: bool,
    pub endorsement_timeout: Duration,
    pub backend: BackendKind,
    /// External state server; `None` starts one in-process.
    pub remote_endpoint: Option<String>,
    pub remote_latency: Duration,
    /// Added to every signature check peers perform.
    pub verify_delay: Duration,
    pub msp_cache_capacity: usize,
    pub cutter: CutterConfig,
    /// Deliver blocks to peers over loopback TCP instead of in-process
    /// queues.
    pub distributed: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            validator: ValidatorConfig::default(),
            lock_mode: true,
            endorsement_timeout: Duration::from_secs(5),
            backend: BackendKind::Embedded,
            remote_endpoint: None,
            remote_latency: Duration::from_millis(1),
            verify_delay: Duration::ZERO,
            msp_cache_capacity: ledgerbench_core::identity::DEFAULT_CACHE_CAPACITY,
            cutter: CutterConfig::default(),
            distributed: false,
        }
    }
}

/// Running peers and orderer. Blocks flow once [`Network::start`] is
/// called.
pub struct Network {
    pub spec: NetworkSpec,
    pub orderer: Arc<Orderer>,
    /// All peers, grouped by organization in spec order.
    pub peers: Vec<Arc<Peer>>,
    server: Option<StateServer>,
    receivers: Vec<JoinHandle<io::Result<()>>>,
    acceptor: Option<JoinHandle<io::Result<()>>>,
}

fn unique_namespace() -> String {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("r{}x{nanos}-", std::process::id())
}

impl Network {
    pub fn new(spec: NetworkSpec, opts: &NetworkOptions) -> anyhow::Result<Network> {
        spec.check()?;
        let (server, backend) = match opts.backend {
            BackendKind::Embedded => (None, BackendSpec::Embedded),
            BackendKind::Remote => match &opts.remote_endpoint {
                Some(endpoint) => {
                    (None, BackendSpec::Remote { endpoint: endpoint.clone(), namespace: unique_namespace() })
                }
                None => {
                    let server = StateServer::start(ServerConfig { latency: opts.remote_latency, ..Default::default() })
                        .context("starting the state server")?;
                    let endpoint = server.endpoint();
                    (Some(server), BackendSpec::Remote { endpoint, namespace: String::new() })
                }
            },
        };
        let orderer = Arc::new(Orderer::new(spec.orderer_key()?, &spec.channels.iter().map(|c| c.id.clone()).collect::<Vec<_>>(), opts.cutter));
        let setups = spec.channel_setups();
        let mut peers = Vec::new();
        for org in &spec.orgs {
            for member in &org.peers {
                let mut membership = spec.membership()?;
                if !opts.verify_delay.is_zero() {
                    let d = opts.verify_delay;
                    membership = membership.with_verify_hook(Arc::new(move || thread::sleep(d)));
                }
                let config = PeerConfig {
                    name: format!("{}.{}", member.subject, org.id),
                    endorser: true,
                    validator: opts.validator,
                    lock_mode: opts.lock_mode,
                    endorsement_timeout: opts.endorsement_timeout,
                    backend: backend.clone(),
                    msp_cache_capacity: opts.msp_cache_capacity,
                };
                let peer = Peer::new(config, member.identity()?, membership, orderer.public_key(), &setups)
                    .context("joining channels")?;
                peers.push(Arc::new(peer));
            }
        }

        let mut receivers = Vec::new();
        let mut acceptor = None;
        if opts.distributed {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            acceptor = Some(tcp::serve(orderer.clone(), listener, peers.len() * setups.len()));
            for peer in &peers {
                for ch in &setups {
                    receivers.push(tcp::connect(addr, &ch.id, peer.attach(&ch.id)?)?);
                }
            }
        } else {
            for peer in &peers {
                for ch in &setups {
                    orderer.subscribe(&ch.id, peer.attach(&ch.id)?)?;
                }
            }
        }
        Ok(Network { spec, orderer, peers, server, receivers, acceptor })
    }

    pub fn start(&self) {
        self.orderer.start();
    }

    pub fn remote_endpoint(&self) -> Option<String> {
        self.server.as_ref().map(|s| s.endpoint())
    }

    pub fn org_ids(&self) -> Vec<String> {
        self.spec.orgs.iter().map(|o| o.id.clone()).collect()
    }

    pub fn peers_of(&self, org: &str) -> Vec<Arc<Peer>> {
        self.peers.iter().filter(|p| p.org() == org).cloned().collect()
    }

    /// Cuts what is pending, lets every peer drain its queue and returns
    /// the faults peers hit along the way.
    pub fn shutdown(&mut self) -> Vec<(String, String, PeerError)> {
        self.orderer.shutdown();
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for r in self.receivers.drain(..) {
            let _ = r.join();
        }
        let mut faults = Vec::new();
        for p in &self.peers {
            p.join();
            faults.extend(p.faults().into_iter().map(|(ch, e)| (p.name().to_string(), ch, e)));
        }
        faults
    }
}

impl Drop for Network {
    fn drop(&mut self) {
        self.shutdown();
    }
}
