use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context};
use ledgerbench_core::policy::parse_policy;
use ledgerbench_core::profile::ChaincodeProfile;
use serde::{Deserialize, Serialize};

use crate::network::{KeygenOptions, NetworkOptions, DEFAULT_POLICY};
use crate::orderer::CutterConfig;
use crate::peer::ValidatorConfig;
use crate::statedb::BackendKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Optimizations {
    pub msp_cache: bool,
    /// Endorsement-validation workers per channel; 1 validates serially.
    pub vscc_workers: usize,
    pub bulk_ops: bool,
    pub policy_cache: bool,
}

impl Default for Optimizations {
    fn default() -> Self {
        Optimizations { msp_cache: false, vscc_workers: 1, bulk_ops: false, policy_cache: false }
    }
}

impl Optimizations {
    /// Every optimization on, with `workers` validation workers.
    pub fn all(workers: usize) -> Self {
        Optimizations { msp_cache: true, vscc_workers: workers, bulk_ops: true, policy_cache: true }
    }
}

/// One benchmark run. Defaults: one channel, four organizations with one
/// peer each, 1w with 20-byte values, the any-three-of-four policy, blocks
/// of 30 or 1 s, embedded database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub channels: usize,
    pub orgs: usize,
    pub peers_per_org: usize,
    pub clients_per_org: usize,
    pub profile: ChaincodeProfile,
    pub value_size: usize,
    pub policy: String,
    pub block_size: usize,
    pub block_timeout_ms: u64,
    pub backend: BackendKind,
    /// External state server; by default one is started in-process.
    pub remote_endpoint: Option<String>,
    pub remote_latency_ms: f64,
    pub lock_mode: bool,
    pub optimizations: Optimizations,
    /// Transactions per second over all channels.
    pub arrival_rate: f64,
    pub duration_s: f64,
    pub endorsement_timeout_ms: u64,
    pub seed: u64,
    /// Distinct keys per channel.
    pub keyspace: usize,
    /// Artificial cost added to every signature check on peers.
    pub verify_delay_us: u64,
    pub msp_cache_capacity: usize,
    /// Defaults to the block size.
    pub block_queue_capacity: Option<usize>,
    /// Orderer intake bound per channel; defaults to ten blocks.
    pub orderer_queue_capacity: Option<usize>,
    pub client_workers: usize,
    /// How long to wait for outstanding commits after the last submission.
    pub grace_s: f64,
    pub distributed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            channels: 1,
            orgs: 4,
            peers_per_org: 1,
            clients_per_org: 1,
            profile: ChaincodeProfile::write_only(1),
            value_size: ledgerbench_core::profile::DEFAULT_VALUE_SIZE,
            policy: DEFAULT_POLICY.to_string(),
            block_size: 30,
            block_timeout_ms: 1000,
            backend: BackendKind::Embedded,
            remote_endpoint: None,
            remote_latency_ms: 1.0,
            lock_mode: true,
            optimizations: Optimizations::default(),
            arrival_rate: 100.0,
            duration_s: 10.0,
            endorsement_timeout_ms: 5000,
            seed: 1,
            keyspace: 10_000,
            verify_delay_us: 0,
            msp_cache_capacity: ledgerbench_core::identity::DEFAULT_CACHE_CAPACITY,
            block_queue_capacity: None,
            orderer_queue_capacity: None,
            client_workers: 128,
            grace_s: 5.0,
            distributed: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            bail!("arrival rate must be positive");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            bail!("duration must be positive");
        }
        if self.channels == 0 || self.orgs == 0 || self.peers_per_org == 0 || self.clients_per_org == 0 {
            bail!("channels, orgs, peers and clients per org must be positive");
        }
        if self.block_size == 0 || self.block_timeout_ms == 0 {
            bail!("block size and timeout must be positive");
        }
        if self.optimizations.vscc_workers == 0 || self.client_workers == 0 {
            bail!("worker counts must be positive");
        }
        if self.keyspace < self.profile.key_count {
            bail!("keyspace smaller than the profile's key count");
        }
        if self.remote_latency_ms < 0.0 || self.grace_s < 0.0 {
            bail!("latencies must be non-negative");
        }
        parse_policy(&self.policy).map_err(|e| anyhow::anyhow!("policy: {e}"))?;
        Ok(())
    }

    pub fn profile(&self) -> ChaincodeProfile {
        self.profile.with_value_size(self.value_size)
    }

    pub fn submissions(&self) -> u64 {
        (self.arrival_rate * self.duration_s).round() as u64
    }

    pub fn keygen(&self) -> KeygenOptions {
        KeygenOptions {
            orgs: self.orgs,
            peers_per_org: self.peers_per_org,
            clients_per_org: self.clients_per_org,
            channels: self.channels,
            policy: self.policy.clone(),
            seed: self.seed,
        }
    }

    pub fn network_options(&self) -> NetworkOptions {
        let o = self.optimizations;
        NetworkOptions {
            validator: ValidatorConfig {
                vscc_workers: o.vscc_workers,
                msp_cache_enabled: o.msp_cache,
                policy_cache_enabled: o.policy_cache,
                bulk_ops_enabled: o.bulk_ops,
                block_queue_capacity: self.block_queue_capacity.unwrap_or(self.block_size),
            },
            lock_mode: self.lock_mode,
            endorsement_timeout: Duration::from_millis(self.endorsement_timeout_ms),
            backend: self.backend,
            remote_endpoint: self.remote_endpoint.clone(),
            remote_latency: Duration::from_secs_f64(self.remote_latency_ms / 1e3),
            verify_delay: Duration::from_micros(self.verify_delay_us),
            msp_cache_capacity: self.msp_cache_capacity,
            cutter: CutterConfig {
                block_size: self.block_size,
                block_timeout: Duration::from_millis(self.block_timeout_ms),
                queue_capacity: self.orderer_queue_capacity,
            },
            distributed: self.distributed,
        }
    }
}
