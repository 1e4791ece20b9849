//! Simplified membership service.
//!
//! Each organization has a root Ed25519 key that signs member certificates.
//! Validating an endorsement costs three crypto steps: deserializing the
//! certificate, finding the organization whose root key signed it, and
//! verifying the signature over the payload. The certificate does not name
//! a trustworthy issuer, so resolution tries every configured root in
//! `org_id` order. [`MspCache`] memoizes the first two steps.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};

use crate::arc::ArcCache;
use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::digest::Digest;

pub use ed25519_dalek::SigningKey as PrivateKey;

pub const DEFAULT_CACHE_CAPACITY: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Role {
    Member,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Member => "member",
            Role::Admin => "admin",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "member" => Some(Role::Member),
            "admin" => Some(Role::Admin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Principal {
    pub org_id: String,
    pub role: Role,
}

impl Principal {
    pub fn new(org_id: impl Into<String>, role: Role) -> Self {
        Principal { org_id: org_id.into(), role }
    }

    pub fn member(org_id: impl Into<String>) -> Self {
        Self::new(org_id, Role::Member)
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.org_id, self.role.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentityError {
    MalformedIdentity,
    UnknownMsp,
    Revoked { org_id: String, subject: String },
}

impl fmt::Display for IdentityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdentityError::MalformedIdentity => f.write_str("malformed serialized identity"),
            IdentityError::UnknownMsp => f.write_str("no configured MSP validates the identity"),
            IdentityError::Revoked { org_id, subject } => write!(f, "identity {subject} of {org_id} is revoked"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for IdentityError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub org_id: String,
    pub subject: String,
    pub role: Role,
    pub public_key: [u8; 32],
    /// Root key's signature over `org_id ‖ subject ‖ role ‖ public_key`.
    pub msp_signature: [u8; 64],
}

impl Certificate {
    fn signed_part(org_id: &str, subject: &str, role: Role, public_key: &[u8; 32]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(org_id).str(subject).u8(role as u8).raw(public_key);
        enc.finish()
    }

    pub fn issue(root: &SigningKey, org_id: &str, subject: &str, role: Role, public_key: [u8; 32]) -> Self {
        let msp_signature = root.sign(&Self::signed_part(org_id, subject, role, &public_key)).to_bytes();
        Certificate { org_id: org_id.to_string(), subject: subject.to_string(), role, public_key, msp_signature }
    }

    /// Principals this identity can satisfy. Admins also count as members.
    pub fn principals(&self) -> Vec<Principal> {
        match self.role {
            Role::Member => alloc::vec![Principal::member(self.org_id.clone())],
            Role::Admin => alloc::vec![
                Principal::member(self.org_id.clone()),
                Principal::new(self.org_id.clone(), Role::Admin),
            ],
        }
    }

    fn issued_by(&self, root_public_key: &[u8; 32]) -> bool {
        let msg = Self::signed_part(&self.org_id, &self.subject, self.role, &self.public_key);
        verify(root_public_key, &msg, &self.msp_signature)
    }
}

impl Encode for Certificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.org_id)
            .str(&self.subject)
            .u8(self.role as u8)
            .raw(&self.public_key)
            .raw(&self.msp_signature);
    }
}

impl Decode for Certificate {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let org_id = dec.str()?;
        let subject = dec.str()?;
        let role = match dec.u8()? {
            0 => Role::Member,
            1 => Role::Admin,
            tag => return Err(DecodeError::InvalidTag { what: "role", tag }),
        };
        Ok(Certificate { org_id, subject, role, public_key: dec.array()?, msp_signature: dec.array()? })
    }
}

/// A certificate together with its private key.
#[derive(Clone)]
pub struct SigningIdentity {
    pub cert: Certificate,
    key: SigningKey,
    serialized: Vec<u8>,
}

impl fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningIdentity").field("cert", &self.cert).finish_non_exhaustive()
    }
}

impl SigningIdentity {
    pub fn new(cert: Certificate, key: SigningKey) -> Self {
        let serialized = cert.to_bytes();
        SigningIdentity { cert, key, serialized }
    }

    pub fn issue(root: &SigningKey, org_id: &str, subject: &str, role: Role, key: SigningKey) -> Self {
        let cert = Certificate::issue(root, org_id, subject, role, key.verifying_key().to_bytes());
        Self::new(cert, key)
    }

    pub fn serialized(&self) -> &[u8] {
        &self.serialized
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        sign(&self.key, message)
    }
}

/// Deterministic key from an arbitrary seed label.
pub fn key_from_seed(seed: &[u8]) -> SigningKey {
    SigningKey::from_bytes(&Digest::of(seed).0)
}

pub fn sign(key: &SigningKey, message: &[u8]) -> Vec<u8> {
    key.sign(message).to_bytes().to_vec()
}

pub fn verify(public_key: &[u8; 32], message: &[u8], signature: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    vk.verify_strict(message, &sig).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MspConfig {
    pub org_id: String,
    pub root_public_key: [u8; 32],
    pub revoked: BTreeSet<String>,
}

impl MspConfig {
    pub fn new(org_id: impl Into<String>, root_public_key: [u8; 32]) -> Self {
        MspConfig { org_id: org_id.into(), root_public_key, revoked: BTreeSet::new() }
    }
}

#[derive(Debug, Default)]
pub struct CryptoCounters {
    pub deserialize_count: AtomicU64,
    pub verify_count: AtomicU64,
    /// Identity-to-MSP validations actually performed (one per uncached
    /// resolution, however many roots it tries).
    pub msp_validation_count: AtomicU64,
    /// Root-key checks that did not match the certificate.
    pub msp_validation_failures: AtomicU64,
    /// Every root-key check attempted, successful or not.
    pub msp_root_checks: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CounterSnapshot {
    pub deserialize_count: u64,
    pub verify_count: u64,
    pub msp_validation_count: u64,
    pub msp_validation_failures: u64,
    pub msp_root_checks: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl CounterSnapshot {
    pub fn add(&mut self, o: &CounterSnapshot) {
        self.deserialize_count += o.deserialize_count;
        self.verify_count += o.verify_count;
        self.msp_validation_count += o.msp_validation_count;
        self.msp_validation_failures += o.msp_validation_failures;
        self.msp_root_checks += o.msp_root_checks;
        self.cache_hits += o.cache_hits;
        self.cache_misses += o.cache_misses;
    }
}

impl CryptoCounters {
    fn bump(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let r = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            deserialize_count: r(&self.deserialize_count),
            verify_count: r(&self.verify_count),
            msp_validation_count: r(&self.msp_validation_count),
            msp_validation_failures: r(&self.msp_validation_failures),
            msp_root_checks: r(&self.msp_root_checks),
            cache_hits: r(&self.cache_hits),
            cache_misses: r(&self.cache_misses),
        }
    }
}

/// The two identity caches, each an ARC with its own capacity.
pub struct MspCache {
    deserialized: spin::Mutex<ArcCache<Digest, Arc<Certificate>>>,
    resolved: spin::Mutex<ArcCache<Digest, (String, String)>>,
}

impl MspCache {
    pub fn new(capacity: usize) -> Self {
        MspCache {
            deserialized: spin::Mutex::new(ArcCache::new(capacity)),
            resolved: spin::Mutex::new(ArcCache::new(capacity)),
        }
    }

    /// Live entries in (deserialization map, MSP map).
    pub fn live_entries(&self) -> (usize, usize) {
        (self.deserialized.lock().len(), self.resolved.lock().len())
    }

    pub fn invalidate(&self, subject: &str) {
        self.deserialized.lock().retain(|_, cert| cert.subject != subject);
        self.resolved.lock().retain(|_, (_, s)| s != subject);
    }
}

pub type VerifyHook = Arc<dyn Fn() + Send + Sync>;

/// Identity validation against the configured organizations, with optional
/// caching and an optional hook charged once per signature check (used to
/// calibrate crypto cost in benchmarks).
pub struct Membership {
    msps: spin::RwLock<Vec<MspConfig>>,
    cache: Option<MspCache>,
    counters: CryptoCounters,
    verify_hook: Option<VerifyHook>,
}

impl Membership {
    pub fn new(mut msps: Vec<MspConfig>) -> Self {
        msps.sort_by(|a, b| a.org_id.cmp(&b.org_id));
        Membership { msps: spin::RwLock::new(msps), cache: None, counters: CryptoCounters::default(), verify_hook: None }
    }

    pub fn with_cache(mut self, capacity: usize) -> Self {
        self.cache = Some(MspCache::new(capacity));
        self
    }

    pub fn with_verify_hook(mut self, hook: VerifyHook) -> Self {
        self.verify_hook = Some(hook);
        self
    }

    pub fn cache(&self) -> Option<&MspCache> {
        self.cache.as_ref()
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn org_ids(&self) -> Vec<String> {
        self.msps.read().iter().map(|m| m.org_id.clone()).collect()
    }

    fn charge(&self) {
        if let Some(hook) = &self.verify_hook {
            hook();
        }
    }

    pub fn deserialize_identity(&self, bytes: &[u8]) -> Result<Arc<Certificate>, IdentityError> {
        let Some(cache) = &self.cache else {
            CryptoCounters::bump(&self.counters.deserialize_count);
            return Certificate::from_bytes(bytes).map(Arc::new).map_err(|_| IdentityError::MalformedIdentity);
        };
        let key = Digest::of(bytes);
        if let Some(cert) = cache.deserialized.lock().get(&key) {
            CryptoCounters::bump(&self.counters.cache_hits);
            return Ok(cert.clone());
        }
        CryptoCounters::bump(&self.counters.cache_misses);
        CryptoCounters::bump(&self.counters.deserialize_count);
        let cert = Arc::new(Certificate::from_bytes(bytes).map_err(|_| IdentityError::MalformedIdentity)?);
        cache.deserialized.lock().insert(key, cert.clone());
        Ok(cert)
    }

    /// Finds the organization whose root key issued `cert`.
    pub fn resolve_msp(&self, cert: &Certificate) -> Result<String, IdentityError> {
        let key = self.cache.as_ref().map(|_| Digest::of(&cert.to_bytes()));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some((org, _)) = cache.resolved.lock().get(key) {
                CryptoCounters::bump(&self.counters.cache_hits);
                return Ok(org.clone());
            }
            CryptoCounters::bump(&self.counters.cache_misses);
        }

        CryptoCounters::bump(&self.counters.msp_validation_count);
        let msps = self.msps.read();
        let mut found = None;
        for msp in msps.iter() {
            CryptoCounters::bump(&self.counters.msp_root_checks);
            self.charge();
            if cert.issued_by(&msp.root_public_key) {
                found = Some(msp);
                break;
            }
            CryptoCounters::bump(&self.counters.msp_validation_failures);
        }
        let msp = found.ok_or(IdentityError::UnknownMsp)?;
        if msp.revoked.contains(&cert.subject) {
            return Err(IdentityError::Revoked { org_id: msp.org_id.clone(), subject: cert.subject.clone() });
        }
        let org = msp.org_id.clone();
        drop(msps);
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.resolved.lock().insert(key, (org.clone(), cert.subject.clone()));
        }
        Ok(org)
    }

    /// Deserializes and resolves in one step.
    pub fn validate_identity(&self, bytes: &[u8]) -> Result<(Arc<Certificate>, String), IdentityError> {
        let cert = self.deserialize_identity(bytes)?;
        let org = self.resolve_msp(&cert)?;
        Ok((cert, org))
    }

    pub fn verify_signature(&self, cert: &Certificate, message: &[u8], signature: &[u8]) -> bool {
        CryptoCounters::bump(&self.counters.verify_count);
        self.charge();
        verify(&cert.public_key, message, signature)
    }

    /// Adds `subject` to the revocation list of `org_id` and drops any
    /// cached entry for it.
    pub fn revoke(&self, org_id: &str, subject: &str) {
        {
            let mut msps = self.msps.write();
            if let Some(m) = msps.iter_mut().find(|m| m.org_id == org_id) {
                m.revoked.insert(subject.to_string());
            }
        }
        self.invalidate(subject);
    }

    pub fn invalidate(&self, subject: &str) {
        if let Some(cache) = &self.cache {
            cache.invalidate(subject);
        }
    }
}
