//! Fixed chaincode workloads: write-only or read-then-rewrite over 1, 3 or
//! 5 keys.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::model::{KvRead, KvWrite, ReadWriteSet, VersionedValue};

pub const DEFAULT_VALUE_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProfileKind {
    WriteOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChaincodeProfile {
    pub kind: ProfileKind,
    pub key_count: usize,
    pub value_size: usize,
}

impl ChaincodeProfile {
    pub const fn write_only(key_count: usize) -> Self {
        ChaincodeProfile { kind: ProfileKind::WriteOnly, key_count, value_size: DEFAULT_VALUE_SIZE }
    }

    pub const fn read_write(key_count: usize) -> Self {
        ChaincodeProfile { kind: ProfileKind::ReadWrite, key_count, value_size: DEFAULT_VALUE_SIZE }
    }

    pub fn with_value_size(mut self, value_size: usize) -> Self {
        self.value_size = value_size;
        self
    }
}

impl Default for ChaincodeProfile {
    fn default() -> Self {
        Self::write_only(1)
    }
}

impl fmt::Display for ChaincodeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.kind {
            ProfileKind::WriteOnly => "w",
            ProfileKind::ReadWrite => "rw",
        };
        write!(f, "{}{}", self.key_count, suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownProfile(pub String);

impl fmt::Display for UnknownProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown profile {:?} (expected 1w, 3w, 5w, 1rw, 3rw or 5rw)", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for UnknownProfile {}

impl FromStr for ChaincodeProfile {
    type Err = UnknownProfile;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || UnknownProfile(s.into());
        let (count, kind) = if let Some(n) = s.strip_suffix("rw") {
            (n, ProfileKind::ReadWrite)
        } else if let Some(n) = s.strip_suffix('w') {
            (n, ProfileKind::WriteOnly)
        } else {
            return Err(err());
        };
        let key_count = match count {
            "1" => 1,
            "3" => 3,
            "5" => 5,
            _ => return Err(err()),
        };
        Ok(ChaincodeProfile { kind, key_count, value_size: DEFAULT_VALUE_SIZE })
    }
}

/// Serialized as its short name (`"3rw"`); the value size is not carried.
#[cfg(feature = "serde")]
impl serde::Serialize for ChaincodeProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ChaincodeProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Read access to committed state during simulation.
pub trait StateReader {
    type Error;

    fn get(&mut self, key: &str) -> Result<Option<VersionedValue>, Self::Error>;
}

/// Deterministic fresh value for a write-only workload.
pub fn fresh_value(nonce: u64, key: &str, size: usize) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u64(nonce).str(key);
    let seed = Digest::of(&enc.finish());
    seed.0.iter().copied().cycle().take(size).collect()
}

/// Rewrites a value: the first `size` bytes are kept (zero-padded) and a
/// trailing counter byte is incremented.
pub fn transform_value(old: Option<&[u8]>, size: usize) -> Vec<u8> {
    let old = old.unwrap_or(&[]);
    let mut out: Vec<u8> = old.iter().copied().chain(core::iter::repeat(0)).take(size).collect();
    let counter = if old.len() > size { old[size].wrapping_add(1) } else { 0 };
    out.push(counter);
    out
}

/// Runs the profile against `state`: reads record the committed version,
/// writes go to the returned set only.
pub fn simulate<R: StateReader>(
    profile: &ChaincodeProfile,
    keys: &[String],
    nonce: u64,
    state: &mut R,
) -> Result<(ReadWriteSet, Vec<u8>), R::Error> {
    let mut rw = ReadWriteSet::default();
    for key in keys {
        if rw.writes.iter().any(|w| &w.key == key) {
            continue;
        }
        match profile.kind {
            ProfileKind::WriteOnly => rw.writes.push(KvWrite {
                key: key.clone(),
                value: fresh_value(nonce, key, profile.value_size),
            }),
            ProfileKind::ReadWrite => {
                let current = state.get(key)?;
                rw.reads.push(KvRead { key: key.clone(), version: current.as_ref().map(|v| v.version) });
                rw.writes.push(KvWrite {
                    key: key.clone(),
                    value: transform_value(current.as_ref().map(|v| v.value.as_slice()), profile.value_size),
                });
            }
        }
    }
    let response = alloc::format!("ok:{}", rw.writes.len()).into_bytes();
    Ok((rw, response))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Version;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;
    use core::convert::Infallible;

    struct Map(BTreeMap<String, VersionedValue>, usize);

    impl StateReader for Map {
        type Error = Infallible;
        fn get(&mut self, key: &str) -> Result<Option<VersionedValue>, Infallible> {
            self.1 += 1;
            Ok(self.0.get(key).cloned())
        }
    }

    #[test]
    fn parse_profiles() {
        for s in ["1w", "3w", "5w", "1rw", "3rw", "5rw"] {
            assert_eq!(s.parse::<ChaincodeProfile>().unwrap().to_string(), s);
        }
        assert!("2w".parse::<ChaincodeProfile>().is_err());
        assert!("1r".parse::<ChaincodeProfile>().is_err());
    }

    #[test]
    fn one_write_of_twenty_bytes() {
        let mut m = Map(BTreeMap::new(), 0);
        let (rw, _) = simulate(&ChaincodeProfile::write_only(1), &["k".to_string()], 1, &mut m).unwrap();
        assert!(rw.reads.is_empty());
        assert_eq!(rw.writes.len(), 1);
        assert_eq!(rw.writes[0].value.len(), 20);
        assert_eq!(m.1, 0, "write-only simulation never reads state");
    }

    #[test]
    fn read_write_records_committed_version() {
        let mut state = BTreeMap::new();
        state.insert("k".to_string(), VersionedValue::new(vec![9; 21], Version::new(7, 2)));
        let mut m = Map(state, 0);
        let (rw, _) = simulate(&ChaincodeProfile::read_write(1), &["k".to_string()], 1, &mut m).unwrap();
        assert_eq!(rw.reads, vec![KvRead { key: "k".into(), version: Some(Version::new(7, 2)) }]);
        assert_eq!(rw.writes[0].key, "k");
        assert_eq!(rw.writes[0].value, transform_value(Some(&[9; 21]), 20));
    }

    #[test]
    fn transform_keeps_size_plus_counter() {
        let v0 = transform_value(None, 20);
        assert_eq!(v0.len(), 21);
        let v1 = transform_value(Some(&v0), 20);
        assert_eq!(v1.len(), 21);
        assert_eq!(v1[20], v0[20] + 1);
    }

    #[test]
    fn duplicate_keys_write_once() {
        let mut m = Map(BTreeMap::new(), 0);
        let keys = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        let (rw, _) = simulate(&ChaincodeProfile::write_only(3), &keys, 1, &mut m).unwrap();
        assert_eq!(rw.writes.len(), 2);
        assert!(rw.is_well_formed());
    }
}
