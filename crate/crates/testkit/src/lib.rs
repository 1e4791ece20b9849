//! Reference implementations used only as test oracles. Each one takes a
//! deliberately different route from the production code it checks.

use std::collections::BTreeMap;

use ledgerbench_core::identity::Principal;
use ledgerbench_core::model::{range_result_hash, KvRead, KvWrite, RangeQueryInfo, ReadWriteSet};
use ledgerbench_core::policy::{PolicyExpr, PrincipalSet};
use ledgerbench_core::{Digest, Transaction, ValidationCode, Version, VersionedValue};
use rand::Rng;

/// Truth table of `expr` over every subset of `universe`, indexed by
/// bitmask (bit `i` set means `universe[i]` endorsed). Computed bottom-up
/// as sets of satisfying masks rather than by evaluating the tree per subset.
pub fn truth_table(expr: &PolicyExpr, universe: &[Principal]) -> Vec<bool> {
    let n = universe.len();
    assert!(n <= 16, "universe too large for a truth table");
    let masks = 1usize << n;
    fn node(e: &PolicyExpr, universe: &[Principal], masks: usize) -> Vec<bool> {
        match e {
            PolicyExpr::Signed(p) => match universe.iter().position(|u| u == p) {
                Some(bit) => (0..masks).map(|m| m & (1 << bit) != 0).collect(),
                None => vec![false; masks],
            },
            PolicyExpr::And(cs) => {
                let tables: Vec<_> = cs.iter().map(|c| node(c, universe, masks)).collect();
                (0..masks).map(|m| tables.iter().all(|t| t[m])).collect()
            }
            PolicyExpr::Or(cs) => {
                let tables: Vec<_> = cs.iter().map(|c| node(c, universe, masks)).collect();
                (0..masks).map(|m| tables.iter().any(|t| t[m])).collect()
            }
            PolicyExpr::NOutOf(k, cs) => {
                let tables: Vec<_> = cs.iter().map(|c| node(c, universe, masks)).collect();
                (0..masks).map(|m| tables.iter().filter(|t| t[m]).count() >= *k).collect()
            }
        }
    }
    node(expr, universe, masks)
}

pub fn mask_to_set(mask: usize, universe: &[Principal]) -> PrincipalSet {
    universe.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, p)| p.clone()).collect()
}

/// Minimal satisfying subsets by exhaustive enumeration, sorted by size then
/// lexicographically.
pub fn brute_force_min_sets(expr: &PolicyExpr, universe: &[Principal]) -> Vec<PrincipalSet> {
    let table = truth_table(expr, universe);
    let mut out: Vec<PrincipalSet> = (0..table.len())
        .filter(|&m| table[m])
        .filter(|&m| (0..universe.len()).all(|b| m & (1 << b) == 0 || !table[m & !(1 << b)]))
        .map(|m| mask_to_set(m, universe))
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

pub fn random_policy<R: Rng>(rng: &mut R, universe: &[Principal], depth: usize) -> PolicyExpr {
    if depth == 0 || rng.gen_bool(0.3) {
        return PolicyExpr::Signed(universe[rng.gen_range(0..universe.len())].clone());
    }
    let width = rng.gen_range(1..=4);
    let children: Vec<_> = (0..width).map(|_| random_policy(rng, universe, depth - 1)).collect();
    match rng.gen_range(0..3) {
        0 => PolicyExpr::And(children),
        1 => PolicyExpr::Or(children),
        _ => PolicyExpr::NOutOf(rng.gen_range(1..=children.len()), children),
    }
}

/// Sequential MVCC reference: applies each valid transaction's writes to a
/// working copy of the state immediately, and re-runs reads and range
/// queries against that evolving map. Returns the flags and the final state.
pub fn naive_mvcc(
    block_num: u64,
    txs: &[Transaction],
    vscc: &[ValidationCode],
    pre_state: &BTreeMap<String, VersionedValue>,
) -> (Vec<ValidationCode>, BTreeMap<String, VersionedValue>) {
    let mut world = pre_state.clone();
    let mut flags = Vec::new();
    for (i, (tx, f)) in txs.iter().zip(vscc).enumerate() {
        if *f != ValidationCode::Valid {
            flags.push(*f);
            continue;
        }
        let stale = tx.rwset.reads.iter().any(|r| world.get(&r.key).map(|v| v.version) != r.version);
        let phantom = !stale
            && tx.rwset.range_queries.iter().any(|q| {
                let rows: Vec<_> = world
                    .iter()
                    .filter(|(k, _)| k.as_str() >= q.start_key.as_str() && k.as_str() < q.end_key.as_str())
                    .map(|(k, v)| (k.as_str(), v.value.as_slice(), v.version))
                    .collect();
                range_result_hash(rows) != q.result_hash
            });
        let code = if stale {
            ValidationCode::MvccConflict
        } else if phantom {
            ValidationCode::PhantomRead
        } else {
            ValidationCode::Valid
        };
        if code == ValidationCode::Valid {
            for w in &tx.rwset.writes {
                world.insert(w.key.clone(), VersionedValue::new(w.value.clone(), Version::new(block_num, i as u64)));
            }
        }
        flags.push(code);
    }
    (flags, world)
}

/// Nearest-rank percentile: the smallest sample `x` such that at least
/// `p` percent of samples are `<= x`.
pub fn reference_percentile(samples: &[f64], p: f64) -> f64 {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mut candidates = samples.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &x in &candidates {
        let at_most = samples.iter().filter(|&&s| s <= x).count() as f64;
        if at_most * 100.0 >= p * n {
            return x;
        }
    }
    *candidates.last().unwrap()
}

pub fn keyspace(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("k{i:02}")).collect()
}

/// Random committed state over `keys` (each key present with probability ½).
pub fn random_state<R: Rng>(rng: &mut R, keys: &[String]) -> BTreeMap<String, VersionedValue> {
    let mut out = BTreeMap::new();
    for k in keys {
        if rng.gen_bool(0.5) {
            let v = Version::new(rng.gen_range(0..5), rng.gen_range(0..10));
            out.insert(k.clone(), VersionedValue::new(vec![rng.gen()], v));
        }
    }
    out
}

/// A transaction whose reads and range hashes were taken against `view`,
/// which is either the pre-state or a perturbed copy of it, so that both
/// fresh and stale reads occur.
pub fn random_mvcc_tx<R: Rng>(rng: &mut R, keys: &[String], view: &BTreeMap<String, VersionedValue>, nonce: u64) -> Transaction {
    let mut rw = ReadWriteSet::default();
    let mut picked: Vec<&String> = Vec::new();
    for _ in 0..rng.gen_range(0..3) {
        let k = &keys[rng.gen_range(0..keys.len())];
        if !picked.contains(&k) {
            picked.push(k);
            let version = if rng.gen_bool(0.85) {
                view.get(k).map(|v| v.version)
            } else {
                Some(Version::new(99, rng.gen_range(0..3)))
            };
            rw.reads.push(KvRead { key: k.clone(), version });
        }
    }
    if rng.gen_bool(0.3) {
        let a = rng.gen_range(0..keys.len());
        let b = rng.gen_range(a..=keys.len());
        let start = keys[a].clone();
        let end = keys.get(b).cloned().unwrap_or_else(|| "l".into());
        let rows: Vec<_> = view
            .iter()
            .filter(|(k, _)| k.as_str() >= start.as_str() && k.as_str() < end.as_str())
            .map(|(k, v)| (k.as_str(), v.value.as_slice(), v.version))
            .collect();
        rw.range_queries.push(RangeQueryInfo { start_key: start, end_key: end, result_hash: range_result_hash(rows) });
    }
    let mut written: Vec<&String> = Vec::new();
    for _ in 0..rng.gen_range(0..3) {
        let k = &keys[rng.gen_range(0..keys.len())];
        if !written.contains(&k) {
            written.push(k);
            rw.writes.push(KvWrite { key: k.clone(), value: vec![rng.gen(), rng.gen()] });
        }
    }
    Transaction {
        tx_id: Transaction::compute_tx_id("ch", "cc", nonce, &rw),
        channel_id: "ch".into(),
        chaincode_id: "cc".into(),
        nonce,
        creator: vec![],
        rwset: rw,
        response: vec![],
        endorsements: vec![],
        client_sig: vec![],
        created_at: 0,
    }
}

pub fn digest_of_state(state: &BTreeMap<String, VersionedValue>) -> Digest {
    let mut bytes = Vec::new();
    for (k, v) in state {
        bytes.extend_from_slice(k.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&v.value);
        bytes.extend_from_slice(&v.version.block_num.to_be_bytes());
        bytes.extend_from_slice(&v.version.tx_num.to_be_bytes());
    }
    Digest::of(&bytes)
}
