use std::sync::Arc;
use std::time::{Duration, Instant};

use ledgerbench::core::{Version, VersionedValue};
use ledgerbench::statedb::server::ServerConfig;
use ledgerbench::statedb::{BatchEntry, CommitMode, DbError, DbLock, DbStats, EmbeddedDb, RemoteDb, StateBackend, StateServer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn server() -> StateServer {
    StateServer::start(ServerConfig { latency: Duration::ZERO, ..Default::default() }).unwrap()
}

fn batch(keys: impl IntoIterator<Item = String>, block: u64) -> Vec<BatchEntry> {
    keys.into_iter().enumerate().map(|(i, k)| (k.clone(), k.into_bytes(), Version::new(block, i as u64))).collect()
}

fn keys(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("key{i:04}")).collect()
}

#[test]
fn remote_gets_count_one_request_each() {
    let srv = server();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    db.commit_batch(&[("k".into(), b"v".to_vec(), Version::new(4, 1))], CommitMode::PerKey).unwrap();
    let before = db.stats().snapshot();
    for _ in 0..10 {
        let v = db.get("k").unwrap().unwrap();
        assert_eq!((v.value.as_slice(), v.version), (&b"v"[..], Version::new(4, 1)));
    }
    assert_eq!(db.get("absent").unwrap(), None);
    let d = db.stats().snapshot().since(&before);
    assert_eq!(d.get_requests, 11);
    assert_eq!(d.bulk_get_requests, 0);
}

#[test]
fn remote_bulk_get_is_one_request_and_matches_gets() {
    let srv = server();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    db.commit_batch(&batch(keys(60), 1), CommitMode::Bulk).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wanted: Vec<String> = (0..100).map(|_| format!("key{:04}", rng.gen_range(0..120))).collect();

    let before = db.stats().snapshot();
    let bulk = db.bulk_get(&wanted[..50]).unwrap();
    let d = db.stats().snapshot().since(&before);
    assert_eq!((d.bulk_get_requests, d.get_requests), (1, 0));

    let bulk = {
        let mut all = bulk;
        all.extend(db.bulk_get(&wanted[50..]).unwrap());
        all
    };
    for k in &wanted {
        assert_eq!(bulk[k], db.get(k).unwrap(), "{k}");
    }
    let before = db.stats().snapshot();
    assert!(db.bulk_get(&[]).unwrap().is_empty());
    assert_eq!(db.stats().snapshot(), before);
}

#[test]
fn per_key_commit_with_cold_cache_fetches_each_revision() {
    let srv = server();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    let before = db.stats().snapshot();
    db.commit_batch(&batch(keys(100), 1), CommitMode::PerKey).unwrap();
    db.end_block();
    let d = db.stats().snapshot().since(&before);
    assert_eq!((d.get_requests, d.put_requests, d.bulk_put_requests), (100, 100, 0));

    // Revisions observed by reads in the same block are reused.
    let before = db.stats().snapshot();
    db.bulk_get(&keys(100)).unwrap();
    db.commit_batch(&batch(keys(100), 2), CommitMode::PerKey).unwrap();
    db.end_block();
    let d = db.stats().snapshot().since(&before);
    assert_eq!((d.get_requests, d.put_requests), (0, 100));
    assert_eq!(db.get("key0007").unwrap().unwrap().revision, Some(2));
}

#[test]
fn bulk_commit_is_one_request() {
    let srv = server();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    db.bulk_get(&keys(100)).unwrap();
    let before = db.stats().snapshot();
    db.commit_batch(&batch(keys(100), 1), CommitMode::Bulk).unwrap();
    let d = db.stats().snapshot().since(&before);
    assert_eq!((d.bulk_put_requests, d.put_requests, d.get_requests, d.bulk_get_requests), (1, 0, 0, 0));
    let before = db.stats().snapshot();
    db.commit_batch(&[], CommitMode::Bulk).unwrap();
    assert_eq!(db.stats().snapshot(), before);
}

#[test]
fn stale_revision_is_rejected() {
    let srv = server();
    let a = RemoteDb::new(&srv.endpoint(), "ch");
    let b = RemoteDb::new(&srv.endpoint(), "ch");
    a.commit_batch(&batch(["k".to_string()], 1), CommitMode::PerKey).unwrap();
    b.get("k").unwrap();
    a.commit_batch(&batch(["k".to_string()], 2), CommitMode::PerKey).unwrap();
    let err = b.commit_batch(&batch(["k".to_string()], 3), CommitMode::PerKey).unwrap_err();
    assert_eq!(err, DbError::RevisionConflict { key: "k".into() });
    let err = b.commit_batch(&batch(["k".to_string()], 3), CommitMode::Bulk);
    // The conflict dropped the stale revision, so the retry refetches it.
    assert!(err.is_ok());
    assert_eq!(a.get("k").unwrap().unwrap().version, Version::new(3, 0));
}

#[test]
fn stale_bulk_batch_applies_nothing() {
    let srv = server();
    let a = RemoteDb::new(&srv.endpoint(), "ch");
    let b = RemoteDb::new(&srv.endpoint(), "ch");
    a.commit_batch(&batch(keys(3), 1), CommitMode::Bulk).unwrap();
    b.bulk_get(&keys(3)).unwrap();
    a.commit_batch(&batch(["key0001".to_string()], 2), CommitMode::Bulk).unwrap();
    let err = b.commit_batch(&batch(keys(3), 3), CommitMode::Bulk).unwrap_err();
    assert_eq!(err, DbError::RevisionConflict { key: "key0001".into() });
    assert_eq!(a.get("key0000").unwrap().unwrap().version, Version::new(1, 0));
}

#[test]
fn remote_range_is_half_open_and_escapes_keys() {
    let srv = server();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    assert!(db.range("a", "z").unwrap().is_empty());
    let ks = ["a", "b", "b/x y", "c", "_lifecycle/cc"].map(String::from);
    db.commit_batch(&batch(ks.clone(), 1), CommitMode::PerKey).unwrap();
    let got: Vec<_> = db.range("a", "c").unwrap().into_iter().map(|(k, _)| k).collect();
    assert_eq!(got, ["a", "b", "b/x y"]);
    assert_eq!(db.get("_lifecycle/cc").unwrap().unwrap().value, b"_lifecycle/cc");
}

#[test]
fn unreachable_server_is_unavailable() {
    let endpoint = {
        let srv = server();
        srv.endpoint()
    };
    let db = RemoteDb::new(&endpoint, "ch");
    assert!(matches!(db.get("k"), Err(DbError::BackendUnavailable(_))));
}

#[test]
fn persisted_log_is_replayed() {
    let dir = std::env::temp_dir().join(format!("ledgerbench-persist-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = ServerConfig { latency: Duration::ZERO, persist: Some(dir.clone()), ..Default::default() };
    let before = {
        let srv = StateServer::start(cfg.clone()).unwrap();
        let db = RemoteDb::new(&srv.endpoint(), "peer0_ch1");
        db.commit_batch(&batch(keys(20), 1), CommitMode::Bulk).unwrap();
        db.end_block();
        db.commit_batch(&batch(keys(5), 2), CommitMode::PerKey).unwrap();
        db.dump().unwrap()
    };
    let srv = StateServer::start(cfg).unwrap();
    let db = RemoteDb::new(&srv.endpoint(), "peer0_ch1");
    assert_eq!(db.dump().unwrap(), before);
    assert_eq!(db.get("key0000").unwrap().unwrap().revision, Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn injected_latency_applies_per_request() {
    let srv = StateServer::start(ServerConfig { latency: Duration::from_millis(20), ..Default::default() }).unwrap();
    let db = RemoteDb::new(&srv.endpoint(), "ch");
    let t = Instant::now();
    for _ in 0..5 {
        db.get("k").unwrap();
    }
    assert!(t.elapsed() >= Duration::from_millis(100));
}

fn strip(m: std::collections::BTreeMap<String, VersionedValue>) -> Vec<(String, Vec<u8>, Version)> {
    m.into_iter().map(|(k, v)| (k, v.value, v.version)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn backends_agree_after_same_batches(
        batches in prop::collection::vec(prop::collection::btree_map(0u8..40, prop::collection::vec(any::<u8>(), 0..24), 0..15), 1..6)
    ) {
        let srv = server();
        let embedded = EmbeddedDb::new();
        let per_key = RemoteDb::new(&srv.endpoint(), "per_key");
        let bulk = RemoteDb::new(&srv.endpoint(), "bulk");
        for (b, writes) in batches.iter().enumerate() {
            let entries: Vec<BatchEntry> = writes
                .iter()
                .enumerate()
                .map(|(i, (k, v))| (format!("k{k:02}"), v.clone(), Version::new(b as u64, i as u64)))
                .collect();
            embedded.commit_batch(&entries, CommitMode::PerKey).unwrap();
            per_key.commit_batch(&entries, CommitMode::PerKey).unwrap();
            bulk.commit_batch(&entries, CommitMode::Bulk).unwrap();
            per_key.end_block();
            bulk.end_block();
        }
        let reference = strip(embedded.dump().unwrap());
        prop_assert_eq!(&strip(per_key.dump().unwrap()), &reference);
        prop_assert_eq!(&strip(bulk.dump().unwrap()), &reference);
    }
}

#[test]
fn readers_never_see_partial_batches() {
    let db = Arc::new(EmbeddedDb::new());
    let lock = Arc::new(DbLock::new(true, Arc::new(DbStats::default())));
    let ks = keys(50);
    db.commit_batch(&batch(ks.clone(), 0), CommitMode::Bulk).unwrap();
    let writer = {
        let (db, lock, ks) = (db.clone(), lock.clone(), ks.clone());
        std::thread::spawn(move || {
            for b in 1..200u64 {
                let _g = lock.write(None).unwrap();
                for k in &ks {
                    db.commit_batch(&[(k.clone(), vec![], Version::new(b, 0))], CommitMode::PerKey).unwrap();
                }
            }
        })
    };
    for _ in 0..200 {
        let _g = lock.read(None).unwrap();
        let versions: std::collections::BTreeSet<_> = ks.iter().map(|k| db.get(k).unwrap().unwrap().version.block_num).collect();
        assert_eq!(versions.len(), 1);
    }
    writer.join().unwrap();
}
