use std::collections::BTreeMap;

use ledgerbench::bench::sweep::SweepSpec;
use ledgerbench::bench::{
    percentile, run, run_with_feed, window_throughput, EndorserPlan, Optimizations, Outcome, RunConfig, RunReport, Stats,
    TxRecord,
};
use ledgerbench::export::verify_export;
use ledgerbench::network::DEFAULT_POLICY;
use ledgerbench::statedb::BackendKind;
use ledgerbench_core::policy::parse_policy;
use ledgerbench_core::profile::ChaincodeProfile;
use ledgerbench_testkit::reference_percentile;
use proptest::prelude::*;

fn quick(rate: f64, duration_s: f64) -> RunConfig {
    RunConfig { arrival_rate: rate, duration_s, block_timeout_ms: 200, grace_s: 5.0, ..RunConfig::default() }
}

fn assert_conserved(r: &RunReport) {
    assert!(r.is_conserved(), "{:?}", r.outcomes);
    let total: u64 = Outcome::ALL.iter().map(|o| r.count(*o)).sum();
    assert_eq!(total, r.submitted);
}

#[test]
fn defaults_mirror_reference_setup() {
    let c = RunConfig::default();
    assert_eq!((c.channels, c.orgs, c.peers_per_org), (1, 4, 1));
    assert_eq!(c.profile(), ChaincodeProfile::write_only(1).with_value_size(20));
    assert_eq!(c.policy, DEFAULT_POLICY);
    assert_eq!((c.block_size, c.block_timeout_ms), (30, 1000));
    assert_eq!(c.backend, BackendKind::Embedded);
    assert_eq!(c.endorsement_timeout_ms, 5000);
}

#[test]
fn open_loop_submission_count() {
    let c = RunConfig { arrival_rate: 100.0, duration_s: 10.0, ..RunConfig::default() };
    assert!(c.submissions().abs_diff(1000) <= 1);
    let c = RunConfig { arrival_rate: 33.3, duration_s: 3.0, ..RunConfig::default() };
    assert!(c.submissions().abs_diff(100) <= 1);
}

#[test]
fn config_rejects_nonsense() {
    assert!(RunConfig { arrival_rate: 0.0, ..RunConfig::default() }.validate().is_err());
    assert!(RunConfig { duration_s: -1.0, ..RunConfig::default() }.validate().is_err());
    assert!(RunConfig { policy: "AND(".into(), ..RunConfig::default() }.validate().is_err());
    assert!(serde_json::from_str::<RunConfig>(r#"{"block_sise": 3}"#).is_err());
    let c: RunConfig = serde_json::from_str(r#"{"profile": "3rw", "optimizations": {"bulk_ops": true}}"#).unwrap();
    assert_eq!(c.profile, ChaincodeProfile::read_write(3));
    assert!(c.optimizations.bulk_ops && c.optimizations.vscc_workers == 1);
}

#[test]
fn all_org_policy_targets_every_org() {
    let orgs: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let p = parse_policy("AND('a.member','b.member','c.member','d.member')").unwrap();
    let plan = EndorserPlan::new(&p, &orgs).unwrap();
    for seq in 0..10 {
        assert_eq!(plan.orgs_for(seq), orgs.as_slice());
    }
    let t1 = EndorserPlan::new(&parse_policy(DEFAULT_POLICY).unwrap(), &orgs).unwrap();
    assert_eq!(t1.sets().len(), 4);
    assert!(t1.sets().iter().all(|s| s.len() == 3));
    assert!(EndorserPlan::new(&parse_policy("'z.member'").unwrap(), &orgs).is_none());
}

#[test]
fn end_to_end_run_commits_everything() {
    let out = run(&quick(60.0, 2.0)).unwrap();
    let r = &out.report;
    assert_eq!(r.submitted, 120);
    assert_eq!(r.count(Outcome::Valid), 120, "{:?}", r.outcomes);
    assert_conserved(r);
    assert!(r.ledger_verified);
    assert!(r.peer_faults.is_empty());
    assert!(r.throughput_tps > 0.0);
    let state = &out.states["ch0"];
    for rec in &out.records {
        let (a, b, c, d) = (rec.t_proposal_sent.unwrap(), rec.t_endorsed.unwrap(), rec.t_broadcast_acked.unwrap(), rec.t_committed.unwrap());
        assert!(rec.t_scheduled <= a && a <= b && b <= c && c <= d, "{rec:?}");
        assert!(rec.t_cut.unwrap() <= d);
    }
    assert!(state.len() > 100);
    let blocks: u64 = out.blocks.iter().map(|b| b.timings.tx_count as u64).sum();
    assert_eq!(blocks, 120);
    verify_export(&out.ledgers["ch0"], None).unwrap();
}

#[test]
fn contended_keys_conflict_and_outcomes_are_conserved() {
    let cfg = RunConfig {
        profile: ChaincodeProfile::read_write(1),
        keyspace: 5,
        channels: 2,
        block_size: 10,
        optimizations: Optimizations::all(4),
        ..quick(120.0, 1.5)
    };
    let out = run(&cfg).unwrap();
    let r = &out.report;
    assert_conserved(r);
    assert!(r.count(Outcome::MvccConflict) > 0, "{:?}", r.outcomes);
    assert!(r.count(Outcome::Valid) > 0);
    assert_eq!(out.ledgers.len(), 2);
    let seen: BTreeMap<&str, usize> = out.records.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.channel.as_str()).or_default() += 1;
        m
    });
    assert_eq!(seen.values().copied().collect::<Vec<_>>(), vec![90, 90]);
}

#[test]
fn all_timeouts_give_zero_throughput() {
    let cfg = RunConfig { endorsement_timeout_ms: 0, ..quick(50.0, 1.0) };
    let r = run(&cfg).unwrap().report;
    assert_eq!(r.count(Outcome::EndorsementTimeout), r.submitted);
    assert_eq!(r.throughput_tps, 0.0);
    assert_eq!(r.orderer_blocks, 0);
    assert_conserved(&r);
}

#[test]
fn same_seed_same_transactions_and_flags() {
    let cfg = RunConfig { seed: 42, ..quick(80.0, 1.0) };
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    let key = |o: &ledgerbench::bench::RunOutput| {
        o.records.iter().map(|r| (r.seq, r.tx_id, r.outcome)).collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
    let other = run(&RunConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.records[0].tx_id, other.records[0].tx_id);
}

#[test]
fn remote_and_distributed_runs() {
    let cfg = RunConfig { backend: BackendKind::Remote, distributed: true, optimizations: Optimizations::all(2), ..quick(40.0, 1.5) };
    let r = run(&cfg).unwrap().report;
    assert_eq!(r.count(Outcome::Valid), r.submitted, "{:?}", r.outcomes);
    assert!(r.db.bulk_put_requests > 0);
    assert_eq!(r.db.put_requests, 4, "only the policy registration of each peer goes key by key");
    assert!(r.ledger_verified);
}

#[test]
fn writes_report_files_and_commit_feed() {
    let dir = std::env::temp_dir().join(format!("lb-files-{}", std::process::id()));
    let feed = dir.join("feed.jsonl");
    std::fs::create_dir_all(&dir).unwrap();
    let out = run_with_feed(&quick(50.0, 1.0), Some(&feed)).unwrap();
    out.write(&dir).unwrap();
    let back: RunReport = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!((&back.config, back.submitted, &back.outcomes), (&out.report.config, out.report.submitted, &out.report.outcomes));
    assert_eq!((back.crypto, back.db), (out.report.crypto, out.report.db));
    let latency = std::fs::read_to_string(dir.join("latency.csv")).unwrap();
    assert_eq!(latency.lines().count(), 51);
    let timeline = std::fs::read_to_string(dir.join("timeline.csv")).unwrap();
    assert_eq!(timeline.lines().count(), out.blocks.len() + 1);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&feed)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), out.blocks.len());
    let fed: usize = lines.iter().map(|l| l["txs"].as_array().unwrap().len()).sum();
    assert_eq!(fed, 50);
    assert!(dir.join("ledger-ch0.bin").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn window_throughput_arithmetic() {
    let rec = |t: u64, o: Outcome| TxRecord { t_committed: Some(t), outcome: Some(o), ..Default::default() };
    let mut records: Vec<TxRecord> = (0..300).map(|i| rec(1_000_000_000 + i * 6_000_000, Outcome::Valid)).collect();
    records.push(rec(1_500_000_000, Outcome::MvccConflict));
    records.push(rec(10, Outcome::Valid));
    let (valid, all) = window_throughput(&records, 1_000_000_000, 3_000_000_000);
    assert_eq!(valid, 150.0);
    assert_eq!(all, 150.5);
}

#[test]
fn known_percentiles() {
    let samples: Vec<f64> = (1..=100).map(f64::from).collect();
    let s = Stats::of(samples.iter().rev().copied());
    assert_eq!((s.p50, s.p95, s.p99, s.max), (50.0, 95.0, 99.0, 100.0));
    assert_eq!(s.mean, 50.5);
    assert_eq!(Stats::of([]).count, 0);
}

proptest! {
    #[test]
    fn percentile_matches_reference(mut samples in prop::collection::vec(0.0f64..1e4, 1..200), p in 0.0f64..=100.0) {
        let expected = reference_percentile(&samples, p);
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(percentile(&samples, p), expected);
    }
}

#[test]
fn sweep_expands_grid() {
    let spec: SweepSpec = serde_json::from_str(
        r#"{"base": {"duration_s": 2}, "grid": {"block_size": [10, 100], "optimizations.bulk_ops": [false, true], "profile": ["1w"]}}"#,
    )
    .unwrap();
    let points = spec.expand().unwrap();
    assert_eq!(points.len(), 4);
    let combos: Vec<(usize, bool)> = points.iter().map(|(_, c)| (c.block_size, c.optimizations.bulk_ops)).collect();
    assert_eq!(combos, vec![(10, false), (10, true), (100, false), (100, true)]);
    assert!(points.iter().all(|(_, c)| c.duration_s == 2.0));

    let bad: SweepSpec = serde_json::from_str(r#"{"grid": {"optimizations.turbo": [true]}}"#).unwrap();
    assert!(bad.expand().is_err());
}

#[test]
fn sweep_runs_and_writes_csv() {
    let dir = std::env::temp_dir().join(format!("lb-sweep-{}", std::process::id()));
    let spec: SweepSpec = serde_json::from_str(
        r#"{"base": {"duration_s": 0.5, "arrival_rate": 40, "block_timeout_ms": 100}, "grid": {"block_size": [5, 20]}}"#,
    )
    .unwrap();
    let reports = ledgerbench::bench::sweep::sweep(&spec, &dir).unwrap();
    assert_eq!(reports.len(), 2);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("block_size,submitted,valid"));
    assert!(lines[1].starts_with("5,20,20,"));
    assert!(dir.join("run-1/report.json").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}
