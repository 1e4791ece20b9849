mod common;

use std::process::Command;

use common::{fixture, CHANNEL};
use ledgerbench::export::{decode_export, encode_export, render_json, verify_export, write_export, ExportError};
use ledgerbench::network::DEFAULT_POLICY;
use ledgerbench::peer::PeerConfig;
use ledgerbench_core::Block;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn committed_chain(blocks: usize, per_block: usize) -> (common::Fixture, Vec<Block>) {
    let f = fixture(4, DEFAULT_POLICY);
    let peer = f.peer(0, PeerConfig::new("p"));
    let txs = (0..(blocks * per_block) as u64).map(|i| f.write_tx(&format!("k{}", i % 7), i, &[0, 1, 2])).collect();
    for b in f.chain(txs, per_block) {
        peer.process_block(CHANNEL, &b, 0).unwrap();
    }
    (f, peer.ledger(CHANNEL))
}

#[test]
fn round_trip_and_verify() {
    let (f, blocks) = committed_chain(3, 2);
    let bytes = encode_export(&f.orderer_pk(), &blocks);
    let back = verify_export(&bytes, Some(&f.orderer_pk())).unwrap();
    assert_eq!(back.blocks, blocks);
    assert_eq!(decode_export(&bytes).unwrap().orderer_key, f.orderer_pk());
    let json = render_json(&back);
    assert_eq!(json["blocks"].as_array().unwrap().len(), 3);
    assert_eq!(json["blocks"][1]["transactions"][0]["validation"], "VALID");
}

#[test]
fn every_single_byte_mutation_is_rejected() {
    let (f, blocks) = committed_chain(2, 2);
    let bytes = encode_export(&f.orderer_pk(), &blocks);
    for i in 0..bytes.len() {
        for flip in [0x01u8, 0x80, 0xff] {
            let mut m = bytes.clone();
            m[i] ^= flip;
            assert!(verify_export(&m, None).is_err(), "byte {i} ^ {flip:#x} accepted");
        }
    }
}

#[test]
fn random_mutations_of_a_longer_ledger_are_rejected() {
    let (f, blocks) = committed_chain(10, 15);
    let bytes = encode_export(&f.orderer_pk(), &blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..300 {
        let mut m = bytes.clone();
        let i = rng.gen_range(0..m.len());
        m[i] ^= rng.gen_range(1..=255u8);
        assert!(verify_export(&m, None).is_err(), "byte {i} accepted");
    }
}

#[test]
fn structural_errors() {
    let (f, blocks) = committed_chain(3, 1);
    let pk = f.orderer_pk();
    assert_eq!(verify_export(b"nonsense", None).unwrap_err(), ExportError::BadMagic);
    assert_eq!(verify_export(&encode_export(&pk, &blocks), Some(&[7; 32])).unwrap_err(), ExportError::UnexpectedOrderer);
    let dropped = [blocks[0].clone(), blocks[2].clone()];
    assert_eq!(verify_export(&encode_export(&pk, &dropped), None).unwrap_err(), ExportError::BrokenChain);
    let mut truncated = encode_export(&pk, &blocks);
    truncated.pop();
    assert!(matches!(verify_export(&truncated, None), Err(ExportError::Decode(_))));
    let mut forged = blocks.clone();
    forged[1].metadata.orderer_sig[3] ^= 4;
    assert_eq!(verify_export(&encode_export(&pk, &forged), None).unwrap_err(), ExportError::BadOrdererSignature(1));
    assert!(verify_export(&encode_export(&pk, &[]), None).unwrap().blocks.is_empty());
}

#[test]
fn cli_keygen_and_verify_chain() {
    let dir = std::env::temp_dir().join(format!("lb-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let exe = env!("CARGO_BIN_EXE_ledgerbench");

    let net = dir.join("net.json");
    let ok = Command::new(exe).args(["keygen", "--orgs", "3", "--out"]).arg(&net).output().unwrap().status;
    assert!(ok.success());
    let spec = ledgerbench::network::NetworkSpec::load(&net).unwrap();
    assert_eq!(spec.orgs.len(), 3);

    let (f, blocks) = committed_chain(2, 3);
    let good = dir.join("good.bin");
    write_export(&good, &f.orderer_pk(), &blocks).unwrap();
    let out = Command::new(exe).arg("verify-chain").arg(&good).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok: 2 blocks");
    let json = Command::new(exe).arg("verify-chain").arg(&good).arg("--json").output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["blocks"].as_array().unwrap().len(), 2);

    let mut bytes = std::fs::read(&good).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = dir.join("bad.bin");
    std::fs::write(&bad, bytes).unwrap();
    let out = Command::new(exe).arg("verify-chain").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cli_run_writes_outputs() {
    let dir = std::env::temp_dir().join(format!("lb-cli-run-{}", std::process::id()));
    let exe = env!("CARGO_BIN_EXE_ledgerbench");
    let out = Command::new(exe)
        .args(["run", "--arrival-rate", "30", "--duration", "1", "--block-size", "10", "--profile", "3rw", "--lock-mode", "off", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("submitted") && stdout.contains("throughput"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["profile"], "3rw");
    assert_eq!(report["config"]["lock_mode"], false);
    assert_eq!(report["config"]["block_size"], 10);
    assert_eq!(report["submitted"], 30);
    let status = Command::new(exe).arg("verify-chain").arg(dir.join("ledger-ch0.bin")).output().unwrap().status;
    assert!(status.success());
    let bad = Command::new(exe).args(["run", "--profile", "7w"]).output().unwrap();
    assert!(!bad.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}
