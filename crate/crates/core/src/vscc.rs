//! Endorsement validation of a single transaction.

use alloc::collections::BTreeSet;

use crate::identity::Membership;
use crate::model::{Transaction, ValidationCode};
use crate::policy::PolicyExpr;

/// Checks every endorsement (identity, issuing MSP, signature) and evaluates
/// `policy` over the principals whose endorsements checked out. Invalid
/// endorsements are ignored rather than failing the transaction outright;
/// duplicates from one principal count once.
pub fn validate_transaction(tx: &Transaction, policy: &PolicyExpr, membership: &Membership) -> ValidationCode {
    let payload = Transaction::endorsement_payload(&tx.tx_id, &tx.rwset, &tx.response);
    let mut principals = BTreeSet::new();
    for e in &tx.endorsements {
        let Ok((cert, _org)) = membership.validate_identity(&e.identity) else {
            continue;
        };
        if membership.verify_signature(&cert, &payload, &e.signature) {
            principals.extend(cert.principals());
        }
    }
    if policy.evaluate(&principals) {
        ValidationCode::Valid
    } else {
        ValidationCode::BadEndorsement
    }
}

/// Serial validation of a block's transactions. `policy_for` maps a
/// chaincode id to its policy; unknown chaincodes fail validation.
pub fn validate_serial<F>(transactions: &[Transaction], membership: &Membership, mut policy_for: F) -> alloc::vec::Vec<ValidationCode>
where
    F: FnMut(&str) -> Option<alloc::sync::Arc<PolicyExpr>>,
{
    transactions
        .iter()
        .map(|tx| match policy_for(&tx.chaincode_id) {
            Some(p) => validate_transaction(tx, &p, membership),
            None => ValidationCode::BadEndorsement,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::identity::{key_from_seed, MspConfig, Role, SigningIdentity};
    use crate::model::{Endorsement, KvWrite, ReadWriteSet};
    use crate::policy::parse_policy;
    use alloc::format;
    use alloc::vec;
    use alloc::vec::Vec;

    fn setup() -> (Membership, Vec<SigningIdentity>) {
        let mut msps = Vec::new();
        let mut peers = Vec::new();
        for org in ["a", "b", "c", "d"] {
            let root = key_from_seed(format!("root-{org}").as_bytes());
            msps.push(MspConfig::new(org, root.verifying_key().to_bytes()));
            peers.push(SigningIdentity::issue(&root, org, "peer0", Role::Member, key_from_seed(org.as_bytes())));
        }
        (Membership::new(msps), peers)
    }

    fn endorsed(by: &[&SigningIdentity]) -> Transaction {
        let rwset = ReadWriteSet { writes: vec![KvWrite { key: "k".into(), value: vec![1; 20] }], ..Default::default() };
        let tx_id = Transaction::compute_tx_id("ch", "cc", 1, &rwset);
        let payload = Transaction::endorsement_payload(&tx_id, &rwset, b"ok");
        Transaction {
            tx_id,
            channel_id: "ch".into(),
            chaincode_id: "cc".into(),
            nonce: 1,
            creator: vec![],
            rwset,
            response: b"ok".to_vec(),
            endorsements: by
                .iter()
                .map(|p| Endorsement { identity: p.serialized().to_vec(), signature: p.sign(&payload) })
                .collect(),
            client_sig: vec![],
            created_at: 0,
        }
    }

    #[test]
    fn three_of_four_policy_accepts_abc() {
        let (m, p) = setup();
        let policy = parse_policy("OR(AND('a.member','b.member','c.member'),AND('a.member','b.member','d.member'),AND('b.member','c.member','d.member'),AND('a.member','c.member','d.member'))").unwrap();
        assert_eq!(validate_transaction(&endorsed(&[&p[0], &p[1], &p[2]]), &policy, &m), ValidationCode::Valid);
    }

    #[test]
    fn corrupted_signature_fails_and_policy() {
        let (m, p) = setup();
        let policy = parse_policy("AND('a.member','b.member','c.member','d.member')").unwrap();
        let mut tx = endorsed(&[&p[0], &p[1], &p[2], &p[3]]);
        assert_eq!(validate_transaction(&tx, &policy, &m), ValidationCode::Valid);
        tx.endorsements[2].signature[7] ^= 1;
        assert_eq!(validate_transaction(&tx, &policy, &m), ValidationCode::BadEndorsement);
    }

    #[test]
    fn duplicate_endorser_counts_once() {
        let (m, p) = setup();
        let policy = parse_policy("2-OutOf('a.member','b.member')").unwrap();
        assert_eq!(validate_transaction(&endorsed(&[&p[0], &p[0]]), &policy, &m), ValidationCode::BadEndorsement);
    }

    #[test]
    fn tampered_rwset_fails() {
        let (m, p) = setup();
        let policy = parse_policy("'a.member'").unwrap();
        let mut tx = endorsed(&[&p[0]]);
        tx.rwset.writes[0].value[0] ^= 1;
        assert_eq!(validate_transaction(&tx, &policy, &m), ValidationCode::BadEndorsement);
        tx = endorsed(&[&p[0]]);
        tx.tx_id = Digest::ZERO;
        assert_eq!(validate_transaction(&tx, &policy, &m), ValidationCode::BadEndorsement);
    }

    #[test]
    fn unknown_chaincode_fails() {
        let (m, p) = setup();
        let flags = validate_serial(&[endorsed(&[&p[0]])], &m, |_| None);
        assert_eq!(flags, vec![ValidationCode::BadEndorsement]);
    }
}
