use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread;

use ledgerbench_core::identity::Principal;
use ledgerbench_core::policy::PolicyExpr;
use ledgerbench_core::Transaction;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{AssembleError, Client};
use crate::peer::{EndorseError, Peer, ProposalResponse, SignedProposal};

pub fn key_name(index: usize) -> String {
    format!("k{index:05}")
}

/// Randomness for submission `seq`, independent of which worker runs it.
pub fn submission_rng(seed: u64, seq: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq);
    rng
}

/// `count` distinct keys drawn uniformly from `keyspace`.
pub fn choose_keys(rng: &mut ChaCha8Rng, keyspace: usize, count: usize) -> Vec<String> {
    sample(rng, keyspace, count).into_iter().map(key_name).collect()
}

/// Which organizations to ask for endorsements: the policy's minimal
/// satisfying sets over the member principals, used in rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorserPlan {
    sets: Vec<Vec<String>>,
}

impl EndorserPlan {
    pub fn new(policy: &PolicyExpr, orgs: &[String]) -> Option<EndorserPlan> {
        let universe: Vec<Principal> = orgs.iter().map(|o| Principal::member(o.clone())).collect();
        let sets: Vec<Vec<String>> = policy
            .min_satisfying_sets(&universe)
            .into_iter()
            .map(|s| s.into_iter().map(|p| p.org_id).collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        (!sets.is_empty()).then_some(EndorserPlan { sets })
    }

    pub fn sets(&self) -> &[Vec<String>] {
        &self.sets
    }

    pub fn orgs_for(&self, seq: u64) -> &[String] {
        &self.sets[(seq % self.sets.len() as u64) as usize]
    }

    /// One peer per organization of the set chosen for `seq`, rotating
    /// over each organization's peers.
    pub fn targets(&self, seq: u64, peers_by_org: &BTreeMap<String, Vec<Arc<Peer>>>) -> Vec<Arc<Peer>> {
        let round = seq / self.sets.len() as u64;
        self.orgs_for(seq)
            .iter()
            .filter_map(|org| {
                let peers = peers_by_org.get(org)?;
                (!peers.is_empty()).then(|| peers[(round % peers.len() as u64) as usize].clone())
            })
            .collect()
    }
}

/// Sends the proposal to every target at once.
pub fn endorse_all(targets: &[Arc<Peer>], proposal: &SignedProposal) -> Vec<Result<ProposalResponse, EndorseError>> {
    let Some((first, rest)) = targets.split_first() else {
        return Vec::new();
    };
    thread::scope(|s| {
        let handles: Vec<_> = rest.iter().map(|p| s.spawn(|| p.endorse(proposal))).collect();
        let mut out = vec![first.endorse(proposal)];
        out.extend(handles.into_iter().map(|h| h.join().expect("endorsement thread panicked")));
        out
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endorsed {
    Ready(Transaction),
    Timeout,
    Failed(String),
}

/// Collects endorsements and assembles the transaction. Disagreeing
/// responses are retried once.
pub fn endorse_transaction(client: &Client, targets: &[Arc<Peer>], proposal: &SignedProposal) -> Endorsed {
    for attempt in 0..2 {
        let mut responses = Vec::with_capacity(targets.len());
        for r in endorse_all(targets, proposal) {
            match r {
                Ok(resp) => responses.push(resp),
                Err(EndorseError::EndorsementTimeout(_)) => return Endorsed::Timeout,
                Err(e) => return Endorsed::Failed(e.to_string()),
            }
        }
        match client.assemble(proposal, &responses) {
            Ok(tx) => return Endorsed::Ready(tx),
            Err(AssembleError::MismatchedResponses) if attempt == 0 => continue,
            Err(e) => return Endorsed::Failed(e.to_string()),
        }
    }
    Endorsed::Failed(AssembleError::MismatchedResponses.to_string())
}
