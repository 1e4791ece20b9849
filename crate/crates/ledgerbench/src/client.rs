use ledgerbench_core::identity::SigningIdentity;
use ledgerbench_core::profile::ChaincodeProfile;
use ledgerbench_core::{Endorsement, Transaction};

use crate::clock;
use crate::peer::{Proposal, ProposalResponse, SignedProposal};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssembleError {
    #[error("no proposal responses")]
    NoResponses,
    #[error("proposal response {0} does not carry a valid endorser signature")]
    BadEndorserSignature(usize),
    #[error("proposal responses disagree")]
    MismatchedResponses,
}

/// Submitting client: signs proposals and turns matching proposal
/// responses into a transaction envelope.
#[derive(Debug, Clone)]
pub struct Client {
    identity: SigningIdentity,
}

impl Client {
    pub fn new(identity: SigningIdentity) -> Self {
        Client { identity }
    }

    pub fn identity(&self) -> &SigningIdentity {
        &self.identity
    }

    pub fn propose(
        &self,
        channel_id: &str,
        chaincode_id: &str,
        profile: ChaincodeProfile,
        keys: Vec<String>,
        nonce: u64,
    ) -> SignedProposal {
        let proposal = Proposal {
            channel_id: channel_id.to_string(),
            chaincode_id: chaincode_id.to_string(),
            profile,
            keys,
            nonce,
            creator: self.identity.serialized().to_vec(),
        };
        let signature = self.identity.sign(&proposal.payload());
        SignedProposal { proposal, signature }
    }

    pub fn assemble(&self, signed: &SignedProposal, responses: &[ProposalResponse]) -> Result<Transaction, AssembleError> {
        let first = responses.first().ok_or(AssembleError::NoResponses)?;
        for (i, r) in responses.iter().enumerate() {
            if !r.verify() {
                return Err(AssembleError::BadEndorserSignature(i));
            }
            if (r.tx_id, &r.rwset, &r.response) != (first.tx_id, &first.rwset, &first.response) {
                return Err(AssembleError::MismatchedResponses);
            }
        }
        let p = &signed.proposal;
        if first.tx_id != p.tx_id(&first.rwset) {
            return Err(AssembleError::MismatchedResponses);
        }
        let mut tx = Transaction {
            tx_id: first.tx_id,
            channel_id: p.channel_id.clone(),
            chaincode_id: p.chaincode_id.clone(),
            nonce: p.nonce,
            creator: p.creator.clone(),
            rwset: first.rwset.clone(),
            response: first.response.clone(),
            endorsements: responses
                .iter()
                .map(|r| Endorsement { identity: r.endorser_identity.clone(), signature: r.signature.clone() })
                .collect(),
            client_sig: Vec::new(),
            created_at: clock::now_ns(),
        };
        tx.client_sig = self.identity.sign(&tx.envelope_payload());
        Ok(tx)
    }
}
