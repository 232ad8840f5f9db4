//! Attacker policies: the honest baseline and generalized selfish mining.

use crate::attacker::{Action, ForkAction, Observation, Origin, VoteInclusion};

/// Maps observations to actions.
///
/// `mask[i]` tells whether `Action::ALL[i]` is feasible. Returning an
/// infeasible action is allowed; the environment then waits instead.
pub trait Policy {
    fn name(&self) -> String;
    fn act(&mut self, obs: &Observation, mask: &[bool; 8]) -> Action;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn act(&mut self, obs: &Observation, mask: &[bool; 8]) -> Action {
        (**self).act(obs, mask)
    }
}

/// Publishes own proofs-of-work immediately and follows the defenders.
#[derive(Copy, Clone, Debug, Default)]
pub struct Honest;

impl Policy for Honest {
    fn name(&self) -> String {
        "honest".into()
    }

    fn act(&mut self, obs: &Observation, _mask: &[bool; 8]) -> Action {
        let fork = match obs.origin {
            Origin::MinedLocally => ForkAction::Override,
            Origin::Received if obs.defender_blocks > 0 => ForkAction::Adopt,
            Origin::Received => ForkAction::Wait,
        };
        Action::new(fork, VoteInclusion::Inclusive)
    }
}

/// Selfish mining generalized to votes.
///
/// Branches are ranked by (blocks, tip votes). The attacker keeps mining in
/// private while ahead, releases just enough to win once the defenders come
/// within one proof-of-work, matches on an exact tie caused by the
/// defenders, and gives up when behind.
#[derive(Copy, Clone, Debug)]
pub struct SelfishMining {
    k: u32,
    votes: VoteInclusion,
}

impl SelfishMining {
    /// Builds only on own votes while withholding.
    pub fn new(k: u32) -> Self {
        SelfishMining { k, votes: VoteInclusion::Exclusive }
    }

    /// Variant that also builds on the defenders' public votes.
    pub fn inclusive(k: u32) -> Self {
        SelfishMining { k, votes: VoteInclusion::Inclusive }
    }

    /// Defenders' rank after one more defender proof-of-work.
    fn threat(&self, d: (u32, u32)) -> (u32, u32) {
        if d.1 + 1 >= self.k {
            (d.0 + 1, 0)
        } else {
            (d.0, d.1 + 1)
        }
    }
}

impl Policy for SelfishMining {
    fn name(&self) -> String {
        match self.votes {
            VoteInclusion::Exclusive => "sm1".into(),
            VoteInclusion::Inclusive => "sm1-inclusive".into(),
        }
    }

    fn act(&mut self, obs: &Observation, _mask: &[bool; 8]) -> Action {
        let mine = (obs.attacker_blocks, obs.attacker_tip_votes_total);
        let theirs = (obs.defender_blocks, obs.defender_tip_votes);
        let fork = if theirs > mine {
            ForkAction::Adopt
        } else if obs.attacker_blocks == 0 {
            ForkAction::Wait
        } else {
            match obs.origin {
                Origin::Received if mine == theirs => ForkAction::Match,
                Origin::Received if self.threat(theirs) >= mine => ForkAction::Override,
                Origin::MinedLocally if obs.defender_blocks >= 1 && self.threat(theirs) >= mine => {
                    ForkAction::Override
                }
                _ => ForkAction::Wait,
            }
        };
        Action::new(fork, self.votes)
    }
}
