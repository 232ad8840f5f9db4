//! The attacker node: private fork bookkeeping, observations, and actions.
//!
//! The attacker keeps at most one private fork. `fork_root` is the last
//! block shared by the defenders' preferred tip and the attacker's private
//! tip; everything the attacker mined and has not yet published is
//! `withheld`. Withheld blocks are always descendants of `fork_root` or
//! votes on it.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::dag::{BlockId, Dag, Kind, NodeId};
use crate::protocol::MiningTemplate;
use crate::sim::{ReleaseMode, Sim, SimError};
use crate::view::NodeView;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ForkAction {
    Wait,
    Match,
    Override,
    Adopt,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoteInclusion {
    Inclusive,
    Exclusive,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub fork: ForkAction,
    pub votes: VoteInclusion,
}

impl Action {
    pub const ALL: [Action; 8] = {
        use ForkAction::*;
        use VoteInclusion::*;
        [
            Action { fork: Wait, votes: Inclusive },
            Action { fork: Match, votes: Inclusive },
            Action { fork: Override, votes: Inclusive },
            Action { fork: Adopt, votes: Inclusive },
            Action { fork: Wait, votes: Exclusive },
            Action { fork: Match, votes: Exclusive },
            Action { fork: Override, votes: Exclusive },
            Action { fork: Adopt, votes: Exclusive },
        ]
    };

    pub const fn new(fork: ForkAction, votes: VoteInclusion) -> Self {
        Action { fork, votes }
    }

    /// Position in [`Action::ALL`].
    pub fn index(self) -> usize {
        let v = match self.votes {
            VoteInclusion::Inclusive => 0,
            VoteInclusion::Exclusive => 4,
        };
        v + self.fork as usize
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}", self.fork, self.votes)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    MinedLocally,
    Received,
}

/// What the attacker sees at a decision point. Block counts are measured
/// from `fork_root` (exclusive).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub defender_blocks: u32,
    pub attacker_blocks: u32,
    pub defender_tip_votes: u32,
    pub attacker_tip_votes_total: u32,
    pub attacker_tip_votes_own: u32,
    pub origin: Origin,
}

impl Observation {
    pub const FRESH: Observation = Observation {
        defender_blocks: 0,
        attacker_blocks: 0,
        defender_tip_votes: 0,
        attacker_tip_votes_total: 0,
        attacker_tip_votes_own: 0,
        origin: Origin::Received,
    };
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForkState {
    pub public_tip: BlockId,
    pub private_tip: BlockId,
    pub fork_root: BlockId,
    pub withheld: BTreeSet<BlockId>,
}

#[derive(Clone, Debug)]
pub struct AttackerState {
    pub me: NodeId,
    pub fork: ForkState,
    pub inclusion: VoteInclusion,
    /// Indexed by block id; abandoned blocks are never built on again.
    discarded: Vec<bool>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("action {0} is infeasible in the current state")]
    InfeasibleAction(Action),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl AttackerState {
    pub(crate) fn new(me: NodeId) -> Self {
        AttackerState {
            me,
            fork: ForkState {
                public_tip: BlockId::GENESIS,
                private_tip: BlockId::GENESIS,
                fork_root: BlockId::GENESIS,
                withheld: BTreeSet::new(),
            },
            inclusion: VoteInclusion::Inclusive,
            discarded: Vec::new(),
        }
    }

    pub fn is_discarded(&self, id: BlockId) -> bool {
        self.discarded.get(id.index()).copied().unwrap_or(false)
    }

    fn discard(&mut self, id: BlockId) {
        if self.discarded.len() <= id.index() {
            self.discarded.resize(id.index() + 1, false);
        }
        self.discarded[id.index()] = true;
    }

    /// Votes on `tip` the attacker may still build on.
    fn live_votes<'a>(&'a self, view: &'a NodeView, tip: BlockId) -> impl Iterator<Item = BlockId> + 'a {
        view.votes_for(tip).iter().copied().filter(|v| !self.is_discarded(*v))
    }
}

/// Last block shared by the block chains ending at `a` and `b`.
pub fn fork_root(dag: &Dag, a: BlockId, b: BlockId) -> BlockId {
    let (mut a, mut b) = (a, b);
    let up = |x: BlockId| dag.block_parent(x).expect("non-genesis block");
    while a != b {
        let (ha, hb) = (dag.block(a).height, dag.block(b).height);
        if ha >= hb {
            a = up(a);
        }
        if hb >= ha {
            b = up(b);
        }
    }
    a
}

/// Shortest topological prefix of `withheld` whose publication makes some
/// block of the private chain rank equal to (`Match`) or above (`Override`)
/// the defenders' tip on (height, tip votes).
pub fn release_prefix(
    dag: &Dag,
    public: &NodeView,
    fork: &ForkState,
    action: ForkAction,
) -> Option<Vec<BlockId>> {
    if !matches!(action, ForkAction::Match | ForkAction::Override) || fork.withheld.is_empty() {
        return None;
    }
    let target = public.key(dag, fork.public_tip).expect("public tip is public").objective();
    let mut chain = BTreeSet::new();
    let mut cur = fork.private_tip;
    loop {
        chain.insert(cur);
        if cur == fork.fork_root {
            break;
        }
        cur = dag.block_parent(cur).expect("fork root is an ancestor");
    }
    // (height, votes, id) for chain blocks that are already public
    let mut votes: std::collections::BTreeMap<BlockId, u32> = chain
        .iter()
        .filter(|b| public.knows(**b))
        .map(|b| (*b, public.tip_votes(*b)))
        .collect();
    let withheld: Vec<BlockId> = fork.withheld.iter().copied().collect();
    let order = dag.topo_order(&withheld).expect("withheld blocks exist");
    for (i, w) in order.iter().enumerate() {
        let b = dag.block(*w);
        match b.kind {
            Kind::Block if chain.contains(w) => {
                votes.insert(*w, 0);
            }
            Kind::Vote => {
                if let Some(n) = votes.get_mut(&b.root) {
                    *n += 1;
                }
            }
            Kind::Block => {}
        }
        let (best, key) = votes
            .iter()
            .map(|(id, n)| (*id, (dag.block(*id).height, *n)))
            .max_by_key(|(id, key)| (*key, std::cmp::Reverse(*id)))
            .expect("fork root is public");
        let hit = match action {
            ForkAction::Match => key == target && best != fork.public_tip,
            _ => key > target,
        };
        if hit {
            return Some(order[..=i].to_vec());
        }
    }
    None
}

impl Sim {
    fn att(&self) -> Result<&AttackerState, SimError> {
        self.attacker.as_ref().ok_or(SimError::NoAttacker)
    }

    pub(crate) fn attacker_template(&self) -> MiningTemplate {
        let att = self.attacker.as_ref().expect("attack mode");
        let view = &self.nodes[att.me.index()].view;
        let me = att.me;
        let inclusion = att.inclusion;
        self.rules.mining_template_on(&self.dag, view, att.fork.private_tip, |b| {
            !att.is_discarded(b.id) && (inclusion == VoteInclusion::Inclusive || b.miner == me)
        })
    }

    pub(crate) fn attacker_mined(&mut self, id: BlockId) {
        let block_kind = self.dag.block(id).kind;
        let att = self.attacker.as_mut().expect("attack mode");
        att.fork.withheld.insert(id);
        if block_kind == Kind::Block {
            att.fork.private_tip = id;
        }
    }

    pub(crate) fn defender_mined(&mut self) {
        self.refresh_fork();
    }

    pub(crate) fn refresh_fork(&mut self) {
        let public_tip = self.public.best();
        let att = self.attacker.as_mut().expect("attack mode");
        att.fork.public_tip = public_tip;
        att.fork.fork_root = fork_root(&self.dag, public_tip, att.fork.private_tip);
    }

    /// Current fork state, if this is an attack simulation.
    pub fn fork_state(&self) -> Option<&ForkState> {
        self.attacker.as_ref().map(|a| &a.fork)
    }

    pub fn observe(&self, origin: Origin) -> Result<Observation, SimError> {
        let att = self.att()?;
        let f = &att.fork;
        let h = |b: BlockId| self.dag.block(b).height;
        let view = &self.nodes[att.me.index()].view;
        let total = att.live_votes(view, f.private_tip).count() as u32;
        let own = att
            .live_votes(view, f.private_tip)
            .filter(|v| self.dag.block(*v).miner == att.me)
            .count() as u32;
        Ok(Observation {
            defender_blocks: h(f.public_tip) - h(f.fork_root),
            attacker_blocks: h(f.private_tip) - h(f.fork_root),
            defender_tip_votes: self.public.tip_votes(f.public_tip),
            attacker_tip_votes_total: total,
            attacker_tip_votes_own: own,
            origin,
        })
    }

    pub fn feasible(&self, action: Action) -> bool {
        let Ok(att) = self.att() else { return false };
        match action.fork {
            ForkAction::Wait | ForkAction::Adopt => true,
            fa => release_prefix(&self.dag, &self.public, &att.fork, fa).is_some(),
        }
    }

    /// Feasibility of every entry of [`Action::ALL`].
    pub fn action_mask(&self) -> [bool; 8] {
        let m = self.feasible(Action::new(ForkAction::Match, VoteInclusion::Inclusive));
        let o = self.feasible(Action::new(ForkAction::Override, VoteInclusion::Inclusive));
        let one = [true, m, o, true];
        std::array::from_fn(|i| one[i % 4])
    }

    pub fn apply(&mut self, action: Action) -> Result<(), AttackError> {
        let att = self.att()?;
        let prefix = match action.fork {
            ForkAction::Match | ForkAction::Override => {
                Some(release_prefix(&self.dag, &self.public, &att.fork, action.fork)
                    .ok_or(AttackError::InfeasibleAction(action))?)
            }
            _ => None,
        };
        match action.fork {
            ForkAction::Wait => {}
            ForkAction::Match => self.release(&prefix.expect("set"), ReleaseMode::MatchRace)?,
            ForkAction::Override => self.release(&prefix.expect("set"), ReleaseMode::Normal)?,
            ForkAction::Adopt => self.adopt(),
        }
        self.attacker.as_mut().expect("checked").inclusion = action.votes;
        Ok(())
    }

    fn adopt(&mut self) {
        let public_tip = self.public.best();
        let att = self.attacker.as_mut().expect("attack mode");
        for b in std::mem::take(&mut att.fork.withheld) {
            att.discard(b);
        }
        att.fork.private_tip = public_tip;
        att.fork.public_tip = public_tip;
        att.fork.fork_root = public_tip;
    }

    /// End-of-episode resolution: publish the whole private fork if that
    /// beats the defenders, otherwise abandon it. Then drains the network.
    pub fn settle(&mut self) -> Result<(), SimError> {
        let att = self.att()?;
        let wins = release_prefix(&self.dag, &self.public, &att.fork, ForkAction::Override).is_some();
        if wins {
            let all: Vec<BlockId> = att.fork.withheld.iter().copied().collect();
            self.release(&all, ReleaseMode::Normal)?;
        } else {
            self.adopt();
        }
        self.flush_deliveries();
        Ok(())
    }
}
