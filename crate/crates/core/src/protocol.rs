//! Rule sets of the four protocols: validity, fork choice, mining templates
//! and epoch extraction.
//!
//! All four protocols share the block layer: blocks form a linear chain and
//! each block (except genesis) references its predecessor block `P`. They
//! differ in how the `k - 1` votes between two blocks are structured.
//!
//! | kind         | vote parents                                  |
//! |--------------|-----------------------------------------------|
//! | `Sequential` | no votes, `k = 1`                             |
//! | `Parallel`   | exactly `P`                                   |
//! | `TreeVoting` | `P` or one vote of the same epoch             |
//! | `DagVoting`  | `P`, or an antichain of votes of the epoch    |
//!
//! A block references `P` first, followed by votes (sorted by id) whose
//! in-epoch ancestry consists of exactly `k - 1` votes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Block, BlockId, Dag, DagError, Kind};
use crate::view::{NodeView, PreferenceKey};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Sequential,
    Parallel,
    #[serde(rename = "tree")]
    TreeVoting,
    #[serde(rename = "dag")]
    DagVoting,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::Sequential,
        ProtocolKind::Parallel,
        ProtocolKind::TreeVoting,
        ProtocolKind::DagVoting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Sequential => "sequential",
            ProtocolKind::Parallel => "parallel",
            ProtocolKind::TreeVoting => "tree",
            ProtocolKind::DagVoting => "dag",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" | "seq" | "bitcoin" => Ok(ProtocolKind::Sequential),
            "parallel" | "par" => Ok(ProtocolKind::Parallel),
            "tree" | "tree-voting" | "treevoting" => Ok(ProtocolKind::TreeVoting),
            "dag" | "dag-voting" | "dagvoting" => Ok(ProtocolKind::DagVoting),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("wrong number of parents")]
    WrongParentCount,
    #[error("reference to a different epoch")]
    CrossEpochReference,
    #[error("block confirms {found} votes, expected {expected}")]
    WrongVoteCount { expected: u32, found: u32 },
    #[error("parent {0} is an ancestor of another parent")]
    RedundantParent(BlockId),
    #[error("protocol has no votes")]
    VoteNotAllowed,
    #[error("parent {0} has the wrong kind")]
    UnexpectedParentKind(BlockId),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EpochError {
    #[error("{0} is not a block")]
    NotABlock(BlockId),
    #[error("genesis closes no epoch")]
    GenesisHasNoEpoch,
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("k must be at least 1 (and exactly 1 for sequential proof-of-work), got {0}")]
pub struct InvalidK(pub u32);

/// Protocol kind plus the number of proofs-of-work per block.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolRules {
    kind: ProtocolKind,
    k: u32,
}

/// What a node should mine next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiningTemplate {
    pub kind: Kind,
    pub parents: Vec<BlockId>,
    /// The block extended (for blocks) or confirmed (for votes).
    pub epoch_root: BlockId,
}

impl ProtocolRules {
    pub fn new(kind: ProtocolKind, k: u32) -> Result<Self, InvalidK> {
        if k == 0 || (kind == ProtocolKind::Sequential && k != 1) {
            return Err(InvalidK(k));
        }
        Ok(ProtocolRules { kind, k })
    }

    /// Like [`ProtocolRules::new`] but forces `k = 1` for sequential
    /// proof-of-work.
    pub fn with_k(kind: ProtocolKind, k: u32) -> Result<Self, InvalidK> {
        match kind {
            ProtocolKind::Sequential => Self::new(kind, 1),
            _ => Self::new(kind, k),
        }
    }

    pub fn sequential() -> Self {
        ProtocolRules { kind: ProtocolKind::Sequential, k: 1 }
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn has_votes(&self) -> bool {
        self.kind != ProtocolKind::Sequential
    }

    /// Checks whether a proof-of-work of the given kind and parents may be
    /// appended to `dag`.
    pub fn validate(&self, dag: &Dag, kind: Kind, parents: &[BlockId]) -> Result<(), ValidationError> {
        for p in parents {
            dag.get(*p)?;
        }
        match kind {
            Kind::Vote => self.validate_vote(dag, parents),
            Kind::Block => self.validate_block(dag, parents),
        }
    }

    /// Validates a block that is already part of `dag`.
    pub fn validate_stored(&self, dag: &Dag, id: BlockId) -> Result<(), ValidationError> {
        let b = dag.get(id)?;
        self.validate(dag, b.kind, &b.parents)
    }

    fn validate_vote(&self, dag: &Dag, parents: &[BlockId]) -> Result<(), ValidationError> {
        match self.kind {
            ProtocolKind::Sequential => Err(ValidationError::VoteNotAllowed),
            ProtocolKind::Parallel => match parents {
                [p] if dag.block(*p).is_block() => Ok(()),
                [p] => Err(ValidationError::UnexpectedParentKind(*p)),
                _ => Err(ValidationError::WrongParentCount),
            },
            ProtocolKind::TreeVoting => match parents {
                [_] => Ok(()),
                _ => Err(ValidationError::WrongParentCount),
            },
            ProtocolKind::DagVoting => {
                if parents.is_empty() {
                    return Err(ValidationError::WrongParentCount);
                }
                let root = |p: BlockId| dag.block(p).root;
                let r = root(parents[0]);
                if parents.iter().any(|p| root(*p) != r) {
                    return Err(ValidationError::CrossEpochReference);
                }
                if parents.len() > 1 {
                    if parents.contains(&r) {
                        return Err(ValidationError::RedundantParent(r));
                    }
                    for a in parents {
                        for b in parents {
                            if dag.is_ancestor(*a, *b)? {
                                return Err(ValidationError::RedundantParent(*a));
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_block(&self, dag: &Dag, parents: &[BlockId]) -> Result<(), ValidationError> {
        let mut blocks = parents.iter().copied().filter(|p| dag.block(*p).is_block());
        let (Some(pred), None) = (blocks.next(), blocks.next()) else {
            return Err(ValidationError::WrongParentCount);
        };
        let votes: Vec<BlockId> = parents.iter().copied().filter(|p| *p != pred).collect();
        if self.kind == ProtocolKind::Sequential && !votes.is_empty() {
            return Err(ValidationError::WrongParentCount);
        }
        for v in &votes {
            let vb = dag.block(*v);
            if vb.root != pred {
                return Err(ValidationError::CrossEpochReference);
            }
            if self.kind == ProtocolKind::Parallel && vb.parents != [pred] {
                return Err(ValidationError::UnexpectedParentKind(*v));
            }
        }
        let found = vote_closure(dag, &votes).len() as u32;
        let expected = self.k - 1;
        if found != expected {
            return Err(ValidationError::WrongVoteCount { expected, found });
        }
        Ok(())
    }

    /// All proofs-of-work of the epoch closed by `block`: the block itself
    /// plus its in-epoch vote ancestry. Sorted by id.
    pub fn epoch(&self, dag: &Dag, block: BlockId) -> Result<Vec<BlockId>, EpochError> {
        let b = dag.get(block)?;
        if !b.is_block() {
            return Err(EpochError::NotABlock(block));
        }
        if block == BlockId::GENESIS {
            return Err(EpochError::GenesisHasNoEpoch);
        }
        let votes: Vec<BlockId> = b.parents.iter().copied().filter(|p| dag.block(*p).is_vote()).collect();
        let mut members = vote_closure(dag, &votes);
        members.insert(block);
        Ok(members.into_iter().collect())
    }

    /// Total proofs-of-work committed on the chain ending at `tip`.
    pub fn progress(&self, dag: &Dag, tip: BlockId) -> Result<u64, EpochError> {
        let b = dag.get(tip)?;
        if !b.is_block() {
            return Err(EpochError::NotABlock(tip));
        }
        Ok(u64::from(self.k) * u64::from(b.height))
    }

    /// Fork choice over everything `view` knows, computed from scratch.
    /// Agrees with the incrementally maintained [`NodeView::best`].
    pub fn preference(&self, dag: &Dag, view: &NodeView) -> BlockId {
        view.known()
            .filter(|id| dag.block(*id).is_block())
            .max_by_key(|id| view.key(dag, *id).expect("known"))
            .unwrap_or(BlockId::GENESIS)
    }

    pub fn preference_key(&self, dag: &Dag, view: &NodeView, tip: BlockId) -> Option<PreferenceKey> {
        view.key(dag, tip)
    }

    /// Honest mining template on the node's preferred tip.
    pub fn mining_template<F>(&self, dag: &Dag, view: &NodeView, vote_filter: F) -> MiningTemplate
    where
        F: Fn(&Block) -> bool,
    {
        self.mining_template_on(dag, view, view.best(), vote_filter)
    }

    /// Mining template extending or confirming `tip`, considering only known
    /// votes on `tip` that pass `vote_filter` (plus their in-epoch ancestors).
    pub fn mining_template_on<F>(
        &self,
        dag: &Dag,
        view: &NodeView,
        tip: BlockId,
        vote_filter: F,
    ) -> MiningTemplate
    where
        F: Fn(&Block) -> bool,
    {
        let need = (self.k - 1) as usize;
        if need == 0 {
            return MiningTemplate { kind: Kind::Block, parents: vec![tip], epoch_root: tip };
        }
        let selected: Vec<BlockId> = view
            .votes_for(tip)
            .iter()
            .copied()
            .filter(|v| vote_filter(dag.block(*v)))
            .collect();
        let usable = vote_closure(dag, &selected);
        if usable.len() >= need {
            let chosen = select_votes(dag, &usable, need);
            let mut parents = vec![tip];
            parents.extend(leaves_within(dag, &chosen));
            return MiningTemplate { kind: Kind::Block, parents, epoch_root: tip };
        }
        let parents = match self.kind {
            ProtocolKind::Sequential => unreachable!("k = 1"),
            ProtocolKind::Parallel => vec![tip],
            ProtocolKind::TreeVoting => {
                let deepest = usable
                    .iter()
                    .copied()
                    .max_by_key(|v| (dag.block(*v).depth, std::cmp::Reverse(*v)));
                vec![deepest.unwrap_or(tip)]
            }
            ProtocolKind::DagVoting => {
                let leaves = leaves_within(dag, &usable);
                if leaves.is_empty() {
                    vec![tip]
                } else {
                    leaves
                }
            }
        };
        MiningTemplate { kind: Kind::Vote, parents, epoch_root: tip }
    }
}

/// The given votes together with all their in-epoch vote ancestors.
pub fn vote_closure(dag: &Dag, votes: &[BlockId]) -> BTreeSet<BlockId> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<BlockId> = votes.to_vec();
    while let Some(v) = stack.pop() {
        if out.insert(v) {
            stack.extend(dag.block(v).parents.iter().copied().filter(|p| dag.block(*p).is_vote()));
        }
    }
    out
}

/// Members of `set` without children inside `set`, ascending.
fn leaves_within(dag: &Dag, set: &BTreeSet<BlockId>) -> Vec<BlockId> {
    set.iter()
        .copied()
        .filter(|v| !dag.children(*v).iter().any(|c| set.contains(c)))
        .collect()
}

/// Chooses an ancestry-closed subset of `usable` of exactly `need` votes.
///
/// Candidates are visited by descending depth, then ascending id. A candidate
/// is taken together with its not yet chosen ancestors if they all fit;
/// otherwise it is skipped and a shallower vote on the same branch will be
/// taken later. Passes repeat until the subset is full; each pass makes
/// progress because some vote with all ancestors chosen always fits.
fn select_votes(dag: &Dag, usable: &BTreeSet<BlockId>, need: usize) -> BTreeSet<BlockId> {
    let mut order: Vec<BlockId> = usable.iter().copied().collect();
    order.sort_by_key(|v| (std::cmp::Reverse(dag.block(*v).depth), *v));
    let mut chosen = BTreeSet::new();
    while chosen.len() < need {
        let before = chosen.len();
        for v in &order {
            if chosen.len() == need {
                break;
            }
            if chosen.contains(v) {
                continue;
            }
            let fresh: Vec<BlockId> =
                vote_closure(dag, &[*v]).into_iter().filter(|x| !chosen.contains(x)).collect();
            if chosen.len() + fresh.len() <= need {
                chosen.extend(fresh);
            }
        }
        assert!(chosen.len() > before, "vote selection made no progress");
    }
    chosen
}
