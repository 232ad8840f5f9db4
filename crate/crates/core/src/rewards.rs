//! Reward schemes and per-miner accounting.
//!
//! Rewards are kept as integer numerators over `k` so that sums over long
//! chains stay exact; `numerator / k` is the reward in units of one full
//! proof-of-work reward.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{BlockId, Dag, NodeId};
use crate::protocol::{EpochError, ProtocolKind, ProtocolRules};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScheme {
    Constant,
    TreeDiscount,
    DagDiscount,
}

impl RewardScheme {
    /// The scheme evaluated together with `kind`.
    pub fn default_for(kind: ProtocolKind) -> Self {
        match kind {
            ProtocolKind::Sequential | ProtocolKind::Parallel => RewardScheme::Constant,
            ProtocolKind::TreeVoting => RewardScheme::TreeDiscount,
            ProtocolKind::DagVoting => RewardScheme::DagDiscount,
        }
    }

    pub fn check(self, rules: &ProtocolRules) -> Result<(), RewardError> {
        if Self::default_for(rules.kind()) == self {
            Ok(())
        } else {
            Err(RewardError::SchemeProtocolMismatch { scheme: self, protocol: rules.kind() })
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardScheme::Constant => "constant",
            RewardScheme::TreeDiscount => "tree-discount",
            RewardScheme::DagDiscount => "dag-discount",
        }
    }
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(RewardScheme::Constant),
            "tree-discount" | "tree" => Ok(RewardScheme::TreeDiscount),
            "dag-discount" | "dag" => Ok(RewardScheme::DagDiscount),
            other => Err(format!("unknown reward scheme `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("scheme {scheme} cannot be used with protocol {protocol}")]
    SchemeProtocolMismatch { scheme: RewardScheme, protocol: ProtocolKind },
    #[error(transparent)]
    Epoch(#[from] EpochError),
}

/// Rewards of one epoch, as numerators over `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewardAssignment {
    pub k: u32,
    pub shares: BTreeMap<BlockId, u32>,
}

impl RewardAssignment {
    pub fn reward(&self, id: BlockId) -> Option<f64> {
        self.shares.get(&id).map(|n| f64::from(*n) / f64::from(self.k))
    }

    /// Sum of numerators.
    pub fn total_numerator(&self) -> u64 {
        self.shares.values().map(|n| u64::from(*n)).sum()
    }

    pub fn total(&self) -> f64 {
        self.total_numerator() as f64 / f64::from(self.k)
    }
}

/// Rewards of the epoch closed by `closing`.
pub fn epoch_rewards(
    scheme: RewardScheme,
    rules: &ProtocolRules,
    dag: &Dag,
    closing: BlockId,
) -> Result<RewardAssignment, RewardError> {
    scheme.check(rules)?;
    let members = rules.epoch(dag, closing)?;
    let k = rules.k();
    let shares = match scheme {
        RewardScheme::Constant => members.iter().map(|m| (*m, k)).collect(),
        RewardScheme::TreeDiscount => {
            let d = dag.block(closing).depth;
            members.iter().map(|m| (*m, d)).collect()
        }
        RewardScheme::DagDiscount => dag_discount(dag, &members),
    };
    Ok(RewardAssignment { k, shares })
}

/// `a + s + 1` per member, counting in-epoch strict ancestors and descendants.
fn dag_discount(dag: &Dag, members: &[BlockId]) -> BTreeMap<BlockId, u32> {
    let set: BTreeSet<BlockId> = members.iter().copied().collect();
    // members are ascending ids, hence topologically sorted
    let mut anc: BTreeMap<BlockId, BTreeSet<BlockId>> = BTreeMap::new();
    for m in members {
        let mut a = BTreeSet::new();
        for p in &dag.block(*m).parents {
            if set.contains(p) {
                a.insert(*p);
                a.extend(anc[p].iter().copied());
            }
        }
        anc.insert(*m, a);
    }
    let mut desc: BTreeMap<BlockId, u32> = members.iter().map(|m| (*m, 0)).collect();
    for a in anc.values() {
        for x in a {
            *desc.get_mut(x).expect("member") += 1;
        }
    }
    members
        .iter()
        .map(|m| (*m, anc[m].len() as u32 + desc[m] + 1))
        .collect()
}

/// Blocks (kind Block) from `tip` down to, but excluding, genesis.
pub fn chain(dag: &Dag, tip: BlockId) -> Vec<BlockId> {
    let mut out = Vec::new();
    let mut cur = tip;
    while cur != BlockId::GENESIS {
        out.push(cur);
        cur = dag.block_parent(cur).expect("non-genesis block has a parent block");
    }
    out
}

/// Per-miner reward numerators (over `k`) on the chain ending at `tip`.
pub fn chain_reward_numerators(
    scheme: RewardScheme,
    rules: &ProtocolRules,
    dag: &Dag,
    tip: BlockId,
) -> Result<BTreeMap<NodeId, u64>, RewardError> {
    scheme.check(rules)?;
    if !dag.get(tip).map_err(EpochError::from)?.is_block() {
        return Err(EpochError::NotABlock(tip).into());
    }
    let mut totals = BTreeMap::new();
    for b in chain(dag, tip) {
        for (id, n) in epoch_rewards(scheme, rules, dag, b)?.shares {
            *totals.entry(dag.block(id).miner).or_insert(0) += u64::from(n);
        }
    }
    Ok(totals)
}

/// Per-miner rewards on the chain ending at `tip`.
pub fn chain_rewards(
    scheme: RewardScheme,
    rules: &ProtocolRules,
    dag: &Dag,
    tip: BlockId,
) -> Result<BTreeMap<NodeId, f64>, RewardError> {
    let k = f64::from(rules.k());
    Ok(chain_reward_numerators(scheme, rules, dag, tip)?
        .into_iter()
        .map(|(m, n)| (m, n as f64 / k))
        .collect())
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
struct Cumulative {
    tracked: u64,
    total: u64,
}

/// Memoized chain accounting for one tracked miner.
///
/// Epochs are immutable once their closing block exists, so cumulative sums
/// per block never change and can be cached along the chain.
#[derive(Clone, Debug)]
pub struct RewardLedger {
    scheme: RewardScheme,
    rules: ProtocolRules,
    tracked: NodeId,
    cache: Vec<Option<Cumulative>>,
}

impl RewardLedger {
    pub fn new(scheme: RewardScheme, rules: ProtocolRules, tracked: NodeId) -> Result<Self, RewardError> {
        scheme.check(&rules)?;
        Ok(RewardLedger { scheme, rules, tracked, cache: vec![Some(Cumulative::default())] })
    }

    fn cumulative(&mut self, dag: &Dag, tip: BlockId) -> Cumulative {
        let mut pending = Vec::new();
        let mut cur = tip;
        let mut acc = loop {
            if let Some(Some(c)) = self.cache.get(cur.index()) {
                break *c;
            }
            pending.push(cur);
            cur = dag.block_parent(cur).expect("non-genesis block has a parent block");
        };
        for b in pending.into_iter().rev() {
            let epoch = epoch_rewards(self.scheme, &self.rules, dag, b).expect("valid chain block");
            for (id, n) in epoch.shares {
                acc.total += u64::from(n);
                if dag.block(id).miner == self.tracked {
                    acc.tracked += u64::from(n);
                }
            }
            if self.cache.len() <= b.index() {
                self.cache.resize(b.index() + 1, None);
            }
            self.cache[b.index()] = Some(acc);
        }
        acc
    }

    /// Reward numerator of the tracked miner on the chain ending at `tip`.
    pub fn tracked_numerator(&mut self, dag: &Dag, tip: BlockId) -> u64 {
        self.cumulative(dag, tip).tracked
    }

    /// Reward numerator of all miners on the chain ending at `tip`.
    pub fn total_numerator(&mut self, dag: &Dag, tip: BlockId) -> u64 {
        self.cumulative(dag, tip).total
    }

    /// Tracked miner's reward divided by the reward a strictly linear chain of
    /// the same height would mint.
    pub fn normalized(&mut self, dag: &Dag, tip: BlockId) -> f64 {
        let height = dag.block(tip).height;
        if height == 0 {
            return 0.0;
        }
        let k = u64::from(self.rules.k());
        self.tracked_numerator(dag, tip) as f64 / (k * k * u64::from(height)) as f64
    }
}
