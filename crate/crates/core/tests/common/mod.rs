//! Random epoch generators and brute-force reward oracles shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use parpow::dag::{BlockId, Dag, Kind, NodeId};
use parpow::protocol::{ProtocolKind, ProtocolRules};
use rand::seq::IndexedRandom;
use rand::Rng;

/// A valid epoch on top of a short random prefix, plus unreferenced noise
/// votes on the same predecessor.
pub struct RandomEpoch {
    pub rules: ProtocolRules,
    pub dag: Dag,
    pub pred: BlockId,
    pub closing: BlockId,
}

fn antichain(dag: &Dag, picks: &[BlockId]) -> Vec<BlockId> {
    let mut out: Vec<BlockId> = picks
        .iter()
        .copied()
        .filter(|a| !picks.iter().any(|b| a != b && dag.is_ancestor(*a, *b).unwrap()))
        .collect();
    out.sort();
    out.dedup();
    out
}

fn random_vote<R: Rng>(rng: &mut R, dag: &mut Dag, kind: ProtocolKind, pred: BlockId, votes: &[BlockId]) -> BlockId {
    let miner = NodeId(rng.random_range(0..4));
    let parents = match kind {
        ProtocolKind::Parallel => vec![pred],
        ProtocolKind::TreeVoting => {
            let i = rng.random_range(0..=votes.len());
            vec![if i == votes.len() { pred } else { votes[i] }]
        }
        ProtocolKind::DagVoting => {
            let picks: Vec<BlockId> = votes.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            if picks.is_empty() {
                vec![pred]
            } else {
                antichain(dag, &picks)
            }
        }
        ProtocolKind::Sequential => unreachable!(),
    };
    dag.append(parents, miner, Kind::Vote).unwrap()
}

/// Leaves of `set` (no child inside `set`).
pub fn leaves(dag: &Dag, set: &[BlockId]) -> Vec<BlockId> {
    let mut out: Vec<BlockId> =
        set.iter().copied().filter(|v| !dag.children(*v).iter().any(|c| set.contains(c))).collect();
    out.sort();
    out
}

/// Closes an epoch of exactly `k - 1` random votes on `pred`.
pub fn random_epoch_on<R: Rng>(rng: &mut R, dag: &mut Dag, rules: ProtocolRules, pred: BlockId, noise: usize) -> BlockId {
    let mut votes = Vec::new();
    for _ in 0..rules.k() - 1 {
        let v = random_vote(rng, dag, rules.kind(), pred, &votes);
        votes.push(v);
    }
    for _ in 0..noise {
        // unreferenced votes: never parents of the closing block
        dag.append(vec![pred], NodeId(9), Kind::Vote).unwrap();
    }
    let mut parents = vec![pred];
    parents.extend(leaves(dag, &votes));
    let miner = NodeId(rng.random_range(0..4));
    dag.append(parents, miner, Kind::Block).unwrap()
}

/// One random valid epoch for `kind` with `k` drawn from 2..=12.
pub fn random_epoch<R: Rng>(rng: &mut R, kind: ProtocolKind) -> RandomEpoch {
    let k = rng.random_range(2..=12);
    let rules = ProtocolRules::new(kind, k).unwrap();
    let mut dag = Dag::new();
    let mut pred = BlockId::GENESIS;
    for _ in 0..rng.random_range(0..3) {
        pred = random_epoch_on(rng, &mut dag, rules, pred, 0);
    }
    let noise = rng.random_range(0..3);
    let closing = random_epoch_on(rng, &mut dag, rules, pred, noise);
    RandomEpoch { rules, dag, pred, closing }
}

/// A strictly linear epoch: each vote extends the previous one. Under
/// parallel proof-of-work all votes confirm the predecessor directly.
pub fn linear_epoch(kind: ProtocolKind, k: u32) -> RandomEpoch {
    let rules = ProtocolRules::new(kind, k).unwrap();
    let mut dag = Dag::new();
    let pred = dag.append(vec![BlockId::GENESIS], NodeId(0), Kind::Block).unwrap();
    let mut parents = vec![pred];
    let mut tip = pred;
    for i in 0..k - 1 {
        let p = if kind == ProtocolKind::Parallel { pred } else { tip };
        tip = dag.append(vec![p], NodeId(i % 3), Kind::Vote).unwrap();
        if kind == ProtocolKind::Parallel {
            parents.push(tip);
        }
    }
    if kind != ProtocolKind::Parallel && k > 1 {
        parents.push(tip);
    }
    let closing = dag.append(parents, NodeId(1), Kind::Block).unwrap();
    RandomEpoch { rules, dag, pred, closing }
}

/// Epoch members found by walking vote parents from the closing block.
pub fn oracle_members(dag: &Dag, closing: BlockId) -> Vec<BlockId> {
    let mut seen = vec![closing];
    let mut stack = vec![closing];
    while let Some(x) = stack.pop() {
        for p in &dag.block(x).parents {
            if dag.block(*p).kind == Kind::Vote && !seen.contains(p) {
                seen.push(*p);
                stack.push(*p);
            }
        }
    }
    seen.sort();
    seen
}

/// Boolean reachability among members: `reach[i][j]` iff member `j` is a
/// strict ancestor of member `i`.
pub fn oracle_reach(dag: &Dag, members: &[BlockId]) -> Vec<Vec<bool>> {
    let n = members.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, m) in members.iter().enumerate() {
        for p in &dag.block(*m).parents {
            if let Some(j) = members.iter().position(|x| x == p) {
                reach[i][j] = true;
            }
        }
    }
    for via in 0..n {
        for i in 0..n {
            if reach[i][via] {
                let through = reach[via].clone();
                for (r, t) in reach[i].iter_mut().zip(through) {
                    *r |= t;
                }
            }
        }
    }
    reach
}

/// `a(p) + s(p) + 1` for every member, by transitive closure.
pub fn oracle_dag_counts(dag: &Dag, closing: BlockId) -> Vec<(BlockId, u32)> {
    let members = oracle_members(dag, closing);
    let reach = oracle_reach(dag, &members);
    let n = members.len();
    (0..n)
        .map(|i| {
            let a = (0..n).filter(|j| reach[i][*j]).count();
            let s = (0..n).filter(|j| reach[*j][i]).count();
            (members[i], (a + s + 1) as u32)
        })
        .collect()
}

/// Longest path of members ending at the closing block, by exhaustive
/// enumeration of all member paths.
pub fn oracle_longest_path(dag: &Dag, closing: BlockId) -> Vec<BlockId> {
    let members = oracle_members(dag, closing);
    fn walk(dag: &Dag, members: &[BlockId], x: BlockId, path: &mut Vec<BlockId>, best: &mut Vec<BlockId>) {
        path.push(x);
        let next: Vec<BlockId> =
            dag.block(x).parents.iter().copied().filter(|p| members.contains(p)).collect();
        if next.is_empty() && path.len() > best.len() {
            *best = path.clone();
        }
        for p in next {
            walk(dag, members, p, path, best);
        }
        path.pop();
    }
    let mut best = Vec::new();
    walk(dag, &members, closing, &mut Vec::new(), &mut best);
    best
}

/// Picks one element uniformly.
pub fn pick<'a, T, R: Rng>(rng: &mut R, xs: &'a [T]) -> &'a T {
    xs.choose(rng).unwrap()
}
