//! Append-only store for blocks and votes.
//!
//! Blocks are addressed by dense integer handles. A block's parents always
//! have smaller handles than the block itself, so the handle order is a
//! topological order and the graph is acyclic by construction.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

/// Handle of a block or vote. Handles are assigned in append order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifies a participating node (and thereby the miner of a block).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Miner recorded for the genesis block.
    pub const NOBODY: NodeId = NodeId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == NodeId::NOBODY {
            f.write_str("-")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Block,
    Vote,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub parents: Vec<BlockId>,
    pub miner: NodeId,
    pub kind: Kind,
    /// Number of non-genesis Block-kind entries on the chain ending here.
    /// Votes carry the height of the block they confirm.
    pub height: u32,
    /// For votes, the block being confirmed. For blocks, the block itself.
    pub root: BlockId,
    /// Length of the longest path of proofs-of-work ending here that runs
    /// through Vote-kind parents only. For a block this is the number of
    /// proofs-of-work on the longest path through its epoch.
    pub depth: u32,
}

impl Block {
    pub fn is_vote(&self) -> bool {
        self.kind == Kind::Vote
    }

    pub fn is_block(&self) -> bool {
        self.kind == Kind::Block
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("unknown parent {0}")]
    UnknownParent(BlockId),
    #[error("parent {0} listed twice")]
    DuplicateParent(BlockId),
    #[error("only the genesis block may be parentless")]
    NoParents,
    #[error("unknown block {0}")]
    UnknownId(BlockId),
}

#[derive(Clone, Debug)]
pub struct Dag {
    blocks: Vec<Block>,
    children: Vec<Vec<BlockId>>,
}

impl Default for Dag {
    fn default() -> Self {
        Self::new()
    }
}

impl Dag {
    /// Creates a store holding only the genesis block.
    pub fn new() -> Self {
        let genesis = Block {
            id: BlockId::GENESIS,
            parents: Vec::new(),
            miner: NodeId::NOBODY,
            kind: Kind::Block,
            height: 0,
            root: BlockId::GENESIS,
            depth: 0,
        };
        Dag {
            blocks: vec![genesis],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn genesis(&self) -> BlockId {
        BlockId::GENESIS
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.index() < self.blocks.len()
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = BlockId> + ExactSizeIterator {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Block> + ExactSizeIterator {
        self.blocks.iter()
    }

    /// Panics on unknown ids; use [`Dag::get`] for a checked lookup.
    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    pub fn get(&self, id: BlockId) -> Result<&Block, DagError> {
        self.blocks.get(id.index()).ok_or(DagError::UnknownId(id))
    }

    pub fn children(&self, id: BlockId) -> &[BlockId] {
        &self.children[id.index()]
    }

    /// The Block-kind predecessor of a block, or the confirmed block of a vote.
    pub fn block_parent(&self, id: BlockId) -> Option<BlockId> {
        let b = self.block(id);
        match b.kind {
            Kind::Vote => Some(b.root),
            Kind::Block => b
                .parents
                .iter()
                .copied()
                .filter(|p| self.block(*p).is_block())
                .max_by_key(|p| (self.block(*p).height, std::cmp::Reverse(*p))),
        }
    }

    pub fn append(
        &mut self,
        parents: Vec<BlockId>,
        miner: NodeId,
        kind: Kind,
    ) -> Result<BlockId, DagError> {
        if parents.is_empty() {
            return Err(DagError::NoParents);
        }
        for (i, p) in parents.iter().enumerate() {
            if !self.contains(*p) {
                return Err(DagError::UnknownParent(*p));
            }
            if parents[..i].contains(p) {
                return Err(DagError::DuplicateParent(*p));
            }
        }
        let id = BlockId(self.blocks.len() as u32);
        let max_height = parents.iter().map(|p| self.block(*p).height).max().unwrap_or(0);
        let vote_depth = parents
            .iter()
            .map(|p| self.block(*p))
            .filter(|p| p.is_vote())
            .map(|p| p.depth)
            .max()
            .unwrap_or(0);
        let (height, root) = match kind {
            Kind::Block => (max_height + 1, id),
            Kind::Vote => {
                let first = self.block(parents[0]);
                let root = if first.is_block() { first.id } else { first.root };
                (max_height, root)
            }
        };
        for p in &parents {
            self.children[p.index()].push(id);
        }
        self.blocks.push(Block {
            id,
            parents,
            miner,
            kind,
            height,
            root,
            depth: vote_depth + 1,
        });
        self.children.push(Vec::new());
        Ok(id)
    }

    fn check(&self, id: BlockId) -> Result<(), DagError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(DagError::UnknownId(id))
        }
    }

    /// Strict ancestry: true iff `a` is reachable from `b` via parent links
    /// and `a != b`.
    pub fn is_ancestor(&self, a: BlockId, b: BlockId) -> Result<bool, DagError> {
        self.check(a)?;
        self.check(b)?;
        if a >= b {
            return Ok(false);
        }
        if a == BlockId::GENESIS {
            return Ok(true);
        }
        // Ancestors have smaller ids, so anything below `a` cannot lead to it.
        let base = a.index();
        let mut seen = vec![false; b.index() - base + 1];
        let mut stack = vec![b];
        while let Some(x) = stack.pop() {
            for &p in &self.block(x).parents {
                if p == a {
                    return Ok(true);
                }
                if p > a && !seen[p.index() - base] {
                    seen[p.index() - base] = true;
                    stack.push(p);
                }
            }
        }
        Ok(false)
    }

    /// Strict ancestors of `id` satisfying `filter`.
    pub fn ancestors<F>(&self, id: BlockId, filter: F) -> Result<BTreeSet<BlockId>, DagError>
    where
        F: Fn(&Block) -> bool,
    {
        self.check(id)?;
        let mut seen = vec![false; id.index() + 1];
        let mut stack = vec![id];
        let mut out = BTreeSet::new();
        while let Some(x) = stack.pop() {
            for &p in &self.block(x).parents {
                if !seen[p.index()] {
                    seen[p.index()] = true;
                    if filter(self.block(p)) {
                        out.insert(p);
                    }
                    stack.push(p);
                }
            }
        }
        Ok(out)
    }

    /// Strict descendants of `id` satisfying `filter`.
    pub fn descendants<F>(&self, id: BlockId, filter: F) -> Result<BTreeSet<BlockId>, DagError>
    where
        F: Fn(&Block) -> bool,
    {
        self.check(id)?;
        let base = id.index();
        let mut seen = vec![false; self.blocks.len() - base];
        let mut stack = vec![id];
        let mut out = BTreeSet::new();
        while let Some(x) = stack.pop() {
            for &c in self.children(x) {
                if !seen[c.index() - base] {
                    seen[c.index() - base] = true;
                    if filter(self.block(c)) {
                        out.insert(c);
                    }
                    stack.push(c);
                }
            }
        }
        Ok(out)
    }

    /// Orders `ids` such that parents precede children. Members are ranked by
    /// the longest chain of other members below them; equal ranks are ordered
    /// by ascending id. Duplicates in the input are dropped.
    pub fn topo_order(&self, ids: &[BlockId]) -> Result<Vec<BlockId>, DagError> {
        for id in ids {
            self.check(*id)?;
        }
        let mut members: Vec<BlockId> = ids.to_vec();
        members.sort_unstable();
        members.dedup();
        let (Some(&lo), Some(&hi)) = (members.first(), members.last()) else {
            return Ok(Vec::new());
        };
        // rank[x] = number of members on the longest member chain strictly
        // below x (through arbitrary intermediate blocks).
        let base = lo.index();
        let span = hi.index() - base + 1;
        let mut is_member = vec![false; span];
        for m in &members {
            is_member[m.index() - base] = true;
        }
        let mut below = vec![0u32; span];
        for off in 0..span {
            let x = BlockId((base + off) as u32);
            let mut r = 0;
            for &p in &self.block(x).parents {
                if p >= lo {
                    let i = p.index() - base;
                    r = r.max(below[i] + u32::from(is_member[i]));
                }
            }
            below[off] = r;
        }
        members.sort_by_key(|m| (below[m.index() - base], *m));
        Ok(members)
    }

    /// Members of `subset` without a child inside `subset`.
    pub fn leaves(&self, subset: &[BlockId]) -> Result<BTreeSet<BlockId>, DagError> {
        for id in subset {
            self.check(*id)?;
        }
        let set: BTreeSet<BlockId> = subset.iter().copied().collect();
        Ok(set
            .iter()
            .copied()
            .filter(|x| !self.children(*x).iter().any(|c| set.contains(c)))
            .collect())
    }

    /// Graphviz rendering. Blocks are diamonds, votes circles; `label` may
    /// attach an extra line (e.g. a reward) to each node.
    pub fn to_dot<F>(&self, label: F) -> String
    where
        F: Fn(&Block) -> Option<String>,
    {
        let mut s = String::from("digraph dag {\n  rankdir=RL;\n");
        for b in &self.blocks {
            let shape = match b.kind {
                Kind::Block => "diamond",
                Kind::Vote => "circle",
            };
            let mut text = format!("{}\\nm{}", b.id, b.miner);
            if let Some(extra) = label(b) {
                text.push_str("\\n");
                text.push_str(&extra);
            }
            let _ = writeln!(s, "  b{} [shape={shape}, label=\"{text}\"];", b.id);
        }
        for b in &self.blocks {
            for p in &b.parents {
                let _ = writeln!(s, "  b{} -> b{};", b.id, p);
            }
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const D0: NodeId = NodeId(0);

    fn chain(n: usize) -> (Dag, Vec<BlockId>) {
        let mut dag = Dag::new();
        let mut ids = vec![dag.genesis()];
        for _ in 0..n {
            let tip = *ids.last().unwrap();
            ids.push(dag.append(vec![tip], D0, Kind::Block).unwrap());
        }
        (dag, ids)
    }

    /// Random dag where each new entry references 1..=3 earlier entries.
    fn random_dag(choices: &[(u8, u32, u32, u32)]) -> (Dag, Vec<Vec<BlockId>>) {
        let mut dag = Dag::new();
        let mut inputs = Vec::new();
        for (i, &(n, x, y, z)) in choices.iter().enumerate() {
            let len = (i + 1) as u32;
            let mut parents: Vec<BlockId> = [x, y, z][..(n as usize % 3) + 1]
                .iter()
                .map(|r| BlockId(r % len))
                .collect();
            parents.dedup();
            let mut seen = BTreeSet::new();
            parents.retain(|p| seen.insert(*p));
            let kind = if x % 2 == 0 { Kind::Block } else { Kind::Vote };
            dag.append(parents.clone(), NodeId(y % 4), kind).unwrap();
            inputs.push(parents);
        }
        (dag, inputs)
    }

    fn dfs_reaches(dag: &Dag, from: BlockId, to: BlockId) -> bool {
        // brute force: explore everything reachable via parents
        let mut stack = dag.block(from).parents.clone();
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            if x == to {
                return true;
            }
            if seen.insert(x) {
                stack.extend(dag.block(x).parents.iter().copied());
            }
        }
        false
    }

    #[test]
    fn first_extension() {
        let mut dag = Dag::new();
        let id = dag.append(vec![dag.genesis()], D0, Kind::Block).unwrap();
        assert_eq!(id, BlockId(1));
        assert_eq!(dag.block(id).height, 1);
    }

    #[test]
    fn unknown_parent() {
        let mut dag = Dag::new();
        assert_eq!(
            dag.append(vec![BlockId(99)], D0, Kind::Vote),
            Err(DagError::UnknownParent(BlockId(99)))
        );
        assert_eq!(dag.len(), 1);
    }

    #[test]
    fn duplicate_and_missing_parents() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        assert_eq!(dag.append(vec![g, g], D0, Kind::Vote), Err(DagError::DuplicateParent(g)));
        assert_eq!(dag.append(vec![], D0, Kind::Block), Err(DagError::NoParents));
    }

    #[test]
    fn vote_roots_and_depth() {
        let mut dag = Dag::new();
        let g = dag.genesis();
        let b = dag.append(vec![g], D0, Kind::Block).unwrap();
        let v1 = dag.append(vec![b], D0, Kind::Vote).unwrap();
        let v2 = dag.append(vec![v1], D0, Kind::Vote).unwrap();
        let v3 = dag.append(vec![b], D0, Kind::Vote).unwrap();
        let c = dag.append(vec![b, v2, v3], D0, Kind::Block).unwrap();
        assert_eq!(dag.block(v2).root, b);
        assert_eq!(dag.block(v2).height, 1);
        assert_eq!(dag.block(v2).depth, 2);
        assert_eq!(dag.block(c).depth, 3);
        assert_eq!(dag.block(c).height, 2);
        assert_eq!(dag.block_parent(c), Some(b));
        assert_eq!(dag.block_parent(v3), Some(b));
    }

    #[test]
    fn genesis_is_universal_ancestor() {
        let (dag, ids) = chain(5);
        for id in &ids[1..] {
            assert!(dag.is_ancestor(dag.genesis(), *id).unwrap());
        }
        assert!(!dag.is_ancestor(ids[3], ids[3]).unwrap());
        assert!(!dag.is_ancestor(ids[3], ids[2]).unwrap());
        assert_eq!(dag.is_ancestor(BlockId(40), ids[2]), Err(DagError::UnknownId(BlockId(40))));
    }

    #[test]
    fn ancestors_descendants_on_chain() {
        let (dag, ids) = chain(3);
        let all = |_: &Block| true;
        assert!(dag.ancestors(dag.genesis(), all).unwrap().is_empty());
        let desc = dag.descendants(ids[1], all).unwrap();
        assert_eq!(desc.into_iter().collect::<Vec<_>>(), vec![ids[2], ids[3]]);
    }

    #[test]
    fn topo_order_examples() {
        let (dag, ids) = chain(3);
        let (a, b, c) = (ids[1], ids[2], ids[3]);
        assert_eq!(dag.topo_order(&[c, a, b]).unwrap(), vec![a, b, c]);

        let mut dag = Dag::new();
        let v1 = dag.append(vec![dag.genesis()], D0, Kind::Vote).unwrap();
        let v2 = dag.append(vec![v1], D0, Kind::Vote).unwrap();
        let v3 = dag.append(vec![v1], D0, Kind::Vote).unwrap();
        assert_eq!(dag.topo_order(&[v3, v2, v1]).unwrap(), vec![v1, v2, v3]);
    }

    #[test]
    fn topo_order_ranks_before_ids() {
        // x (id 1) is the parent of y (id 3); z (id 2) is unrelated. Ranks:
        // x=0, z=0, y=1, so z precedes y even though both are later than x.
        let mut dag = Dag::new();
        let g = dag.genesis();
        let x = dag.append(vec![g], D0, Kind::Vote).unwrap();
        let z = dag.append(vec![g], D0, Kind::Vote).unwrap();
        let y = dag.append(vec![x], D0, Kind::Vote).unwrap();
        let w = dag.append(vec![g], D0, Kind::Vote).unwrap();
        assert_eq!(dag.topo_order(&[w, y, z, x]).unwrap(), vec![x, z, w, y]);
    }

    #[test]
    fn leaves_examples() {
        let (dag, ids) = chain(4);
        let l = dag.leaves(&ids).unwrap();
        assert_eq!(l.into_iter().collect::<Vec<_>>(), vec![ids[4]]);

        let mut dag = Dag::new();
        let v1 = dag.append(vec![dag.genesis()], D0, Kind::Vote).unwrap();
        let v2 = dag.append(vec![v1], D0, Kind::Vote).unwrap();
        let v3 = dag.append(vec![v1], D0, Kind::Vote).unwrap();
        let l = dag.leaves(&[v2, v3]).unwrap();
        assert_eq!(l.into_iter().collect::<Vec<_>>(), vec![v2, v3]);
    }

    #[test]
    fn dot_shapes() {
        let mut dag = Dag::new();
        dag.append(vec![dag.genesis()], D0, Kind::Vote).unwrap();
        let dot = dag.to_dot(|_| None);
        assert!(dot.contains("b0 [shape=diamond"));
        assert!(dot.contains("b1 [shape=circle"));
        assert!(dot.contains("b1 -> b0;"));
    }

    proptest! {
        #[test]
        fn replay_matches_inputs(choices in prop::collection::vec(any::<(u8, u32, u32, u32)>(), 50)) {
            let (dag, inputs) = random_dag(&choices);
            prop_assert_eq!(dag.len(), 51);
            for (i, parents) in inputs.iter().enumerate() {
                prop_assert_eq!(&dag.block(BlockId(i as u32 + 1)).parents, parents);
            }
            // append-only: queries are stable
            let again = dag.clone();
            for id in dag.ids() {
                prop_assert_eq!(dag.block(id), again.block(id));
            }
        }

        #[test]
        fn ancestry_agrees_with_dfs(choices in prop::collection::vec(any::<(u8, u32, u32, u32)>(), 50)) {
            let (dag, _) = random_dag(&choices);
            for a in dag.ids() {
                for b in dag.ids() {
                    let fast = dag.is_ancestor(a, b).unwrap();
                    prop_assert_eq!(fast, dfs_reaches(&dag, b, a));
                    prop_assert!(!(fast && dag.is_ancestor(b, a).unwrap()));
                }
            }
        }

        #[test]
        fn closure_sets_match(choices in prop::collection::vec(any::<(u8, u32, u32, u32)>(), 1..60)) {
            let (dag, _) = random_dag(&choices);
            let all = |_: &Block| true;
            for x in dag.ids() {
                let anc = dag.ancestors(x, all).unwrap();
                let desc = dag.descendants(x, all).unwrap();
                for y in dag.ids() {
                    prop_assert_eq!(anc.contains(&y), dfs_reaches(&dag, x, y));
                    prop_assert_eq!(desc.contains(&y), dfs_reaches(&dag, y, x));
                    // duality
                    prop_assert_eq!(anc.contains(&y), dag.descendants(y, all).unwrap().contains(&x));
                }
            }
            let votes = dag.ancestors(BlockId(dag.len() as u32 - 1), |b| b.is_vote()).unwrap();
            prop_assert!(votes.iter().all(|v| dag.block(*v).is_vote()));
        }

        #[test]
        fn topo_order_respects_edges(
            choices in prop::collection::vec(any::<(u8, u32, u32, u32)>(), 1..60),
            pick in prop::collection::vec(any::<u32>(), 1..30),
        ) {
            let (dag, _) = random_dag(&choices);
            let ids: Vec<BlockId> = pick.iter().map(|p| BlockId(p % dag.len() as u32)).collect();
            let order = dag.topo_order(&ids).unwrap();
            let mut expected: Vec<BlockId> = ids.clone();
            expected.sort();
            expected.dedup();
            let mut sorted = order.clone();
            sorted.sort();
            prop_assert_eq!(&sorted, &expected);
            for (i, x) in order.iter().enumerate() {
                for y in &order[i + 1..] {
                    prop_assert!(!dfs_reaches(&dag, *x, *y), "{} before its ancestor {}", x, y);
                }
            }
            prop_assert_eq!(order, dag.topo_order(&ids).unwrap());
        }

        #[test]
        fn leaves_match_child_scan(
            choices in prop::collection::vec(any::<(u8, u32, u32, u32)>(), 1..60),
            pick in prop::collection::vec(any::<u32>(), 1..30),
        ) {
            let (dag, _) = random_dag(&choices);
            let ids: Vec<BlockId> = pick.iter().map(|p| BlockId(p % dag.len() as u32)).collect();
            let l = dag.leaves(&ids).unwrap();
            for x in &ids {
                let has_child = ids.iter().any(|y| dag.block(*y).parents.contains(x));
                prop_assert_eq!(l.contains(x), !has_child);
            }
        }
    }
}
