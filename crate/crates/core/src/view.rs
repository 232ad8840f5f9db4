//! A node's local knowledge of the block DAG.

use std::cmp::Ordering;

use crate::dag::{BlockId, Dag, Kind};

/// Fork-choice ranking of a tip block at one node.
///
/// Higher chains win, then tips with more confirming votes. Remaining ties go
/// to the tip that reached its current vote count first, measured in the
/// node's receive sequence (lower `arrival` is preferred). For a tip without
/// votes this is the receive sequence number of the tip itself.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PreferenceKey {
    pub height: u32,
    pub tip_votes: u32,
    pub arrival: u64,
}

impl PreferenceKey {
    /// Compares only the protocol-level components, ignoring arrival.
    pub fn objective(&self) -> (u32, u32) {
        (self.height, self.tip_votes)
    }
}

impl Ord for PreferenceKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.height
            .cmp(&other.height)
            .then(self.tip_votes.cmp(&other.tip_votes))
            .then(other.arrival.cmp(&self.arrival))
    }
}

impl PartialOrd for PreferenceKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const UNKNOWN: u64 = u64::MAX;

/// Topologically closed set of known blocks together with receive order,
/// per-block vote lists, and the incrementally maintained preferred tip.
#[derive(Clone, Debug)]
pub struct NodeView {
    arrival: Vec<u64>,
    reached: Vec<u64>,
    votes: Vec<Vec<BlockId>>,
    best: BlockId,
    clock: u64,
    count: usize,
}

impl Default for NodeView {
    fn default() -> Self {
        Self::new()
    }
}

impl NodeView {
    /// A view that knows only the genesis block.
    pub fn new() -> Self {
        NodeView {
            arrival: vec![0],
            reached: vec![0],
            votes: vec![Vec::new()],
            best: BlockId::GENESIS,
            clock: 1,
            count: 1,
        }
    }

    fn grow(&mut self, id: BlockId) {
        if id.index() >= self.arrival.len() {
            let n = id.index() + 1;
            self.arrival.resize(n, UNKNOWN);
            self.reached.resize(n, UNKNOWN);
            self.votes.resize_with(n, Vec::new);
        }
    }

    pub fn knows(&self, id: BlockId) -> bool {
        self.arrival.get(id.index()).is_some_and(|a| *a != UNKNOWN)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Receive sequence number, if known.
    pub fn arrival(&self, id: BlockId) -> Option<u64> {
        self.arrival.get(id.index()).copied().filter(|a| *a != UNKNOWN)
    }

    /// Known votes confirming `block`, in receive order.
    pub fn votes_for(&self, block: BlockId) -> &[BlockId] {
        self.votes.get(block.index()).map_or(&[], |v| v.as_slice())
    }

    pub fn tip_votes(&self, block: BlockId) -> u32 {
        self.votes_for(block).len() as u32
    }

    /// Known blocks in id order.
    pub fn known(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.arrival
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != UNKNOWN)
            .map(|(i, _)| BlockId(i as u32))
    }

    pub fn key(&self, dag: &Dag, block: BlockId) -> Option<PreferenceKey> {
        if !self.knows(block) {
            return None;
        }
        Some(PreferenceKey {
            height: dag.block(block).height,
            tip_votes: self.tip_votes(block),
            arrival: self.reached[block.index()],
        })
    }

    /// The preferred tip, maintained incrementally.
    pub fn best(&self) -> BlockId {
        self.best
    }

    pub fn can_learn(&self, dag: &Dag, id: BlockId) -> bool {
        dag.block(id).parents.iter().all(|p| self.knows(*p))
    }

    /// Marks `id` as known. Returns false (and changes nothing) if some parent
    /// is still unknown. Learning a known block is a no-op returning true.
    pub fn learn(&mut self, dag: &Dag, id: BlockId) -> bool {
        if self.knows(id) {
            return true;
        }
        if !self.can_learn(dag, id) {
            return false;
        }
        self.grow(id);
        let seq = self.clock;
        self.clock += 1;
        self.count += 1;
        self.arrival[id.index()] = seq;
        let b = dag.block(id);
        let candidate = match b.kind {
            Kind::Block => {
                self.reached[id.index()] = seq;
                id
            }
            Kind::Vote => {
                let root = b.root;
                self.votes[root.index()].push(id);
                self.reached[root.index()] = seq;
                root
            }
        };
        if candidate != self.best {
            let new = self.key(dag, candidate).expect("candidate is known");
            let old = self.key(dag, self.best).expect("best is known");
            if new > old {
                self.best = candidate;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::NodeId;

    #[test]
    fn key_ordering() {
        let k = |h, v, a| PreferenceKey { height: h, tip_votes: v, arrival: a };
        assert!(k(3, 0, 9) > k(2, 7, 0));
        assert!(k(2, 5, 9) > k(2, 3, 0));
        assert!(k(2, 3, 1) > k(2, 3, 4));
    }

    #[test]
    fn refuses_out_of_order() {
        let mut dag = Dag::new();
        let a = dag.append(vec![BlockId::GENESIS], NodeId(0), Kind::Block).unwrap();
        let b = dag.append(vec![a], NodeId(0), Kind::Block).unwrap();
        let mut view = NodeView::new();
        assert!(!view.learn(&dag, b));
        assert!(view.learn(&dag, a));
        assert!(view.learn(&dag, b));
        assert_eq!(view.best(), b);
        assert_eq!(view.len(), 3);
    }

    #[test]
    fn tie_goes_to_first_to_reach_the_count() {
        let mut dag = Dag::new();
        let g = BlockId::GENESIS;
        let x = dag.append(vec![g], NodeId(0), Kind::Block).unwrap();
        let y = dag.append(vec![g], NodeId(1), Kind::Block).unwrap();
        let vy = dag.append(vec![y], NodeId(1), Kind::Vote).unwrap();
        let vx = dag.append(vec![x], NodeId(0), Kind::Vote).unwrap();
        let mut view = NodeView::new();
        for id in [x, y] {
            view.learn(&dag, id);
        }
        assert_eq!(view.best(), x);
        view.learn(&dag, vy);
        assert_eq!(view.best(), y);
        // x catches up to one vote but y got there first
        view.learn(&dag, vx);
        assert_eq!(view.best(), y);
        assert_eq!(view.tip_votes(x), 1);
    }
}
