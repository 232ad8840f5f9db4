//! Deterministic virtual-time simulation of mining and block propagation.
//!
//! Mining is one global Poisson process of rate `lambda`; each success is
//! attributed to a node sampled by hashrate. All randomness comes from one
//! seeded stream, so a scenario plus seed fixes the whole trace.
//!
//! Two node layouts exist. In attack mode nodes `0..n` are honest defenders
//! and node `n` is the attacker, whose blocks stay withheld until released.
//! In honest mode every node is honest and hashrates are given explicitly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::AttackerState;
use crate::dag::{BlockId, Dag, NodeId};
use crate::protocol::ProtocolRules;
use crate::rewards::{RewardError, RewardScheme};
use crate::view::NodeView;

/// Network scenario of an attack experiment.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Attacker share of total hashrate.
    pub alpha: f64,
    /// Share of defender hashrate that sees the attacker's side of a tie first.
    pub gamma: f64,
    pub n_defenders: u32,
    /// Proofs-of-work per virtual second.
    pub lambda: f64,
    /// Defender-to-defender propagation delay in virtual seconds.
    pub base_delay: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig { alpha: 0.25, gamma: 0.5, n_defenders: 20, lambda: 1.0, base_delay: 0.0, seed: 0 }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.n_defenders == 0 {
            return bad("at least one defender is required");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.base_delay >= 0.0 && self.base_delay.is_finite()) {
            return bad("base_delay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("block {0} is not withheld by the attacker")]
    NotWithheld(BlockId),
    #[error("block {0} has a parent that is neither public nor released with it")]
    UnreleasedParent(BlockId),
    #[error("stop condition not reached within {0} steps")]
    CapExceeded(u64),
    #[error("simulation has no attacker")]
    NoAttacker,
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    MiningSuccess(NodeId),
    Deliver(NodeId, BlockId),
}

/// Delivery class; at equal times urgent events run first.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    Urgent,
    Normal,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub class: EventClass,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap pops the maximum
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.class.cmp(&self.class))
            .then(other.sequence.cmp(&self.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReleaseMode {
    Normal,
    MatchRace,
}

/// Stop predicates used by experiments.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Total mining successes.
    Puzzles(u64),
    /// Proofs-of-work on the longest chain in the dag.
    Progress(u64),
    /// Virtual seconds.
    Time(f64),
}

impl StopRule {
    pub fn reached(&self, sim: &Sim) -> bool {
        match *self {
            StopRule::Puzzles(n) => sim.puzzles() >= n,
            StopRule::Progress(p) => sim.max_progress() >= p,
            StopRule::Time(t) => sim.time() >= t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub view: NodeView,
    pub deceived: bool,
    pending: Vec<BlockId>,
}

impl NodeState {
    fn new(id: NodeId) -> Self {
        NodeState { id, view: NodeView::new(), deceived: false, pending: Vec::new() }
    }

    /// Learns `id` if possible, else buffers it; then drains the buffer.
    fn receive(&mut self, dag: &Dag, id: BlockId) -> bool {
        if !self.view.learn(dag, id) {
            self.pending.push(id);
            return false;
        }
        while !self.pending.is_empty() {
            let before = self.pending.len();
            let view = &mut self.view;
            self.pending.retain(|b| !view.learn(dag, *b));
            if self.pending.len() == before {
                break;
            }
        }
        true
    }
}

#[derive(Clone, Debug)]
pub struct Sim {
    pub(crate) rules: ProtocolRules,
    pub(crate) scheme: RewardScheme,
    pub(crate) dag: Dag,
    pub(crate) nodes: Vec<NodeState>,
    /// Defender-visible blocks: defender blocks at mining time, attacker
    /// blocks at release time.
    pub(crate) public: NodeView,
    pub(crate) attacker: Option<AttackerState>,
    cumulative: Vec<f64>,
    base_delay: f64,
    exp: Exp<f64>,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Event>,
    time: f64,
    sequence: u64,
    puzzles: u64,
    max_height: u32,
    log: Option<String>,
}

impl Sim {
    /// Attack-mode simulation: `n_defenders` honest nodes sharing `1 - alpha`
    /// evenly, plus the attacker as the last node.
    pub fn new(scenario: &ScenarioConfig, rules: ProtocolRules, scheme: RewardScheme) -> Result<Self, SimError> {
        scenario.validate()?;
        scheme.check(&rules)?;
        let n = scenario.n_defenders as usize;
        let mut rates = vec![(1.0 - scenario.alpha) / n as f64; n];
        rates.push(scenario.alpha);
        let mut sim = Self::build(&rates, scenario.lambda, scenario.base_delay, scenario.seed, rules, scheme);
        for i in 0..deceived_prefix(&rates[..n], scenario.gamma) {
            sim.nodes[i].deceived = true;
        }
        sim.attacker = Some(AttackerState::new(NodeId(n as u32)));
        Ok(sim)
    }

    /// All-honest simulation with explicit per-node hashrates.
    pub fn honest(
        hashrates: &[f64],
        lambda: f64,
        base_delay: f64,
        seed: u64,
        rules: ProtocolRules,
        scheme: RewardScheme,
    ) -> Result<Self, SimError> {
        scheme.check(&rules)?;
        if hashrates.is_empty() || hashrates.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(SimError::InvalidScenario("hashrates must be non-negative".into()));
        }
        if hashrates.iter().sum::<f64>() <= 0.0 {
            return Err(SimError::InvalidScenario("total hashrate must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SimError::InvalidScenario("lambda must be positive".into()));
        }
        if !(base_delay >= 0.0 && base_delay.is_finite()) {
            return Err(SimError::InvalidScenario("base_delay must be non-negative".into()));
        }
        Ok(Self::build(hashrates, lambda, base_delay, seed, rules, scheme))
    }

    fn build(rates: &[f64], lambda: f64, base_delay: f64, seed: u64, rules: ProtocolRules, scheme: RewardScheme) -> Self {
        let mut acc = 0.0;
        let cumulative = rates
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect();
        let mut sim = Sim {
            rules,
            scheme,
            dag: Dag::new(),
            nodes: (0..rates.len()).map(|i| NodeState::new(NodeId(i as u32))).collect(),
            public: NodeView::new(),
            attacker: None,
            cumulative,
            base_delay,
            exp: Exp::new(lambda).expect("positive rate"),
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            time: 0.0,
            sequence: 0,
            puzzles: 0,
            max_height: 0,
            log: None,
        };
        sim.schedule_mining();
        sim
    }

    /// Starts recording the event log; the header names the configuration.
    pub fn enable_log(&mut self) {
        let attacker = self.attacker_id().map_or("-".to_string(), |a| a.to_string());
        self.log = Some(format!(
            "# protocol={} k={} scheme={} attacker={}\n",
            self.rules.kind(),
            self.rules.k(),
            self.scheme,
            attacker
        ));
    }

    pub fn log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<String> {
        self.log.take()
    }

    pub fn rules(&self) -> &ProtocolRules {
        &self.rules
    }

    pub fn scheme(&self) -> RewardScheme {
        self.scheme
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn public_view(&self) -> &NodeView {
        &self.public
    }

    /// Preferred tip over all public blocks.
    pub fn public_tip(&self) -> BlockId {
        self.public.best()
    }

    pub fn attacker_id(&self) -> Option<NodeId> {
        self.attacker.as_ref().map(|a| a.me)
    }

    pub fn attacker(&self) -> Option<&AttackerState> {
        self.attacker.as_ref()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn puzzles(&self) -> u64 {
        self.puzzles
    }

    /// Proofs-of-work committed by the highest block in the dag.
    pub fn max_progress(&self) -> u64 {
        u64::from(self.max_height) * u64::from(self.rules.k())
    }

    pub fn base_delay(&self) -> f64 {
        self.base_delay
    }

    fn next_sequence(&mut self) -> u64 {
        self.sequence += 1;
        self.sequence
    }

    fn push(&mut self, time: f64, class: EventClass, kind: EventKind) {
        let sequence = self.next_sequence();
        self.queue.push(Event { time, class, sequence, kind });
    }

    fn schedule_mining(&mut self) {
        let gap = self.exp.sample(&mut self.rng);
        let total = *self.cumulative.last().expect("at least one node");
        let u = self.rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|c| *c <= u).min(self.cumulative.len() - 1);
        self.push(self.time + gap, EventClass::Normal, EventKind::MiningSuccess(NodeId(idx as u32)));
    }

    /// Processes the next event.
    pub fn step(&mut self) -> Event {
        let ev = self.queue.pop().expect("mining events replenish the queue");
        self.time = ev.time;
        match ev.kind {
            EventKind::MiningSuccess(node) => self.mine(node),
            EventKind::Deliver(node, block) => {
                self.nodes[node.index()].receive(&self.dag, block);
                if let Some(log) = &mut self.log {
                    let _ = writeln!(log, "{}\tdeliver\t{}\t{}\t-", self.time, node, block);
                }
            }
        }
        ev
    }

    fn mine(&mut self, node: NodeId) {
        self.mine_as(node);
        self.schedule_mining();
    }

    /// Scripted mining success of `node` at the current time, outside the
    /// random schedule. Returns the new proof-of-work.
    pub fn inject_mining(&mut self, node: NodeId) -> BlockId {
        assert!(node.index() < self.nodes.len(), "unknown node {node}");
        self.mine_as(node)
    }

    fn mine_as(&mut self, node: NodeId) -> BlockId {
        self.puzzles += 1;
        let is_attacker = self.attacker_id() == Some(node);
        let template = if is_attacker {
            self.attacker_template()
        } else {
            self.rules.mining_template(&self.dag, &self.nodes[node.index()].view, |_| true)
        };
        let id = self.dag.append(template.parents, node, template.kind).expect("template parents exist");
        debug_assert_eq!(self.rules.validate_stored(&self.dag, id), Ok(()));
        self.max_height = self.max_height.max(self.dag.block(id).height);
        if let Some(log) = &mut self.log {
            let b = self.dag.block(id);
            let kind = if b.is_block() { "block" } else { "vote" };
            let parents: Vec<String> = b.parents.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(log, "{}\t{}\t{}\t{}\t{}", self.time, kind, node, id, parents.join(","));
        }
        let learned = self.nodes[node.index()].receive(&self.dag, id);
        debug_assert!(learned);
        if is_attacker {
            self.attacker_mined(id);
        } else {
            let at = self.time + self.base_delay;
            for other in 0..self.nodes.len() {
                if other != node.index() && Some(NodeId(other as u32)) != self.attacker_id() {
                    self.push(at, EventClass::Normal, EventKind::Deliver(NodeId(other as u32), id));
                }
            }
            self.public.learn(&self.dag, id);
            if let Some(me) = self.attacker_id() {
                self.nodes[me.index()].receive(&self.dag, id);
                self.defender_mined();
            }
        }
        id
    }

    /// Processes events until the next mining success has been handled.
    /// Returns the miner.
    pub fn step_mining(&mut self) -> NodeId {
        loop {
            if let EventKind::MiningSuccess(node) = self.step().kind {
                return node;
            }
        }
    }

    /// Steps until `rule` holds, failing after `cap` steps.
    pub fn run_until(&mut self, rule: StopRule, cap: u64) -> Result<(), SimError> {
        self.run_while(|s| !rule.reached(s), cap)
    }

    /// Steps while `cont` holds, failing after `cap` steps.
    pub fn run_while<F: FnMut(&Sim) -> bool>(&mut self, mut cont: F, cap: u64) -> Result<(), SimError> {
        let mut steps = 0;
        while cont(self) {
            if steps == cap {
                return Err(SimError::CapExceeded(cap));
            }
            self.step();
            steps += 1;
        }
        Ok(())
    }

    /// Processes all outstanding deliveries without advancing mining.
    pub fn flush_deliveries(&mut self) {
        let mut mining = Vec::new();
        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                EventKind::MiningSuccess(_) => mining.push(ev),
                EventKind::Deliver(node, block) => {
                    self.time = self.time.max(ev.time);
                    self.nodes[node.index()].receive(&self.dag, block);
                    if let Some(log) = &mut self.log {
                        let _ = writeln!(log, "{}\tdeliver\t{}\t{}\t-", ev.time, node, block);
                    }
                }
            }
        }
        self.queue.extend(mining);
    }

    /// Publishes withheld attacker blocks in topological order.
    pub fn release(&mut self, blocks: &[BlockId], mode: ReleaseMode) -> Result<(), SimError> {
        let att = self.attacker.as_ref().ok_or(SimError::NoAttacker)?;
        for b in blocks {
            if !att.fork.withheld.contains(b) {
                return Err(SimError::NotWithheld(*b));
            }
        }
        let order = self.dag.topo_order(blocks).expect("withheld blocks exist");
        let released: std::collections::BTreeSet<BlockId> = order.iter().copied().collect();
        for b in &order {
            for p in &self.dag.block(*b).parents {
                if !self.public.knows(*p) && !released.contains(p) {
                    return Err(SimError::UnreleasedParent(*b));
                }
            }
        }
        let me = att.me;
        let now = self.time;
        for b in order {
            self.attacker.as_mut().expect("checked").fork.withheld.remove(&b);
            self.public.learn(&self.dag, b);
            if let Some(log) = &mut self.log {
                let tag = match mode {
                    ReleaseMode::Normal => "release",
                    ReleaseMode::MatchRace => "match",
                };
                let _ = writeln!(log, "{}\t{}\t{}\t{}\t-", now, tag, me, b);
            }
            for i in 0..me.index() {
                let (at, class) = match (mode, self.nodes[i].deceived) {
                    (ReleaseMode::MatchRace, true) => (now, EventClass::Urgent),
                    _ => (now + self.base_delay, EventClass::Normal),
                };
                self.push(at, class, EventKind::Deliver(NodeId(i as u32), b));
            }
        }
        self.refresh_fork();
        Ok(())
    }
}

/// Number of leading defenders whose hashrate share is closest to `gamma`;
/// ties go to the shorter prefix.
pub fn deceived_prefix(defender_rates: &[f64], gamma: f64) -> usize {
    let total: f64 = defender_rates.iter().sum();
    let mut best = (0, gamma.abs());
    let mut acc = 0.0;
    for (i, r) in defender_rates.iter().enumerate() {
        acc += r;
        let err = (acc / total - gamma).abs();
        if err < best.1 - 1e-12 {
            best = (i + 1, err);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ProtocolKind;

    #[test]
    fn deceived_counts() {
        let eq = vec![0.05; 20];
        assert_eq!(deceived_prefix(&eq, 0.95), 19);
        assert_eq!(deceived_prefix(&eq, 0.5), 10);
        assert_eq!(deceived_prefix(&eq, 0.05), 1);
        assert_eq!(deceived_prefix(&eq, 0.0), 0);
        assert_eq!(deceived_prefix(&eq, 1.0), 20);
    }

    #[test]
    fn invalid_scenarios() {
        let rules = ProtocolRules::sequential();
        for s in [
            ScenarioConfig { alpha: 1.0, ..Default::default() },
            ScenarioConfig { lambda: 0.0, ..Default::default() },
            ScenarioConfig { gamma: 1.5, ..Default::default() },
            ScenarioConfig { n_defenders: 0, ..Default::default() },
        ] {
            assert!(matches!(Sim::new(&s, rules, RewardScheme::Constant), Err(SimError::InvalidScenario(_))));
        }
        let tree = ProtocolRules::new(ProtocolKind::TreeVoting, 4).unwrap();
        assert!(matches!(
            Sim::new(&ScenarioConfig::default(), tree, RewardScheme::Constant),
            Err(SimError::Reward(_))
        ));
    }

    #[test]
    fn event_order() {
        let e = |t, c, s| Event { time: t, class: c, sequence: s, kind: EventKind::MiningSuccess(NodeId(0)) };
        let mut h = BinaryHeap::new();
        h.push(e(1.0, EventClass::Normal, 1));
        h.push(e(1.0, EventClass::Urgent, 5));
        h.push(e(0.5, EventClass::Normal, 9));
        h.push(e(1.0, EventClass::Normal, 0));
        let order: Vec<u64> = std::iter::from_fn(|| h.pop()).map(|e| e.sequence).collect();
        assert_eq!(order, vec![9, 5, 0, 1]);
    }
}
