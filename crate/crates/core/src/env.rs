//! Step/reset interface around an attack simulation.
//!
//! A decision point follows every proof-of-work mined by anyone. The step
//! reward is the change of the attacker's committed reward on the
//! defenders' preferred chain minus `rho` times the change of committed
//! progress, scaled so that the episode return is zero exactly when the
//! attacker's normalized revenue equals `rho`.

use thiserror::Error;

use crate::attacker::{Action, AttackError, ForkAction, Observation};
use crate::dag::BlockId;
use crate::protocol::ProtocolRules;
use crate::rewards::{RewardLedger, RewardScheme};
use crate::sim::{ScenarioConfig, Sim, SimError, StopRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode is already done")]
    SteppingDoneEpisode,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward_delta: f64,
    pub done: bool,
}

/// Episode stop used while training: 2^7 proofs-of-work on the longest chain.
pub const TRAINING_STOP: StopRule = StopRule::Progress(128);
/// Episode stop used while evaluating: 2^11 mining successes.
pub const EVALUATION_STOP: StopRule = StopRule::Puzzles(2048);

#[derive(Clone, Debug)]
pub struct Env {
    sim: Sim,
    ledger: RewardLedger,
    stop: StopRule,
    rho: f64,
    committed: (u64, u32),
    mask: [bool; 8],
    done: bool,
}

impl Env {
    pub fn reset(
        scenario: &ScenarioConfig,
        rules: ProtocolRules,
        scheme: RewardScheme,
        stop: StopRule,
        rho: f64,
    ) -> Result<(Env, Observation), EnvError> {
        let sim = Sim::new(scenario, rules, scheme)?;
        Self::from_sim(sim, stop, rho)
    }

    /// Wraps a freshly created attack simulation.
    pub fn from_sim(sim: Sim, stop: StopRule, rho: f64) -> Result<(Env, Observation), EnvError> {
        let me = sim.attacker_id().ok_or(SimError::NoAttacker)?;
        let ledger = RewardLedger::new(sim.scheme(), *sim.rules(), me).map_err(SimError::from)?;
        let obs = Observation::FRESH;
        let mask = sim.action_mask();
        Ok((Env { sim, ledger, stop, rho, committed: (0, 0), mask, done: false }, obs))
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Sim {
        &mut self.sim
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Feasibility of `Action::ALL` at the current decision point.
    pub fn mask(&self) -> [bool; 8] {
        self.mask
    }

    /// Applies `action` (or waits, keeping its vote stance, if infeasible)
    /// and advances to the next decision point.
    pub fn step(&mut self, action: Action) -> Result<EnvStep, EnvError> {
        if self.done {
            return Err(EnvError::SteppingDoneEpisode);
        }
        let chosen = if self.mask[action.index()] { action } else { Action::new(ForkAction::Wait, action.votes) };
        self.sim.apply(chosen)?;
        let miner = self.sim.step_mining();
        let origin = if Some(miner) == self.sim.attacker_id() {
            crate::attacker::Origin::MinedLocally
        } else {
            crate::attacker::Origin::Received
        };
        if self.stop.reached(&self.sim) {
            self.sim.settle()?;
            self.done = true;
        }
        let observation = self.sim.observe(origin)?;
        self.mask = self.sim.action_mask();
        let reward_delta = self.collect();
        Ok(EnvStep { observation, reward_delta, done: self.done })
    }

    fn collect(&mut self) -> f64 {
        let tip = self.sim.public_tip();
        let now = (self.ledger.tracked_numerator(self.sim.dag(), tip), self.sim.dag().block(tip).height);
        let k = f64::from(self.sim.rules().k());
        let d_reward = (now.0 as f64 - self.committed.0 as f64) / k;
        let d_progress = k * (f64::from(now.1) - f64::from(self.committed.1));
        self.committed = now;
        (d_reward - self.rho * d_progress) / k
    }

    /// Defenders' preferred tip.
    pub fn tip(&self) -> BlockId {
        self.sim.public_tip()
    }

    /// Attacker's committed reward relative to a linear chain of equal height.
    pub fn normalized_revenue(&mut self) -> f64 {
        let tip = self.sim.public_tip();
        self.ledger.normalized(self.sim.dag(), tip)
    }
}

/// Runs one episode of `policy` to completion and returns the episode
/// return and the final normalized revenue.
pub fn rollout<P: crate::policy::Policy + ?Sized>(
    env: &mut Env,
    first: Observation,
    policy: &mut P,
) -> Result<(f64, f64), EnvError> {
    let mut obs = first;
    let mut ret = 0.0;
    while !env.is_done() {
        let action = policy.act(&obs, &env.mask());
        let s = env.step(action)?;
        ret += s.reward_delta;
        obs = s.observation;
    }
    Ok((ret, env.normalized_revenue()))
}
