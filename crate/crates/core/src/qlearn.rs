//! Tabular Q-learning over capped observations.
//!
//! The ratio objective (attacker reward per committed proof-of-work) is
//! optimized through an outer loop over the shaping constant `rho`: train
//! for the current `rho`, measure the greedy policy's revenue, and use that
//! as the next `rho` until it stops moving.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::{Action, Observation, Origin};
use crate::env::{rollout, Env, EnvError, TRAINING_STOP};
use crate::eval::{rollout_seed, splitmix64};
use crate::policy::Policy;
use crate::protocol::{ProtocolKind, ProtocolRules};
use crate::rewards::RewardScheme;
use crate::sim::{ScenarioConfig, StopRule};

/// Capped observation used as table key:
/// `(defender_blocks, attacker_blocks, defender_votes, attacker_votes, own_votes, mined_locally)`.
pub type QKey = (u8, u8, u8, u8, u8, bool);

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Total training episodes across all outer iterations.
    pub episodes: u64,
    pub max_outer: u32,
    pub rho_tolerance: f64,
    /// Greedy episodes used to re-estimate `rho`.
    pub eval_episodes: u64,
    pub stop: StopRule,
}

impl Default for QParams {
    fn default() -> Self {
        QParams {
            learning_rate: 0.05,
            epsilon: 0.1,
            episodes: 200_000,
            max_outer: 10,
            rho_tolerance: 1e-3,
            eval_episodes: 200,
            stop: TRAINING_STOP,
        }
    }
}

#[derive(Debug, Error)]
pub enum QTableError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Action values per capped observation. Missing keys read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    k: u32,
    actions: usize,
    block_cap: u8,
    vote_cap: u8,
    values: HashMap<QKey, [f64; 8]>,
    rho: f64,
}

impl QTable {
    /// Empty table for the given protocol. Sequential proof-of-work has no
    /// votes, so only the four inclusive actions are used.
    pub fn new(rules: &ProtocolRules) -> Self {
        let k = rules.k();
        QTable {
            k,
            actions: if rules.kind() == ProtocolKind::Sequential { 4 } else { 8 },
            block_cap: (2 * k).clamp(16, 255) as u8,
            vote_cap: (2 * k).min(255) as u8,
            values: HashMap::new(),
            rho: 0.0,
        }
    }

    pub fn key(&self, obs: &Observation) -> QKey {
        let b = |x: u32| x.min(u32::from(self.block_cap)) as u8;
        let v = |x: u32| x.min(u32::from(self.vote_cap)) as u8;
        (
            b(obs.defender_blocks),
            b(obs.attacker_blocks),
            v(obs.defender_tip_votes),
            v(obs.attacker_tip_votes_total),
            v(obs.attacker_tip_votes_own),
            obs.origin == Origin::MinedLocally,
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keys with a stored entry, in no particular order.
    pub fn keys(&self) -> impl Iterator<Item = &QKey> {
        self.values.keys()
    }

    /// `rho` the table was last trained with.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn values(&self, key: &QKey) -> [f64; 8] {
        self.values.get(key).copied().unwrap_or([0.0; 8])
    }

    fn entry(&mut self, key: QKey) -> &mut [f64; 8] {
        self.values.entry(key).or_insert([0.0; 8])
    }

    /// Highest-valued feasible action; ties go to the lowest index.
    pub fn greedy(&self, key: &QKey, mask: &[bool; 8]) -> usize {
        let q = self.values(key);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.actions {
            if mask[i] && q[i] > best_v {
                best = i;
                best_v = q[i];
            }
        }
        best
    }

    fn max_value(&self, key: &QKey, mask: &[bool; 8]) -> f64 {
        self.values(key)[self.greedy(key, mask)]
    }

    /// One line per key, sorted: six key fields then one value per action.
    pub fn to_text(&self) -> String {
        let mut out = format!("# k={} actions={} rho={}\n", self.k, self.actions, self.rho);
        let mut keys: Vec<&QKey> = self.values.keys().collect();
        keys.sort();
        for key in keys {
            let (d, a, dv, av, ao, m) = *key;
            let _ = write!(out, "{d} {a} {dv} {av} {ao} {}", u8::from(m));
            for v in &self.values[key][..self.actions] {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(rules: &ProtocolRules, text: &str) -> Result<Self, QTableError> {
        let mut table = QTable::new(rules);
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| QTableError::Parse { line: i + 1, msg: msg.to_string() };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    if let Some(k) = kv.strip_prefix("k=") {
                        if k.parse::<u32>().map_err(|_| err("bad k"))? != table.k {
                            return Err(err("table was trained for a different k"));
                        }
                    }
                    if let Some(r) = kv.strip_prefix("rho=") {
                        table.rho = r.parse().map_err(|_| err("bad rho"))?;
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 + table.actions {
                return Err(err("wrong number of fields"));
            }
            let n = |s: &str| s.parse::<u8>().map_err(|_| err("bad key field"));
            let key = (n(fields[0])?, n(fields[1])?, n(fields[2])?, n(fields[3])?, n(fields[4])?, n(fields[5])? == 1);
            let mut q = [0.0; 8];
            for (j, f) in fields[6..].iter().enumerate() {
                q[j] = f.parse::<f64>().map_err(|_| err("bad value"))?;
                if !q[j].is_finite() {
                    return Err(err("non-finite value"));
                }
            }
            table.values.insert(key, q);
        }
        Ok(table)
    }
}

/// Greedy policy backed by a [`QTable`].
#[derive(Clone, Debug)]
pub struct QPolicy {
    pub table: QTable,
    pub label: String,
}

impl QPolicy {
    pub fn new(table: QTable) -> Self {
        QPolicy { table, label: "learned".into() }
    }
}

impl Policy for QPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&mut self, obs: &Observation, mask: &[bool; 8]) -> Action {
        let key = self.table.key(obs);
        Action::ALL[self.table.greedy(&key, mask)]
    }
}

/// Outcome of [`train_q`].
#[derive(Clone, Debug)]
pub struct Training {
    pub table: QTable,
    /// `rho` after each outer iteration.
    pub rho_history: Vec<f64>,
}

/// Runs one ε-greedy training episode, updating `table` in place.
pub fn train_episode(
    table: &mut QTable,
    scenario: &ScenarioConfig,
    rules: ProtocolRules,
    scheme: RewardScheme,
    params: &QParams,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EnvError> {
    let (mut env, mut obs) = Env::reset(scenario, rules, scheme, params.stop, rho)?;
    let mut ret = 0.0;
    while !env.is_done() {
        let key = table.key(&obs);
        let mask = env.mask();
        let a = if rng.random::<f64>() < params.epsilon {
            let feasible: Vec<usize> = (0..table.actions).filter(|i| mask[*i]).collect();
            feasible[rng.random_range(0..feasible.len())]
        } else {
            table.greedy(&key, &mask)
        };
        let step = env.step(Action::ALL[a])?;
        ret += step.reward_delta;
        let target = if step.done {
            step.reward_delta
        } else {
            step.reward_delta + table.max_value(&table.key(&step.observation), &env.mask())
        };
        let lr = params.learning_rate;
        let q = &mut table.entry(key)[a];
        *q += lr * (target - *q);
        obs = step.observation;
    }
    Ok(ret)
}

/// Mean normalized revenue of the greedy policy over `episodes` episodes.
pub fn greedy_revenue(
    table: &QTable,
    scenario: &ScenarioConfig,
    rules: ProtocolRules,
    scheme: RewardScheme,
    stop: StopRule,
    episodes: u64,
    seed: u64,
) -> Result<f64, EnvError> {
    let mut policy = QPolicy::new(table.clone());
    let mut total = 0.0;
    for i in 0..episodes {
        let sc = ScenarioConfig { seed: rollout_seed(seed, i), ..*scenario };
        let (mut env, obs) = Env::reset(&sc, rules, scheme, stop, 0.0)?;
        total += rollout(&mut env, obs, &mut policy)?.1;
    }
    Ok(total / episodes.max(1) as f64)
}

/// Tabular Q-learning with an outer fixed-point iteration on `rho`,
/// starting from `rho = alpha`. The episode budget is split evenly across
/// outer iterations; training stops early once `rho` settles.
pub fn train_q(
    scenario: &ScenarioConfig,
    rules: ProtocolRules,
    scheme: RewardScheme,
    params: &QParams,
    seed: u64,
) -> Result<Training, EnvError> {
    let mut table = QTable::new(&rules);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = scenario.alpha;
    let mut history = Vec::new();
    let outer = u64::from(params.max_outer.max(1));
    let per_iter = params.episodes.div_ceil(outer).max(1);
    let mut used = 0;
    let mut episode_seed = splitmix64(seed ^ 0x5EED);
    for _ in 0..outer {
        let n = per_iter.min(params.episodes.saturating_sub(used)).max(1);
        for _ in 0..n {
            episode_seed = splitmix64(episode_seed);
            let sc = ScenarioConfig { seed: episode_seed, ..*scenario };
            train_episode(&mut table, &sc, rules, scheme, params, rho, &mut rng)?;
        }
        used += n;
        table.rho = rho;
        let measured = greedy_revenue(&table, scenario, rules, scheme, params.stop, params.eval_episodes, splitmix64(episode_seed))?;
        history.push(measured);
        let delta = (measured - rho).abs();
        rho = measured;
        if delta < params.rho_tolerance || used >= params.episodes {
            break;
        }
    }
    table.rho = rho;
    Ok(Training { table, rho_history: history })
}
