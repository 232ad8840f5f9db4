//! Experiment configuration, sweeps, the fairness experiment, and log replay.
//!
//! Every output is a pure function of the configuration: task seeds are
//! derived from the seed base and a stable hash of the task, and results are
//! merged in task order regardless of how work was scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{BlockId, Dag, Kind, NodeId};
use crate::env::{rollout, Env, EnvError};
use crate::eval::{evaluate, rollout_seed, RevenueReport};
use crate::policy::{Honest, Policy, SelfishMining};
use crate::protocol::{ProtocolKind, ProtocolRules, ValidationError};
use crate::qlearn::{train_q, QParams, QPolicy, QTable, QTableError};
use crate::rewards::{chain_rewards, epoch_rewards, RewardError, RewardScheme};
use crate::sim::{ScenarioConfig, Sim, SimError, StopRule};
use crate::view::NodeView;

/// Environment variable that relocates relative output paths.
pub const OUT_DIR_VAR: &str = "PARPOW_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("corrupt log at line {line}: {msg}")]
    CorruptLog { line: usize, msg: String },
    #[error("q-table {path}: {source}")]
    QTable { path: PathBuf, source: QTableError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Attacker policy selection.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Honest,
    Sm1,
    Sm1Inclusive,
    /// Trains a Q-table for the task, then evaluates it.
    Learned,
    /// Loads a serialized Q-table.
    QTable(PathBuf),
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Honest => f.write_str("honest"),
            PolicySpec::Sm1 => f.write_str("sm1"),
            PolicySpec::Sm1Inclusive => f.write_str("sm1-inclusive"),
            PolicySpec::Learned => f.write_str("learned"),
            PolicySpec::QTable(p) => write!(f, "qtable:{}", p.display()),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(PolicySpec::Honest),
            "sm1" => Ok(PolicySpec::Sm1),
            "sm1-inclusive" => Ok(PolicySpec::Sm1Inclusive),
            "learned" => Ok(PolicySpec::Learned),
            _ => match s.strip_prefix("qtable:") {
                Some(p) if !p.is_empty() => Ok(PolicySpec::QTable(PathBuf::from(p))),
                _ => Err(format!("unknown policy `{s}`")),
            },
        }
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

/// Any shipped policy behind one concrete type.
#[derive(Clone, Debug)]
pub enum AnyPolicy {
    Honest(Honest),
    Selfish(SelfishMining),
    Table(QPolicy),
}

impl Policy for AnyPolicy {
    fn name(&self) -> String {
        match self {
            AnyPolicy::Honest(p) => p.name(),
            AnyPolicy::Selfish(p) => p.name(),
            AnyPolicy::Table(p) => p.name(),
        }
    }

    fn act(&mut self, obs: &crate::attacker::Observation, mask: &[bool; 8]) -> crate::attacker::Action {
        match self {
            AnyPolicy::Honest(p) => p.act(obs, mask),
            AnyPolicy::Selfish(p) => p.act(obs, mask),
            AnyPolicy::Table(p) => p.act(obs, mask),
        }
    }
}

/// All-honest experiment measuring reward share against hashrate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    pub protocols: Vec<ProtocolKind>,
    pub k: u32,
    pub hashrates: Vec<f64>,
    pub base_delay: f64,
    pub lambda: f64,
    pub puzzles: u64,
    pub n_rollouts: u64,
    pub seed: u64,
}

impl FairnessConfig {
    /// One weak (2%) and one strong (20%) miner among 13 miners of 6%.
    pub fn standard() -> Self {
        let mut hashrates = vec![0.02, 0.20];
        hashrates.extend(std::iter::repeat_n(0.06, 13));
        FairnessConfig {
            protocols: ProtocolKind::ALL.to_vec(),
            k: 8,
            hashrates,
            base_delay: 0.1,
            lambda: 1.0,
            puzzles: 8192,
            n_rollouts: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.protocols.is_empty() {
            return bad("fairness: protocol list is empty");
        }
        if self.hashrates.is_empty() || self.hashrates.iter().any(|h| h.is_nan() || *h < 0.0) {
            return bad("fairness: hashrates must be non-negative");
        }
        if self.n_rollouts == 0 || self.puzzles == 0 {
            return bad("fairness: n_rollouts and puzzles must be positive");
        }
        for kind in &self.protocols {
            ProtocolRules::with_k(*kind, self.k).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// A sweep over protocols, attacker hashrates, and network advantages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocols: Vec<ProtocolKind>,
    /// Proofs-of-work per block; sequential proof-of-work always uses 1.
    pub k: u32,
    /// Reward scheme; `null` pairs each protocol with its own scheme.
    pub scheme: Option<RewardScheme>,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    pub n_rollouts: u64,
    /// Mining successes per evaluation rollout.
    pub horizon: u64,
    pub seed: u64,
    pub n_defenders: u32,
    pub lambda: f64,
    pub base_delay: f64,
    pub training: QParams,
    pub output: Option<PathBuf>,
    /// Directory receiving the event log of each task's first rollout.
    pub event_logs: Option<PathBuf>,
    pub fairness: FairnessConfig,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Preset {
    PaperEval,
    Deployment,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-eval" => Ok(Preset::PaperEval),
            "deployment" => Ok(Preset::Deployment),
            other => Err(format!("unknown preset `{other}` (expected paper-eval or deployment)")),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = ExperimentConfig {
            protocols: ProtocolKind::ALL.to_vec(),
            k: 8,
            scheme: None,
            alphas: vec![0.25, 0.3, 0.35, 0.4, 0.45],
            gammas: vec![0.05, 0.5, 0.95],
            policies: vec![PolicySpec::Honest, PolicySpec::Sm1, PolicySpec::Sm1Inclusive],
            n_rollouts: 100,
            horizon: 2048,
            seed: 0,
            n_defenders: 20,
            lambda: 1.0,
            base_delay: 0.0,
            training: QParams::default(),
            output: None,
            event_logs: None,
            fairness: FairnessConfig::standard(),
        };
        match preset {
            Preset::PaperEval => base,
            // one block per 600 s, 51 proofs-of-work per block
            Preset::Deployment => {
                let lambda = 51.0 / 600.0;
                ExperimentConfig {
                    k: 51,
                    lambda,
                    fairness: FairnessConfig { k: 51, lambda, ..FairnessConfig::standard() },
                    ..base
                }
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn rules(&self, kind: ProtocolKind) -> Result<ProtocolRules, HarnessError> {
        ProtocolRules::with_k(kind, self.k).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn scheme_for(&self, kind: ProtocolKind) -> RewardScheme {
        self.scheme.unwrap_or(RewardScheme::default_for(kind))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.protocols.is_empty() {
            return bad("protocol list is empty".into());
        }
        if self.alphas.is_empty() {
            return bad("alpha list is empty".into());
        }
        if self.gammas.is_empty() {
            return bad("gamma list is empty".into());
        }
        if self.policies.is_empty() {
            return bad("policy list is empty".into());
        }
        if self.n_rollouts == 0 || self.horizon == 0 {
            return bad("n_rollouts and horizon must be positive".into());
        }
        for kind in &self.protocols {
            let rules = self.rules(*kind)?;
            self.scheme_for(*kind).check(&rules)?;
        }
        for (alpha, gamma) in self.alphas.iter().flat_map(|a| self.gammas.iter().map(move |g| (a, g))) {
            self.scenario(*alpha, *gamma, 0).validate()?;
        }
        if self.training.episodes == 0 {
            return bad("training.episodes must be positive".into());
        }
        Ok(())
    }

    pub fn scenario(&self, alpha: f64, gamma: f64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            alpha,
            gamma,
            n_defenders: self.n_defenders,
            lambda: self.lambda,
            base_delay: self.base_delay,
            seed,
        }
    }

    /// The task grid in output order: protocol, then gamma, then alpha.
    pub fn tasks(&self) -> Vec<Task> {
        let mut out = Vec::new();
        for protocol in &self.protocols {
            for gamma in &self.gammas {
                for alpha in &self.alphas {
                    for policy in &self.policies {
                        let seed = task_seed(self.seed, *protocol, *alpha, *gamma, policy);
                        out.push(Task { protocol: *protocol, alpha: *alpha, gamma: *gamma, policy: policy.clone(), seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub protocol: ProtocolKind,
    pub alpha: f64,
    pub gamma: f64,
    pub policy: PolicySpec,
    pub seed: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of one task; independent of the other tasks in the grid.
pub fn task_seed(base: u64, protocol: ProtocolKind, alpha: f64, gamma: f64, policy: &PolicySpec) -> u64 {
    let key = format!("{protocol}|{alpha}|{gamma}|{policy}");
    base.wrapping_add(fnv1a(key.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub protocol: ProtocolKind,
    pub scheme: RewardScheme,
    pub k: u32,
    pub alpha: f64,
    pub gamma: f64,
    pub policy: String,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub n_rollouts: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub protocol: ProtocolKind,
    pub scheme: RewardScheme,
    pub k: u32,
    pub base_delay: f64,
    pub miner: u32,
    pub hashrate: f64,
    pub share: f64,
    pub std: f64,
    pub ci95: f64,
    /// `share / hashrate`.
    pub ratio: f64,
    pub n_rollouts: u64,
    pub puzzles: u64,
    pub seed: u64,
}

/// Instantiates `spec` for one task, training if required.
pub fn build_policy(
    spec: &PolicySpec,
    config: &ExperimentConfig,
    task: &Task,
) -> Result<AnyPolicy, HarnessError> {
    let rules = config.rules(task.protocol)?;
    Ok(match spec {
        PolicySpec::Honest => AnyPolicy::Honest(Honest),
        PolicySpec::Sm1 => AnyPolicy::Selfish(SelfishMining::new(rules.k())),
        PolicySpec::Sm1Inclusive => AnyPolicy::Selfish(SelfishMining::inclusive(rules.k())),
        PolicySpec::Learned => {
            let sc = config.scenario(task.alpha, task.gamma, task.seed);
            let t = train_q(&sc, rules, config.scheme_for(task.protocol), &config.training, task.seed)?;
            AnyPolicy::Table(QPolicy::new(t.table))
        }
        PolicySpec::QTable(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let table = QTable::from_text(&rules, &text)
                .map_err(|source| HarnessError::QTable { path: path.clone(), source })?;
            let mut p = QPolicy::new(table);
            p.label = spec.to_string();
            AnyPolicy::Table(p)
        }
    })
}

/// Event log of a task's first rollout.
pub fn task_event_log(
    policy: &AnyPolicy,
    config: &ExperimentConfig,
    task: &Task,
) -> Result<String, HarnessError> {
    let rules = config.rules(task.protocol)?;
    let sc = config.scenario(task.alpha, task.gamma, rollout_seed(task.seed, 0));
    let mut sim = Sim::new(&sc, rules, config.scheme_for(task.protocol))?;
    sim.enable_log();
    let (mut env, obs) = Env::from_sim(sim, StopRule::Puzzles(config.horizon), 0.0)?;
    let mut p = policy.clone();
    rollout(&mut env, obs, &mut p)?;
    Ok(env.sim_mut().take_log().expect("log enabled"))
}

fn log_file_name(task: &Task) -> String {
    let policy: String = task
        .policy
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{}_a{}_g{}_{}.tsv", task.protocol, task.alpha, task.gamma, policy)
}

/// A task's row plus its event log file name and contents.
type TaskOutput = (RevenueRow, Option<(String, String)>);

/// Runs every task of the grid and returns one row per task.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<RevenueRow>, HarnessError> {
    config.validate()?;
    let tasks = config.tasks();
    let results: Vec<Result<TaskOutput, HarnessError>> = tasks
        .par_iter()
        .map(|task| {
            let rules = config.rules(task.protocol)?;
            let scheme = config.scheme_for(task.protocol);
            let policy = build_policy(&task.policy, config, task)?;
            let sc = config.scenario(task.alpha, task.gamma, task.seed);
            let report = evaluate(&policy, &sc, rules, scheme, config.n_rollouts, StopRule::Puzzles(config.horizon))?;
            let log = match &config.event_logs {
                Some(_) => Some((log_file_name(task), task_event_log(&policy, config, task)?)),
                None => None,
            };
            Ok((row(task, rules, scheme, &policy.name(), &report, config.n_rollouts), log))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut logs = Vec::new();
    for r in results {
        let (row, log) = r?;
        rows.push(row);
        logs.extend(log);
    }
    if let Some(dir) = &config.event_logs {
        let dir = resolve_output(dir);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (name, text) in logs {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    Ok(rows)
}

fn row(task: &Task, rules: ProtocolRules, scheme: RewardScheme, name: &str, r: &RevenueReport, n: u64) -> RevenueRow {
    RevenueRow {
        protocol: task.protocol,
        scheme,
        k: rules.k(),
        alpha: task.alpha,
        gamma: task.gamma,
        policy: name.to_string(),
        mean: r.mean,
        std: r.std,
        ci95: r.ci95,
        n_rollouts: n,
        seed: task.seed,
    }
}

/// Reward shares of every miner in all-honest runs.
pub fn run_fairness(config: &FairnessConfig) -> Result<Vec<FairnessRow>, HarnessError> {
    config.validate()?;
    let mut rows = Vec::new();
    for kind in &config.protocols {
        let rules = ProtocolRules::with_k(*kind, config.k).map_err(|e| HarnessError::Config(e.to_string()))?;
        let scheme = RewardScheme::default_for(*kind);
        let seed = config.seed.wrapping_add(fnv1a(format!("fairness|{kind}").as_bytes()));
        let shares: Vec<Vec<f64>> = (0..config.n_rollouts)
            .into_par_iter()
            .map(|i| fairness_rollout(config, rules, scheme, rollout_seed(seed, i)))
            .collect::<Result<_, _>>()?;
        let total: f64 = config.hashrates.iter().sum();
        for (m, h) in config.hashrates.iter().enumerate() {
            let report = RevenueReport::from_samples(shares.iter().map(|s| s[m]).collect());
            let hashrate = h / total;
            rows.push(FairnessRow {
                protocol: *kind,
                scheme,
                k: rules.k(),
                base_delay: config.base_delay,
                miner: m as u32,
                hashrate,
                share: report.mean,
                std: report.std,
                ci95: report.ci95,
                ratio: if hashrate > 0.0 { report.mean / hashrate } else { 0.0 },
                n_rollouts: config.n_rollouts,
                puzzles: config.puzzles,
                seed,
            });
        }
    }
    Ok(rows)
}

fn fairness_rollout(
    config: &FairnessConfig,
    rules: ProtocolRules,
    scheme: RewardScheme,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let mut sim = Sim::honest(&config.hashrates, config.lambda, config.base_delay, seed, rules, scheme)?;
    sim.run_until(StopRule::Puzzles(config.puzzles), u64::MAX)?;
    sim.flush_deliveries();
    let totals = chain_rewards(scheme, &rules, sim.dag(), sim.public_tip())?;
    let sum: f64 = totals.values().sum();
    Ok((0..config.hashrates.len())
        .map(|m| {
            let r = totals.get(&NodeId(m as u32)).copied().unwrap_or(0.0);
            if sum > 0.0 {
                r / sum
            } else {
                0.0
            }
        })
        .collect())
}

/// Serializes rows as CSV with a header row and LF line endings.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
}

/// Applies the output-directory override to relative paths.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_VAR) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_output(path: &Path, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
    let path = resolve_output(path);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

/// Sweep and write the CSV; returns the path written.
pub fn cmd_sweep(config: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let rows = run_sweep(config)?;
    let path = out.map(Path::to_path_buf).or_else(|| config.output.clone()).unwrap_or("sweep.csv".into());
    write_output(&path, &to_csv(&rows)?)
}

/// Fairness experiment and write the CSV; returns the path written.
pub fn cmd_fairness(config: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let rows = run_fairness(&config.fairness)?;
    let path = out.map(Path::to_path_buf).unwrap_or("fairness.csv".into());
    write_output(&path, &to_csv(&rows)?)
}

/// Trains a Q-table for one scenario and writes its text form.
pub fn cmd_train(
    config: &ExperimentConfig,
    protocol: ProtocolKind,
    alpha: f64,
    gamma: f64,
    out: Option<&Path>,
) -> Result<PathBuf, HarnessError> {
    let rules = config.rules(protocol)?;
    let scheme = config.scheme_for(protocol);
    scheme.check(&rules)?;
    let seed = task_seed(config.seed, protocol, alpha, gamma, &PolicySpec::Learned);
    let sc = config.scenario(alpha, gamma, seed);
    sc.validate()?;
    let t = train_q(&sc, rules, scheme, &config.training, seed)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| format!("{protocol}_a{alpha}_g{gamma}.qtable").into());
    write_output(&path, t.table.to_text().as_bytes())
}

/// Evaluates one policy in one scenario. Returns the row and per-rollout
/// samples.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    protocol: ProtocolKind,
    alpha: f64,
    gamma: f64,
    policy: &PolicySpec,
) -> Result<(RevenueRow, RevenueReport), HarnessError> {
    let rules = config.rules(protocol)?;
    let scheme = config.scheme_for(protocol);
    scheme.check(&rules)?;
    let seed = task_seed(config.seed, protocol, alpha, gamma, policy);
    let task = Task { protocol, alpha, gamma, policy: policy.clone(), seed };
    let sc = config.scenario(alpha, gamma, seed);
    sc.validate()?;
    let p = build_policy(policy, config, &task)?;
    let report = evaluate(&p, &sc, rules, scheme, config.n_rollouts, StopRule::Puzzles(config.horizon))?;
    Ok((row(&task, rules, scheme, &p.name(), &report, config.n_rollouts), report))
}

/// Rewards of one epoch as listed by [`replay`].
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTable {
    pub closing: BlockId,
    pub height: u32,
    /// (member, miner, reward)
    pub members: Vec<(BlockId, NodeId, f64)>,
}

#[derive(Clone, Debug)]
pub struct ReplayReport {
    pub rules: ProtocolRules,
    pub scheme: RewardScheme,
    pub dag: Dag,
    pub invalid: Vec<(usize, BlockId, ValidationError)>,
    pub tip: BlockId,
    pub epochs: Vec<EpochTable>,
    pub chain_rewards: BTreeMap<NodeId, f64>,
}

impl ReplayReport {
    pub fn dot(&self) -> String {
        self.dag.to_dot(|b| Some(format!("{} m{}", b.id, b.miner)))
    }

    /// Human-readable summary with one table per epoch.
    pub fn summary(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "protocol {} k={} scheme {}: {} proofs-of-work, {} invalid, tip {}",
            self.rules.kind(),
            self.rules.k(),
            self.scheme,
            self.dag.len() - 1,
            self.invalid.len(),
            self.tip
        );
        for (line, id, e) in &self.invalid {
            let _ = writeln!(s, "invalid {id} (line {line}): {e}");
        }
        for e in &self.epochs {
            let _ = writeln!(s, "epoch closed by {} at height {}", e.closing, e.height);
            for (id, miner, r) in &e.members {
                let _ = writeln!(s, "  {id}\t{miner}\t{r}");
            }
        }
        for (miner, r) in &self.chain_rewards {
            let _ = writeln!(s, "total {miner}\t{r}");
        }
        s
    }
}

/// Rebuilds a run from its event log: revalidates every proof-of-work,
/// reconstructs the defenders' view, and recomputes rewards on its chain.
pub fn replay(log: &str) -> Result<ReplayReport, HarnessError> {
    let corrupt = |line: usize, msg: &str| HarnessError::CorruptLog { line, msg: msg.to_string() };
    let mut lines = log.split_inclusive('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| corrupt(1, "empty log"))?;
    let header = header.strip_suffix('\n').ok_or_else(|| corrupt(1, "truncated line"))?;
    let fields: BTreeMap<&str, &str> = header
        .strip_prefix("# ")
        .ok_or_else(|| corrupt(1, "missing header"))?
        .split(' ')
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| corrupt(1, &format!("header lacks {k}")));
    let kind: ProtocolKind = get("protocol")?.parse().map_err(|e: String| corrupt(1, &e))?;
    let k: u32 = get("k")?.parse().map_err(|_| corrupt(1, "bad k"))?;
    let scheme: RewardScheme = get("scheme")?.parse().map_err(|e: String| corrupt(1, &e))?;
    let attacker = match get("attacker")? {
        "-" => None,
        a => Some(NodeId(a.parse().map_err(|_| corrupt(1, "bad attacker"))?)),
    };
    let rules = ProtocolRules::new(kind, k).map_err(|e| corrupt(1, &e.to_string()))?;
    scheme.check(&rules).map_err(|e| corrupt(1, &e.to_string()))?;

    let mut dag = Dag::new();
    let mut public = NodeView::new();
    let mut invalid = Vec::new();
    for (n, raw) in lines {
        let line = raw.strip_suffix('\n').ok_or_else(|| corrupt(n, "truncated line"))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(corrupt(n, "expected 5 tab-separated fields"));
        }
        let time: f64 = cols[0].parse().map_err(|_| corrupt(n, "bad time"))?;
        if !time.is_finite() {
            return Err(corrupt(n, "bad time"));
        }
        let node: NodeId = NodeId(cols[2].parse().map_err(|_| corrupt(n, "bad node"))?);
        let id = BlockId(cols[3].parse().map_err(|_| corrupt(n, "bad block id"))?);
        match cols[1] {
            "block" | "vote" => {
                if id.index() != dag.len() {
                    return Err(corrupt(n, "block ids out of sequence"));
                }
                let parents = cols[4]
                    .split(',')
                    .map(|p| p.parse::<u32>().map(BlockId))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| corrupt(n, "bad parent list"))?;
                let kind = if cols[1] == "block" { Kind::Block } else { Kind::Vote };
                if let Err(e) = rules.validate(&dag, kind, &parents) {
                    invalid.push((n, id, e));
                }
                dag.append(parents, node, kind).map_err(|e| corrupt(n, &e.to_string()))?;
                if Some(node) != attacker {
                    public.learn(&dag, id);
                }
            }
            "deliver" | "release" | "match" => {
                if !dag.contains(id) {
                    return Err(corrupt(n, "unknown block"));
                }
                if cols[1] != "deliver" && !public.learn(&dag, id) {
                    return Err(corrupt(n, "release before parents"));
                }
            }
            other => return Err(corrupt(n, &format!("unknown event kind `{other}`"))),
        }
    }
    let tip = public.best();
    let mut epochs = Vec::new();
    if invalid.is_empty() {
        let mut cur = tip;
        while cur != BlockId::GENESIS {
            let r = epoch_rewards(scheme, &rules, &dag, cur)?;
            let members = r
                .shares
                .keys()
                .map(|m| (*m, dag.block(*m).miner, r.reward(*m).expect("member")))
                .collect();
            epochs.push(EpochTable { closing: cur, height: dag.block(cur).height, members });
            cur = dag.block_parent(cur).expect("non-genesis");
        }
        epochs.reverse();
    }
    let chain_rewards = if invalid.is_empty() { chain_rewards(scheme, &rules, &dag, tip)? } else { BTreeMap::new() };
    Ok(ReplayReport { rules, scheme, dag, invalid, tip, epochs, chain_rewards })
}

pub fn cmd_replay(path: &Path) -> Result<ReplayReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    replay(&text)
}
