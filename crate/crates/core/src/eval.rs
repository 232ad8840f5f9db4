//! Monte-Carlo evaluation of attacker policies.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{rollout, Env, EnvError};
use crate::policy::Policy;
use crate::protocol::ProtocolRules;
use crate::rewards::RewardScheme;
use crate::sim::{ScenarioConfig, StopRule};

/// SplitMix64 finalizer; spreads consecutive integers over the seed space.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of rollout `i` of a task seeded with `seed`.
pub fn rollout_seed(seed: u64, i: u64) -> u64 {
    splitmix64(seed.wrapping_add(i))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RevenueReport {
    pub mean: f64,
    pub std: f64,
    /// Half-width of the normal-approximation 95% confidence interval.
    pub ci95: f64,
    pub samples: Vec<f64>,
}

impl RevenueReport {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return RevenueReport { mean: 0.0, std: 0.0, ci95: 0.0, samples };
        }
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let std = var.sqrt();
        RevenueReport { mean, std, ci95: 1.96 * std / n.sqrt(), samples }
    }
}

/// Normalized revenue of `policy` over `n_rollouts` independent episodes
/// stopped by `horizon`. Rollouts run in parallel; results are ordered by
/// rollout index so the report does not depend on scheduling.
pub fn evaluate<P>(
    policy: &P,
    scenario: &ScenarioConfig,
    rules: ProtocolRules,
    scheme: RewardScheme,
    n_rollouts: u64,
    horizon: StopRule,
) -> Result<RevenueReport, EnvError>
where
    P: Policy + Clone + Sync + Send,
{
    let samples = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let sc = ScenarioConfig { seed: rollout_seed(scenario.seed, i), ..*scenario };
            let (mut env, obs) = Env::reset(&sc, rules, scheme, horizon, 0.0)?;
            let mut p = policy.clone();
            Ok(rollout(&mut env, obs, &mut p)?.1)
        })
        .collect::<Result<Vec<f64>, EnvError>>()?;
    Ok(RevenueReport::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_statistics() {
        let r = RevenueReport::from_samples(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.mean, 2.5);
        assert!((r.std - 1.290_994_448_735_805_6).abs() < 1e-12);
        assert!((r.ci95 - 1.96 * r.std / 2.0).abs() < 1e-12);
    }
}
