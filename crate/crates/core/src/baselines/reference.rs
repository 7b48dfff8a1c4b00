use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RoutingExample;
use crate::error::{contract, Result};
use crate::router::{RoutingDecision, RoutingPolicy};

/// Uniform choice among `models`.
pub fn random_route<R: Rng + ?Sized>(models: usize, rng: &mut R) -> Result<RoutingDecision> {
    if models == 0 {
        return Err(contract("no models to choose from"));
    }
    let pick = rng.random_range(0..models);
    let mut s = vec![0.0; models];
    s[pick] = 1.0;
    Ok(RoutingDecision::from_scores(s, 0.0))
}

/// Highest ground-truth score.
pub fn oracle_route(scores: &[f64]) -> Result<RoutingDecision> {
    if scores.is_empty() {
        return Err(contract("oracle routing needs ground-truth scores"));
    }
    Ok(RoutingDecision::from_scores(scores.to_vec(), 0.0))
}

/// Highest judge score over the candidate responses.
pub fn reward_select(judge_scores: &[f64]) -> Result<RoutingDecision> {
    if judge_scores.is_empty() {
        return Err(contract("reward selection needs judged responses"));
    }
    Ok(RoutingDecision::from_scores(judge_scores.to_vec(), 0.0))
}

fn id_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Uniform router; each record's draw depends only on the seed and its id.
#[derive(Clone, Debug)]
pub struct RandomRouter {
    pub models: usize,
    pub seed: u64,
}

impl RoutingPolicy for RandomRouter {
    fn name(&self) -> String {
        "random".into()
    }

    fn models(&self) -> usize {
        self.models
    }

    fn decide(&self, ex: &RoutingExample) -> Result<RoutingDecision> {
        random_route(self.models, &mut ChaCha8Rng::seed_from_u64(id_seed(self.seed, &ex.id)))
    }
}

/// Picks the model with the highest raw score.
#[derive(Clone, Debug)]
pub struct OracleRouter {
    pub models: usize,
}

impl RoutingPolicy for OracleRouter {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn models(&self) -> usize {
        self.models
    }

    fn decide(&self, ex: &RoutingExample) -> Result<RoutingDecision> {
        if ex.raw.len() != self.models {
            return Err(contract(format!("record {} lacks ground-truth scores", ex.id)));
        }
        oracle_route(&ex.raw)
    }
}

/// Judge used by reward selection: the raw score plus seeded Gaussian noise
/// of the given standard deviation. Zero noise is the ground truth.
#[derive(Clone, Debug)]
pub struct NoisyJudge {
    pub sigma: f64,
    pub seed: u64,
}

impl NoisyJudge {
    pub fn judge(&self, ex: &RoutingExample) -> Vec<f64> {
        if self.sigma == 0.0 {
            return ex.raw.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(id_seed(self.seed, &ex.id));
        let normal = rand_distr::Normal::new(0.0, self.sigma).expect("finite sigma");
        ex.raw.iter().map(|&s| s + rand_distr::Distribution::sample(&normal, &mut rng)).collect()
    }
}

/// Generates every candidate response and keeps the one the judge prefers.
#[derive(Clone, Debug)]
pub struct RewardSelect {
    pub models: usize,
    pub judge: NoisyJudge,
}

impl RoutingPolicy for RewardSelect {
    fn name(&self) -> String {
        "reward-select".into()
    }

    fn models(&self) -> usize {
        self.models
    }

    fn decide(&self, ex: &RoutingExample) -> Result<RoutingDecision> {
        reward_select(&self.judge.judge(ex))
    }
}
