//! Market-aware Thompson-sampling broker.
//!
//! Picks the initial handler for a task. Each candidate's score is its
//! expected net return scaled by task match, recency, team synergy and the
//! strategic value of the trades it could take part in once it holds the task:
//!
//! `(θ·R_max − cost) · exp(−λ·dist) · γ^Δt · (1 + synergy)^η · (1 + U_strategic)^ω`

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{processing_cost, AgentId, AgentProfile, TaskInstance};
use crate::market::{Market, MarketState};
use crate::rng::{self, domain};

pub const BROKER_SCHEMA_VERSION: u32 = 1;
/// Guard on the pool-max normaliser of the Euclidean task distance.
const DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("cannot select from an empty pool")]
    EmptyPool,
    #[error("unsupported broker state schema version {0}")]
    SchemaVersion(u32),
    #[error("broker state json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    NormalizedEuclidean,
    CosineDissimilarity,
}

/// How the expected reward term uses the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardEstimate {
    /// Draw θ from the Beta posterior (Thompson sampling).
    #[default]
    Sample,
    /// Use the posterior mean; selection becomes deterministic.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerParams {
    pub lambda_dist: f64,
    pub gamma_decay: f64,
    pub eta_synergy: f64,
    pub omega_strategic: f64,
    pub distance_metric: DistanceMetric,
    pub reward_estimate: RewardEstimate,
}

impl Default for BrokerParams {
    fn default() -> Self {
        Self {
            lambda_dist: 0.2,
            gamma_decay: 0.99,
            eta_synergy: 0.8,
            omega_strategic: 1.2,
            distance_metric: DistanceMetric::NormalizedEuclidean,
            reward_estimate: RewardEstimate::Sample,
        }
    }
}

impl BrokerParams {
    /// All auxiliary factors switched off: the score is the net return alone.
    pub fn neutral() -> Self {
        Self { lambda_dist: 0.0, gamma_decay: 1.0, eta_synergy: 0.0, omega_strategic: 0.0, ..Self::default() }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.lambda_dist >= 0.0) {
            out.push(("lambda_dist", format!("lambda_dist must be >= 0, got {}", self.lambda_dist)));
        }
        if !(self.gamma_decay > 0.0 && self.gamma_decay <= 1.0) {
            out.push(("gamma_decay", format!("gamma_decay must lie in (0, 1], got {}", self.gamma_decay)));
        }
        if !(self.eta_synergy >= 0.0) {
            out.push(("eta_synergy", format!("eta_synergy must be >= 0, got {}", self.eta_synergy)));
        }
        if !(self.omega_strategic >= 0.0) {
            out.push(("omega_strategic", format!("omega_strategic must be >= 0, got {}", self.omega_strategic)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaPosterior {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

impl BetaPosterior {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.alpha, self.beta).expect("posterior parameters stay >= 1").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerState {
    pub schema_version: u32,
    pub posteriors: BTreeMap<AgentId, BetaPosterior>,
    pub last_update: BTreeMap<AgentId, u64>,
    pub feature_vectors: BTreeMap<AgentId, Vec<f64>>,
    pub round: u64,
}

impl BrokerState {
    /// Uniform priors; each agent's feature vector is its expertise.
    pub fn new(agents: &[AgentProfile]) -> Self {
        Self {
            schema_version: BROKER_SCHEMA_VERSION,
            posteriors: agents.iter().map(|a| (a.id.clone(), BetaPosterior::default())).collect(),
            last_update: agents.iter().map(|a| (a.id.clone(), 0)).collect(),
            feature_vectors: agents.iter().map(|a| (a.id.clone(), a.expertise.to_array().to_vec())).collect(),
            round: 0,
        }
    }

    pub fn posterior(&self, id: &AgentId) -> Result<BetaPosterior, BrokerError> {
        self.posteriors.get(id).copied().ok_or_else(|| BrokerError::UnknownAgent(id.clone()))
    }

    pub fn record_reward(&mut self, id: &AgentId, success: bool, tick: u64) -> Result<(), BrokerError> {
        let p = self.posteriors.get_mut(id).ok_or_else(|| BrokerError::UnknownAgent(id.clone()))?;
        if success {
            p.alpha += 1.0;
        } else {
            p.beta += 1.0;
        }
        self.last_update.insert(id.clone(), tick);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BrokerError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BrokerError> {
        let state: Self = serde_json::from_str(s)?;
        if state.schema_version != BROKER_SCHEMA_VERSION {
            return Err(BrokerError::SchemaVersion(state.schema_version));
        }
        Ok(state)
    }
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Cosine similarity; two zero vectors count as identical, one zero vector as unrelated.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// `1 − cos`, clamped to [0, 1]; a zero vector on either side is maximally dissimilar.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    if a.iter().all(|&x| x == 0.0) || b.iter().all(|&x| x == 0.0) {
        return 1.0;
    }
    (1.0 - cosine_similarity(a, b)).clamp(0.0, 1.0)
}

/// Distance in [0, 1]. `pool_max` is the largest Euclidean distance from the
/// task to any pool agent and is only used by the normalised metric.
pub fn task_distance(agent_features: &[f64], task_features: &[f64], metric: DistanceMetric, pool_max: f64) -> f64 {
    match metric {
        DistanceMetric::NormalizedEuclidean => {
            (euclidean_distance(agent_features, task_features) / (pool_max + DISTANCE_EPS)).clamp(0.0, 1.0)
        }
        DistanceMetric::CosineDissimilarity => cosine_dissimilarity(agent_features, task_features),
    }
}

/// Mean over teammates of `(1 − cos(ξ_S, ξ_j)) · posterior_mean(j)`; 0 for a singleton pool.
pub fn synergy_value(agent: &AgentId, pool: &[AgentProfile], state: &BrokerState) -> Result<f64, BrokerError> {
    let me = pool.iter().find(|a| &a.id == agent).ok_or_else(|| BrokerError::UnknownAgent(agent.clone()))?;
    let mine = me.expertise.to_array();
    let mut sum = 0.0;
    let mut n = 0usize;
    for mate in pool.iter().filter(|a| &a.id != agent) {
        let complement = 1.0 - cosine_similarity(&mine, &mate.expertise.to_array());
        sum += complement * state.posterior(&mate.id)?.mean();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Expected net saving of the admissible trades `agent` could take part in at `state`.
pub fn strategic_uncertainty(agent: &AgentId, state: &MarketState, market: &Market<'_>) -> f64 {
    market.strategic_value(state, agent)
}

/// The raw inputs to one utility score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityFactors {
    /// θ·R_max
    pub expected_reward: f64,
    pub cost: f64,
    pub distance: f64,
    pub elapsed: u64,
    pub synergy: f64,
    pub strategic: f64,
}

impl UtilityFactors {
    pub fn net_return(&self) -> f64 {
        self.expected_reward - self.cost
    }

    pub fn score(&self, params: &BrokerParams) -> f64 {
        self.net_return()
            * (-params.lambda_dist * self.distance).exp()
            * params.gamma_decay.powf(self.elapsed as f64)
            * (1.0 + self.synergy).powf(params.eta_synergy)
            * (1.0 + self.strategic).powf(params.omega_strategic)
    }
}

/// One candidate's evaluation during a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent: AgentId,
    pub factors: UtilityFactors,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub agent: AgentId,
    pub candidates: Vec<Candidate>,
}

/// Index of the largest score; ties go to the earliest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    scores.iter().enumerate().fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
        Some((_, b)) if b >= s => best,
        _ => Some((i, s)),
    })
    .map(|(i, _)| i)
}

pub struct Broker<'m, 'a> {
    market: &'m Market<'a>,
    pool: Vec<AgentProfile>,
    params: BrokerParams,
    seed: u64,
}

impl<'m, 'a> Broker<'m, 'a> {
    pub fn new(market: &'m Market<'a>, params: BrokerParams, seed: u64) -> Self {
        let pool = market.agents().iter().map(|a| (*a).clone()).collect();
        Self { market, pool, params, seed }
    }

    pub fn params(&self) -> &BrokerParams {
        &self.params
    }

    /// The state the market would start from if `agent` took on `task`.
    pub fn hypothetical_state(&self, agent: &AgentProfile, task: &TaskInstance) -> MarketState {
        let base = agent.expertise.map(|x| 1.0 - x).hadamard(task.epistemic());
        MarketState::seeded(&self.pool, &agent.id, base)
    }

    fn pool_max_distance(&self, task: &TaskInstance, state: &BrokerState) -> f64 {
        self.market
            .agents()
            .iter()
            .filter_map(|a| state.feature_vectors.get(&a.id))
            .map(|f| euclidean_distance(f, &task.feature_vector))
            .fold(0.0, f64::max)
    }

    fn factors(
        &self,
        agent: &AgentProfile,
        task: &TaskInstance,
        state: &BrokerState,
        theta: f64,
        tick: u64,
        pool_max: f64,
    ) -> Result<UtilityFactors, BrokerError> {
        let hypothetical = self.hypothetical_state(agent, task);
        let holding = hypothetical.total_of(&agent.id);
        let features = state
            .feature_vectors
            .get(&agent.id)
            .ok_or_else(|| BrokerError::UnknownAgent(agent.id.clone()))?;
        let last = state.last_update.get(&agent.id).copied().unwrap_or(0);
        Ok(UtilityFactors {
            expected_reward: theta * task.max_reward,
            cost: processing_cost(agent, &holding, self.market.weights()),
            distance: task_distance(features, &task.feature_vector, self.params.distance_metric, pool_max),
            elapsed: tick.saturating_sub(last),
            synergy: synergy_value(&agent.id, &self.pool, state)?,
            strategic: strategic_uncertainty(&agent.id, &hypothetical, self.market),
        })
    }

    /// θ for the agent at position `index` in the pool during selection `tick`.
    fn theta(&self, posterior: BetaPosterior, index: usize, tick: u64) -> f64 {
        match self.params.reward_estimate {
            RewardEstimate::Mean => posterior.mean(),
            RewardEstimate::Sample => {
                let mut r = rng::stream(self.seed, domain::BROKER, rng::mix(&[tick, index as u64]));
                posterior.sample(&mut r)
            }
        }
    }

    /// Score with an explicit θ.
    pub fn utility_score_with(
        &self,
        agent: &AgentId,
        task: &TaskInstance,
        state: &BrokerState,
        theta: f64,
        tick: u64,
    ) -> Result<f64, BrokerError> {
        let profile = self.market.profile(agent).ok_or_else(|| BrokerError::UnknownAgent(agent.clone()))?;
        let pool_max = self.pool_max_distance(task, state);
        Ok(self.factors(profile, task, state, theta, tick, pool_max)?.score(&self.params))
    }

    pub fn select_initial_agent(
        &self,
        task: &TaskInstance,
        state: &BrokerState,
        tick: u64,
    ) -> Result<Selection, BrokerError> {
        let agents = self.market.agents();
        if agents.is_empty() {
            return Err(BrokerError::EmptyPool);
        }
        let pool_max = self.pool_max_distance(task, state);
        let mut candidates = Vec::with_capacity(agents.len());
        for (i, a) in agents.iter().enumerate() {
            let theta = self.theta(state.posterior(&a.id)?, i, tick);
            let factors = self.factors(a, task, state, theta, tick, pool_max)?;
            candidates.push(Candidate { agent: a.id.clone(), score: factors.score(&self.params), factors });
        }
        let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
        let best = argmax(&scores).expect("pool is nonempty");
        log::trace!("broker picked {} at tick {tick}", candidates[best].agent);
        Ok(Selection { agent: candidates[best].agent.clone(), candidates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;
    use crate::uncertainty::{DimensionWeights, UncertaintyDecomposition, UncertaintyVector};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn task(u: [f64; 3]) -> TaskInstance {
        TaskInstance::new(
            "t0",
            UncertaintyDecomposition { epistemic: UncertaintyVector::from_array(u), aleatoric: UncertaintyVector::ZERO },
        )
    }

    #[test]
    fn record_reward_examples() {
        let agents = vec![AgentProfile::new("a", 1.0, UncertaintyVector::ZERO)];
        let id = AgentId::from("a");
        let mut s = BrokerState::new(&agents);
        s.record_reward(&id, true, 4).unwrap();
        assert_eq!(s.posteriors[&id], BetaPosterior { alpha: 2.0, beta: 1.0 });
        assert_abs_diff_eq!(s.posteriors[&id].mean(), 2.0 / 3.0);
        assert_eq!(s.last_update[&id], 4);

        let mut s = BrokerState::new(&agents);
        s.record_reward(&id, false, 0).unwrap();
        assert_eq!(s.posteriors[&id], BetaPosterior { alpha: 1.0, beta: 2.0 });

        let mut s = BrokerState::new(&agents);
        for i in 0..15 {
            s.record_reward(&id, i < 10, i).unwrap();
        }
        assert_eq!(s.posteriors[&id], BetaPosterior { alpha: 11.0, beta: 6.0 });
        assert_abs_diff_eq!(s.posteriors[&id].mean(), 11.0 / 17.0);

        assert!(matches!(s.record_reward(&"zz".into(), true, 0), Err(BrokerError::UnknownAgent(_))));
    }

    #[test]
    fn state_json_round_trip() {
        let agents = vec![AgentProfile::new("a", 1.0, UncertaintyVector::new(0.1, 0.2, 0.3))];
        let mut s = BrokerState::new(&agents);
        s.record_reward(&"a".into(), true, 7).unwrap();
        s.round = 3;
        let back = BrokerState::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let mut bad = s.clone();
        bad.schema_version = 99;
        assert!(matches!(BrokerState::from_json(&bad.to_json().unwrap()), Err(BrokerError::SchemaVersion(99))));
    }

    #[test]
    fn distance_examples() {
        let v = [0.2, 0.5, 0.3];
        assert_eq!(task_distance(&v, &v, DistanceMetric::NormalizedEuclidean, 1.0), 0.0);
        assert_abs_diff_eq!(task_distance(&v, &v, DistanceMetric::CosineDissimilarity, 1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_dissimilarity(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(cosine_dissimilarity(&[0.0, 0.0], &[0.0, 1.0]), 1.0);
        let far = [1.0, 0.0, 0.0];
        let t = [0.0, 0.0, 1.0];
        let max = euclidean_distance(&far, &t);
        let d = task_distance(&far, &t, DistanceMetric::NormalizedEuclidean, max);
        assert!(d < 1.0 && d > 1.0 - 1e-8);
    }

    #[test]
    fn synergy_examples() {
        let a = AgentProfile::new("a", 1.0, UncertaintyVector::new(1.0, 0.0, 0.0));
        let b = AgentProfile::new("b", 1.0, UncertaintyVector::new(0.0, 1.0, 0.0));
        let pool = vec![a.clone(), b];
        let state = BrokerState::new(&pool);
        assert_abs_diff_eq!(synergy_value(&"a".into(), &pool, &state).unwrap(), 0.5);

        let single = vec![a.clone()];
        assert_eq!(synergy_value(&"a".into(), &single, &BrokerState::new(&single)).unwrap(), 0.0);

        let mut twin = a.clone();
        twin.id = "a2".into();
        let twins = vec![a, twin];
        assert_abs_diff_eq!(synergy_value(&"a".into(), &twins, &BrokerState::new(&twins)).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn factor_examples() {
        let f = UtilityFactors { expected_reward: 0.7, cost: 0.2, distance: 0.0, elapsed: 0, synergy: 0.0, strategic: 0.0 };
        assert_abs_diff_eq!(f.score(&BrokerParams::default()), 0.5, epsilon = 1e-15);

        let decayed = UtilityFactors { elapsed: 10, ..f };
        let p = BrokerParams { gamma_decay: 0.99, ..BrokerParams::neutral() };
        assert_abs_diff_eq!(decayed.score(&p), 0.5 * 0.9043820750088044, epsilon = 1e-15);

        let negative = UtilityFactors { expected_reward: 0.1, cost: 0.6, strategic: 0.5, ..f };
        let p = BrokerParams { omega_strategic: 1.2, ..BrokerParams::neutral() };
        assert!(negative.score(&p) < negative.net_return());
    }

    proptest! {
        #[test]
        fn neutral_params_reduce_to_net_return(r in 0.0..1.0f64, c in 0.0..2.0f64, d in 0.0..1.0f64,
                                               dt in 0u64..1000, syn in 0.0..1.0f64, st in 0.0..5.0f64) {
            let f = UtilityFactors { expected_reward: r, cost: c, distance: d, elapsed: dt, synergy: syn, strategic: st };
            prop_assert!((f.score(&BrokerParams::neutral()) - f.net_return()).abs() <= 1e-12);
        }

        #[test]
        fn posterior_is_order_independent(rewards in prop::collection::vec(any::<bool>(), 0..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let agents = vec![AgentProfile::new("a", 1.0, UncertaintyVector::ZERO)];
            let mut shuffled = rewards.clone();
            shuffled.shuffle(&mut rng::stream(seed, 0, 0));
            let fold = |seq: &[bool]| {
                let mut s = BrokerState::new(&agents);
                for &r in seq {
                    s.record_reward(&"a".into(), r, 0).unwrap();
                }
                s.posteriors[&AgentId::from("a")]
            };
            prop_assert_eq!(fold(&rewards), fold(&shuffled));
        }

        #[test]
        fn argmax_is_scale_invariant(scores in prop::collection::vec(-5.0..5.0f64, 1..10), k in 0.01..100.0f64) {
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            prop_assert_eq!(argmax(&scores), argmax(&scaled));
        }
    }

    #[test]
    fn singleton_and_empty_pool() {
        let agents = vec![AgentProfile::new("only", 1.0, UncertaintyVector::splat(0.5))];
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let broker = Broker::new(&market, BrokerParams::default(), 1);
        let sel = broker.select_initial_agent(&task([0.3, 0.3, 0.3]), &BrokerState::new(&agents), 0).unwrap();
        assert_eq!(sel.agent.as_str(), "only");

        let none: Vec<AgentProfile> = Vec::new();
        let market = Market::new(&none, MarketParams::default(), DimensionWeights::default()).unwrap();
        let broker = Broker::new(&market, BrokerParams::default(), 1);
        assert!(matches!(
            broker.select_initial_agent(&task([0.3, 0.3, 0.3]), &BrokerState::new(&none), 0),
            Err(BrokerError::EmptyPool)
        ));
    }

    #[test]
    fn dominant_agent_wins_almost_always() {
        let agents = vec![
            AgentProfile::new("a", 0.001, UncertaintyVector::ZERO),
            AgentProfile::new("b", 1.0, UncertaintyVector::ZERO),
            AgentProfile::new("c", 1.0, UncertaintyVector::ZERO),
        ];
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let mut state = BrokerState::new(&agents);
        state.posteriors.insert("a".into(), BetaPosterior { alpha: 100.0, beta: 1.0 });
        state.posteriors.insert("b".into(), BetaPosterior { alpha: 1.0, beta: 100.0 });
        state.posteriors.insert("c".into(), BetaPosterior { alpha: 1.0, beta: 100.0 });
        let wins = (0..100)
            .filter(|&seed| {
                let broker = Broker::new(&market, BrokerParams::neutral(), seed);
                broker.select_initial_agent(&task([0.5, 0.5, 0.5]), &state, 0).unwrap().agent.as_str() == "a"
            })
            .count();
        assert!(wins >= 99, "dominant agent won {wins}/100");
    }

    #[test]
    fn identical_agents_tie_to_smallest_id() {
        let agents = vec![
            AgentProfile::new("b", 1.0, UncertaintyVector::splat(0.3)),
            AgentProfile::new("a", 1.0, UncertaintyVector::splat(0.3)),
        ];
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let params = BrokerParams { reward_estimate: RewardEstimate::Mean, ..BrokerParams::default() };
        let broker = Broker::new(&market, params, 0);
        let sel = broker.select_initial_agent(&task([0.4, 0.2, 0.1]), &BrokerState::new(&agents), 0).unwrap();
        assert_eq!(sel.candidates[0].score, sel.candidates[1].score);
        assert_eq!(sel.agent.as_str(), "a");
    }

    #[test]
    fn selection_is_reproducible() {
        let agents: Vec<AgentProfile> = (0..4)
            .map(|i| AgentProfile::new(format!("a{i}"), 0.5 + i as f64 * 0.3, UncertaintyVector::splat(0.2 * i as f64)))
            .collect();
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let broker = Broker::new(&market, BrokerParams::default(), 42);
        let state = BrokerState::new(&agents);
        let a = broker.select_initial_agent(&task([0.6, 0.3, 0.5]), &state, 5).unwrap();
        let b = broker.select_initial_agent(&task([0.6, 0.3, 0.5]), &state, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strategic_is_zero_at_equilibrium() {
        let agents = vec![
            AgentProfile::new("a", 3.0, UncertaintyVector::ZERO),
            AgentProfile::new("b", 1.0, UncertaintyVector::splat(0.5)),
        ];
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let mut state = MarketState::seeded(&agents, &"a".into(), UncertaintyVector::splat(0.9));
        market.run(&mut state, 1000);
        for a in &agents {
            assert_eq!(strategic_uncertainty(&a.id, &state, &market), 0.0);
        }
    }

    #[test]
    fn worst_agent_never_profits_as_receiver() {
        let agents = vec![
            AgentProfile::new("cheap", 1.0, UncertaintyVector::splat(0.4)),
            AgentProfile::new("dear", 5.0, UncertaintyVector::ZERO),
        ];
        let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
        let state = MarketState::seeded(&agents, &"cheap".into(), UncertaintyVector::splat(0.9));
        assert!(market.admissible_trades(&state).iter().all(|p| p.receiver.as_str() != "dear"));
        assert_eq!(strategic_uncertainty(&"dear".into(), &state, &market), 0.0);
    }
}
