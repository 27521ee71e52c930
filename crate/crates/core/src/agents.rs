//! Heterogeneous agents: cost and expertise profiles, uncertainty portfolios,
//! the transaction ledger, task instances, and the backend abstraction that
//! produces an agent's raw outputs for a task.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::uncertainty::{
    inferential_uncertainty, perceptual_uncertainty, semantic_uncertainty, total_uncertainty,
    Dimension, DimensionWeights, UncertaintyDecomposition, UncertaintyError, UncertaintyVector,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

fn default_transfer_efficiency() -> f64 {
    1.0
}

fn default_capacity() -> UncertaintyVector {
    UncertaintyVector::splat(1.0)
}

fn default_tflops_per_token() -> f64 {
    1.0
}

/// Static description of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    /// Cost per unit of (weighted) uncertainty held.
    pub unit_cost: f64,
    /// Fraction of received uncertainty the agent resolves, per dimension.
    pub expertise: UncertaintyVector,
    /// Maximum holding per dimension.
    #[serde(default = "default_capacity")]
    pub capacity: UncertaintyVector,
    /// Charged once per task while the agent holds any uncertainty.
    #[serde(default)]
    pub fixed_cost: f64,
    #[serde(default = "default_tflops_per_token")]
    pub tflops_per_token: f64,
    /// Fraction of a declared transfer actually shed when this agent sends.
    #[serde(default = "default_transfer_efficiency")]
    pub transfer_efficiency: f64,
}

impl AgentProfile {
    /// Profile with unit capacity, no fixed cost and full transfer efficiency.
    pub fn new(id: impl Into<String>, unit_cost: f64, expertise: UncertaintyVector) -> Self {
        Self {
            id: AgentId::new(id),
            unit_cost,
            expertise,
            capacity: UncertaintyVector::splat(1.0),
            fixed_cost: 0.0,
            tflops_per_token: 1.0,
            transfer_efficiency: 1.0,
        }
    }

    pub fn with_capacity(mut self, capacity: UncertaintyVector) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_fixed_cost(mut self, fixed_cost: f64) -> Self {
        self.fixed_cost = fixed_cost;
        self
    }

    pub fn with_tflops_per_token(mut self, tflops: f64) -> Self {
        self.tflops_per_token = tflops;
        self
    }

    pub fn with_transfer_efficiency(mut self, kappa: f64) -> Self {
        self.transfer_efficiency = kappa;
        self
    }

    /// Every violated invariant as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.id.0.is_empty() {
            out.push(("id", "agent id must be nonempty".to_owned()));
        }
        if !(self.unit_cost > 0.0 && self.unit_cost.is_finite()) {
            out.push(("unit_cost", format!("unit cost c must satisfy c > 0, got {}", self.unit_cost)));
        }
        for dim in Dimension::ALL {
            let x = self.expertise.get(dim);
            if !(0.0..=1.0).contains(&x) {
                out.push(("expertise", format!("expertise.{dim} must lie in [0, 1], got {x}")));
            }
            let c = self.capacity.get(dim);
            if !(c > 0.0) {
                out.push(("capacity", format!("capacity.{dim} must be > 0, got {c}")));
            }
        }
        if !(self.fixed_cost >= 0.0 && self.fixed_cost.is_finite()) {
            out.push(("fixed_cost", format!("fixed cost must be >= 0, got {}", self.fixed_cost)));
        }
        if !(self.tflops_per_token > 0.0 && self.tflops_per_token.is_finite()) {
            out.push((
                "tflops_per_token",
                format!("tflops_per_token must be > 0, got {}", self.tflops_per_token),
            ));
        }
        if !(0.0..=1.0).contains(&self.transfer_efficiency) {
            out.push((
                "transfer_efficiency",
                format!("transfer efficiency must lie in [0, 1], got {}", self.transfer_efficiency),
            ));
        }
        out
    }
}

/// An agent's holdings: self-generated base plus net market transfers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentPortfolio {
    pub base: UncertaintyVector,
    /// Signed: received minus shed, per dimension.
    pub net_transferred: UncertaintyVector,
}

impl AgentPortfolio {
    pub fn with_base(base: UncertaintyVector) -> Self {
        Self { base, net_transferred: UncertaintyVector::ZERO }
    }

    pub fn total(&self) -> UncertaintyVector {
        portfolio_total(self)
    }

    pub fn holding(&self, dim: Dimension) -> f64 {
        self.base.get(dim) + self.net_transferred.get(dim)
    }

    /// Remove `amount` from dimension `dim`. Shedding the whole holding leaves
    /// exactly zero rather than a rounding residue.
    pub fn shed(&mut self, dim: Dimension, amount: f64) {
        let holding = self.holding(dim);
        if amount >= holding {
            *self.net_transferred.get_mut(dim) = -self.base.get(dim);
        } else {
            *self.net_transferred.get_mut(dim) -= amount;
        }
    }

    pub fn absorb(&mut self, dim: Dimension, amount: f64) {
        *self.net_transferred.get_mut(dim) += amount;
    }
}

pub fn portfolio_total(p: &AgentPortfolio) -> UncertaintyVector {
    p.base + p.net_transferred
}

/// One executed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tick: u64,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub dimension: Dimension,
    pub amount: f64,
    pub cost_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("ledger entry {index} references unknown agent {agent}")]
    UnknownAgent { index: usize, agent: AgentId },
}

/// Fold `ledger` over `initial`, applying each transfer exactly as the market does.
pub fn replay_ledger(
    initial: &BTreeMap<AgentId, AgentPortfolio>,
    ledger: &[LedgerEntry],
    agents: &[AgentProfile],
) -> Result<BTreeMap<AgentId, AgentPortfolio>, LedgerError> {
    let profiles: BTreeMap<&AgentId, &AgentProfile> = agents.iter().map(|a| (&a.id, a)).collect();
    let mut out = initial.clone();
    for (index, entry) in ledger.iter().enumerate() {
        let lookup = |id: &AgentId| {
            profiles
                .get(id)
                .copied()
                .ok_or_else(|| LedgerError::UnknownAgent { index, agent: id.clone() })
        };
        let sender = lookup(&entry.sender)?;
        let receiver = lookup(&entry.receiver)?;
        out.entry(entry.sender.clone())
            .or_default()
            .shed(entry.dimension, sender.transfer_efficiency * entry.amount);
        out.entry(entry.receiver.clone())
            .or_default()
            .absorb(entry.dimension, (1.0 - receiver.expertise.get(entry.dimension)) * entry.amount);
    }
    Ok(out)
}

/// A synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: TaskId,
    pub initial_uncertainty: UncertaintyDecomposition,
    pub feature_vector: Vec<f64>,
    pub max_reward: f64,
    pub ground_truth_label: u32,
}

impl TaskInstance {
    /// Task whose feature vector is the L1-normalized epistemic composition.
    pub fn new(id: impl Into<String>, initial_uncertainty: UncertaintyDecomposition) -> Self {
        Self {
            id: TaskId(id.into()),
            feature_vector: task_features(&initial_uncertainty.epistemic),
            initial_uncertainty,
            max_reward: 1.0,
            ground_truth_label: 0,
        }
    }

    pub fn epistemic(&self) -> UncertaintyVector {
        self.initial_uncertainty.epistemic
    }
}

/// `u / ‖u‖₁`, or the zero vector for a zero task.
pub fn task_features(epistemic: &UncertaintyVector) -> Vec<f64> {
    let norm = epistemic.l1_norm();
    if norm > 0.0 {
        (*epistemic * (1.0 / norm)).to_array().to_vec()
    } else {
        vec![0.0; 3]
    }
}

/// Cost of holding `u`: `c·(w·u) + β` while active, zero otherwise.
pub fn processing_cost(profile: &AgentProfile, u: &UncertaintyVector, w: &DimensionWeights) -> f64 {
    if !u.is_active() {
        return 0.0;
    }
    profile.unit_cost * total_uncertainty(u, w) + profile.fixed_cost
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticAmbiguity {
    pub weight: f64,
    pub ambiguity: f64,
}

/// Raw outputs of one agent on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub class_probs: Vec<f64>,
    pub outcome_probs: Vec<f64>,
    pub semantic_ambiguities: Vec<SemanticAmbiguity>,
    pub tokens_generated: u64,
}

/// Constants used to turn a response into an uncertainty vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementParams {
    pub semantic_complexity: f64,
    pub semantic_smoothing: f64,
    pub inferential_gamma: f64,
}

impl Default for MeasurementParams {
    fn default() -> Self {
        Self { semantic_complexity: 1.0, semantic_smoothing: 0.01, inferential_gamma: 0.5 }
    }
}

impl AgentResponse {
    pub fn measured_uncertainty(&self, params: &MeasurementParams) -> Result<UncertaintyVector, UncertaintyError> {
        let entries: Vec<(f64, f64)> =
            self.semantic_ambiguities.iter().map(|s| (s.weight, s.ambiguity)).collect();
        Ok(UncertaintyVector::new(
            perceptual_uncertainty(&self.class_probs)?,
            semantic_uncertainty(&entries, params.semantic_complexity, params.semantic_smoothing)?,
            inferential_uncertainty(&self.outcome_probs, params.inferential_gamma)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Transient failure; the call may be retried.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The backend answered with something unusable; fatal for this task.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Produces an agent's raw outputs for a task.
///
/// Implementations must be deterministic per `(agent, task)` and safe to call
/// concurrently for distinct tasks.
pub trait AgentBackend: Send + Sync {
    fn evaluate(&self, agent: &AgentProfile, task: &TaskInstance) -> Result<AgentResponse, BackendError>;
}

const CLASS_COUNT: usize = 4;
const OUTCOME_COUNT: usize = 3;
/// Logit boost given to the peak class by a perfect expert.
const PEAK_SHARPNESS: f64 = 12.0;
const LOGIT_NOISE: f64 = 0.1;
const SEMANTIC_TYPE_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

/// Deterministic stand-in for a model endpoint.
///
/// Output distributions are a softmax over small seeded noise plus a peak whose
/// height scales with the agent's expertise in the task's dominant dimension, so
/// experts answer near-deterministically and novices near-uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBackend {
    pub seed: u64,
    pub tokens_per_task: u64,
}

impl SyntheticBackend {
    pub fn new(seed: u64, tokens_per_task: u64) -> Self {
        Self { seed, tokens_per_task }
    }

    /// Response from only what crosses the wire: agent, task id and declared uncertainty.
    pub fn respond(&self, agent: &AgentProfile, task_id: &TaskId, declared: &UncertaintyVector) -> AgentResponse {
        let mut r = rng::stream(
            rng::mix(&[self.seed, rng::hash_str(agent.id.as_str())]),
            rng::domain::BACKEND,
            rng::hash_str(task_id.as_str()),
        );
        let sharpness = agent.expertise.get(declared.dominant_dimension());
        let class_probs = peaked_softmax(&mut r, CLASS_COUNT, sharpness);
        let outcome_probs = peaked_softmax(&mut r, OUTCOME_COUNT, sharpness);
        let semantic_ambiguities = SEMANTIC_TYPE_WEIGHTS
            .iter()
            .map(|&weight| {
                let jitter: f64 = r.gen();
                SemanticAmbiguity {
                    weight,
                    ambiguity: ((1.0 - agent.expertise.sem) * (0.5 + 0.5 * jitter)).clamp(0.0, 1.0),
                }
            })
            .collect();
        AgentResponse { class_probs, outcome_probs, semantic_ambiguities, tokens_generated: self.tokens_per_task }
    }
}

fn peaked_softmax<R: Rng>(r: &mut R, n: usize, sharpness: f64) -> Vec<f64> {
    let peak = r.gen_range(0..n);
    let logits: Vec<f64> = (0..n)
        .map(|k| {
            let noise: f64 = r.sample(StandardNormal);
            let boost = if k == peak { PEAK_SHARPNESS * sharpness } else { 0.0 };
            LOGIT_NOISE * noise + boost
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl AgentBackend for SyntheticBackend {
    fn evaluate(&self, agent: &AgentProfile, task: &TaskInstance) -> Result<AgentResponse, BackendError> {
        Ok(self.respond(agent, &task.id, &task.epistemic()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::decompose;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn task(id: &str, u: UncertaintyVector) -> TaskInstance {
        TaskInstance::new(id, decompose(u, 0.0, 0.0))
    }

    #[test]
    fn portfolio_total_examples() {
        let p = AgentPortfolio::with_base(UncertaintyVector::new(0.3, 0.0, 0.0));
        assert_eq!(p.total(), UncertaintyVector::new(0.3, 0.0, 0.0));

        let p = AgentPortfolio {
            base: UncertaintyVector::new(0.3, 0.1, 0.0),
            net_transferred: UncertaintyVector::new(-0.3, 0.0, 0.2),
        };
        assert_eq!(p.total(), UncertaintyVector::new(0.0, 0.1, 0.2));
        assert_eq!(AgentPortfolio::default().total(), UncertaintyVector::ZERO);
    }

    #[test]
    fn full_shed_leaves_exact_zero() {
        let mut p = AgentPortfolio {
            base: UncertaintyVector::new(0.3, 0.0, 0.0),
            net_transferred: UncertaintyVector::new(-0.1, 0.0, 0.0),
        };
        let h = p.holding(Dimension::Perc);
        p.shed(Dimension::Perc, h);
        assert_eq!(p.holding(Dimension::Perc), 0.0);
        assert!(!p.total().is_active());
    }

    #[test]
    fn processing_cost_examples() {
        let w = DimensionWeights::default();
        let a = AgentProfile::new("a", 2.0, UncertaintyVector::ZERO);
        assert_abs_diff_eq!(processing_cost(&a, &UncertaintyVector::splat(0.5), &w), 1.0, epsilon = 1e-12);
        assert_eq!(processing_cost(&a, &UncertaintyVector::ZERO, &w), 0.0);
        let b = AgentProfile::new("b", 1.0, UncertaintyVector::ZERO).with_fixed_cost(0.3);
        assert_abs_diff_eq!(processing_cost(&b, &UncertaintyVector::splat(1.0), &w), 1.3, epsilon = 1e-12);
        // inactive agents pay no fixed cost
        assert_eq!(processing_cost(&b, &UncertaintyVector::ZERO, &w), 0.0);
    }

    #[test]
    fn profile_violations_name_fields() {
        let mut a = AgentProfile::new("a", -1.0, UncertaintyVector::new(1.5, 0.0, 0.0));
        a.capacity.sem = 0.0;
        let fields: Vec<&str> = a.violations().iter().map(|(f, _)| *f).collect();
        assert_eq!(fields, vec!["unit_cost", "expertise", "capacity"]);
        assert!(AgentProfile::new("ok", 1.0, UncertaintyVector::splat(0.5)).violations().is_empty());
    }

    #[test]
    fn synthetic_backend_tracks_expertise() {
        let backend = SyntheticBackend::new(11, 20);
        let params = MeasurementParams::default();
        let expert = AgentProfile::new("expert", 1.0, UncertaintyVector::splat(1.0));
        let novice = AgentProfile::new("novice", 1.0, UncertaintyVector::ZERO);
        for i in 0..50 {
            let t = task(&format!("t{i}"), UncertaintyVector::new(0.2 + 0.01 * i as f64, 0.5, 0.3));
            let e = backend.evaluate(&expert, &t).unwrap();
            let n = backend.evaluate(&novice, &t).unwrap();
            assert!(perceptual_uncertainty(&e.class_probs).unwrap() < 0.05);
            assert!(perceptual_uncertainty(&n.class_probs).unwrap() > 0.9);
            assert!(e.measured_uncertainty(&params).is_ok());
            assert_eq!(e.tokens_generated, 20);
        }
    }

    #[test]
    fn synthetic_backend_is_deterministic() {
        let backend = SyntheticBackend::new(5, 20);
        let a = AgentProfile::new("a", 1.0, UncertaintyVector::splat(0.4));
        let t = task("t1", UncertaintyVector::new(0.4, 0.2, 0.1));
        assert_eq!(backend.evaluate(&a, &t).unwrap(), backend.evaluate(&a, &t).unwrap());
        let other = SyntheticBackend::new(6, 20);
        assert_ne!(backend.evaluate(&a, &t).unwrap(), other.evaluate(&a, &t).unwrap());
    }

    #[test]
    fn replay_rejects_unknown_agents() {
        let entry = LedgerEntry {
            tick: 0,
            sender: "ghost".into(),
            receiver: "a".into(),
            dimension: Dimension::Perc,
            amount: 0.1,
            cost_delta: -0.1,
        };
        let agents = [AgentProfile::new("a", 1.0, UncertaintyVector::ZERO)];
        assert!(replay_ledger(&BTreeMap::new(), &[entry], &agents).is_err());
    }

    proptest! {
        #[test]
        fn processing_cost_monotone(
            u in prop::array::uniform3(0.0..1.0f64),
            dim in 0usize..3,
            bump in 0.0..0.5f64,
            c in 0.01..5.0f64,
            beta in 0.0..1.0f64,
        ) {
            let w = DimensionWeights::default();
            let a = AgentProfile::new("a", c, UncertaintyVector::ZERO).with_fixed_cost(beta);
            let u = UncertaintyVector::from_array(u);
            let mut v = u;
            *v.get_mut(Dimension::ALL[dim]) += bump;
            prop_assert!(processing_cost(&a, &v, &w) >= processing_cost(&a, &u, &w));
        }
    }
}
