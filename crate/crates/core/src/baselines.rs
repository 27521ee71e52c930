//! Routing strategies that do not trade.
//!
//! The heuristic router scores agents by past success and task similarity
//! only. It never sees costs or how a task's uncertainty is split across
//! dimensions, which is what [`agnostic_suboptimality_instance`] exploits.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{processing_cost, AgentId, AgentProfile, TaskInstance};
use crate::broker::{cosine_dissimilarity, Broker, BrokerParams, BrokerState, RewardEstimate};
use crate::harness::{Attempt, EpisodeContext, TaskRow};
use crate::market::{Market, MarketParams, MarketState};
use crate::rng::{self, domain};
use crate::uncertainty::{total_uncertainty, DimensionWeights, UncertaintyDecomposition, UncertaintyVector};

fn half() -> f64 {
    0.5
}

/// Which strategy an episode runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    SingleAgent {
        agent: AgentId,
    },
    Random,
    HeuristicRouter {
        #[serde(default = "half")]
        alpha: f64,
        #[serde(default = "half")]
        beta: f64,
    },
    /// Strict alternation between two agents.
    Top2 {
        agents: Vec<AgentId>,
    },
    /// Try agents in order; move on when an attempt fails or reports
    /// uncertainty above the threshold.
    TieredCascade {
        order: Vec<AgentId>,
        escalation_threshold: f64,
    },
    /// Every task goes to `order[0]` first. Threshold mode escalates one hop to
    /// the first later agent whose expected residual is within the threshold.
    /// Calibrated mode fixes how many tasks end at each tier instead.
    UncertaintyAware {
        order: Vec<AgentId>,
        escalation_threshold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibrated_counts: Option<Vec<usize>>,
    },
    Agora,
}

impl StrategyConfig {
    pub fn label(&self) -> String {
        match self {
            Self::SingleAgent { agent } => format!("single_agent:{agent}"),
            Self::Random => "random".into(),
            Self::HeuristicRouter { .. } => "heuristic_router".into(),
            Self::Top2 { .. } => "top2".into(),
            Self::TieredCascade { .. } => "tiered_cascade".into(),
            Self::UncertaintyAware { calibrated_counts: Some(_), .. } => "uncertainty_aware_calibrated".into(),
            Self::UncertaintyAware { .. } => "uncertainty_aware".into(),
            Self::Agora => "agora".into(),
        }
    }

    /// Every violated invariant as `(path below "strategy", message)`.
    pub fn violations(&self, pool: &[AgentProfile], n_tasks: usize) -> Vec<(String, String)> {
        let known = |id: &AgentId| pool.iter().any(|a| &a.id == id);
        let mut out = Vec::new();
        let check_ids = |field: &str, ids: &[AgentId], out: &mut Vec<(String, String)>| {
            for (i, id) in ids.iter().enumerate() {
                if !known(id) {
                    out.push((format!("{field}[{i}]"), format!("unknown agent id {id}")));
                }
            }
        };
        let check_threshold = |t: f64, out: &mut Vec<(String, String)>| {
            if !(0.0..=1.0).contains(&t) {
                out.push(("escalation_threshold".into(), format!("threshold must lie in [0, 1], got {t}")));
            }
        };
        match self {
            Self::SingleAgent { agent } => {
                if !known(agent) {
                    out.push(("agent".into(), format!("unknown agent id {agent}")));
                }
            }
            Self::Random | Self::Agora => {}
            Self::HeuristicRouter { alpha, beta } => {
                for (name, v) in [("alpha", alpha), ("beta", beta)] {
                    if !(*v >= 0.0 && v.is_finite()) {
                        out.push((name.into(), format!("{name} must be >= 0, got {v}")));
                    }
                }
            }
            Self::Top2 { agents } => {
                if agents.len() != 2 || agents[0] == agents[1] {
                    out.push(("agents".into(), "top2 needs exactly two distinct agent ids".into()));
                }
                check_ids("agents", agents, &mut out);
            }
            Self::TieredCascade { order, escalation_threshold } => {
                if order.is_empty() {
                    out.push(("order".into(), "escalation order must be nonempty".into()));
                }
                check_ids("order", order, &mut out);
                check_threshold(*escalation_threshold, &mut out);
            }
            Self::UncertaintyAware { order, escalation_threshold, calibrated_counts } => {
                if order.is_empty() {
                    out.push(("order".into(), "escalation order must be nonempty".into()));
                }
                check_ids("order", order, &mut out);
                check_threshold(*escalation_threshold, &mut out);
                if let Some(counts) = calibrated_counts {
                    if counts.len() != order.len() {
                        out.push((
                            "calibrated_counts".into(),
                            format!("expected {} counts (one per tier), got {}", order.len(), counts.len()),
                        ));
                    }
                    let sum: usize = counts.iter().sum();
                    if sum != n_tasks {
                        out.push(("calibrated_counts".into(), format!("counts sum to {sum}, expected n_tasks = {n_tasks}")));
                    }
                }
            }
        }
        out
    }
}

/// `α·P_hist + β·(1 − cosine distance(ξ, task features))`.
///
/// Depends only on the success rate and the direction of the expertise and
/// task vectors; cost never enters.
pub fn heuristic_score(agent: &AgentProfile, task: &TaskInstance, p_hist: f64, alpha: f64, beta: f64) -> f64 {
    let similarity = 1.0 - cosine_dissimilarity(&agent.expertise.to_array(), &task.feature_vector);
    alpha * p_hist + beta * similarity
}

/// Per-agent success counts, read as a Laplace-smoothed rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessHistory {
    counts: BTreeMap<AgentId, (u64, u64)>,
}

impl SuccessHistory {
    pub fn record(&mut self, agent: &AgentId, success: bool) {
        let e = self.counts.entry(agent.clone()).or_default();
        e.1 += 1;
        if success {
            e.0 += 1;
        }
    }

    /// `(successes + 1) / (attempts + 2)`.
    pub fn rate(&self, agent: &AgentId) -> f64 {
        let (s, n) = self.counts.get(agent).copied().unwrap_or_default();
        (s as f64 + 1.0) / (n as f64 + 2.0)
    }
}

/// Index of the best heuristic score; ties go to the earliest agent.
pub fn route_heuristic(
    pool: &[&AgentProfile],
    task: &TaskInstance,
    p_hist: impl Fn(&AgentId) -> f64,
    alpha: f64,
    beta: f64,
) -> usize {
    let scores: Vec<f64> = pool.iter().map(|a| heuristic_score(a, task, p_hist(&a.id), alpha, beta)).collect();
    crate::broker::argmax(&scores).expect("pool is nonempty")
}

/// Residual uncertainty vector an agent leaves on a task it handles alone.
pub fn residual(agent: &AgentProfile, task: &TaskInstance) -> UncertaintyVector {
    agent.expertise.map(|x| 1.0 - x).hadamard(task.epistemic())
}

fn profile<'a>(ctx: &EpisodeContext<'a>, id: &AgentId) -> &'a AgentProfile {
    ctx.market.profile(id).expect("strategy ids are validated")
}

/// Rows for a non-trading strategy over the whole task list.
pub(crate) fn run_strategy(ctx: &EpisodeContext<'_>, strategy: &StrategyConfig, tasks: &[TaskInstance]) -> Vec<TaskRow> {
    let pool = ctx.market.agents();
    match strategy {
        StrategyConfig::SingleAgent { agent } => {
            let a = profile(ctx, agent);
            tasks.iter().enumerate().map(|(i, t)| single_attempt(ctx, i, t, a)).collect()
        }
        StrategyConfig::Random => tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let k = rng::stream(ctx.seed, domain::STRATEGY, i as u64).gen_range(0..pool.len());
                single_attempt(ctx, i, t, pool[k])
            })
            .collect(),
        StrategyConfig::HeuristicRouter { alpha, beta } => {
            let mut history = SuccessHistory::default();
            let mut rows = Vec::with_capacity(tasks.len());
            for (i, t) in tasks.iter().enumerate() {
                let k = route_heuristic(pool, t, |id| history.rate(id), *alpha, *beta);
                let row = single_attempt(ctx, i, t, pool[k]);
                history.record(&pool[k].id, row.correct);
                rows.push(row);
            }
            rows
        }
        StrategyConfig::Top2 { agents } => {
            let pair = [profile(ctx, &agents[0]), profile(ctx, &agents[1])];
            tasks.iter().enumerate().map(|(i, t)| single_attempt(ctx, i, t, pair[i % 2])).collect()
        }
        StrategyConfig::TieredCascade { order, escalation_threshold } => {
            let order: Vec<&AgentProfile> = order.iter().map(|id| profile(ctx, id)).collect();
            tasks.iter().enumerate().map(|(i, t)| cascade(ctx, i, t, &order, *escalation_threshold)).collect()
        }
        StrategyConfig::UncertaintyAware { order, escalation_threshold, calibrated_counts } => {
            let order: Vec<&AgentProfile> = order.iter().map(|id| profile(ctx, id)).collect();
            match calibrated_counts {
                None => tasks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| escalate_by_threshold(ctx, i, t, &order, *escalation_threshold))
                    .collect(),
                Some(counts) => escalate_by_counts(ctx, tasks, &order, counts),
            }
        }
        StrategyConfig::Agora => unreachable!("agora episodes are run by the harness"),
    }
}

fn single_attempt(ctx: &EpisodeContext<'_>, index: usize, task: &TaskInstance, agent: &AgentProfile) -> TaskRow {
    let attempt = ctx.attempt(agent, task);
    ctx.finish_solo(index, task, vec![attempt], agent)
}

fn cascade(
    ctx: &EpisodeContext<'_>,
    index: usize,
    task: &TaskInstance,
    order: &[&AgentProfile],
    threshold: f64,
) -> TaskRow {
    let mut attempts: Vec<Attempt> = Vec::new();
    for (k, agent) in order.iter().enumerate() {
        let attempt = ctx.attempt(agent, task);
        let accepted = match attempt.measured {
            Some(m) => m <= threshold && ctx.draw_correct(index, k, &residual(agent, task)),
            None => false,
        };
        attempts.push(attempt);
        if accepted || k + 1 == order.len() {
            return ctx.finish_solo(index, task, attempts, agent);
        }
    }
    unreachable!("order is nonempty")
}

fn escalate_by_threshold(
    ctx: &EpisodeContext<'_>,
    index: usize,
    task: &TaskInstance,
    order: &[&AgentProfile],
    threshold: f64,
) -> TaskRow {
    let first = order[0];
    let mut attempts = vec![ctx.attempt(first, task)];
    let expected = |a: &AgentProfile| total_uncertainty(&residual(a, task), &ctx.weights);
    if expected(first) <= threshold || order.len() == 1 {
        return ctx.finish_solo(index, task, attempts, first);
    }
    let target = order[1..].iter().find(|a| expected(a) <= threshold).unwrap_or(&order[order.len() - 1]);
    attempts.push(ctx.attempt(target, task));
    ctx.finish_solo(index, task, attempts, target)
}

/// Rank tasks by the first agent's measured uncertainty (highest first; failed
/// measurements rank above all) and hand the top `counts[last]` to the last
/// tier, the next `counts[last - 1]` to the tier before, and so on.
fn escalate_by_counts(
    ctx: &EpisodeContext<'_>,
    tasks: &[TaskInstance],
    order: &[&AgentProfile],
    counts: &[usize],
) -> Vec<TaskRow> {
    let first: Vec<Attempt> = tasks.iter().map(|t| ctx.attempt(order[0], t)).collect();
    let mut ranked: Vec<usize> = (0..tasks.len()).collect();
    let key = |i: usize| first[i].measured.unwrap_or(f64::INFINITY);
    ranked.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).expect("measured uncertainty is not NaN").then(a.cmp(&b)));

    let mut tier = vec![0usize; tasks.len()];
    let mut cursor = 0;
    for k in (1..order.len()).rev() {
        for &i in &ranked[cursor..cursor + counts[k]] {
            tier[i] = k;
        }
        cursor += counts[k];
    }

    tasks
        .iter()
        .enumerate()
        .zip(first)
        .map(|((i, t), a0)| {
            let k = tier[i];
            if k == 0 {
                ctx.finish_solo(i, t, vec![a0], order[0])
            } else {
                let a1 = ctx.attempt(order[k], t);
                ctx.finish_solo(i, t, vec![a0, a1], order[k])
            }
        })
        .collect()
}

/// PFLOPs spent when `counts[k]` tasks are escalated to tier `k` after a first
/// attempt at tier 0 (tier-0 tasks take one attempt).
pub fn escalation_pflops(tflops_per_token: &[f64], counts: &[usize], tokens_per_task: u64) -> f64 {
    let n: usize = counts.iter().sum();
    let tokens = tokens_per_task as f64;
    let first = n as f64 * tokens * tflops_per_token[0];
    let escalated: f64 =
        counts.iter().zip(tflops_per_token).skip(1).map(|(&c, &f)| c as f64 * tokens * f).sum();
    (first + escalated) / 1000.0
}

/// A task on which routing by past success and similarity alone provably costs more
/// than cost-aware routing.
#[derive(Debug, Clone)]
pub struct SuboptimalityInstance {
    pub agents: Vec<AgentProfile>,
    pub task: TaskInstance,
    /// Historical success rate per agent.
    pub p_hist: BTreeMap<AgentId, f64>,
    pub weights: DimensionWeights,
    /// `system_cost(heuristic) − system_cost(agora)`, computed longhand.
    pub expected_gap: f64,
}

/// Agent `A` has the better track record but is expensive and weak; `B` is
/// cheap and strong. Expertise vectors are parallel, so task similarity ties
/// and the heuristic picks `A` on history alone. The seed varies the task.
pub fn agnostic_suboptimality_instance(seed: u64) -> SuboptimalityInstance {
    let a = AgentProfile::new("A", 5.0, UncertaintyVector::splat(0.2));
    let b = AgentProfile::new("B", 1.0, UncertaintyVector::splat(0.9));
    let mut r = rng::stream(seed, domain::INSTANCE, 0);
    let u = UncertaintyVector::new(r.gen_range(0.3..=1.0), r.gen_range(0.3..=1.0), r.gen_range(0.3..=1.0));
    let task = TaskInstance::new(
        format!("witness-{seed}"),
        UncertaintyDecomposition { epistemic: u, aleatoric: UncertaintyVector::ZERO },
    );
    let weights = DimensionWeights::default();
    let wu = total_uncertainty(&u, &weights);
    let expected_gap = 5.0 * 0.8 * wu - 1.0 * 0.1 * wu;
    SuboptimalityInstance {
        p_hist: [(a.id.clone(), 0.9), (b.id.clone(), 0.6)].into_iter().collect(),
        agents: vec![a, b],
        task,
        weights,
        expected_gap,
    }
}

/// Beta posterior equivalent to ten observations at the given success rate.
fn posterior_from_rate(rate: f64) -> crate::broker::BetaPosterior {
    crate::broker::BetaPosterior { alpha: 1.0 + 10.0 * rate, beta: 1.0 + 10.0 * (1.0 - rate) }
}

/// Outcome of routing one instance both ways.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentComparison {
    pub heuristic_agent: AgentId,
    pub heuristic_cost: f64,
    pub agora_handler: AgentId,
    pub agora_cost: f64,
}

impl AssignmentComparison {
    pub fn gap(&self) -> f64 {
        self.heuristic_cost - self.agora_cost
    }
}

/// Route `instance` with the heuristic (α = β = 0.5, no market) and with the
/// broker plus market, and cost both terminal states.
pub fn compare_assignments(instance: &SuboptimalityInstance, seed: u64) -> AssignmentComparison {
    let agents = &instance.agents;
    let market = Market::new(agents, MarketParams::default(), instance.weights).expect("instance ids are unique");
    let pool = market.agents();
    let k = route_heuristic(pool, &instance.task, |id| instance.p_hist[id], 0.5, 0.5);
    let chosen = pool[k];
    let heuristic_cost = processing_cost(chosen, &residual(chosen, &instance.task), &instance.weights);

    let mut state = BrokerState::new(agents);
    for (id, &rate) in &instance.p_hist {
        state.posteriors.insert(id.clone(), posterior_from_rate(rate));
    }
    let params = BrokerParams { reward_estimate: RewardEstimate::Sample, ..BrokerParams::default() };
    let broker = Broker::new(&market, params, seed);
    let handler = broker.select_initial_agent(&instance.task, &state, 0).expect("pool is nonempty").agent;
    let handler_profile = market.profile(&handler).expect("selected from pool");
    let mut ms = MarketState::seeded(agents, &handler, residual(handler_profile, &instance.task));
    market.run(&mut ms, 10_000);
    AssignmentComparison {
        heuristic_agent: chosen.id.clone(),
        heuristic_cost,
        agora_handler: handler,
        agora_cost: market.system_cost(&ms),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn task(u: [f64; 3]) -> TaskInstance {
        TaskInstance::new(
            "t",
            UncertaintyDecomposition { epistemic: UncertaintyVector::from_array(u), aleatoric: UncertaintyVector::ZERO },
        )
    }

    #[test]
    fn heuristic_score_examples() {
        let a = AgentProfile::new("a", 1.0, UncertaintyVector::new(0.2, 0.5, 0.3));
        let t = task([0.2, 0.5, 0.3]);
        assert_abs_diff_eq!(heuristic_score(&a, &t, 0.8, 1.0, 0.0), 0.8);
        assert_abs_diff_eq!(heuristic_score(&a, &t, 0.3, 0.0, 1.0), 1.0, epsilon = 1e-12);
        // similarity 0.4 is reached with cosine 0.4 between ξ = e1 and a task at angle acos(0.4)
        let e1 = AgentProfile::new("e", 1.0, UncertaintyVector::new(1.0, 0.0, 0.0));
        let t = task([0.4, (1.0f64 - 0.16).sqrt(), 0.0]);
        assert_abs_diff_eq!(heuristic_score(&e1, &t, 0.6, 0.5, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn laplace_history() {
        let mut h = SuccessHistory::default();
        let id = AgentId::from("a");
        assert_abs_diff_eq!(h.rate(&id), 0.5);
        h.record(&id, true);
        h.record(&id, true);
        h.record(&id, false);
        assert_abs_diff_eq!(h.rate(&id), 3.0 / 5.0);
    }

    proptest! {
        #[test]
        fn heuristic_ignores_cost_and_decomposition(c1 in 0.01..10.0f64, c2 in 0.01..10.0f64,
                                                   xi in prop::array::uniform3(0.0..1.0f64),
                                                   u in prop::array::uniform3(0.01..1.0f64),
                                                   scale in 0.1..3.0f64, alea in 0.0..1.0f64, p in 0.0..1.0f64) {
            let a1 = AgentProfile::new("a", c1, UncertaintyVector::from_array(xi));
            let a2 = AgentProfile::new("a", c2, UncertaintyVector::from_array(xi));
            let base = task(u);
            // same direction, different magnitude and epistemic/aleatoric split
            let mut moved = TaskInstance::new("t", UncertaintyDecomposition {
                epistemic: UncertaintyVector::from_array(u) * scale,
                aleatoric: UncertaintyVector::splat(alea),
            });
            moved.feature_vector = base.feature_vector.clone();
            let s1 = heuristic_score(&a1, &base, p, 0.5, 0.5);
            let s2 = heuristic_score(&a2, &moved, p, 0.5, 0.5);
            prop_assert_eq!(s1.to_bits(), s2.to_bits());
        }
    }

    #[test]
    fn escalation_pflops_examples() {
        let f = [1.4, 2.8, 15.6];
        assert_abs_diff_eq!(escalation_pflops(&f, &[100, 0, 0], 20), 2.8, epsilon = 1e-12);
        assert_abs_diff_eq!(escalation_pflops(&f, &[88, 4, 8], 20), 5.52, epsilon = 1e-12);
        assert!((escalation_pflops(&f, &[88, 4, 8], 20) - 5.54).abs() / 5.54 < 0.005);
    }

    #[test]
    fn witness_gap_is_positive() {
        for seed in 0..20 {
            let inst = agnostic_suboptimality_instance(seed);
            let cmp = compare_assignments(&inst, seed);
            assert_eq!(cmp.heuristic_agent.as_str(), "A");
            assert_eq!(cmp.agora_handler.as_str(), "B");
            assert_abs_diff_eq!(cmp.gap(), inst.expected_gap, epsilon = 1e-12);
            assert!(cmp.gap() > 0.0);
        }
    }

    #[test]
    fn witness_degenerate_cases() {
        let mut inst = agnostic_suboptimality_instance(3);
        inst.agents.truncate(1);
        inst.p_hist.remove(&AgentId::from("B"));
        assert_eq!(compare_assignments(&inst, 3).gap(), 0.0);

        let mut inst = agnostic_suboptimality_instance(4);
        inst.agents = vec![
            AgentProfile::new("A", 2.0, UncertaintyVector::ZERO),
            AgentProfile::new("B", 2.0, UncertaintyVector::ZERO),
        ];
        assert_eq!(compare_assignments(&inst, 4).gap(), 0.0);
    }

    #[test]
    fn strategy_json_shape() {
        let s: StrategyConfig =
            serde_json::from_str(r#"{"kind":"uncertainty_aware","order":["s","m","l"],"escalation_threshold":0.3,"calibrated_counts":[88,4,8]}"#)
                .unwrap();
        assert_eq!(s.label(), "uncertainty_aware_calibrated");
        let h: StrategyConfig = serde_json::from_str(r#"{"kind":"heuristic_router"}"#).unwrap();
        assert_eq!(h, StrategyConfig::HeuristicRouter { alpha: 0.5, beta: 0.5 });
        assert_eq!(serde_json::to_string(&StrategyConfig::Agora).unwrap(), r#"{"kind":"agora"}"#);
    }

    #[test]
    fn strategy_violations_name_fields() {
        let pool = vec![AgentProfile::new("s", 1.0, UncertaintyVector::ZERO)];
        let s = StrategyConfig::UncertaintyAware {
            order: vec!["s".into(), "ghost".into()],
            escalation_threshold: 1.5,
            calibrated_counts: Some(vec![1, 2, 3]),
        };
        let v = s.violations(&pool, 10);
        let paths: Vec<&str> = v.iter().map(|(p, _)| p.as_str()).collect();
        assert!(paths.contains(&"order[1]"));
        assert!(paths.contains(&"escalation_threshold"));
        assert_eq!(paths.iter().filter(|p| **p == "calibrated_counts").count(), 2);
    }
}
