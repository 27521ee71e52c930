//! Seeded episode runner.
//!
//! An episode draws a task list from the scenario's mix, routes every task
//! with the configured strategy, draws correctness from the residual
//! uncertainty and aggregates the rows into metrics. Reports are a pure
//! function of the [`ScenarioConfig`] and the backend.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    processing_cost, AgentBackend, AgentId, AgentProfile, MeasurementParams, SyntheticBackend, TaskId, TaskInstance,
};
use crate::baselines::{self, residual, StrategyConfig};
use crate::broker::{Broker, BrokerError, BrokerParams, BrokerState};
use crate::market::{Market, MarketError, MarketParams, MarketState};
use crate::rng::{self, domain};
use crate::uncertainty::{decompose, total_uncertainty, DimensionWeights, UncertaintyVector};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cannot aggregate an empty episode")]
    EmptyRows,
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One failed check, addressed by a dotted field path such as `pool[2].unit_cost`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn sample<R: Rng>(&self, r: &mut R) -> f64 {
        self.low + (self.high - self.low) * r.gen::<f64>()
    }
}

/// Distribution of synthetic tasks: total uncertainty per dimension plus the
/// cues that split it into epistemic and aleatoric parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskMix {
    pub perc: Range,
    pub sem: Range,
    pub inf: Range,
    pub randomness: Range,
    pub knowledge_gap: Range,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            perc: Range::new(0.2, 0.9),
            sem: Range::new(0.2, 0.9),
            inf: Range::new(0.2, 0.9),
            randomness: Range::new(0.0, 0.3),
            knowledge_gap: Range::new(0.0, 0.1),
        }
    }
}

impl TaskMix {
    fn violations(&self) -> Vec<Violation> {
        [
            ("perc", self.perc),
            ("sem", self.sem),
            ("inf", self.inf),
            ("randomness", self.randomness),
            ("knowledge_gap", self.knowledge_gap),
        ]
        .into_iter()
        .filter(|(_, r)| !(0.0 <= r.low && r.low <= r.high && r.high <= 1.0))
        .map(|(name, r)| Violation {
            path: format!("task_mix.{name}"),
            message: format!("range must satisfy 0 <= low <= high <= 1, got [{}, {}]", r.low, r.high),
        })
        .collect()
    }
}

fn default_tokens_per_task() -> u64 {
    20
}
fn default_epsilon_resolve() -> f64 {
    0.1
}
fn default_max_trades_per_task() -> usize {
    1000
}
fn default_compute_price() -> f64 {
    0.001
}
fn default_max_reward() -> f64 {
    1.0
}
fn default_tau_sim() -> f64 {
    0.75
}

/// Everything an episode depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub pool: Vec<AgentProfile>,
    pub n_tasks: usize,
    #[serde(default)]
    pub task_mix: TaskMix,
    #[serde(default = "default_tokens_per_task")]
    pub tokens_per_task: u64,
    #[serde(default)]
    pub weights: DimensionWeights,
    #[serde(default)]
    pub market: MarketParams,
    #[serde(default)]
    pub broker: BrokerParams,
    #[serde(default)]
    pub measurement: MeasurementParams,
    pub strategy: StrategyConfig,
    pub seed: u64,
    /// Residual uncertainty above which a task counts as a constraint violation.
    #[serde(default = "default_epsilon_resolve")]
    pub epsilon_resolve: f64,
    /// Trade budget per task; 0 disables the market.
    #[serde(default = "default_max_trades_per_task")]
    pub max_trades_per_task: usize,
    /// Cost charged per TFLOP of evaluation compute.
    #[serde(default = "default_compute_price")]
    pub compute_price: f64,
    #[serde(default = "default_max_reward")]
    pub max_reward: f64,
    /// Task similarity threshold; accepted and carried but not used by any strategy.
    #[serde(default = "default_tau_sim")]
    pub tau_sim: f64,
}

impl ScenarioConfig {
    /// Scenario with every optional field at its default.
    pub fn new(pool: Vec<AgentProfile>, n_tasks: usize, strategy: StrategyConfig, seed: u64) -> Self {
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: String::new(),
            pool,
            n_tasks,
            task_mix: TaskMix::default(),
            tokens_per_task: default_tokens_per_task(),
            weights: DimensionWeights::default(),
            market: MarketParams::default(),
            broker: BrokerParams::default(),
            measurement: MeasurementParams::default(),
            strategy,
            seed,
            epsilon_resolve: default_epsilon_resolve(),
            max_trades_per_task: default_max_trades_per_task(),
            compute_price: default_compute_price(),
            max_reward: default_max_reward(),
            tau_sim: default_tau_sim(),
        }
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            push(
                "schema_version".into(),
                format!("unsupported schema version {}, expected {SCENARIO_SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.pool.is_empty() {
            push("pool".into(), "pool must contain at least one agent".into());
        }
        let mut seen = BTreeMap::new();
        for (i, a) in self.pool.iter().enumerate() {
            for (field, message) in a.violations() {
                push(format!("pool[{i}].{field}"), message);
            }
            if let Some(first) = seen.insert(a.id.clone(), i) {
                push(format!("pool[{i}].id"), format!("duplicate agent id {} (first at pool[{first}])", a.id));
            }
        }
        if self.n_tasks == 0 {
            push("n_tasks".into(), "n_tasks must be positive".into());
        }
        if self.tokens_per_task == 0 {
            push("tokens_per_task".into(), "tokens_per_task must be positive".into());
        }
        if let Err(e) = self.weights.validate() {
            push("weights".into(), format!("DimensionWeights invariant violated: {e}"));
        }
        for (field, message) in self.market.violations() {
            push(format!("market.{field}"), message);
        }
        for (field, message) in self.broker.violations() {
            push(format!("broker.{field}"), message);
        }
        let m = &self.measurement;
        if !(m.semantic_complexity > 0.0) {
            push("measurement.semantic_complexity".into(), "must be > 0".into());
        }
        if !(m.semantic_smoothing > 0.0) {
            push("measurement.semantic_smoothing".into(), "must be > 0".into());
        }
        if !(0.0..=1.0).contains(&m.inferential_gamma) {
            push("measurement.inferential_gamma".into(), "must lie in [0, 1]".into());
        }
        for (field, message) in self.strategy.violations(&self.pool, self.n_tasks) {
            push(format!("strategy.{field}"), message);
        }
        if !(self.epsilon_resolve >= 0.0) {
            push("epsilon_resolve".into(), format!("must be >= 0, got {}", self.epsilon_resolve));
        }
        if !(self.compute_price >= 0.0 && self.compute_price.is_finite()) {
            push("compute_price".into(), format!("must be >= 0, got {}", self.compute_price));
        }
        if !(self.max_reward > 0.0 && self.max_reward.is_finite()) {
            push("max_reward".into(), format!("must be > 0, got {}", self.max_reward));
        }
        if !(0.0..=1.0).contains(&self.tau_sim) {
            push("tau_sim".into(), format!("must lie in [0, 1], got {}", self.tau_sim));
        }
        out.extend(self.task_mix.violations());
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(v))
        }
    }

    /// The same pool, tasks and seed under Agora with default market and broker settings.
    pub fn reference(&self) -> Self {
        Self {
            strategy: StrategyConfig::Agora,
            market: MarketParams::default(),
            broker: BrokerParams::default(),
            max_trades_per_task: default_max_trades_per_task(),
            ..self.clone()
        }
    }
}

/// The scenario's task list; task `i` depends only on `(seed, i)`.
pub fn generate_tasks(config: &ScenarioConfig) -> Vec<TaskInstance> {
    let mix = &config.task_mix;
    (0..config.n_tasks)
        .map(|i| {
            let mut r = rng::stream(config.seed, domain::TASKS, i as u64);
            let total = UncertaintyVector::new(mix.perc.sample(&mut r), mix.sem.sample(&mut r), mix.inf.sample(&mut r));
            let randomness = mix.randomness.sample(&mut r);
            let gap = mix.knowledge_gap.sample(&mut r);
            let mut task = TaskInstance::new(format!("t{i:05}"), decompose(total, gap, randomness));
            task.max_reward = config.max_reward;
            task.ground_truth_label = r.gen_range(0..4);
            task
        })
        .collect()
}

/// One agent evaluation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attempt {
    pub agent: AgentId,
    pub tflops: f64,
    pub evaluation_cost: f64,
    /// Weighted uncertainty measured from the response; `None` if the call failed.
    pub measured: Option<f64>,
}

impl Attempt {
    fn failed(&self) -> bool {
        self.measured.is_none()
    }
}

/// Shared per-episode state used by every strategy.
pub(crate) struct EpisodeContext<'a> {
    pub market: Market<'a>,
    pub weights: DimensionWeights,
    pub seed: u64,
    backend: &'a dyn AgentBackend,
    tokens_per_task: u64,
    compute_price: f64,
    measurement: MeasurementParams,
    epsilon: f64,
}

impl<'a> EpisodeContext<'a> {
    pub fn attempt(&self, agent: &AgentProfile, task: &TaskInstance) -> Attempt {
        let (tokens, measured) = match self.backend.evaluate(agent, task) {
            Ok(resp) => match resp.measured_uncertainty(&self.measurement) {
                Ok(u) => (resp.tokens_generated, Some(total_uncertainty(&u, &self.weights))),
                Err(e) => {
                    log::warn!("{} returned an unusable response for {}: {e}", agent.id, task.id);
                    (resp.tokens_generated, None)
                }
            },
            Err(e) => {
                log::warn!("evaluation of {} by {} failed: {e}", task.id, agent.id);
                (self.tokens_per_task, None)
            }
        };
        let tflops = tokens as f64 * agent.tflops_per_token;
        Attempt { agent: agent.id.clone(), tflops, evaluation_cost: tflops * self.compute_price, measured }
    }

    /// Bernoulli draw with success probability `1 − min(1, w·residual)`.
    pub fn draw_correct(&self, index: usize, attempt: usize, residual: &UncertaintyVector) -> bool {
        let p = 1.0 - total_uncertainty(residual, &self.weights).min(1.0);
        let mut r = rng::stream(self.seed, domain::CORRECTNESS, rng::mix(&[index as u64, attempt as u64]));
        r.gen::<f64>() < p
    }

    fn finish(
        &self,
        index: usize,
        task: &TaskInstance,
        attempts: Vec<Attempt>,
        holdings: BTreeMap<AgentId, UncertaintyVector>,
        trades: usize,
        truncated: bool,
    ) -> TaskRow {
        let system: UncertaintyVector = holdings.values().fold(UncertaintyVector::ZERO, |acc, u| acc + *u);
        let final_epistemic = total_uncertainty(&system, &self.weights);
        let any_failed = attempts.iter().any(Attempt::failed);
        let correct = !any_failed && self.draw_correct(index, attempts.len() - 1, &system);
        let system_cost: f64 = holdings
            .iter()
            .map(|(id, u)| processing_cost(self.market.profile(id).expect("holder is in pool"), u, &self.weights))
            .sum();
        let evaluation_cost: f64 = attempts.iter().map(|a| a.evaluation_cost).sum();
        TaskRow {
            task_id: task.id.clone(),
            handler: attempts[0].agent.clone(),
            agents: attempts.iter().map(|a| a.agent.clone()).collect(),
            trades,
            truncated,
            final_epistemic,
            correct,
            system_cost,
            evaluation_cost,
            cost: system_cost + evaluation_cost,
            tflops: attempts.iter().map(|a| a.tflops).sum(),
            evaluation_failures: attempts.iter().filter(|a| a.failed()).count(),
            handler_uncertainty: attempts[0].measured,
            constraint_violated: final_epistemic > self.epsilon,
            holdings,
        }
    }

    /// Row for a task that ends with `holder` keeping its own residual.
    pub fn finish_solo(&self, index: usize, task: &TaskInstance, attempts: Vec<Attempt>, holder: &AgentProfile) -> TaskRow {
        let holdings = [(holder.id.clone(), residual(holder, task))].into_iter().collect();
        self.finish(index, task, attempts, holdings, 0, false)
    }
}

/// Per-task outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: TaskId,
    /// First agent to work on the task.
    pub handler: AgentId,
    /// Every agent that evaluated the task, in activation order.
    pub agents: Vec<AgentId>,
    pub trades: usize,
    pub truncated: bool,
    /// Weighted residual epistemic uncertainty across all holders.
    pub final_epistemic: f64,
    pub correct: bool,
    /// Processing cost of the terminal allocation.
    pub system_cost: f64,
    /// Compute charged for every evaluation attempt.
    pub evaluation_cost: f64,
    pub cost: f64,
    pub tflops: f64,
    pub evaluation_failures: usize,
    /// Weighted uncertainty measured from the handler's response.
    pub handler_uncertainty: Option<f64>,
    pub constraint_violated: bool,
    /// Terminal allocation (holders only).
    pub holdings: BTreeMap<AgentId, UncertaintyVector>,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    /// Non-finite values become `null`; `null` reads back as +∞.
    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_tasks: usize,
    pub accuracy: f64,
    pub u_final_epis: f64,
    /// Mean agents activated per task.
    pub coi: f64,
    /// `accuracy · (1 − u_final_epis)`.
    pub uaps: f64,
    pub total_cost: f64,
    /// Σ processing cost of terminal allocations, excluding evaluation compute.
    pub total_system_cost: f64,
    pub total_evaluation_cost: f64,
    /// Total cost over the reference (default Agora) run's total cost.
    #[serde(with = "unbounded")]
    pub relative_cost: f64,
    pub total_tflops: f64,
    pub total_pflops: f64,
    /// PFLOPs per accuracy percentage point; +∞ (`null` in JSON) at zero accuracy.
    #[serde(with = "unbounded")]
    pub cost_performance_ratio: f64,
    pub total_trades: usize,
    pub truncated_tasks: usize,
    pub constraint_violations: usize,
    pub evaluation_failures: usize,
}

/// PFLOPs per accuracy percentage point.
pub fn cost_performance_ratio(pflops: f64, accuracy: f64) -> f64 {
    if accuracy > 0.0 {
        pflops / (accuracy * 100.0)
    } else {
        f64::INFINITY
    }
}

/// Aggregate `rows`. `reference_total` is the reference run's total cost, or
/// `None` when this run is its own reference.
pub fn compute_metrics(rows: &[TaskRow], reference_total: Option<f64>) -> Result<AggregateMetrics, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let n = rows.len() as f64;
    let accuracy = rows.iter().filter(|r| r.correct).count() as f64 / n;
    let u_final_epis = rows.iter().map(|r| r.final_epistemic).sum::<f64>() / n;
    let total_cost: f64 = rows.iter().map(|r| r.cost).sum();
    let total_tflops: f64 = rows.iter().map(|r| r.tflops).sum();
    let total_pflops = total_tflops / 1000.0;
    let relative_cost = match reference_total {
        None => 1.0,
        Some(r) if r > 0.0 => total_cost / r,
        Some(_) if total_cost == 0.0 => 1.0,
        Some(_) => f64::INFINITY,
    };
    Ok(AggregateMetrics {
        n_tasks: rows.len(),
        accuracy,
        u_final_epis,
        coi: rows.iter().map(|r| r.agents.len()).sum::<usize>() as f64 / n,
        uaps: accuracy * (1.0 - u_final_epis),
        total_cost,
        total_system_cost: rows.iter().map(|r| r.system_cost).sum(),
        total_evaluation_cost: rows.iter().map(|r| r.evaluation_cost).sum(),
        relative_cost,
        total_tflops,
        total_pflops,
        cost_performance_ratio: cost_performance_ratio(total_pflops, accuracy),
        total_trades: rows.iter().map(|r| r.trades).sum(),
        truncated_tasks: rows.iter().filter(|r| r.truncated).count(),
        constraint_violations: rows.iter().filter(|r| r.constraint_violated).count(),
        evaluation_failures: rows.iter().map(|r| r.evaluation_failures).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub schema_version: u32,
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub per_task: Vec<TaskRow>,
    pub aggregate: AggregateMetrics,
    /// Broker posteriors at the end of an Agora episode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broker_state: Option<BrokerState>,
}

impl EpisodeReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(s)?)
    }

    pub const PER_TASK_HEADER: [&'static str; 14] = [
        "task_id",
        "handler",
        "agents",
        "trades",
        "truncated",
        "final_epistemic",
        "correct",
        "system_cost",
        "evaluation_cost",
        "cost",
        "tflops",
        "evaluation_failures",
        "handler_uncertainty",
        "constraint_violated",
    ];

    /// One row per task; `agents` is `;`-separated.
    pub fn per_task_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::PER_TASK_HEADER)?;
        for r in &self.per_task {
            w.write_record([
                r.task_id.to_string(),
                r.handler.to_string(),
                r.agents.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(";"),
                r.trades.to_string(),
                r.truncated.to_string(),
                r.final_epistemic.to_string(),
                r.correct.to_string(),
                r.system_cost.to_string(),
                r.evaluation_cost.to_string(),
                r.cost.to_string(),
                r.tflops.to_string(),
                r.evaluation_failures.to_string(),
                r.handler_uncertainty.map(|u| u.to_string()).unwrap_or_default(),
                r.constraint_violated.to_string(),
            ])?;
        }
        csv_string(w)
    }

    pub const AGGREGATE_HEADER: [&'static str; 19] = [
        "scenario",
        "strategy",
        "seed",
        "n_tasks",
        "accuracy",
        "u_final_epis",
        "coi",
        "uaps",
        "total_cost",
        "total_system_cost",
        "total_evaluation_cost",
        "relative_cost",
        "total_tflops",
        "total_pflops",
        "cost_performance_ratio",
        "total_trades",
        "truncated_tasks",
        "constraint_violations",
        "evaluation_failures",
    ];

    pub fn aggregate_record(&self) -> Vec<String> {
        let a = &self.aggregate;
        vec![
            self.scenario.clone(),
            self.strategy.clone(),
            self.seed.to_string(),
            a.n_tasks.to_string(),
            a.accuracy.to_string(),
            a.u_final_epis.to_string(),
            a.coi.to_string(),
            a.uaps.to_string(),
            a.total_cost.to_string(),
            a.total_system_cost.to_string(),
            a.total_evaluation_cost.to_string(),
            a.relative_cost.to_string(),
            a.total_tflops.to_string(),
            a.total_pflops.to_string(),
            a.cost_performance_ratio.to_string(),
            a.total_trades.to_string(),
            a.truncated_tasks.to_string(),
            a.constraint_violations.to_string(),
            a.evaluation_failures.to_string(),
        ]
    }

    pub fn aggregate_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::AGGREGATE_HEADER)?;
        w.write_record(self.aggregate_record())?;
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, HarnessError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A point on a cost-vs-accuracy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

/// (PFLOPs, accuracy) per report, one series per strategy.
pub fn plot_points(reports: &[EpisodeReport]) -> Vec<PlotPoint> {
    reports
        .iter()
        .map(|r| PlotPoint { x: r.aggregate.total_pflops, y: r.aggregate.accuracy, series: r.strategy.clone() })
        .collect()
}

pub fn plot_csv(points: &[PlotPoint]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "series"])?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.series.clone()])?;
    }
    csv_string(w)
}

/// Run the scenario against the built-in synthetic backend.
pub fn run_episode(config: &ScenarioConfig) -> Result<EpisodeReport, HarnessError> {
    run_episode_with(config, &SyntheticBackend::new(config.seed, config.tokens_per_task))
}

/// Run the scenario against any backend.
pub fn run_episode_with(config: &ScenarioConfig, backend: &dyn AgentBackend) -> Result<EpisodeReport, HarnessError> {
    config.validate()?;
    let (rows, broker_state) = run_rows(config, backend)?;
    let reference = config.reference();
    let reference_total = if reference == *config {
        None
    } else {
        Some(run_rows(&reference, backend)?.0.iter().map(|r| r.cost).sum())
    };
    let aggregate = compute_metrics(&rows, reference_total)?;
    log::info!(
        "episode {} seed {}: accuracy {:.3}, cost {:.4}, trades {}",
        config.strategy.label(),
        config.seed,
        aggregate.accuracy,
        aggregate.total_cost,
        aggregate.total_trades
    );
    Ok(EpisodeReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: config.name.clone(),
        strategy: config.strategy.label(),
        seed: config.seed,
        per_task: rows,
        aggregate,
        broker_state,
    })
}

fn run_rows(
    config: &ScenarioConfig,
    backend: &dyn AgentBackend,
) -> Result<(Vec<TaskRow>, Option<BrokerState>), HarnessError> {
    let tasks = generate_tasks(config);
    let ctx = EpisodeContext {
        market: Market::new(&config.pool, config.market, config.weights)?,
        weights: config.weights,
        seed: config.seed,
        backend,
        tokens_per_task: config.tokens_per_task,
        compute_price: config.compute_price,
        measurement: config.measurement,
        epsilon: config.epsilon_resolve,
    };
    match &config.strategy {
        StrategyConfig::Agora => {
            let (rows, state) = run_agora(&ctx, config, &tasks)?;
            Ok((rows, Some(state)))
        }
        other => Ok((baselines::run_strategy(&ctx, other, &tasks), None)),
    }
}

fn run_agora(
    ctx: &EpisodeContext<'_>,
    config: &ScenarioConfig,
    tasks: &[TaskInstance],
) -> Result<(Vec<TaskRow>, BrokerState), HarnessError> {
    let broker = Broker::new(&ctx.market, config.broker, config.seed);
    let mut state = BrokerState::new(&config.pool);
    let mut rows = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let tick = i as u64;
        let handler_id = broker.select_initial_agent(task, &state, tick)?.agent;
        let handler = ctx.market.profile(&handler_id).expect("broker selects from the pool");
        let mut attempts = vec![ctx.attempt(handler, task)];

        let mut ms = MarketState::seeded(&config.pool, &handler_id, residual(handler, task));
        let outcome = ctx.market.run(&mut ms, config.max_trades_per_task);
        let mut activated = vec![handler_id.clone()];
        for entry in &ms.ledger {
            if !activated.contains(&entry.receiver) {
                activated.push(entry.receiver.clone());
                let profile = ctx.market.profile(&entry.receiver).expect("ledger agents are in the pool");
                attempts.push(ctx.attempt(profile, task));
            }
        }

        let holdings: BTreeMap<AgentId, UncertaintyVector> = ms
            .portfolios
            .iter()
            .filter(|(_, p)| p.total().is_active())
            .map(|(id, p)| (id.clone(), p.total()))
            .collect();
        let row = ctx.finish(i, task, attempts, holdings, outcome.trades, outcome.truncated);
        state.record_reward(&handler_id, row.correct, tick)?;
        state.round += 1;
        rows.push(row);
    }
    Ok((rows, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hetero_pool() -> Vec<AgentProfile> {
        vec![
            AgentProfile::new("generalist", 1.0, UncertaintyVector::splat(0.3)),
            AgentProfile::new("vision", 0.6, UncertaintyVector::new(0.9, 0.2, 0.1)),
            AgentProfile::new("language", 0.7, UncertaintyVector::new(0.1, 0.9, 0.3)),
            AgentProfile::new("reasoner", 1.4, UncertaintyVector::new(0.2, 0.4, 0.95)),
        ]
    }

    fn agora(pool: Vec<AgentProfile>, n: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig::new(pool, n, StrategyConfig::Agora, seed)
    }

    #[test]
    fn task_generation_is_deterministic() {
        let c = agora(hetero_pool(), 50, 9);
        assert_eq!(generate_tasks(&c), generate_tasks(&c));
        let mut empty = c.clone();
        empty.n_tasks = 0;
        assert!(generate_tasks(&empty).is_empty());
    }

    #[test]
    fn perc_heavy_mix_shows_in_means() {
        let mut c = agora(hetero_pool(), 1000, 1);
        c.task_mix.perc = Range::new(0.6, 0.9);
        c.task_mix.sem = Range::new(0.0, 0.4);
        c.task_mix.inf = Range::new(0.0, 0.4);
        let tasks = generate_tasks(&c);
        let mean = |f: fn(&UncertaintyVector) -> f64| tasks.iter().map(|t| f(&t.epistemic())).sum::<f64>() / 1000.0;
        let (p, s, i) = (mean(|u| u.perc), mean(|u| u.sem), mean(|u| u.inf));
        assert!(p > s && p > i, "perc {p} sem {s} inf {i}");
    }

    #[test]
    fn perfect_free_expert_resolves_everything() {
        let expert = AgentProfile::new("oracle", 1e-9, UncertaintyVector::splat(1.0));
        let report = run_episode(&agora(vec![expert], 500, 3)).unwrap();
        assert!(report.aggregate.u_final_epis < 0.05);
        assert!(report.aggregate.accuracy > 0.95);
    }

    #[test]
    fn trading_never_costs_more() {
        let on = agora(hetero_pool(), 60, 11);
        let mut off = on.clone();
        off.max_trades_per_task = 0;
        let a = run_episode(&on).unwrap();
        let b = run_episode(&off).unwrap();
        assert!(a.aggregate.total_trades > 0);
        assert!(a.aggregate.total_cost < b.aggregate.total_cost);
        assert_eq!(b.aggregate.total_trades, 0);
        assert_eq!(b.aggregate.coi, 1.0);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let c = agora(hetero_pool(), 40, 5);
        let a = run_episode(&c).unwrap().to_json().unwrap();
        let b = run_episode(&c).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let c = ScenarioConfig::new(hetero_pool(), 30, StrategyConfig::Random, 8);
        let r = run_episode(&c).unwrap();
        let reference_total: f64 = run_episode(&c.reference()).unwrap().per_task.iter().map(|x| x.cost).sum();
        assert_eq!(compute_metrics(&r.per_task, Some(reference_total)).unwrap(), r.aggregate);
        let back = EpisodeReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn cost_accounting_second_pass() {
        let c = agora(hetero_pool(), 40, 21);
        let r = run_episode(&c).unwrap();
        let mut total = 0.0;
        for row in &r.per_task {
            let terminal: f64 = row
                .holdings
                .iter()
                .map(|(id, u)| processing_cost(c.pool.iter().find(|a| &a.id == id).unwrap(), u, &c.weights))
                .sum();
            let eval: f64 = row
                .agents
                .iter()
                .map(|id| {
                    let a = c.pool.iter().find(|a| &a.id == id).unwrap();
                    c.tokens_per_task as f64 * a.tflops_per_token * c.compute_price
                })
                .sum();
            total += terminal + eval;
        }
        assert_abs_diff_eq!(total, r.aggregate.total_cost, epsilon = 1e-9);
    }

    #[test]
    fn metric_examples() {
        let row = |agents: usize, correct: bool, eps: f64| TaskRow {
            task_id: "t".into(),
            handler: "a".into(),
            agents: (0..agents).map(|i| AgentId::new(format!("a{i}"))).collect(),
            trades: 0,
            truncated: false,
            final_epistemic: eps,
            correct,
            system_cost: 1.0,
            evaluation_cost: 0.0,
            cost: 1.0,
            tflops: 0.0,
            evaluation_failures: 0,
            handler_uncertainty: None,
            constraint_violated: false,
            holdings: BTreeMap::new(),
        };
        let m = compute_metrics(&[row(1, true, 0.2), row(1, false, 0.4)], Some(4.0)).unwrap();
        assert_eq!(m.coi, 1.0);
        assert_abs_diff_eq!(m.u_final_epis, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(m.uaps, 0.5 * 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(m.relative_cost, 0.5);
        assert!(matches!(compute_metrics(&[], None), Err(HarnessError::EmptyRows)));

        assert_abs_diff_eq!(cost_performance_ratio(5.54, 0.887), 0.0625, epsilon = 0.0625 * 0.01);
        assert_eq!(cost_performance_ratio(1.0, 0.0), f64::INFINITY);

        let zero = compute_metrics(&[row(1, false, 0.5)], None).unwrap();
        let json = serde_json::to_string(&zero).unwrap();
        assert!(json.contains("\"cost_performance_ratio\":null"));
        let back: AggregateMetrics = serde_json::from_str(&json).unwrap();
        assert_eq!(back.cost_performance_ratio, f64::INFINITY);
    }

    #[test]
    fn correctness_tracks_residual() {
        let pool = vec![AgentProfile::new("a", 1.0, UncertaintyVector::ZERO)];
        let c = agora(pool, 1, 77);
        let backend = SyntheticBackend::new(77, 20);
        let ctx = EpisodeContext {
            market: Market::new(&c.pool, c.market, c.weights).unwrap(),
            weights: c.weights,
            seed: 77,
            backend: &backend,
            tokens_per_task: 20,
            compute_price: 0.0,
            measurement: MeasurementParams::default(),
            epsilon: 0.1,
        };
        let n = 10_000;
        let hits = (0..n).filter(|&i| ctx.draw_correct(i, 0, &UncertaintyVector::splat(0.3))).count();
        let sigma = (n as f64 * 0.7 * 0.3).sqrt();
        assert!((hits as f64 - 0.7 * n as f64).abs() < 3.0 * sigma, "hits {hits}");
    }

    #[test]
    fn identical_pool_has_no_arbitrage() {
        let twins: Vec<AgentProfile> =
            (0..3).map(|i| AgentProfile::new(format!("twin{i}"), 1.0, UncertaintyVector::ZERO)).collect();
        let a = run_episode(&agora(twins.clone(), 50, 2)).unwrap();
        let r = run_episode(&ScenarioConfig::new(twins, 50, StrategyConfig::Random, 2)).unwrap();
        assert_eq!(a.aggregate.total_trades, 0);
        assert_abs_diff_eq!(a.aggregate.total_cost, r.aggregate.total_cost, epsilon = 1e-9);
    }

    #[test]
    fn violations_are_all_listed() {
        let mut c = agora(hetero_pool(), 0, 1);
        c.weights = DimensionWeights { w_perc: 0.5, w_sem: 0.3, w_inf: 0.3 };
        c.pool[1].unit_cost = -1.0;
        c.market.tau_trade = -0.1;
        let paths: Vec<String> = c.violations().into_iter().map(|v| v.path).collect();
        for p in ["n_tasks", "weights", "pool[1].unit_cost", "market.tau_trade"] {
            assert!(paths.iter().any(|x| x == p), "missing {p} in {paths:?}");
        }
        assert!(matches!(run_episode(&c), Err(HarnessError::Invalid(_))));
    }

    #[test]
    fn csv_headers() {
        let r = run_episode(&ScenarioConfig::new(hetero_pool(), 3, StrategyConfig::Random, 1)).unwrap();
        let per_task = r.per_task_csv().unwrap();
        assert_eq!(per_task.lines().count(), 4);
        assert!(per_task.starts_with("task_id,handler,agents,trades"));
        assert_eq!(r.aggregate_csv().unwrap().lines().count(), 2);
        let plot = plot_csv(&plot_points(&[r])).unwrap();
        assert!(plot.starts_with("x,y,series\n"));
    }
}
