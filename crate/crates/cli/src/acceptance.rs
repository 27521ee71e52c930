//! The acceptance suite: every release criterion as a self-contained check.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use agora_core::agents::{processing_cost, replay_ledger, AgentPortfolio, AgentProfile, SyntheticBackend, TaskInstance};
use agora_core::baselines::{agnostic_suboptimality_instance, compare_assignments, StrategyConfig};
use agora_core::broker::{Broker, BrokerParams, BrokerState};
use agora_core::gateway::{GatewayBackend, GatewayClient, LoopbackServer, RetryPolicy};
use agora_core::harness::{self, cost_performance_ratio, ScenarioConfig};
use agora_core::market::{self, Market, MarketParams, MarketState};
use agora_core::rng::{self, domain};
use agora_core::uncertainty::{Dimension, DimensionWeights, UncertaintyDecomposition, UncertaintyVector};
use rand::Rng;

use crate::scenario;

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} [{}] {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

type Check = Result<String, String>;

fn timed(id: u32, name: &'static str, budget: Option<Duration>, check: impl FnOnce() -> Check) -> CriterionResult {
    let start = Instant::now();
    let outcome = check();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if let Some(limit) = budget {
        if elapsed > limit {
            passed = false;
            detail = format!("{detail}; exceeded time budget of {}s", limit.as_secs_f64());
        }
    }
    CriterionResult { id, name, passed, detail, elapsed }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bundled(name: &str) -> Result<ScenarioConfig, String> {
    let text = scenario::bundled(name).ok_or_else(|| format!("no bundled scenario {name}"))?;
    scenario::parse(text).map_err(|e| e.to_string())
}

fn pflops(config: &ScenarioConfig) -> Result<f64, String> {
    Ok(harness::run_episode(config).map_err(|e| e.to_string())?.aggregate.total_pflops)
}

/// FLOPs accounting of the three-tier cascade.
pub fn flops_reproduction() -> Check {
    let base = bundled("appendix-e")?;
    let single = |agent: &str| ScenarioConfig {
        strategy: StrategyConfig::SingleAgent { agent: agent.into() },
        ..base.clone()
    };
    let small = pflops(&single("small"))?;
    let large = pflops(&single("large"))?;
    let cascade = pflops(&base)?;
    ensure(small == 2.8, || format!("small-only {small} PFLOPs, expected exactly 2.8"))?;
    ensure(large == 31.2, || format!("large-only {large} PFLOPs, expected exactly 31.2"))?;
    let rel = (cascade - 5.54).abs() / 5.54;
    ensure(rel <= 0.005, || format!("cascade {cascade} PFLOPs is {:.3}% from 5.54", rel * 100.0))?;
    let ua_ratio = cost_performance_ratio(cascade, 0.887);
    let large_ratio = cost_performance_ratio(large, 0.892);
    let small_ratio = cost_performance_ratio(small, 0.720);
    for (got, want) in [(ua_ratio, 0.0625), (large_ratio, 0.3496)] {
        let rel = (got - want).abs() / want;
        ensure(rel <= 0.01, || format!("cost-performance ratio {got:.4} is {:.2}% from {want}", rel * 100.0))?;
    }
    Ok(format!(
        "small {small}, large {large}, cascade {cascade:.4} PFLOPs; ratios {ua_ratio:.4} / {large_ratio:.4} / {small_ratio:.4}"
    ))
}

/// Closed-form trade cost change against a longhand before/after difference.
pub fn cost_delta_oracle() -> Check {
    let mut r = rng::stream(2, domain::INSTANCE, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let c_i = r.gen_range(0.01..10.0);
        let c_j = r.gen_range(0.01..10.0);
        let xi = r.gen_range(0.0..=1.0);
        let t = r.gen_range(0.0..1.0);
        let held_i = t + r.gen_range(0.0..1.0);
        let held_j = r.gen_range(0.0..1.0);
        let sender = AgentProfile::new("i", c_i, UncertaintyVector::ZERO);
        let receiver = AgentProfile::new("j", c_j, UncertaintyVector::splat(xi));
        let before = c_i * held_i + c_j * held_j;
        let after = c_i * (held_i - t) + c_j * (held_j + (1.0 - xi) * t);
        let closed = market::cost_delta(&sender, &receiver, Dimension::Perc, t);
        worst = worst.max((closed - (after - before)).abs());
    }
    ensure(worst < 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("10000 samples, max abs error {worst:e}"))
}

/// A random market instance: agents plus each agent's starting holdings.
pub struct MarketInstance {
    pub agents: Vec<AgentProfile>,
    pub holdings: Vec<UncertaintyVector>,
}

impl MarketInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng::stream(seed, domain::INSTANCE, 3);
        let n = r.gen_range(3..=6);
        let unit = |r: &mut rng::StreamRng| UncertaintyVector::new(r.gen(), r.gen(), r.gen());
        let agents = (0..n)
            .map(|i| {
                AgentProfile::new(format!("agent{i}"), r.gen_range(0.1..5.0), unit(&mut r))
                    .with_capacity(UncertaintyVector::splat(r.gen_range(0.5..2.0)))
                    .with_fixed_cost(r.gen_range(0.0..0.2))
                    .with_transfer_efficiency(r.gen_range(0.5..=1.0))
            })
            .collect();
        let holdings = (0..n).map(|_| unit(&mut r)).collect();
        Self { agents, holdings }
    }

    /// Agents with no expertise and lossless transfer; holdings are multiples of
    /// 1/64 so every transfer is exact in binary floating point.
    pub fn lossless(seed: u64) -> Self {
        let mut r = rng::stream(seed, domain::INSTANCE, 4);
        let n = r.gen_range(3..=6);
        let dyadic = |r: &mut rng::StreamRng| {
            UncertaintyVector::new(
                r.gen_range(0..64) as f64 / 64.0,
                r.gen_range(0..64) as f64 / 64.0,
                r.gen_range(0..64) as f64 / 64.0,
            )
        };
        let agents = (0..n)
            .map(|i| {
                AgentProfile::new(format!("agent{i}"), r.gen_range(0.1..5.0), UncertaintyVector::ZERO)
                    .with_capacity(UncertaintyVector::splat(8.0))
            })
            .collect();
        let holdings = (0..n).map(|_| dyadic(&mut r)).collect();
        Self { agents, holdings }
    }

    pub fn state(&self) -> MarketState {
        let mut state = MarketState::empty(&self.agents);
        for (a, h) in self.agents.iter().zip(&self.holdings) {
            state.portfolios.insert(a.id.clone(), AgentPortfolio::with_base(*h));
        }
        state
    }
}

/// Exhaustive search for an admissible trade, written without the market's
/// own pricing: every ordered pair, every dimension, and ten amounts up to the
/// largest the receiver can take.
pub fn brute_force_admissible(
    agents: &[AgentProfile],
    state: &MarketState,
    params: &MarketParams,
    w: &DimensionWeights,
) -> Option<String> {
    let total = |a: &AgentProfile| state.total_of(&a.id);
    let cost = |a: &AgentProfile, u: &UncertaintyVector| processing_cost(a, u, w);
    for s in agents {
        for r in agents {
            if s.id == r.id {
                continue;
            }
            for d in Dimension::ALL {
                let hs = total(s).get(d);
                let hr = total(r).get(d);
                if !(hs - hr > params.tau_trade) {
                    continue;
                }
                let xi = r.expertise.get(d);
                let slack = r.capacity.get(d) - hr;
                let limit = if !params.use_effective_capacity {
                    slack
                } else if xi >= 1.0 {
                    f64::INFINITY
                } else {
                    slack / (1.0 - xi)
                };
                let max_amount = hs.min(limit);
                if !(max_amount > 0.0) {
                    continue;
                }
                for k in 1..=10 {
                    let t = max_amount * k as f64 / 10.0;
                    let mut s_after = total(s);
                    *s_after.get_mut(d) = (hs - s.transfer_efficiency * t).max(0.0);
                    let mut r_after = total(r);
                    *r_after.get_mut(d) += (1.0 - xi) * t;
                    let delta = cost(s, &s_after) + cost(r, &r_after) - cost(s, &total(s)) - cost(r, &total(r));
                    if delta < -params.delta_min && -delta >= params.tau_benefit - 1e-12 {
                        return Some(format!("{} -> {} {d:?} amount {t} saves {}", s.id, r.id, -delta));
                    }
                }
            }
        }
    }
    None
}

fn system_total(state: &MarketState) -> f64 {
    state.system_uncertainty().l1_norm()
}

/// Greedy descent on 200 random instances, checked trade by trade.
pub fn convergence_suite() -> Check {
    let params = MarketParams::default();
    let w = DimensionWeights::default();
    let mut trades = 0;
    for seed in 0..200 {
        let inst = MarketInstance::random(seed);
        let m = Market::new(&inst.agents, params, w).map_err(|e| e.to_string())?;
        let initial = inst.state();
        let mut state = initial.clone();
        let outcome = m.run(&mut state, 10_000);
        ensure(!outcome.truncated, || format!("instance {seed} truncated after {} trades", outcome.trades))?;
        trades += outcome.trades;

        let mut replay = initial.clone();
        let mut cost = m.system_cost(&replay);
        for (k, entry) in state.ledger.iter().enumerate() {
            replay.portfolios = replay_ledger(&initial.portfolios, &state.ledger[..=k], &inst.agents)
                .map_err(|e| e.to_string())?;
            let next = m.system_cost(&replay);
            ensure(next < cost, || format!("instance {seed} trade {k} ({entry:?}) raised cost {cost} -> {next}"))?;
            cost = next;
        }
        ensure(replay.portfolios == state.portfolios, || format!("instance {seed}: ledger replay diverges"))?;
        if let Some(t) = brute_force_admissible(&inst.agents, &state, &params, &w) {
            return Err(format!("instance {seed} not at equilibrium: {t}"));
        }
    }
    Ok(format!("200 instances, {trades} trades, all terminal states at equilibrium"))
}

/// Per-trade change in total held uncertainty against `(1 − ξ − κ)·T`.
pub fn conservation_identity() -> Check {
    let params = MarketParams::default();
    let w = DimensionWeights::default();
    let mut worst: f64 = 0.0;
    let mut trades = 0;
    for seed in 0..200 {
        let inst = MarketInstance::random(seed);
        let m = Market::new(&inst.agents, params, w).map_err(|e| e.to_string())?;
        let mut state = inst.state();
        while let Some(p) = m.find_most_profitable_trade(&state) {
            let sender = m.profile(&p.sender).expect("proposal agents are in the pool");
            let receiver = m.profile(&p.receiver).expect("proposal agents are in the pool");
            let before = system_total(&state);
            m.execute_trade(&mut state, &p).map_err(|e| e.to_string())?;
            let expected = (1.0 - receiver.expertise.get(p.dimension) - sender.transfer_efficiency) * p.amount;
            worst = worst.max((system_total(&state) - before - expected).abs());
            trades += 1;
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e} over {trades} trades"))?;

    let mut lossless_trades = 0;
    for seed in 0..200 {
        let inst = MarketInstance::lossless(seed);
        let m = Market::new(&inst.agents, params, w).map_err(|e| e.to_string())?;
        let mut state = inst.state();
        let before = state.system_uncertainty();
        lossless_trades += m.run(&mut state, 10_000).trades;
        ensure(state.system_uncertainty() == before, || {
            format!("lossless instance {seed} changed total from {before:?} to {:?}", state.system_uncertainty())
        })?;
    }
    ensure(lossless_trades > 0, || "lossless instances executed no trades".into())?;
    Ok(format!(
        "max deviation {worst:e} over {trades} trades; {lossless_trades} lossless trades with zero change"
    ))
}

/// Heuristic routing against broker plus market on the suboptimality witness.
pub fn suboptimality_witness() -> Check {
    let mut min_gap = f64::INFINITY;
    for seed in 0..100 {
        let inst = agnostic_suboptimality_instance(seed);
        let gap = compare_assignments(&inst, seed).gap();
        ensure(gap > 0.0, || format!("seed {seed}: gap {gap}"))?;
        min_gap = min_gap.min(gap);
    }
    Ok(format!("100/100 seeds with positive gap, smallest {min_gap:.4}"))
}

/// Thompson sampling on a stationary Bernoulli bandit built from the broker.
pub fn bandit_consistency() -> Check {
    const MEANS: [f64; 5] = [0.5, 0.5, 0.5, 0.9, 0.5];
    const BEST: usize = 3;
    let agents: Vec<AgentProfile> =
        (0..MEANS.len()).map(|i| AgentProfile::new(format!("arm{i}"), 1.0, UncertaintyVector::ZERO)).collect();
    let task = TaskInstance::new(
        "bandit",
        UncertaintyDecomposition { epistemic: UncertaintyVector::ZERO, aleatoric: UncertaintyVector::ZERO },
    );
    let w = DimensionWeights::default();
    let m = Market::new(&agents, MarketParams::default(), w).map_err(|e| e.to_string())?;
    let mut freqs = Vec::new();
    for seed in 0..20u64 {
        let broker = Broker::new(&m, BrokerParams::neutral(), seed);
        let mut state = BrokerState::new(&agents);
        let mut hits = 0usize;
        let mut window = 0usize;
        for round in 0..=1000u64 {
            let chosen = broker.select_initial_agent(&task, &state, round).map_err(|e| e.to_string())?.agent;
            let arm = agents.iter().position(|a| a.id == chosen).expect("broker selects from the pool");
            let success = rng::stream(seed, domain::CORRECTNESS, round).gen_bool(MEANS[arm]);
            state.record_reward(&chosen, success, round).map_err(|e| e.to_string())?;
            if round >= 500 {
                window += 1;
                hits += usize::from(arm == BEST);
            }
        }
        freqs.push(hits as f64 / window as f64);
    }
    let mean = freqs.iter().sum::<f64>() / freqs.len() as f64;
    ensure(mean > 0.9, || format!("best-arm frequency {mean:.4}"))?;
    Ok(format!("best-arm frequency {mean:.4} over rounds 500-1000, 20 seeds"))
}

/// Factor ablation and trading ablation on the default scenario.
pub fn ablation_directionality() -> Check {
    let base = bundled("default-market")?;
    let run = |c: &ScenarioConfig| harness::run_episode(c).map(|r| r.aggregate).map_err(|e| e.to_string());
    let (mut full_sys, mut neutral_sys) = (0.0, 0.0);
    let mut worst_margin = f64::INFINITY;
    const SEEDS: u64 = 50;
    for seed in 1..=SEEDS {
        let full = ScenarioConfig { seed, ..base.clone() };
        let neutral = ScenarioConfig { broker: BrokerParams::neutral(), ..full.clone() };
        let no_trade = ScenarioConfig { max_trades_per_task: 0, ..full.clone() };
        let a_full = run(&full)?;
        let a_neutral = run(&neutral)?;
        let a_no_trade = run(&no_trade)?;
        full_sys += a_full.total_system_cost;
        neutral_sys += a_neutral.total_system_cost;
        ensure(a_full.total_cost <= a_no_trade.total_cost, || {
            format!("seed {seed}: trading cost {} > no-trading cost {}", a_full.total_cost, a_no_trade.total_cost)
        })?;
        worst_margin = worst_margin.min(a_no_trade.total_cost - a_full.total_cost);
    }
    let (full_mean, neutral_mean) = (full_sys / SEEDS as f64, neutral_sys / SEEDS as f64);
    ensure(neutral_mean >= full_mean, || {
        format!("net-return-only system cost {neutral_mean:.4} < full strategy {full_mean:.4}")
    })?;
    Ok(format!(
        "mean system cost: net-return-only {neutral_mean:.4} >= full {full_mean:.4}; trading never costlier (min saving {worst_margin:.4})"
    ))
}

/// Two separate processes run the same manifest; every output file must match.
pub fn determinism(binary: &Path) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (name, _) in scenario::BUNDLED {
        let mut outputs = Vec::new();
        for attempt in ["a", "b"] {
            let out = dir.path().join(format!("{name}-{attempt}"));
            let status = Command::new(binary)
                .args(["run", "--scenario", name, "--seeds", "1,2", "--format", "both", "--out"])
                .arg(&out)
                .env("AGORA_LOG_LEVEL", "error")
                .status()
                .map_err(|e| format!("cannot spawn {}: {e}", binary.display()))?;
            ensure(status.success(), || format!("{name}: run exited with {status}"))?;
            outputs.push(out);
        }
        let files = list_files(&outputs[0])?;
        ensure(files == list_files(&outputs[1])?, || format!("{name}: different file sets"))?;
        for f in &files {
            let a = std::fs::read(outputs[0].join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(outputs[1].join(f)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{name}: {f} differs between invocations"))?;
            compared += 1;
        }
    }
    Ok(format!("3 scenarios, {compared} files byte-identical across two processes"))
}

fn list_files(dir: &Path) -> Result<Vec<String>, String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    Ok(names)
}

/// In-process synthetic backend against the same model served over HTTP.
pub fn gateway_equivalence() -> Check {
    let config = bundled("default-market")?;
    let direct = harness::run_episode(&config).map_err(|e| e.to_string())?;
    let server = LoopbackServer::start(
        config.pool.clone(),
        SyntheticBackend::new(config.seed, config.tokens_per_task),
        None,
    )
    .map_err(|e| e.to_string())?;
    let backend = GatewayBackend::new(server.url(), GatewayClient::new(RetryPolicy::default()));
    let remote = harness::run_episode_with(&config, &backend).map_err(|e| e.to_string())?;
    let (a, b) = (direct.to_json().map_err(|e| e.to_string())?, remote.to_json().map_err(|e| e.to_string())?);
    ensure(a == b, || "reports differ".into())?;
    Ok(format!("{} tasks, {} byte report identical", direct.per_task.len(), a.len()))
}

/// Run every criterion in order. `binary` is the `agora` executable used for
/// the cross-process determinism check.
pub fn run_all(binary: &Path) -> Vec<CriterionResult> {
    let secs = Duration::from_secs;
    vec![
        timed(1, "cascade FLOPs reproduction", Some(secs(5)), flops_reproduction),
        timed(2, "trade cost closed form", Some(secs(1)), cost_delta_oracle),
        timed(3, "market convergence", Some(secs(30)), convergence_suite),
        timed(4, "uncertainty conservation", None, conservation_identity),
        timed(5, "heuristic suboptimality witness", Some(secs(10)), suboptimality_witness),
        timed(6, "bandit consistency", Some(secs(10)), bandit_consistency),
        timed(7, "ablation directionality", None, ablation_directionality),
        timed(8, "cross-process determinism", None, || determinism(binary)),
        timed(9, "gateway equivalence", None, gateway_equivalence),
    ]
}
