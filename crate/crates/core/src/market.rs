//! Profitability-driven uncertainty trading.
//!
//! A trade moves an amount `T` of one dimension from a sender to a receiver.
//! The sender sheds `κ·T`, the receiver takes on `(1 − ξ)·T` where `ξ` is its
//! expertise in that dimension. The market repeatedly executes the most
//! profitable admissible trade (greedy cost descent) until none remains, which
//! is a local equilibrium.
//!
//! Costs: [`cost_delta`] is the raw per-dimension change `T·(c_j(1 − ξ_j) − c_i)`.
//! A [`TradeProposal`] carries the exact change in [`Market::system_cost`],
//! which additionally applies the dimension weight, the sender's transfer
//! efficiency and any fixed-cost change from activating the receiver or
//! emptying the sender.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{processing_cost, AgentId, AgentPortfolio, AgentProfile, LedgerEntry};
use crate::uncertainty::{Dimension, DimensionWeights, UncertaintyVector};

/// Slack allowed on the capacity check so a trade sized to exactly fill the
/// receiver is not rejected by rounding.
const CAPACITY_EPS: f64 = 1e-12;
/// Expertise floor used to derive per-dimension costs for comparative advantage.
pub const EXPERTISE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("duplicate agent id {0}")]
    DuplicateAgent(AgentId),
    #[error("inadmissible trade {sender} -> {receiver} ({dimension}, amount {amount})")]
    Inadmissible { sender: AgentId, receiver: AgentId, dimension: Dimension, amount: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketParams {
    pub tau_trade: f64,
    pub tau_benefit: f64,
    pub delta_min: f64,
    pub use_effective_capacity: bool,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { tau_trade: 0.15, tau_benefit: 0.08, delta_min: 1e-9, use_effective_capacity: true }
    }
}

impl MarketParams {
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.tau_trade >= 0.0) {
            out.push(("tau_trade", format!("tau_trade must be >= 0, got {}", self.tau_trade)));
        }
        if !(self.tau_benefit >= 0.0) {
            out.push(("tau_benefit", format!("tau_benefit must be >= 0, got {}", self.tau_benefit)));
        }
        if !(self.delta_min > 0.0) {
            out.push(("delta_min", format!("delta_min must be > 0, got {}", self.delta_min)));
        }
        out
    }
}

/// Allocation of uncertainty across agents for one task episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketState {
    pub portfolios: BTreeMap<AgentId, AgentPortfolio>,
    pub ledger: Vec<LedgerEntry>,
    pub tick: u64,
}

impl MarketState {
    /// Every agent present with an empty portfolio.
    pub fn empty(agents: &[AgentProfile]) -> Self {
        Self {
            portfolios: agents.iter().map(|a| (a.id.clone(), AgentPortfolio::default())).collect(),
            ledger: Vec::new(),
            tick: 0,
        }
    }

    /// Initial allocation: `handler` holds `base`, everyone else nothing.
    pub fn seeded(agents: &[AgentProfile], handler: &AgentId, base: UncertaintyVector) -> Self {
        let mut state = Self::empty(agents);
        state.portfolios.insert(handler.clone(), AgentPortfolio::with_base(base));
        state
    }

    pub fn holding(&self, id: &AgentId, dim: Dimension) -> f64 {
        self.portfolios.get(id).map_or(0.0, |p| p.holding(dim))
    }

    pub fn total_of(&self, id: &AgentId) -> UncertaintyVector {
        self.portfolios.get(id).map_or(UncertaintyVector::ZERO, |p| p.total())
    }

    /// Sum of all agents' holdings.
    pub fn system_uncertainty(&self) -> UncertaintyVector {
        self.portfolios.values().fold(UncertaintyVector::ZERO, |acc, p| acc + p.total())
    }

    /// Agents currently holding any uncertainty, in id order.
    pub fn active_agents(&self) -> Vec<AgentId> {
        self.portfolios.iter().filter(|(_, p)| p.total().is_active()).map(|(id, _)| id.clone()).collect()
    }
}

/// A bilateral transfer offer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeProposal {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub dimension: Dimension,
    pub amount: f64,
    /// Change in system cost if executed (negative is a saving).
    pub cost_delta: f64,
}

/// Raw cost change of moving `amount` of `dimension` from `sender` to `receiver`.
pub fn cost_delta(sender: &AgentProfile, receiver: &AgentProfile, dimension: Dimension, amount: f64) -> f64 {
    amount * (receiver.unit_cost * (1.0 - receiver.expertise.get(dimension)) - sender.unit_cost)
}

/// Which admissibility conditions a proposal satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admissibility {
    pub trigger: bool,
    pub capacity: bool,
    pub profitable: bool,
    pub beneficial: bool,
}

impl Admissibility {
    pub fn all(&self) -> bool {
        self.trigger && self.capacity && self.profitable && self.beneficial
    }
}

/// Outcome of a market phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarketOutcome {
    pub trades: usize,
    /// The trade budget ran out while an admissible trade still existed.
    pub truncated: bool,
}

/// Agents, parameters and weights for one market.
#[derive(Debug, Clone)]
pub struct Market<'a> {
    agents: Vec<&'a AgentProfile>,
    params: MarketParams,
    weights: DimensionWeights,
}

impl<'a> Market<'a> {
    pub fn new(agents: &'a [AgentProfile], params: MarketParams, weights: DimensionWeights) -> Result<Self, MarketError> {
        let mut sorted: Vec<&AgentProfile> = agents.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(MarketError::DuplicateAgent(w[0].id.clone()));
        }
        Ok(Self { agents: sorted, params, weights })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn weights(&self) -> &DimensionWeights {
        &self.weights
    }

    /// Agents in id order.
    pub fn agents(&self) -> &[&'a AgentProfile] {
        &self.agents
    }

    pub fn profile(&self, id: &AgentId) -> Option<&'a AgentProfile> {
        self.agents.binary_search_by(|a| a.id.cmp(id)).ok().map(|i| self.agents[i])
    }

    fn require(&self, id: &AgentId) -> Result<&'a AgentProfile, MarketError> {
        self.profile(id).ok_or_else(|| MarketError::UnknownAgent(id.clone()))
    }

    /// Σ processing cost of every agent's current holdings.
    pub fn system_cost(&self, state: &MarketState) -> f64 {
        self.agents.iter().map(|a| processing_cost(a, &state.total_of(&a.id), &self.weights)).sum()
    }

    /// Largest amount the receiver's capacity admits in `dim`.
    fn capacity_limit(&self, state: &MarketState, receiver: &AgentProfile, dim: Dimension) -> f64 {
        let slack = receiver.capacity.get(dim) - state.holding(&receiver.id, dim);
        if slack <= 0.0 {
            return 0.0;
        }
        if self.params.use_effective_capacity {
            let absorbed = 1.0 - receiver.expertise.get(dim);
            if absorbed <= 0.0 {
                f64::INFINITY
            } else {
                slack / absorbed
            }
        } else {
            slack
        }
    }

    /// Exact system-cost change of moving `amount` of `dim`.
    fn system_cost_delta(
        &self,
        state: &MarketState,
        sender: &AgentProfile,
        receiver: &AgentProfile,
        dim: Dimension,
        amount: f64,
    ) -> f64 {
        let w = self.weights.get(dim);
        let shed = sender.transfer_efficiency * amount;
        let absorbed = (1.0 - receiver.expertise.get(dim)) * amount;
        let variable = w * (receiver.unit_cost * absorbed - sender.unit_cost * shed);

        let sender_total = state.total_of(&sender.id);
        let mut sender_after = sender_total;
        *sender_after.get_mut(dim) = if shed >= sender_total.get(dim) { 0.0 } else { sender_total.get(dim) - shed };
        let receiver_total = state.total_of(&receiver.id);
        let mut receiver_after = receiver_total;
        *receiver_after.get_mut(dim) += absorbed;

        let mut fixed = 0.0;
        if sender_total.is_active() && !sender_after.is_active() {
            fixed -= sender.fixed_cost;
        }
        if !receiver_total.is_active() && receiver_after.is_active() {
            fixed += receiver.fixed_cost;
        }
        variable + fixed
    }

    /// Proposal for an explicit amount, priced against `state`.
    pub fn price(
        &self,
        state: &MarketState,
        sender: &AgentId,
        receiver: &AgentId,
        dimension: Dimension,
        amount: f64,
    ) -> Result<TradeProposal, MarketError> {
        let s = self.require(sender)?;
        let r = self.require(receiver)?;
        Ok(TradeProposal {
            sender: sender.clone(),
            receiver: receiver.clone(),
            dimension,
            amount,
            cost_delta: self.system_cost_delta(state, s, r, dimension, amount),
        })
    }

    /// Proposal sized at `min(sender holding, capacity limit)`; `None` when that is zero.
    pub fn propose(
        &self,
        state: &MarketState,
        sender: &AgentId,
        receiver: &AgentId,
        dimension: Dimension,
    ) -> Result<Option<TradeProposal>, MarketError> {
        let s = self.require(sender)?;
        let r = self.require(receiver)?;
        if s.id == r.id {
            return Ok(None);
        }
        let amount = state.holding(sender, dimension).min(self.capacity_limit(state, r, dimension));
        if !(amount > 0.0) {
            return Ok(None);
        }
        self.price(state, sender, receiver, dimension, amount).map(Some)
    }

    pub fn admissibility(&self, proposal: &TradeProposal, state: &MarketState) -> Result<Admissibility, MarketError> {
        let s = self.require(&proposal.sender)?;
        let r = self.require(&proposal.receiver)?;
        let dim = proposal.dimension;
        let sender_holding = state.holding(&s.id, dim);
        let receiver_holding = state.holding(&r.id, dim);
        let well_formed = s.id != r.id && proposal.amount > 0.0 && proposal.amount <= sender_holding;

        let increment = if self.params.use_effective_capacity {
            (1.0 - r.expertise.get(dim)) * proposal.amount
        } else {
            proposal.amount
        };
        let delta = self.system_cost_delta(state, s, r, dim, proposal.amount);
        Ok(Admissibility {
            trigger: well_formed && sender_holding - receiver_holding > self.params.tau_trade,
            capacity: receiver_holding + increment <= r.capacity.get(dim) + CAPACITY_EPS,
            profitable: delta < -self.params.delta_min,
            beneficial: -delta >= self.params.tau_benefit,
        })
    }

    /// All four conditions: trigger, capacity, profitability, benefit threshold.
    pub fn is_admissible(&self, proposal: &TradeProposal, state: &MarketState) -> bool {
        self.admissibility(proposal, state).map(|a| a.all()).unwrap_or(false)
    }

    /// Every admissible maximally-sized proposal, in (sender, receiver, dimension) order.
    pub fn admissible_trades(&self, state: &MarketState) -> Vec<TradeProposal> {
        let mut out = Vec::new();
        for s in &self.agents {
            for r in &self.agents {
                if s.id == r.id {
                    continue;
                }
                for dim in Dimension::ALL {
                    if let Ok(Some(p)) = self.propose(state, &s.id, &r.id, dim) {
                        if self.is_admissible(&p, state) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }

    /// The admissible proposal with the most negative cost delta; ties keep the
    /// lexicographically smallest (sender, receiver, dimension).
    pub fn find_most_profitable_trade(&self, state: &MarketState) -> Option<TradeProposal> {
        self.admissible_trades(state).into_iter().fold(None, |best, p| match best {
            Some(b) if b.cost_delta <= p.cost_delta => Some(b),
            _ => Some(p),
        })
    }

    /// Apply an admissible proposal, append it to the ledger and advance the tick.
    pub fn execute_trade(&self, state: &mut MarketState, proposal: &TradeProposal) -> Result<(), MarketError> {
        if !self.is_admissible(proposal, state) {
            return Err(MarketError::Inadmissible {
                sender: proposal.sender.clone(),
                receiver: proposal.receiver.clone(),
                dimension: proposal.dimension,
                amount: proposal.amount,
            });
        }
        let s = self.require(&proposal.sender)?;
        let r = self.require(&proposal.receiver)?;
        let dim = proposal.dimension;
        let cost_delta = self.system_cost_delta(state, s, r, dim, proposal.amount);
        state
            .portfolios
            .entry(s.id.clone())
            .or_default()
            .shed(dim, s.transfer_efficiency * proposal.amount);
        state
            .portfolios
            .entry(r.id.clone())
            .or_default()
            .absorb(dim, (1.0 - r.expertise.get(dim)) * proposal.amount);
        state.ledger.push(LedgerEntry {
            tick: state.tick,
            sender: s.id.clone(),
            receiver: r.id.clone(),
            dimension: dim,
            amount: proposal.amount,
            cost_delta,
        });
        state.tick += 1;
        Ok(())
    }

    /// Greedy cost descent: execute the best admissible trade until none is left
    /// or `max_trades` have run.
    pub fn run(&self, state: &mut MarketState, max_trades: usize) -> MarketOutcome {
        let mut trades = 0;
        loop {
            let Some(best) = self.find_most_profitable_trade(state) else {
                return MarketOutcome { trades, truncated: false };
            };
            if trades >= max_trades {
                log::debug!("market phase truncated after {trades} trades");
                return MarketOutcome { trades, truncated: true };
            }
            self.execute_trade(state, &best).expect("best trade is admissible by construction");
            trades += 1;
        }
    }

    /// Saving (−ΔC summed) over admissible trades with `agent` on either side.
    pub fn strategic_value(&self, state: &MarketState, agent: &AgentId) -> f64 {
        self.admissible_trades(state)
            .iter()
            .filter(|p| &p.sender == agent || &p.receiver == agent)
            .map(|p| -p.cost_delta)
            .sum()
    }
}

/// Per-dimension unit cost `c / max(ξ_d, floor)`.
pub fn per_dimension_cost(agent: &AgentProfile, dim: Dimension) -> f64 {
    agent.unit_cost / agent.expertise.get(dim).max(EXPERTISE_FLOOR)
}

/// `(cᵢ(d1)/cᵢ(d2)) / (cⱼ(d1)/cⱼ(d2))`; below 1 means `a_i` holds the comparative
/// advantage in `d1`.
pub fn comparative_advantage_index(a_i: &AgentProfile, a_j: &AgentProfile, d1: Dimension, d2: Dimension) -> f64 {
    comparative_advantage_from_costs(
        per_dimension_cost(a_i, d1),
        per_dimension_cost(a_i, d2),
        per_dimension_cost(a_j, d1),
        per_dimension_cost(a_j, d2),
    )
}

pub fn comparative_advantage_from_costs(ci_d1: f64, ci_d2: f64, cj_d1: f64, cj_d2: f64) -> f64 {
    (ci_d1 / ci_d2) / (cj_d1 / cj_d2)
}

/// Ledger as CSV: `tick,sender,receiver,dimension,amount,cost_delta`.
pub fn ledger_csv(entries: &[LedgerEntry]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tick", "sender", "receiver", "dimension", "amount", "cost_delta"])?;
    for e in entries {
        w.write_record([
            e.tick.to_string(),
            e.sender.to_string(),
            e.receiver.to_string(),
            e.dimension.to_string(),
            e.amount.to_string(),
            e.cost_delta.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
