use agora_core::agents::{processing_cost, AgentPortfolio, AgentProfile};
use agora_core::market::{Market, MarketParams, MarketState};
use agora_core::uncertainty::{Dimension, DimensionWeights, UncertaintyVector};
use proptest::prelude::*;

/// Longhand admissibility of moving the largest feasible amount; independent of `Market`.
fn oracle_has_admissible_trade(
    agents: &[AgentProfile],
    state: &MarketState,
    params: &MarketParams,
    w: &DimensionWeights,
) -> bool {
    let total = |id| state.total_of(id);
    for s in agents {
        for r in agents {
            if s.id == r.id {
                continue;
            }
            for d in Dimension::ALL {
                let hs = total(&s.id).get(d);
                let hr = total(&r.id).get(d);
                let xi = r.expertise.get(d);
                let slack = r.capacity.get(d) - hr;
                let limit = if xi >= 1.0 { f64::INFINITY } else { slack / (1.0 - xi) };
                let t = hs.min(limit);
                if !(t > 0.0) || !(hs - hr > params.tau_trade) {
                    continue;
                }
                let mut s_after = total(&s.id);
                *s_after.get_mut(d) = (hs - s.transfer_efficiency * t).max(0.0);
                let mut r_after = total(&r.id);
                *r_after.get_mut(d) += (1.0 - xi) * t;
                let before = processing_cost(s, &total(&s.id), w) + processing_cost(r, &total(&r.id), w);
                let after = processing_cost(s, &s_after, w) + processing_cost(r, &r_after, w);
                let delta = after - before;
                if delta < -params.delta_min && -delta >= params.tau_benefit - 1e-12 {
                    return true;
                }
            }
        }
    }
    false
}

fn instance() -> impl Strategy<Value = (Vec<AgentProfile>, Vec<[f64; 3]>)> {
    (3usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(
                (0.1..5.0f64, prop::array::uniform3(0.0..1.0f64), 0.5..2.0f64, 0.0..0.2f64, 0.5..=1.0f64),
                n,
            ),
            prop::collection::vec(prop::array::uniform3(0.0..1.0f64), n),
        )
            .prop_map(|(specs, holdings)| {
                let agents = specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (c, xi, cap, beta, kappa))| {
                        AgentProfile::new(format!("agent{i}"), c, UncertaintyVector::from_array(xi))
                            .with_capacity(UncertaintyVector::splat(cap))
                            .with_fixed_cost(beta)
                            .with_transfer_efficiency(kappa)
                    })
                    .collect();
                (agents, holdings)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn descent_terminates_in_equilibrium((agents, holdings) in instance()) {
        let params = MarketParams::default();
        let w = DimensionWeights::default();
        let market = Market::new(&agents, params, w).unwrap();
        let mut state = MarketState::empty(&agents);
        for (a, h) in agents.iter().zip(&holdings) {
            state.portfolios.insert(a.id.clone(), AgentPortfolio::with_base(UncertaintyVector::from_array(*h)));
        }
        let mut cost = market.system_cost(&state);
        let mut steps = 0;
        while let Some(p) = market.find_most_profitable_trade(&state) {
            let sys_before = state.system_uncertainty().l1_norm();
            let receiver = agents.iter().find(|a| a.id == p.receiver).unwrap();
            let sender = agents.iter().find(|a| a.id == p.sender).unwrap();
            market.execute_trade(&mut state, &p).unwrap();
            let next = market.system_cost(&state);
            prop_assert!(next < cost);
            let expected = (1.0 - receiver.expertise.get(p.dimension) - sender.transfer_efficiency) * p.amount;
            prop_assert!((state.system_uncertainty().l1_norm() - sys_before - expected).abs() < 1e-12);
            cost = next;
            steps += 1;
            prop_assert!(steps < 10_000);
        }
        prop_assert!(!oracle_has_admissible_trade(&agents, &state, &params, &w));
    }
}

#[test]
fn lossless_transfer_to_novice_conserves_uncertainty() {
    let agents = vec![
        AgentProfile::new("dear", 3.0, UncertaintyVector::ZERO),
        AgentProfile::new("cheap", 1.0, UncertaintyVector::ZERO),
    ];
    let market = Market::new(&agents, MarketParams::default(), DimensionWeights::default()).unwrap();
    let mut state = MarketState::seeded(&agents, &"dear".into(), UncertaintyVector::new(0.9, 0.6, 0.3));
    let before = state.system_uncertainty();
    let out = market.run(&mut state, 100);
    assert!(out.trades > 0);
    assert_eq!(state.system_uncertainty(), before);
}
