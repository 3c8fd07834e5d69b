//! Closed-form market equilibrium given a vector of (reported) net demands.
//!
//! With quadratic generation costs and quadratic demand disutility every agent
//! responds linearly to the common price, so the balance of the whole market
//! pins down a single clearing price
//!
//! ```text
//! λ₀ = (Σ y + Σ b/a) / B,    B = Σ (1/a + 1/(2ã))
//! ```
//!
//! and every decision follows from it.

use crate::error::{Error, Result};
use crate::model::{MarketInstance, PriceMode};
use crate::numeric::exact_sum;

/// Per-agent price sensitivities `Bₙ = 1/aₙ + 1/(2ãₙ)` and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub b_n: Vec<f64>,
    pub b_total: f64,
    /// `Σ bₙ/aₙ`, the report-independent part of the clearing numerator.
    pub offset: f64,
}

impl Sensitivity {
    pub fn share(&self, n: usize) -> f64 {
        self.b_n[n] / self.b_total
    }

    /// `λ₀` for the given inputs. The aggregate is summed exactly so that two
    /// input vectors with the same real sum give the same price bit for bit.
    pub fn price(&self, inputs: &[f64]) -> f64 {
        (exact_sum(inputs) + self.offset) / self.b_total
    }
}

pub fn sensitivity(instance: &MarketInstance) -> Sensitivity {
    let b_n: Vec<f64> = instance
        .agents()
        .iter()
        .map(|a| 1.0 / a.a + 1.0 / (2.0 * a.a_tilde))
        .collect();
    let ratios: Vec<f64> = instance.agents().iter().map(|a| a.cost_ratio()).collect();
    Sensitivity {
        b_total: exact_sum(&b_n),
        b_n,
        offset: exact_sum(&ratios),
    }
}

pub fn clearing_price(instance: &MarketInstance, inputs: &[f64]) -> f64 {
    sensitivity(instance).price(inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumOutcome {
    pub lambda0: f64,
    pub d: Vec<f64>,
    pub g: Vec<f64>,
    pub q_net: Vec<f64>,
    /// Bilateral trading cost per agent; `None` until priced.
    pub trade_cost: Option<Vec<f64>>,
}

/// Decisions at the price implied by `reports`. Demand and net import use each
/// agent's own true `D*` and `ΔG`; only the price sees the reports.
pub fn equilibrium_decisions(instance: &MarketInstance, reports: &[f64]) -> EquilibriumOutcome {
    let lambda0 = clearing_price(instance, reports);
    decisions_at_price(instance, lambda0)
}

pub fn decisions_at_price(instance: &MarketInstance, lambda0: f64) -> EquilibriumOutcome {
    let n = instance.n_agents();
    let mut d = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut q_net = Vec::with_capacity(n);
    for agent in instance.agents() {
        let dn = agent.d_star - lambda0 / (2.0 * agent.a_tilde);
        let gn = (lambda0 - agent.b) / agent.a;
        d.push(dn);
        g.push(gn);
        // From the balance D = G + ΔG + Q, so the identity holds to rounding.
        q_net.push(dn - gn - agent.delta_g);
    }
    EquilibriumOutcome { lambda0, d, g, q_net, trade_cost: None }
}

/// Decisions plus trading costs under the instance's price regime.
pub fn market_outcome(instance: &MarketInstance, reports: &[f64]) -> Result<EquilibriumOutcome> {
    let mut outcome = equilibrium_decisions(instance, reports);
    outcome.trade_cost = Some(trade_costs(instance, &outcome)?);
    Ok(outcome)
}

/// `sgn(c_mn - c_nm)`: `+1` means the link `{n, m}` is saturated in the
/// direction `m → n`.
pub fn saturation_sign(c_mn: f64, c_nm: f64) -> i8 {
    if c_mn > c_nm {
        1
    } else if c_mn < c_nm {
        -1
    } else {
        0
    }
}

pub fn trade_cost_homogeneous(c: f64, q_net: f64) -> f64 {
    c * q_net
}

/// Per-agent saturation terms of the heterogeneous trading cost:
/// `flow[n] = Σ_m κ_nm sgn(c_mn - c_nm)` and
/// `paid[n] = Σ_k c_nk κ_nk sgn(c_kn - c_nk)`, over non-root neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedTrades {
    pub flow: Vec<f64>,
    pub paid: Vec<f64>,
}

pub fn saturated_trades(instance: &MarketInstance) -> Result<SaturatedTrades> {
    let topo = instance.topology();
    let prices = instance.prices();
    let n_agents = instance.n_agents();
    let mut flow = vec![0.0; n_agents];
    let mut paid = vec![0.0; n_agents];
    for n in 1..n_agents {
        for &(m, kappa) in topo.peers(n) {
            let (c_nm, c_mn) = (prices.price(n, m), prices.price(m, n));
            let sign = saturation_sign(c_mn, c_nm);
            if sign == 0 {
                return Err(Error::SymmetricPricePair { n: n.min(m), m: n.max(m) });
            }
            let s = f64::from(sign);
            flow[n] += kappa * s;
            paid[n] += c_nm * kappa * s;
        }
    }
    Ok(SaturatedTrades { flow, paid })
}

/// Heterogeneous trading costs. Every non-root link is saturated in the
/// direction of the higher price; the rest of each agent's net import goes
/// through node 0.
pub fn trade_cost_heterogeneous(instance: &MarketInstance, outcome: &EquilibriumOutcome) -> Result<Vec<f64>> {
    let sat = saturated_trades(instance)?;
    Ok(heterogeneous_costs(instance.prices(), &sat, &outcome.q_net))
}

pub(crate) fn heterogeneous_costs(prices: &PriceMode, sat: &SaturatedTrades, q_net: &[f64]) -> Vec<f64> {
    let n_agents = q_net.len();
    let mut cost = vec![0.0; n_agents];
    let mut root = 0.0;
    for n in 1..n_agents {
        let c_0n = prices.price(0, n);
        let residual = q_net[n] - sat.flow[n];
        cost[n] = c_0n * residual + sat.paid[n];
        root -= c_0n * residual;
    }
    if n_agents > 0 {
        cost[0] = root;
    }
    cost
}

pub fn trade_costs(instance: &MarketInstance, outcome: &EquilibriumOutcome) -> Result<Vec<f64>> {
    match instance.prices() {
        PriceMode::Homogeneous { c } => Ok(outcome.q_net.iter().map(|&q| trade_cost_homogeneous(*c, q)).collect()),
        PriceMode::Heterogeneous { .. } => trade_cost_heterogeneous(instance, outcome),
    }
}
