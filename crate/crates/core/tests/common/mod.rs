#![allow(dead_code)]

pub mod oracle;

use p2p_market::model::{Edge, RawInstance, RawTopology};
use p2p_market::{validate_instance, AgentParams, MarketInstance, PriceMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_agent<R: Rng>(rng: &mut R) -> AgentParams {
    // Wide bounds keep the truthful outcome interior.
    let d_max = rng.random_range(150.0..300.0);
    let g_max = rng.random_range(150.0..300.0);
    AgentParams {
        id: 0,
        a: rng.random_range(0.2..4.0),
        b: rng.random_range(0.0..10.0),
        d: rng.random_range(0.0..10.0),
        a_tilde: rng.random_range(0.1..3.0),
        b_tilde: rng.random_range(0.0..5.0),
        d_star: rng.random_range(0.0..30.0),
        delta_g: rng.random_range(0.0..10.0),
        g_min: -g_max,
        g_max,
        d_min: -d_max,
        d_max,
        omega_g: 1e-3,
        omega_d: 1e-3,
        alpha: rng.random_range(0.5..4.0),
        a_budget: rng.random_range(0.5..20.0),
        figure_bus: None,
    }
}

/// Root linked to everyone plus a chain through the other agents.
pub fn star_and_chain<R: Rng>(rng: &mut R, n_agents: usize) -> Vec<Edge> {
    let mut edges: Vec<Edge> = (1..n_agents).map(|m| Edge { n: 0, m, kappa: None }).collect();
    for m in 1..n_agents.saturating_sub(1) {
        edges.push(Edge { n: m, m: m + 1, kappa: Some(rng.random_range(0.5..5.0)) });
    }
    edges
}

pub fn random_raw<R: Rng>(rng: &mut R, n_agents: usize) -> RawInstance {
    let agents = (0..n_agents).map(|_| random_agent(rng)).collect();
    let edges = star_and_chain(rng, n_agents);
    RawInstance {
        agents,
        topology: RawTopology { edges, prices: PriceMode::Homogeneous { c: rng.random_range(0.0..3.0) } },
        p0: rng.random_range(0.0..10.0),
    }
}

pub fn random_instance<R: Rng>(rng: &mut R) -> MarketInstance {
    let n_agents = rng.random_range(2..=15);
    validate_instance(random_raw(rng, n_agents)).expect("generated instance is valid")
}

/// Random heterogeneous matrix: symmetric root prices, distinct prices on
/// every non-root pair.
pub fn random_price_matrix<R: Rng>(rng: &mut R, n_agents: usize) -> Vec<Vec<f64>> {
    let mut matrix = vec![vec![0.0; n_agents]; n_agents];
    for m in 1..n_agents {
        let c = rng.random_range(0.5..3.0);
        matrix[0][m] = c;
        matrix[m][0] = c;
        for k in (m + 1)..n_agents {
            matrix[m][k] = rng.random_range(0.5..3.0);
            matrix[k][m] = matrix[m][k] + rng.random_range(0.1..1.0);
        }
    }
    matrix
}

pub fn random_heterogeneous<R: Rng>(rng: &mut R) -> MarketInstance {
    let n_agents = rng.random_range(2..=10);
    let mut raw = random_raw(rng, n_agents);
    raw.topology.prices = PriceMode::Heterogeneous { matrix: random_price_matrix(rng, n_agents) };
    validate_instance(raw).expect("generated instance is valid")
}

/// All agents share `a` and `ã`, so every `Bₙ` is the same.
pub fn equal_share_instance<R: Rng>(rng: &mut R) -> MarketInstance {
    let n_agents = rng.random_range(2..=10);
    let mut raw = random_raw(rng, n_agents);
    let (a, a_tilde) = (rng.random_range(0.2..4.0), rng.random_range(0.1..3.0));
    for agent in &mut raw.agents {
        agent.a = a;
        agent.a_tilde = a_tilde;
    }
    validate_instance(raw).expect("generated instance is valid")
}

/// Reports within `spread` of the truth and nonnegative variances.
pub fn random_profile<R: Rng>(rng: &mut R, inst: &MarketInstance, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let y_hat = inst.true_values().iter().map(|y| y + rng.random_range(-spread..spread)).collect();
    let v = (0..inst.n_agents()).map(|_| rng.random_range(0.0..2.0)).collect();
    (y_hat, v)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
