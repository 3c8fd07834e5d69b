//! Cost oracles written from the per-agent cost definition, independent of the
//! closed forms in the library.

use num::{BigRational, One, ToPrimitive, Zero};
use p2p_market::{MarketInstance, PriceMode};

pub type Q = BigRational;

pub fn q(x: f64) -> Q {
    BigRational::from_float(x).expect("finite")
}

fn price(prices: &PriceMode, n: usize, m: usize) -> f64 {
    match prices {
        PriceMode::Homogeneous { c } => *c,
        PriceMode::Heterogeneous { matrix } => matrix[n][m],
    }
}

/// Directed trades on the non-root links: a peer link is used at capacity by
/// whichever side quotes the lower price as buyer.
fn link_trades(inst: &MarketInstance) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for e in inst.topology().edges() {
        if e.n == 0 || e.m == 0 {
            continue;
        }
        let kappa = e.kappa.expect("peer links carry a finite capacity in test instances");
        let (c_nm, c_mn) = (price(inst.prices(), e.n, e.m), price(inst.prices(), e.m, e.n));
        // n buys from m when its price on the link is the lower one.
        let q_nm = if c_nm < c_mn { kappa } else { -kappa };
        if !out.iter().any(|&(a, b, _)| (a, b) == (e.n, e.m) || (a, b) == (e.m, e.n)) {
            out.push((e.n, e.m, q_nm));
        }
    }
    out
}

/// Instance constants in exact arithmetic, computed once per instance.
pub struct ExactModel {
    two: Q,
    b_total: Q,
    offset: Q,
    truth_total: Q,
    p0_share: Q,
    a: Vec<Q>,
    b: Vec<Q>,
    d: Vec<Q>,
    a_tilde: Vec<Q>,
    b_tilde: Vec<Q>,
    d_star: Vec<Q>,
    delta_g: Vec<Q>,
    /// `Some((root price, flow through peers, paid to peers))` per agent under
    /// heterogeneous prices.
    links: Option<Vec<(Q, Q, Q)>>,
    c: Q,
}

impl ExactModel {
    pub fn new(inst: &MarketInstance) -> Self {
        let agents = inst.agents();
        let two = Q::from_integer(2.into());
        let collect = |f: fn(&p2p_market::AgentParams) -> f64| agents.iter().map(|a| q(f(a))).collect::<Vec<Q>>();
        let a = collect(|x| x.a);
        let a_tilde = collect(|x| x.a_tilde);
        let b = collect(|x| x.b);
        let b_total = a.iter().zip(&a_tilde).fold(Q::zero(), |acc, (a, at)| acc + Q::one() / a + Q::one() / (&two * at));
        let offset = b.iter().zip(&a).fold(Q::zero(), |acc, (b, a)| acc + b / a);
        let truth_total = inst.true_values().iter().fold(Q::zero(), |acc, y| acc + q(*y));
        let links = match inst.prices() {
            PriceMode::Homogeneous { .. } => None,
            PriceMode::Heterogeneous { .. } => {
                let mut via_peers = vec![0.0; agents.len()];
                let mut paid = vec![Q::zero(); agents.len()];
                for (n, m, q_nm) in link_trades(inst) {
                    via_peers[n] += q_nm;
                    via_peers[m] -= q_nm;
                    paid[n] += q(price(inst.prices(), n, m)) * q(q_nm);
                    paid[m] -= q(price(inst.prices(), m, n)) * q(q_nm);
                }
                Some(
                    (0..agents.len())
                        .map(|n| (q(price(inst.prices(), 0, n)), q(via_peers[n]), paid[n].clone()))
                        .collect(),
                )
            }
        };
        let c = match inst.prices() {
            PriceMode::Homogeneous { c } => q(*c),
            PriceMode::Heterogeneous { .. } => Q::zero(),
        };
        ExactModel {
            p0_share: q(inst.p0()) / Q::from_integer((agents.len() as i64).into()),
            d: collect(|x| x.d),
            b_tilde: collect(|x| x.b_tilde),
            d_star: collect(|x| x.d_star),
            delta_g: collect(|x| x.delta_g),
            two,
            b_total,
            offset,
            truth_total,
            a,
            b,
            a_tilde,
            links,
            c,
        }
    }

    fn decisions(&self, lambda: &Q, m: usize) -> (Q, Q, Q) {
        let gen = (lambda - &self.b[m]) / &self.a[m];
        let dem = &self.d_star[m] - lambda / (&self.two * &self.a_tilde[m]);
        let q_net = &dem - &gen - &self.delta_g[m];
        (gen, dem, q_net)
    }

    /// Realized cost of agent `n` when the market clears on reports summing
    /// to `cleared` and the operator settles reports summing to `settled`.
    pub fn realized_cost(&self, n: usize, cleared: &Q, settled: &Q) -> Q {
        let lambda = (cleared + &self.offset) / &self.b_total;
        let (gen, dem, q_net) = self.decisions(&lambda, n);
        let trade = match &self.links {
            None => &self.c * &q_net,
            Some(links) if n == 0 => (1..links.len()).fold(Q::zero(), |acc, m| {
                let (c0, via, _) = &links[m];
                acc - c0 * (self.decisions(&lambda, m).2 - via)
            }),
            Some(links) => {
                let (c0, via, paid) = &links[n];
                c0 * (&q_net - via) + paid
            }
        };
        let gap = &dem - &self.d_star[n];
        let half = Q::one() / &self.two;
        half * &self.a[n] * &gen * &gen + &self.b[n] * &gen + &self.d[n] + &self.a_tilde[n] * &gap * &gap
            - &self.b_tilde[n]
            + trade
            + &self.p0_share * (&self.truth_total - settled)
    }

    /// `E[Πₙ]` over Gaussian report noise. Cost is quadratic in the clearing
    /// price, which is affine in the noise, so the expectation is the cost at
    /// the mean plus half the curvature `d²Πₙ/dλ² = 1/aₙ + 1/(2ãₙ)` times the
    /// price variance `ΣV/B²`.
    pub fn expected_cost(&self, n: usize, y_hat: &[Q], v: &[Q]) -> Q {
        let total = y_hat.iter().fold(Q::zero(), |acc, x| acc + x);
        let v_total = v.iter().fold(Q::zero(), |acc, x| acc + x);
        let curvature = Q::one() / &self.a[n] + Q::one() / (&self.two * &self.a_tilde[n]);
        self.realized_cost(n, &total, &total) + curvature * v_total / (&self.two * &self.b_total * &self.b_total)
    }
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().expect("representable")
}

/// Floating-point twin of [`ExactModel::realized_cost`] for Monte-Carlo sampling.
pub fn realized_cost(inst: &MarketInstance, n: usize, cleared: &[f64], settled: &[f64]) -> f64 {
    let agents = inst.agents();
    let b_total: f64 = agents.iter().map(|a| 1.0 / a.a + 1.0 / (2.0 * a.a_tilde)).sum();
    let offset: f64 = agents.iter().map(|a| a.b / a.a).sum();
    let lambda = (cleared.iter().sum::<f64>() + offset) / b_total;
    let gen: Vec<f64> = agents.iter().map(|a| (lambda - a.b) / a.a).collect();
    let dem: Vec<f64> = agents.iter().map(|a| a.d_star - lambda / (2.0 * a.a_tilde)).collect();
    let q_net: Vec<f64> = (0..agents.len()).map(|m| dem[m] - gen[m] - agents[m].delta_g).collect();

    let trade = match inst.prices() {
        PriceMode::Homogeneous { c } => c * q_net[n],
        PriceMode::Heterogeneous { .. } => {
            let mut via_peers = vec![0.0; agents.len()];
            let mut paid = vec![0.0; agents.len()];
            for (i, j, q_ij) in link_trades(inst) {
                via_peers[i] += q_ij;
                via_peers[j] -= q_ij;
                paid[i] += price(inst.prices(), i, j) * q_ij;
                paid[j] -= price(inst.prices(), j, i) * q_ij;
            }
            let to_root = |m: usize| price(inst.prices(), 0, m) * (q_net[m] - via_peers[m]);
            if n == 0 {
                -(1..agents.len()).map(to_root).sum::<f64>()
            } else {
                to_root(n) + paid[n]
            }
        }
    };
    let shortfall: f64 = inst.true_values().iter().zip(settled).map(|(y, s)| y - s).sum();
    let a = &agents[n];
    let gap = dem[n] - a.d_star;
    0.5 * a.a * gen[n] * gen[n] + a.b * gen[n] + a.d + a.a_tilde * gap * gap - a.b_tilde
        + trade
        + inst.p0() / agents.len() as f64 * shortfall
}
