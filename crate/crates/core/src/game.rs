//! Analytic layer of the reporting game: expected costs, the pseudo-gradient,
//! stationarity residuals, the monotonicity certificate and potentials.
//!
//! Everything here is a closed form in the aggregate `S = Σŷ + Σb/a`. Each
//! agent's expected trading cost is affine in `S`, written `tₙ + rₙ S`, which
//! covers both price regimes with one set of formulas.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::equilibrium::{saturated_trades, sensitivity, Sensitivity};
use crate::model::{MarketInstance, PriceMode};
use crate::numeric::exact_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorVariant {
    /// V-component `VₙBₙ/B²`, the operator used in the monotonicity analysis.
    PaperOperator,
    /// V-component `Bₙ/(2B²)`, the actual partial derivative of the expected cost.
    CostGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialVariant {
    /// Term-by-term potential with `H = B₀/B` as originally written down.
    AppendixFormula,
    /// Potential whose gradient equals the cost gradient when all `Bₙ/B = H`.
    GradientConsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOperatorPoint {
    pub grad_y: Vec<f64>,
    pub grad_v: Vec<f64>,
}

/// Multipliers of the individual constraints, one entry per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct KktDuals {
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub nu_lo: Vec<f64>,
    pub nu_hi: Vec<f64>,
    pub gamma_lo: Vec<f64>,
    pub gamma_hi: Vec<f64>,
    pub beta_lo: Vec<f64>,
    pub beta_hi: Vec<f64>,
}

impl KktDuals {
    pub fn zeros(n: usize) -> Self {
        KktDuals {
            mu_lo: vec![0.0; n],
            mu_hi: vec![0.0; n],
            nu_lo: vec![0.0; n],
            nu_hi: vec![0.0; n],
            gamma_lo: vec![0.0; n],
            gamma_hi: vec![0.0; n],
            beta_lo: vec![0.0; n],
            beta_hi: vec![0.0; n],
        }
    }

    pub fn clear(&mut self) {
        for v in self.fields_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub(crate) fn fields_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.mu_lo,
            &mut self.mu_hi,
            &mut self.nu_lo,
            &mut self.nu_hi,
            &mut self.gamma_lo,
            &mut self.gamma_hi,
            &mut self.beta_lo,
            &mut self.beta_hi,
        ]
    }

    pub fn is_nonnegative(&self) -> bool {
        [
            &self.mu_lo,
            &self.mu_hi,
            &self.nu_lo,
            &self.nu_hi,
            &self.gamma_lo,
            &self.gamma_hi,
            &self.beta_lo,
            &self.beta_hi,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x >= 0.0))
    }
}

/// Report-independent data of the expected-cost closed form.
#[derive(Debug, Clone)]
pub struct GameContext {
    pub sens: Sensitivity,
    pub y: Vec<f64>,
    /// `p⁰ / N`
    pub mo_share: f64,
    /// Constant part of each agent's expected trading cost.
    pub trade_const: Vec<f64>,
    /// Slope of each agent's expected trading cost in `S`.
    pub trade_slope: Vec<f64>,
    /// `-b²/(2a) + d - b̃`
    pub own_const: Vec<f64>,
}

impl GameContext {
    pub fn new(instance: &MarketInstance) -> Self {
        let sens = sensitivity(instance);
        let n_agents = instance.n_agents();
        let y = instance.true_values();
        let mut trade_const = vec![0.0; n_agents];
        let mut trade_slope = vec![0.0; n_agents];
        // E[Qₙ] = yₙ + bₙ/aₙ - Bₙ S / B
        let q_const: Vec<f64> = instance.agents().iter().map(|a| a.private_value() + a.cost_ratio()).collect();
        match instance.prices() {
            PriceMode::Homogeneous { c } => {
                for n in 0..n_agents {
                    trade_const[n] = c * q_const[n];
                    trade_slope[n] = -c * sens.share(n);
                }
            }
            prices @ PriceMode::Heterogeneous { .. } => {
                let sat = saturated_trades(instance).expect("validated heterogeneous prices are strictly asymmetric");
                for n in 1..n_agents {
                    let c_0n = prices.price(0, n);
                    trade_const[n] = c_0n * (q_const[n] - sat.flow[n]) + sat.paid[n];
                    trade_slope[n] = -c_0n * sens.share(n);
                    trade_const[0] -= c_0n * (q_const[n] - sat.flow[n]);
                    trade_slope[0] += c_0n * sens.share(n);
                }
            }
        }
        let own_const = instance.agents().iter().map(|a| -a.b * a.b / (2.0 * a.a) + a.d - a.b_tilde).collect();
        GameContext {
            sens,
            y,
            mo_share: instance.p0() / n_agents as f64,
            trade_const,
            trade_slope,
            own_const,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.y.len()
    }

    /// `S = Σŷ + Σb/a`, summed exactly.
    pub fn aggregate(&self, y_hat: &[f64]) -> f64 {
        exact_sum(y_hat) + self.sens.offset
    }

    /// `Σ(y - ŷ)`, the total under-report settled by the market operator.
    pub fn shortfall(&self, y_hat: &[f64]) -> f64 {
        let terms: Vec<f64> = self.y.iter().copied().chain(y_hat.iter().map(|v| -v)).collect();
        exact_sum(&terms)
    }

    pub fn expected_cost(&self, n: usize, y_hat: &[f64], v: &[f64]) -> f64 {
        let s = self.aggregate(y_hat);
        let b2 = self.sens.b_total * self.sens.b_total;
        self.sens.b_n[n] / (2.0 * b2) * (s * s + exact_sum(v))
            + self.trade_const[n]
            + self.trade_slope[n] * s
            + self.mo_share * self.shortfall(y_hat)
            + self.own_const[n]
    }

    /// `∂E[Πₙ]/∂ŷₙ` at aggregate `s`.
    pub fn grad_y_at(&self, n: usize, s: f64) -> f64 {
        let b = self.sens.b_total;
        self.sens.b_n[n] / (b * b) * s + self.trade_slope[n] - self.mo_share
    }

    pub fn pseudo_gradient(&self, y_hat: &[f64], v: &[f64], variant: OperatorVariant) -> GameOperatorPoint {
        let s = self.aggregate(y_hat);
        let b2 = self.sens.b_total * self.sens.b_total;
        let grad_y = (0..self.n_agents()).map(|n| self.grad_y_at(n, s)).collect();
        let grad_v = match variant {
            OperatorVariant::PaperOperator => (0..self.n_agents()).map(|n| v[n] * self.sens.b_n[n] / b2).collect(),
            OperatorVariant::CostGradient => self.sens.b_n.iter().map(|bn| bn / (2.0 * b2)).collect(),
        };
        GameOperatorPoint { grad_y, grad_v }
    }
}

/// Market-operator settlement per agent: `(p⁰/N) Σ(y - ŷ)`, a reimbursement
/// when negative.
pub fn mo_penalty(instance: &MarketInstance, y: &[f64], y_hat: &[f64]) -> Vec<f64> {
    let terms: Vec<f64> = y.iter().copied().chain(y_hat.iter().map(|v| -v)).collect();
    let value = instance.p0() / instance.n_agents() as f64 * exact_sum(&terms);
    vec![value; instance.n_agents()]
}

pub fn expected_cost(instance: &MarketInstance, n: usize, y_hat: &[f64], v: &[f64]) -> f64 {
    GameContext::new(instance).expected_cost(n, y_hat, v)
}

pub fn expected_costs(instance: &MarketInstance, y_hat: &[f64], v: &[f64]) -> Vec<f64> {
    let ctx = GameContext::new(instance);
    (0..instance.n_agents()).map(|n| ctx.expected_cost(n, y_hat, v)).collect()
}

pub fn pseudo_gradient(instance: &MarketInstance, y_hat: &[f64], v: &[f64], variant: OperatorVariant) -> GameOperatorPoint {
    GameContext::new(instance).pseudo_gradient(y_hat, v, variant)
}

/// Stationarity residual in `ŷₙ` of every agent's problem given multipliers.
pub fn kkt_residual(instance: &MarketInstance, y_hat: &[f64], duals: &KktDuals) -> Vec<f64> {
    let ctx = GameContext::new(instance);
    let s = ctx.aggregate(y_hat);
    let b = ctx.sens.b_total;
    instance
        .agents()
        .iter()
        .enumerate()
        .map(|(n, agent)| {
            ctx.grad_y_at(n, s)
                + (duals.mu_hi[n] - duals.mu_lo[n]) / (agent.a * b)
                + (duals.nu_lo[n] - duals.nu_hi[n]) / (2.0 * agent.a_tilde * b)
                + (duals.gamma_hi[n] - duals.gamma_lo[n])
                + (duals.beta_hi[n] - duals.beta_lo[n])
        })
        .collect()
}

/// Duals carrying only the privacy price, on the side of each agent's deviation.
pub fn privacy_price_duals(instance: &MarketInstance, y_hat: &[f64]) -> KktDuals {
    let sens = sensitivity(instance);
    let y = instance.true_values();
    let mut duals = KktDuals::zeros(instance.n_agents());
    for n in 0..instance.n_agents() {
        let beta = crate::privacy::privacy_price(&sens, n, y[n], y_hat[n]).beta_sum;
        if y_hat[n] > y[n] {
            duals.beta_hi[n] = beta;
        } else {
            duals.beta_lo[n] = beta;
        }
    }
    duals
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub min_eigenvalue: f64,
    pub min_quadratic_form: f64,
    /// Directions where the closed-form lower bound exceeded the quadratic form.
    pub lower_bound_violations: usize,
    /// Largest `bound - form` seen; `≤ 0` when the bound always held.
    pub max_lower_bound_excess: f64,
    pub n_samples: usize,
}

/// Jacobian of [`OperatorVariant::PaperOperator`] over `z = (ŷ₀…ŷ_{N-1}, V₀…V_{N-1})`.
/// It does not depend on the point: `∂F_yᵢ/∂ŷⱼ = Bᵢ/B²`, `∂F_Vᵢ/∂Vᵢ = Bᵢ/B²`.
pub fn paper_operator_jacobian(instance: &MarketInstance) -> DMatrix<f64> {
    let sens = sensitivity(instance);
    let n = instance.n_agents();
    let b2 = sens.b_total * sens.b_total;
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let w = sens.b_n[i] / b2;
        for j in 0..n {
            jac[(i, j)] = w;
        }
        jac[(n + i, n + i)] = w;
    }
    jac
}

pub fn monotonicity_certificate<R: Rng + ?Sized>(instance: &MarketInstance, n_samples: usize, rng: &mut R) -> MonotonicityReport {
    let n = instance.n_agents();
    let sens = sensitivity(instance);
    let b2 = sens.b_total * sens.b_total;
    let jac = paper_operator_jacobian(instance);
    let sym = (&jac + jac.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym.clone()).eigenvalues.min();

    let mut min_quadratic_form = f64::INFINITY;
    let mut lower_bound_violations = 0;
    let mut max_lower_bound_excess = f64::NEG_INFINITY;
    let sqrt_b: Vec<f64> = sens.b_n.iter().map(|b| b.sqrt()).collect();
    for _ in 0..n_samples.max(1) {
        let mut z: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        z.iter_mut().for_each(|x| *x /= norm);
        let zv = nalgebra::DVector::from_column_slice(&z);
        let form = zv.dot(&(&sym * &zv));
        min_quadratic_form = min_quadratic_form.min(form);

        let weighted: f64 = (0..n).map(|i| sqrt_b[i] * z[i]).sum();
        let bound = weighted * weighted / b2 + (0..n).map(|i| sens.b_n[i] * z[n + i] * z[n + i]).sum::<f64>() / b2;
        let excess = bound - form;
        max_lower_bound_excess = max_lower_bound_excess.max(excess);
        if excess > 1e-12 * bound.abs().max(1.0 / b2) {
            lower_bound_violations += 1;
        }
    }
    MonotonicityReport {
        min_eigenvalue,
        min_quadratic_form,
        lower_bound_violations,
        max_lower_bound_excess,
        n_samples: n_samples.max(1),
    }
}

/// `max |Bₙ/B - B₀/B| < 10⁻⁹`: the regime where the game has an exact potential.
pub fn has_equal_shares(instance: &MarketInstance) -> bool {
    let sens = sensitivity(instance);
    let h = sens.share(0);
    (0..instance.n_agents()).all(|n| (sens.share(n) - h).abs() < 1e-9)
}

pub fn potential_value(instance: &MarketInstance, y_hat: &[f64], v: &[f64], variant: PotentialVariant) -> f64 {
    let ctx = GameContext::new(instance);
    let b = ctx.sens.b_total;
    let h = ctx.sens.share(0);
    let sum_hat = exact_sum(y_hat);
    match variant {
        PotentialVariant::GradientConsistent => {
            let s = ctx.aggregate(y_hat);
            let linear: Vec<f64> = (0..ctx.n_agents()).map(|n| ctx.trade_slope[n] * y_hat[n]).collect();
            h / (2.0 * b) * s * s + exact_sum(&linear) - ctx.mo_share * sum_hat + h / (2.0 * b) * exact_sum(v)
        }
        PotentialVariant::AppendixFormula => {
            let k = ctx.sens.offset;
            let terms: Vec<f64> = (0..ctx.n_agents())
                .map(|i| {
                    // Per-agent differentiation price; equals c in the homogeneous case.
                    let c_i = -ctx.trade_slope[i] / ctx.sens.share(i);
                    h * y_hat[i] / b * (0.5 * sum_hat + k) - ctx.mo_share * y_hat[i] - c_i * h * y_hat[i] / b
                        + h / b * v[i]
                })
                .collect();
            exact_sum(&terms)
        }
    }
}

/// Expected cost at the truthful profile minus expected cost at `(ŷ, V)`;
/// positive when the agent gains from strategic reporting.
pub fn utility_gap(instance: &MarketInstance, n: usize, y_hat: &[f64], v: &[f64]) -> f64 {
    utility_gaps(instance, y_hat, v)[n]
}

pub fn utility_gaps(instance: &MarketInstance, y_hat: &[f64], v: &[f64]) -> Vec<f64> {
    let ctx = GameContext::new(instance);
    let zeros = vec![0.0; ctx.n_agents()];
    (0..ctx.n_agents())
        .map(|n| ctx.expected_cost(n, &ctx.y, &zeros) - ctx.expected_cost(n, y_hat, v))
        .collect()
}

pub fn social_cost(instance: &MarketInstance, y_hat: &[f64], v: &[f64]) -> f64 {
    let costs = expected_costs(instance, y_hat, v);
    exact_sum(&costs)
}

/// Largest gap between a unilateral cost difference and the corresponding
/// potential difference over random deviations.
pub fn potential_identity_error<R: Rng + ?Sized>(inst: &MarketInstance, trials: usize, rng: &mut R) -> f64 {
    let n_agents = inst.n_agents();
    let y = inst.true_values();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let base: Vec<f64> = y.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
        let var: Vec<f64> = (0..n_agents).map(|_| rng.random_range(0.0..2.0)).collect();
        let n = rng.random_range(0..n_agents);
        let mut x = base.clone();
        let mut xv = var.clone();
        x[n] += rng.random_range(-3.0..3.0);
        xv[n] = rng.random_range(0.0..2.0);
        let dc = expected_cost(inst, n, &x, &xv) - expected_cost(inst, n, &base, &var);
        let dp = potential_value(inst, &x, &xv, PotentialVariant::GradientConsistent)
            - potential_value(inst, &base, &var, PotentialVariant::GradientConsistent);
        worst = worst.max((dc - dp).abs());
    }
    worst
}
