//! Equilibrium computation by the adapt-then-penalize gradient scheme.
//!
//! Every agent simultaneously takes a gradient step on its own expected cost
//! (the *adapt* step, giving `ψ`) and then a gradient step on the quadratic
//! penalty of its constraints evaluated at `ψ` (the *penalize* step):
//!
//! ```text
//! ψᵏ = ŷᵏ⁻¹ - μ ∇Πₙ(ŷᵏ⁻¹)
//! ŷᵏ = ψᵏ  - μR ∇θₙ(ψᵏ)
//! ```
//!
//! At a fixed point `∇Πₙ + R∇θₙ(ψ) = 0`, so the penalty forces at `ψ` are the
//! constraint multipliers; they are read back into [`KktDuals`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::game::{GameContext, KktDuals};
use crate::model::{MarketInstance, ReportProfile};
use crate::numeric::{exact_sum, sup_norm};
use crate::privacy::optimal_variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Each agent's gradient is taken at freshly sampled reports of the others.
    Stochastic,
    /// Closed-form expected-cost gradient.
    Deterministic,
}

/// How constraint functions `g ≤ 0` enter the penalty `Σ ½ max(g, 0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintScaling {
    /// `g` exactly as the constraint is written: `(ŷ-y)² - α²`, `(ŷ-y)² - 2VA`,
    /// `G - Ḡ'`, … Its curvature grows with `α²` and `A`, which makes the
    /// penalize step unstable for `μR` of order one.
    Raw,
    /// Each `g` rescaled to a fixed curvature budget so that the penalize
    /// step is a contraction whenever `μR < 2.5`: the deviation radius as
    /// `|ŷ-y| - α`, and the price-coupled bounds scaled by `aB`, `2ãB`.
    Normalized,
}

const KAPPA_RADIUS: f64 = 0.45;
const KAPPA_BUDGET: f64 = 0.2;
const KAPPA_BOUNDS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub step_mu: f64,
    pub penalty_r: f64,
    pub max_iters: usize,
    pub tol_step: f64,
    pub mode: SolverMode,
    /// Tie `V` to `(ŷ-y)²/(2A)` instead of iterating on it.
    pub eliminate_variance: bool,
    pub seed: u64,
    /// Noise samples averaged per stochastic gradient.
    pub batch: usize,
    /// Iterate sup-norm beyond which the run is declared divergent.
    pub divergence_guard: f64,
    /// Keep every `trace_stride`-th iteration in the trace (plus the last).
    pub trace_stride: usize,
    /// Consecutive iterations the step must stay below `tol_step` before
    /// stopping; a single noisy step can dip below it by chance.
    pub stop_patience: usize,
    pub scaling: ConstraintScaling,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step_mu: 0.003,
            penalty_r: 700.0,
            max_iters: 5_000_000,
            tol_step: 1e-6,
            mode: SolverMode::Deterministic,
            eliminate_variance: true,
            seed: 0,
            batch: 1,
            divergence_guard: 1e9,
            trace_stride: 100,
            stop_patience: 100,
            scaling: ConstraintScaling::Normalized,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidOptions(msg.to_string()));
        if !(self.step_mu > 0.0 && self.step_mu.is_finite()) {
            return fail("step size must be positive");
        }
        if !(self.penalty_r >= 0.0 && self.penalty_r.is_finite()) {
            return fail("penalty weight must be non-negative");
        }
        if self.max_iters < 1 {
            return fail("max_iters must be at least 1");
        }
        if !(self.tol_step > 0.0) {
            return fail("step tolerance must be positive");
        }
        if self.batch < 1 {
            return fail("batch must be at least 1");
        }
        if !(self.divergence_guard > 0.0) {
            return fail("divergence guard must be positive");
        }
        if self.trace_stride < 1 {
            return fail("trace stride must be at least 1");
        }
        if self.stop_patience < 1 {
            return fail("stop patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Sup-norm of the change in `ŷ`.
    pub step: f64,
    /// Sup-norm of the penalty gradient at `ψ`.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub y_hat: Vec<f64>,
    pub variance: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Multipliers recovered from the penalty forces at the final point.
    pub duals: KktDuals,
    pub kkt_residual_norm: f64,
    /// Largest constraint violation, in the units of each constraint.
    pub constraint_violation: f64,
}

impl SolverResult {
    pub fn profile(&self) -> ReportProfile {
        ReportProfile { y_hat: self.y_hat.clone(), variance: self.variance.clone() }
    }
}

/// `∂θₙ/∂ŷₙ` and `∂θₙ/∂Vₙ` for each agent, plus the multiplier each active
/// constraint corresponds to (per unit of `R`).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGradient {
    pub y_hat: Vec<f64>,
    pub variance: Vec<f64>,
    pub duals: KktDuals,
}

/// Penalty gradient with the constraints exactly as written.
pub fn penalty_gradient(instance: &MarketInstance, y_hat: &[f64], v: &[f64]) -> PenaltyGradient {
    let ctx = GameContext::new(instance);
    penalty_gradient_scaled(instance, &ctx, y_hat, v, ConstraintScaling::Raw)
}

pub fn penalty_gradient_scaled(
    instance: &MarketInstance,
    ctx: &GameContext,
    y_hat: &[f64],
    v: &[f64],
    scaling: ConstraintScaling,
) -> PenaltyGradient {
    let n_agents = instance.n_agents();
    let mut out = PenaltyGradient {
        y_hat: vec![0.0; n_agents],
        variance: vec![0.0; n_agents],
        duals: KktDuals::zeros(n_agents),
    };
    penalty_gradient_into(&mut out, instance, ctx, y_hat, v, scaling);
    out
}

fn penalty_gradient_into(
    out: &mut PenaltyGradient,
    instance: &MarketInstance,
    ctx: &GameContext,
    y_hat: &[f64],
    v: &[f64],
    scaling: ConstraintScaling,
) {
    let n_agents = instance.n_agents();
    let b = ctx.sens.b_total;
    let lambda0 = ctx.sens.price(y_hat);
    out.duals.clear();
    let bound_share = (KAPPA_BOUNDS / n_agents as f64).sqrt();

    for (n, agent) in instance.agents().iter().enumerate() {
        let mut gy = 0.0;
        let mut gv = 0.0;
        let d = &mut out.duals;

        // Generation bounds on E[G] = (λ₀ - b)/a, with ∂G/∂ŷ = 1/(aB).
        let g = (lambda0 - agent.b) / agent.a;
        let (g_lo, g_hi) = agent.g_bounds();
        let s2 = match scaling {
            ConstraintScaling::Raw => 1.0,
            ConstraintScaling::Normalized => (agent.a * b * bound_share).powi(2),
        };
        if g > g_hi {
            d.mu_hi[n] = s2 * (g - g_hi);
            gy += d.mu_hi[n] / (agent.a * b);
        }
        if g < g_lo {
            d.mu_lo[n] = s2 * (g_lo - g);
            gy -= d.mu_lo[n] / (agent.a * b);
        }

        // Demand bounds on E[D] = D* - λ₀/(2ã), with ∂D/∂ŷ = -1/(2ãB).
        let dem = agent.d_star - lambda0 / (2.0 * agent.a_tilde);
        let (d_lo, d_hi) = agent.d_bounds();
        let s2 = match scaling {
            ConstraintScaling::Raw => 1.0,
            ConstraintScaling::Normalized => (2.0 * agent.a_tilde * b * bound_share).powi(2),
        };
        if dem > d_hi {
            d.nu_hi[n] = s2 * (dem - d_hi);
            gy -= d.nu_hi[n] / (2.0 * agent.a_tilde * b);
        }
        if dem < d_lo {
            d.nu_lo[n] = s2 * (d_lo - dem);
            gy += d.nu_lo[n] / (2.0 * agent.a_tilde * b);
        }

        // Deviation radius.
        let dev = y_hat[n] - ctx.y[n];
        let radius = match scaling {
            ConstraintScaling::Raw => {
                let g = dev * dev - agent.alpha * agent.alpha;
                (g > 0.0).then(|| g * 2.0 * dev.abs())
            }
            ConstraintScaling::Normalized => {
                let g = dev.abs() - agent.alpha;
                (g > 0.0).then(|| KAPPA_RADIUS * g)
            }
        };
        if let Some(force) = radius {
            if dev > 0.0 {
                d.gamma_hi[n] = force;
                gy += force;
            } else {
                d.gamma_lo[n] = force;
                gy -= force;
            }
        }

        // Privacy budget (ŷ-y)² ≤ 2VA.
        let g = dev * dev - 2.0 * v[n] * agent.a_budget;
        if g > 0.0 {
            let s2 = match scaling {
                ConstraintScaling::Raw => 1.0,
                ConstraintScaling::Normalized => {
                    KAPPA_BUDGET / (4.0 * (agent.alpha * agent.alpha + agent.a_budget * agent.a_budget))
                }
            };
            let force = s2 * g * 2.0 * dev;
            if dev > 0.0 {
                d.beta_hi[n] = force;
            } else {
                d.beta_lo[n] = -force;
            }
            gy += force;
            gv -= s2 * g * 2.0 * agent.a_budget;
        }

        out.y_hat[n] = gy;
        out.variance[n] = gv;
    }
}

/// Largest violation of the generation, demand, radius and privacy
/// constraints at `(ŷ, V)`; zero when feasible.
pub fn constraint_violation(instance: &MarketInstance, y_hat: &[f64], v: &[f64]) -> f64 {
    let ctx = GameContext::new(instance);
    let lambda0 = ctx.sens.price(y_hat);
    let mut worst: f64 = 0.0;
    for (n, agent) in instance.agents().iter().enumerate() {
        let g = (lambda0 - agent.b) / agent.a;
        let dem = agent.d_star - lambda0 / (2.0 * agent.a_tilde);
        let (g_lo, g_hi) = agent.g_bounds();
        let (d_lo, d_hi) = agent.d_bounds();
        let dev = y_hat[n] - ctx.y[n];
        worst = worst
            .max(g - g_hi)
            .max(g_lo - g)
            .max(dem - d_hi)
            .max(d_lo - dem)
            .max(dev.abs() - agent.alpha)
            .max(optimal_variance(ctx.y[n], y_hat[n], agent.a_budget) - v[n]);
    }
    worst
}

fn scale_duals(d: &mut KktDuals, r: f64) {
    for v in d.fields_mut() {
        v.iter_mut().for_each(|x| *x *= r);
    }
}

struct Iterate {
    y_hat: Vec<f64>,
    v: Vec<f64>,
}

/// Expected-cost gradient of every agent, including `∂E/∂V · dV/dŷ` when
/// the variance is tied to the report.
fn cost_gradient(
    grad: &mut [f64],
    instance: &MarketInstance,
    ctx: &GameContext,
    it: &Iterate,
    opts: &SolverOptions,
    rng: &mut ChaCha8Rng,
) {
    let s = ctx.aggregate(&it.y_hat);
    let b2 = ctx.sens.b_total * ctx.sens.b_total;
    let v_total = exact_sum(&it.v);
    for (n, out) in grad.iter_mut().enumerate() {
        *out = {
            let s_n = match opts.mode {
                SolverMode::Deterministic => s,
                SolverMode::Stochastic => {
                    // The others' noise enters only through its sum, a
                    // zero-mean Gaussian with variance Σ_{m≠n} Vₘ.
                    let others = (v_total - it.v[n]).max(0.0);
                    let z: f64 = StandardNormal.sample(rng);
                    s + (others / opts.batch as f64).sqrt() * z
                }
            };
            let mut grad = ctx.grad_y_at(n, s_n);
            if opts.eliminate_variance {
                let agent = instance.agent(n);
                grad += ctx.sens.b_n[n] / (2.0 * b2) * (it.y_hat[n] - ctx.y[n]) / agent.a_budget;
            }
            grad
        };
    }
}

fn tied_variance_into(out: &mut [f64], instance: &MarketInstance, ctx: &GameContext, y_hat: &[f64]) {
    for (n, a) in instance.agents().iter().enumerate() {
        out[n] = optimal_variance(ctx.y[n], y_hat[n], a.a_budget);
    }
}

fn tied_variance(instance: &MarketInstance, ctx: &GameContext, y_hat: &[f64]) -> Vec<f64> {
    instance
        .agents()
        .iter()
        .enumerate()
        .map(|(n, a)| optimal_variance(ctx.y[n], y_hat[n], a.a_budget))
        .collect()
}

/// Duals and stationarity residual at `it`, from one deterministic
/// adapt-then-penalize pass.
fn certify(
    instance: &MarketInstance,
    ctx: &GameContext,
    it: &Iterate,
    opts: &SolverOptions,
) -> (KktDuals, f64) {
    let det = SolverOptions { mode: SolverMode::Deterministic, ..opts.clone() };
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut grad = vec![0.0; it.y_hat.len()];
    cost_gradient(&mut grad, instance, ctx, it, &det, &mut unused);
    let psi: Vec<f64> = it.y_hat.iter().zip(&grad).map(|(y, g)| y - opts.step_mu * g).collect();
    let psi_v = if opts.eliminate_variance { tied_variance(instance, ctx, &psi) } else { it.v.clone() };
    let mut duals = penalty_gradient_scaled(instance, ctx, &psi, &psi_v, opts.scaling).duals;
    scale_duals(&mut duals, opts.penalty_r);
    if opts.eliminate_variance {
        // With V tied to ŷ the budget is always active; its multiplier is the
        // one balancing the V-stationarity condition, Bₙ/(4AₙB²) per unit of
        // ∂g/∂ŷ = 2(ŷ - y).
        let b2 = ctx.sens.b_total * ctx.sens.b_total;
        for (n, agent) in instance.agents().iter().enumerate() {
            let dev = it.y_hat[n] - ctx.y[n];
            let beta = ctx.sens.b_n[n] * dev / (2.0 * agent.a_budget * b2);
            if dev > 0.0 {
                duals.beta_hi[n] = beta;
                duals.beta_lo[n] = 0.0;
            } else {
                duals.beta_lo[n] = -beta;
                duals.beta_hi[n] = 0.0;
            }
        }
    }
    let residual = crate::game::kkt_residual(instance, &it.y_hat, &duals);
    (duals, sup_norm(&residual))
}

/// Variational equilibrium of the reporting game.
pub fn solve_ve_datp(instance: &MarketInstance, opts: &SolverOptions) -> Result<SolverResult> {
    opts.validate()?;
    let ctx = GameContext::new(instance);
    let n_agents = instance.n_agents();
    let b2 = ctx.sens.b_total * ctx.sens.b_total;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut it = Iterate { y_hat: ctx.y.clone(), v: vec![0.0; n_agents] };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut calm = 0;
    let mut iterations = 0;
    let mu = opts.step_mu;
    let mu_r = opts.step_mu * opts.penalty_r;

    let mut grad = vec![0.0; n_agents];
    let mut psi = vec![0.0; n_agents];
    let mut psi_v = vec![0.0; n_agents];
    let mut next = Iterate { y_hat: vec![0.0; n_agents], v: vec![0.0; n_agents] };
    let mut pen = PenaltyGradient {
        y_hat: vec![0.0; n_agents],
        variance: vec![0.0; n_agents],
        duals: KktDuals::zeros(n_agents),
    };

    for k in 1..=opts.max_iters {
        iterations = k;
        cost_gradient(&mut grad, instance, &ctx, &it, opts, &mut rng);
        for n in 0..n_agents {
            psi[n] = it.y_hat[n] - mu * grad[n];
        }
        if opts.eliminate_variance {
            tied_variance_into(&mut psi_v, instance, &ctx, &psi);
        } else {
            for n in 0..n_agents {
                psi_v[n] = it.v[n] - mu * ctx.sens.b_n[n] / (2.0 * b2);
            }
        }
        penalty_gradient_into(&mut pen, instance, &ctx, &psi, &psi_v, opts.scaling);
        for n in 0..n_agents {
            next.y_hat[n] = psi[n] - mu_r * pen.y_hat[n];
        }
        if opts.eliminate_variance {
            tied_variance_into(&mut next.v, instance, &ctx, &next.y_hat);
        } else {
            for n in 0..n_agents {
                next.v[n] = (psi_v[n] - mu_r * pen.variance[n]).max(0.0);
            }
        }

        let step = next.y_hat.iter().zip(&it.y_hat).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let norm = sup_norm(&next.y_hat).max(sup_norm(&next.v));
        if !(norm <= opts.divergence_guard) {
            return Err(Error::Diverged { iteration: k, norm });
        }
        std::mem::swap(&mut it, &mut next);
        calm = if step < opts.tol_step { calm + 1 } else { 0 };
        converged = calm >= opts.stop_patience;
        if k % opts.trace_stride == 0 || converged || k == opts.max_iters {
            trace.push(TraceEntry { iteration: k, step, penalty: sup_norm(&pen.y_hat) });
        }
        if converged {
            break;
        }
    }

    let (duals, kkt_residual_norm) = certify(instance, &ctx, &it, opts);
    let constraint_violation = constraint_violation(instance, &it.y_hat, &it.v);
    Ok(SolverResult {
        y_hat: it.y_hat,
        variance: it.v,
        iterations,
        converged,
        trace,
        duals,
        kkt_residual_norm,
        constraint_violation,
    })
}

/// Makes `exact_sum(y_hat) == exact_sum(target)` bit for bit by pushing the
/// exact residual into one coordinate at a time.
fn pin_aggregate(y_hat: &mut [f64], target: &[f64]) {
    let goal = exact_sum(target);
    for round in 0..64 {
        let mut terms: Vec<f64> = target.to_vec();
        terms.extend(y_hat.iter().map(|v| -v));
        let residual = exact_sum(&terms);
        if residual == 0.0 || exact_sum(y_hat) == goal {
            return;
        }
        let i = round % y_hat.len();
        y_hat[i] += residual;
    }
}

/// Social-cost minimum over profiles with `Σŷ = Σy`. The gradient step and
/// the penalty step are both projected onto that hyperplane, so the clearing
/// price never moves.
pub fn solve_coordinated(instance: &MarketInstance, opts: &SolverOptions) -> Result<SolverResult> {
    opts.validate()?;
    let ctx = GameContext::new(instance);
    let n_agents = instance.n_agents();
    let b = ctx.sens.b_total;
    let y = ctx.y.clone();
    let mu = opts.step_mu;
    let mu_r = opts.step_mu * opts.penalty_r;
    let project = |v: &mut Vec<f64>| {
        let mean = exact_sum(v) / n_agents as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };

    let mut y_hat = y.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut calm = 0;
    let mut iterations = 0;
    for k in 1..=opts.max_iters {
        iterations = k;
        let s = ctx.aggregate(&y_hat);
        let slope: f64 = exact_sum(&ctx.trade_slope);
        // ∂/∂ŷₙ of Σₘ E[Πₘ] with V tied to ŷ.
        let mut grad: Vec<f64> = (0..n_agents)
            .map(|n| s / b + slope - instance.p0() + (y_hat[n] - y[n]) / (2.0 * instance.agent(n).a_budget * b))
            .collect();
        project(&mut grad);
        let psi: Vec<f64> = y_hat.iter().zip(&grad).map(|(a, g)| a - mu * g).collect();
        let psi_v = tied_variance(instance, &ctx, &psi);
        let pen = penalty_gradient_scaled(instance, &ctx, &psi, &psi_v, opts.scaling);
        let mut force = pen.y_hat.clone();
        project(&mut force);
        let mut next: Vec<f64> = psi.iter().zip(&force).map(|(p, f)| p - mu_r * f).collect();
        pin_aggregate(&mut next, &y);

        let step = next.iter().zip(&y_hat).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let norm = sup_norm(&next);
        if !(norm <= opts.divergence_guard) {
            return Err(Error::Diverged { iteration: k, norm });
        }
        y_hat = next;
        calm = if step < opts.tol_step { calm + 1 } else { 0 };
        converged = calm >= opts.stop_patience;
        if k % opts.trace_stride == 0 || converged || k == opts.max_iters {
            trace.push(TraceEntry { iteration: k, step, penalty: sup_norm(&pen.y_hat) });
        }
        if converged {
            break;
        }
    }

    let variance = tied_variance(instance, &ctx, &y_hat);
    let it = Iterate { y_hat, v: variance };
    let tied = SolverOptions { eliminate_variance: true, ..opts.clone() };
    let (duals, kkt_residual_norm) = certify(instance, &ctx, &it, &tied);
    let constraint_violation = constraint_violation(instance, &it.y_hat, &it.v);
    Ok(SolverResult {
        y_hat: it.y_hat,
        variance: it.v,
        iterations,
        converged,
        trace,
        duals,
        kkt_residual_norm,
        constraint_violation,
    })
}

/// `ŷ = y`, `V = 0`.
pub fn truthful_baseline(instance: &MarketInstance) -> ReportProfile {
    ReportProfile::truthful(instance)
}
