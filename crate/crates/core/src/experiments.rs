//! Parameter sweeps over the privacy budget `A` and the deviation radius `α`,
//! social-cost comparisons across mechanisms, and CSV output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::sensitivity;
use crate::error::{Error, Result};
use crate::game::{social_cost, utility_gaps};
use crate::model::{MarketInstance, PriceMode, ReportProfile};
use crate::numeric::format_sig12;
use crate::privacy::privacy_price;
use crate::solver::{solve_coordinated, solve_ve_datp, SolverMode, SolverOptions};

pub const DEFAULT_A_GRID: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
pub const DEFAULT_ALPHA_GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 3.0, 5.0];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub const CSV_HEADER: [&str; 10] = [
    "sweep_param",
    "sweep_value",
    "seed",
    "mechanism",
    "agent",
    "utility_gap",
    "social_cost",
    "beta_sum",
    "converged",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    ABudget,
    Alpha,
}

impl SweepParameter {
    /// Value held fixed for the other parameter while this one is swept.
    pub fn default_fixed_other(self) -> f64 {
        match self {
            SweepParameter::ABudget => 3.0,
            SweepParameter::Alpha => 10.0,
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParameter::ABudget => DEFAULT_A_GRID.to_vec(),
            SweepParameter::Alpha => DEFAULT_ALPHA_GRID.to_vec(),
        }
    }

    fn apply(self, instance: &MarketInstance, value: f64, fixed_other: f64) -> Result<MarketInstance> {
        match self {
            SweepParameter::ABudget => instance.with_privacy(Some(fixed_other), Some(value)),
            SweepParameter::Alpha => instance.with_privacy(Some(value), Some(fixed_other)),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::ABudget => "A_budget",
            SweepParameter::Alpha => "alpha",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    PeerToPeer,
    Coordinated,
    Truthful,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::PeerToPeer, Mechanism::Coordinated, Mechanism::Truthful];
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::PeerToPeer => "p2p",
            Mechanism::Coordinated => "coordinated",
            Mechanism::Truthful => "truthful",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub fixed_other: f64,
    pub seeds: Vec<u64>,
    pub mechanism: Mechanism,
    pub solver: SolverOptions,
}

impl SweepSpec {
    /// Default grid and fixed value for `parameter`, solver defaults.
    pub fn new(parameter: SweepParameter, mechanism: Mechanism) -> Self {
        SweepSpec {
            parameter,
            grid: parameter.default_grid(),
            fixed_other: parameter.default_fixed_other(),
            seeds: DEFAULT_SEEDS.to_vec(),
            mechanism,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidOptions("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidOptions("sweep grid values must be positive".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidOptions("sweep grid must be strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidOptions("at least one seed is required".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sweep_value: f64,
    pub seed: u64,
    pub utility_gap: Vec<f64>,
    pub social_cost: f64,
    pub beta_sum: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub mechanism: Mechanism,
    /// Ordered by grid value, then seed.
    pub points: Vec<SweepPoint>,
}

/// Seed mean and standard error of one agent's utility gap at one grid value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSummary {
    pub sweep_value: f64,
    pub agent: usize,
    pub mean: f64,
    pub std_error: f64,
}

impl SweepResult {
    pub fn row_count(&self) -> usize {
        self.points.iter().map(|p| p.utility_gap.len()).sum()
    }

    pub fn gap_summary(&self) -> Vec<GapSummary> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.points.len() {
            let value = self.points[start].sweep_value;
            let end = start + self.points[start..].iter().take_while(|p| p.sweep_value == value).count();
            let group = &self.points[start..end];
            let k = group.len() as f64;
            for agent in 0..group[0].utility_gap.len() {
                let mean = group.iter().map(|p| p.utility_gap[agent]).sum::<f64>() / k;
                let std_error = if group.len() > 1 {
                    let var = group.iter().map(|p| (p.utility_gap[agent] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                    (var / k).sqrt()
                } else {
                    0.0
                };
                out.push(GapSummary { sweep_value: value, agent, mean, std_error });
            }
            start = end;
        }
        out
    }

    /// Seed-averaged social cost per grid value.
    pub fn mean_social_cost(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for p in &self.points {
            match out.last_mut() {
                Some((v, total, count)) if *v == p.sweep_value => {
                    *total += p.social_cost;
                    *count += 1;
                }
                _ => out.push((p.sweep_value, p.social_cost, 1)),
            }
        }
        out.into_iter().map(|(v, total, count)| (v, total / count as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    pub profile: ReportProfile,
    pub converged: bool,
    pub iterations: usize,
}

pub fn solve_mechanism(instance: &MarketInstance, mechanism: Mechanism, opts: &SolverOptions) -> Result<MechanismOutcome> {
    match mechanism {
        Mechanism::Truthful => Ok(MechanismOutcome {
            profile: ReportProfile::truthful(instance),
            converged: true,
            iterations: 0,
        }),
        Mechanism::PeerToPeer => {
            let r = solve_ve_datp(instance, opts)?;
            Ok(MechanismOutcome { profile: r.profile(), converged: r.converged, iterations: r.iterations })
        }
        Mechanism::Coordinated => {
            let r = solve_coordinated(instance, opts)?;
            Ok(MechanismOutcome { profile: r.profile(), converged: r.converged, iterations: r.iterations })
        }
    }
}

/// Per-agent privacy prices at a profile.
pub fn privacy_prices(instance: &MarketInstance, y_hat: &[f64]) -> Vec<f64> {
    let sens = sensitivity(instance);
    instance
        .true_values()
        .iter()
        .enumerate()
        .map(|(n, &y)| privacy_price(&sens, n, y, y_hat[n]).beta_sum)
        .collect()
}

fn evaluate(instance: &MarketInstance, value: f64, seed: u64, outcome: &MechanismOutcome) -> SweepPoint {
    let p = &outcome.profile;
    SweepPoint {
        sweep_value: value,
        seed,
        utility_gap: utility_gaps(instance, &p.y_hat, &p.variance),
        social_cost: social_cost(instance, &p.y_hat, &p.variance),
        beta_sum: privacy_prices(instance, &p.y_hat),
        converged: outcome.converged,
        iterations: outcome.iterations,
    }
}

/// Solves the chosen mechanism at every grid value (and seed) with the swept
/// parameter overwritten for all agents. Grid points run in parallel; the
/// result order is deterministic.
pub fn run_sweep(instance: &MarketInstance, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    // Deterministic solves do not depend on the seed; solve once per value.
    let seed_sensitive = spec.solver.mode == SolverMode::Stochastic && spec.mechanism == Mechanism::PeerToPeer;
    let tasks: Vec<(f64, Vec<u64>)> = if seed_sensitive {
        spec.grid.iter().flat_map(|&v| spec.seeds.iter().map(move |&s| (v, vec![s]))).collect()
    } else {
        spec.grid.iter().map(|&v| (v, spec.seeds.clone())).collect()
    };

    let solved: Vec<Result<Vec<SweepPoint>>> = tasks
        .par_iter()
        .map(|(value, seeds)| {
            let context = || format!("{} = {} (seed {})", spec.parameter, value, seeds[0]);
            let wrap = |e: Error| Error::Sweep { context: context(), source: Box::new(e) };
            let inst = spec.parameter.apply(instance, *value, spec.fixed_other).map_err(wrap)?;
            let opts = SolverOptions { seed: seeds[0], ..spec.solver.clone() };
            let outcome = solve_mechanism(&inst, spec.mechanism, &opts).map_err(wrap)?;
            let point = evaluate(&inst, *value, seeds[0], &outcome);
            Ok(seeds.iter().map(|&seed| SweepPoint { seed, ..point.clone() }).collect())
        })
        .collect();

    let mut points = Vec::with_capacity(spec.grid.len() * spec.seeds.len());
    for r in solved {
        points.extend(r?);
    }
    Ok(SweepResult { parameter: spec.parameter, mechanism: spec.mechanism, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostComparisonRow {
    pub sweep_value: f64,
    pub mechanism: Mechanism,
    pub social_cost: f64,
    /// Truthful social cost minus this mechanism's; positive is a saving.
    pub decrease: f64,
}

/// The three mechanisms' social costs along the sweep, relative to truthful
/// reporting. `spec.mechanism` is ignored.
pub fn social_cost_comparison(instance: &MarketInstance, spec: &SweepSpec) -> Result<Vec<CostComparisonRow>> {
    let curves: Vec<(Mechanism, Vec<(f64, f64)>)> = Mechanism::ALL
        .iter()
        .map(|&m| {
            let s = SweepSpec { mechanism: m, ..spec.clone() };
            Ok((m, run_sweep(instance, &s)?.mean_social_cost()))
        })
        .collect::<Result<_>>()?;
    let truthful = &curves.iter().find(|(m, _)| *m == Mechanism::Truthful).expect("truthful curve").1;

    let mut rows = Vec::new();
    for (i, &(value, base)) in truthful.iter().enumerate() {
        for (mechanism, curve) in &curves {
            let cost = curve[i].1;
            rows.push(CostComparisonRow { sweep_value: value, mechanism: *mechanism, social_cost: cost, decrease: base - cost });
        }
    }
    Ok(rows)
}

/// The `decrease` column of one mechanism, in grid order.
pub fn comparison_curve(rows: &[CostComparisonRow], mechanism: Mechanism) -> Vec<f64> {
    rows.iter().filter(|r| r.mechanism == mechanism).map(|r| r.decrease).collect()
}

/// `Σ |xₖ₊₁ - xₖ|`.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Per-agent privacy price at the peer-to-peer equilibrium for the given
/// radius and budget.
pub fn privacy_price_map(instance: &MarketInstance, alpha: f64, a_budget: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let inst = instance.with_privacy(Some(alpha), Some(a_budget))?;
    let r = solve_ve_datp(&inst, opts)?;
    Ok(privacy_prices(&inst, &r.y_hat))
}

pub fn write_csv<W: Write>(result: &SweepResult, out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    let param = result.parameter.to_string();
    let mechanism = result.mechanism.to_string();
    for p in &result.points {
        for (agent, gap) in p.utility_gap.iter().enumerate() {
            w.write_record([
                param.as_str(),
                &format_sig12(p.sweep_value),
                &p.seed.to_string(),
                mechanism.as_str(),
                &agent.to_string(),
                &format_sig12(*gap),
                &format_sig12(p.social_cost),
                &format_sig12(p.beta_sum[agent]),
                if p.converged { "true" } else { "false" },
                &p.iterations.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(result, std::io::BufWriter::new(file)).map_err(|e| {
        let io = match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        };
        Error::io(path, io)
    })
}

/// Random heterogeneous differentiation prices, uniform on `[low, high)`:
/// symmetric on links to node 0, distinct in the two directions elsewhere.
pub fn random_heterogeneous_prices(n_agents: usize, low: f64, high: f64, seed: u64) -> PriceMode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = vec![vec![0.0; n_agents]; n_agents];
    for n in 1..n_agents {
        let c = rng.random_range(low..high);
        matrix[0][n] = c;
        matrix[n][0] = c;
    }
    for n in 1..n_agents {
        for m in (n + 1)..n_agents {
            let c_nm = rng.random_range(low..high);
            let mut c_mn = rng.random_range(low..high);
            while c_mn == c_nm {
                c_mn = rng.random_range(low..high);
            }
            matrix[n][m] = c_nm;
            matrix[m][n] = c_mn;
        }
    }
    PriceMode::Heterogeneous { matrix }
}

pub fn heterogeneous_instance(instance: &MarketInstance, low: f64, high: f64, seed: u64) -> Result<MarketInstance> {
    instance.with_prices(random_heterogeneous_prices(instance.n_agents(), low, high, seed))
}
