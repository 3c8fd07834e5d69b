//! Command-line front end. [`run`] does all the work against caller-supplied
//! writers so it can be driven from tests; the binary only parses arguments
//! and forwards the exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::{clearing_price, sensitivity};
use crate::error::Error;
use crate::experiments::{
    emit_csv, heterogeneous_instance, privacy_prices, run_sweep, solve_mechanism, Mechanism, SweepParameter, SweepSpec,
};
use crate::game::{has_equal_shares, monotonicity_certificate, potential_identity_error, utility_gaps};
use crate::model::{load_instance_file, resolve_instance_path, MarketInstance};
use crate::numeric::format_sig12;
use crate::solver::{constraint_violation, solve_coordinated, solve_ve_datp, SolverMode, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "p2p-market", version, about = "Privacy-aware peer-to-peer electricity market simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every random draw
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Gradient evaluation mode
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Deterministic)]
    pub mode: ModeArg,

    /// Print iteration traces and per-point diagnostics
    #[arg(short, long, global = true)]
    pub verbose: bool,

    /// Print wall-clock timings to stderr
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one mechanism and print the equilibrium
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = MechanismArg::P2p)]
        mechanism: MechanismArg,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the result as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the privacy budget or the deviation radius and write a CSV
    Sweep {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = ParamArg::ABudget)]
        param: ParamArg,
        /// Comma-separated grid; defaults depend on the parameter
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Value of the other parameter (α = 3 when sweeping A, A = 10 when sweeping α)
        #[arg(long)]
        fixed: Option<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = MechanismArg::P2p)]
        mechanism: MechanismArg,
        #[command(flatten)]
        solver: SolverArgs,
        /// Replace the prices by random heterogeneous ones drawn with this seed
        #[arg(long)]
        heterogeneous: Option<u64>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Check monotonicity of the game operator and the potential identity
    Certify {
        instance: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Load and validate an instance
    Validate { instance: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Step size μ
    #[arg(long, default_value_t = 0.003)]
    pub mu: f64,
    /// Penalty weight R
    #[arg(long = "penalty-r", default_value_t = 700.0)]
    pub penalty_r: f64,
    #[arg(long = "max-iters", default_value_t = 5_000_000)]
    pub max_iters: usize,
    /// Stop once the sup-norm of the report step falls below this
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    P2p,
    Coordinated,
    Truthful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    ABudget,
    Alpha,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::P2p => Mechanism::PeerToPeer,
            MechanismArg::Coordinated => Mechanism::Coordinated,
            MechanismArg::Truthful => Mechanism::Truthful,
        }
    }
}

impl Cli {
    fn solver_options(&self, args: &SolverArgs) -> SolverOptions {
        SolverOptions {
            step_mu: args.mu,
            penalty_r: args.penalty_r,
            max_iters: args.max_iters,
            tol_step: args.tol,
            mode: match self.mode {
                ModeArg::Stochastic => SolverMode::Stochastic,
                ModeArg::Deterministic => SolverMode::Deterministic,
            },
            seed: self.seed,
            ..SolverOptions::default()
        }
    }
}

/// Failure of one command: the module it came from and the underlying error.
struct Failure {
    component: &'static str,
    error: Error,
}

fn fail(component: &'static str) -> impl Fn(Error) -> Failure {
    move |error| Failure { component, error }
}

fn io_fail(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure { component: "cli", error: Error::Io { path: path.to_path_buf(), source: e } }
}

pub fn exit_code(error: &Error) -> i32 {
    match error.root() {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

/// Executes `cli`, writing results to `out` and diagnostics to `err`.
/// Returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let started = Instant::now();
    let result = match &cli.command {
        Command::Solve { instance, mechanism, solver, out: path } => {
            cmd_solve(cli, instance, *mechanism, solver, path.as_deref(), out)
        }
        Command::Sweep { instance, param, grid, fixed, seeds, mechanism, solver, heterogeneous, out: path } => {
            let param = match param {
                ParamArg::ABudget => SweepParameter::ABudget,
                ParamArg::Alpha => SweepParameter::Alpha,
            };
            let spec = SweepSpec {
                parameter: param,
                grid: grid.clone().unwrap_or_else(|| param.default_grid()),
                fixed_other: fixed.unwrap_or_else(|| param.default_fixed_other()),
                seeds: seeds.clone(),
                mechanism: (*mechanism).into(),
                solver: cli.solver_options(solver),
            };
            cmd_sweep(cli, instance, &spec, *heterogeneous, path, out)
        }
        Command::Certify { instance, samples } => cmd_certify(cli, instance, *samples, out),
        Command::Validate { instance } => cmd_validate(instance, out),
    };
    if cli.timing {
        let _ = writeln!(err, "elapsed: {:.3} s", started.elapsed().as_secs_f64());
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure { component, error }) => {
            let _ = writeln!(err, "error [{component}]: {error}");
            exit_code(&error)
        }
    }
}

fn load(path: &Path) -> Result<MarketInstance, Failure> {
    load_instance_file(resolve_instance_path(path)).map_err(fail("model"))
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let inst = load(path)?;
    let sens = sensitivity(&inst);
    let y = inst.true_values();
    let io = io_fail(Path::new("<stdout>"));
    writeln!(out, "valid instance: {} agents, {} edges", inst.n_agents(), inst.topology().edges().len()).map_err(&io)?;
    let prices = if inst.prices().is_homogeneous() { "homogeneous" } else { "heterogeneous" };
    writeln!(out, "prices: {prices}, p0 = {}", inst.p0()).map_err(&io)?;
    writeln!(out, "B = {}", format_sig12(sens.b_total)).map_err(&io)?;
    writeln!(out, "truthful clearing price = {}", format_sig12(clearing_price(&inst, &y))).map_err(&io)?;
    writeln!(out, "equal sensitivity shares: {}", has_equal_shares(&inst)).map_err(&io)?;
    Ok(())
}

fn cmd_solve(
    cli: &Cli,
    path: &Path,
    mechanism: MechanismArg,
    args: &SolverArgs,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let inst = load(path)?;
    let opts = cli.solver_options(args);
    let (profile, converged, iterations, residual) = match mechanism {
        MechanismArg::P2p => {
            let r = solve_ve_datp(&inst, &opts).map_err(fail("solver"))?;
            if cli.verbose {
                for t in &r.trace {
                    let _ = writeln!(out, "iter {:>9}  step {:.3e}  penalty {:.3e}", t.iteration, t.step, t.penalty);
                }
            }
            (r.profile(), r.converged, r.iterations, Some(r.kkt_residual_norm))
        }
        MechanismArg::Coordinated => {
            let r = solve_coordinated(&inst, &opts).map_err(fail("solver"))?;
            (r.profile(), r.converged, r.iterations, Some(r.kkt_residual_norm))
        }
        MechanismArg::Truthful => {
            let o = solve_mechanism(&inst, Mechanism::Truthful, &opts).map_err(fail("solver"))?;
            (o.profile, true, 0, None)
        }
    };
    let lambda0 = clearing_price(&inst, &profile.y_hat);
    let gaps = utility_gaps(&inst, &profile.y_hat, &profile.variance);
    let betas = privacy_prices(&inst, &profile.y_hat);
    let violation = constraint_violation(&inst, &profile.y_hat, &profile.variance);

    let io = io_fail(Path::new("<stdout>"));
    writeln!(out, "mechanism: {}", Mechanism::from(mechanism)).map_err(&io)?;
    writeln!(out, "converged: {converged} after {iterations} iterations").map_err(&io)?;
    writeln!(out, "lambda0 = {}", format_sig12(lambda0)).map_err(&io)?;
    if let Some(r) = residual {
        writeln!(out, "kkt residual = {}", format_sig12(r)).map_err(&io)?;
    }
    writeln!(out, "constraint violation = {}", format_sig12(violation.max(0.0))).map_err(&io)?;
    writeln!(out, "{:>5} {:>14} {:>14} {:>14} {:>14}", "agent", "y_hat", "variance", "gap", "beta_sum").map_err(&io)?;
    for n in 0..inst.n_agents() {
        writeln!(
            out,
            "{:>5} {:>14.6} {:>14.6} {:>14.6} {:>14.6e}",
            n, profile.y_hat[n], profile.variance[n], gaps[n], betas[n]
        )
        .map_err(&io)?;
    }

    if let Some(p) = out_path {
        let doc = serde_json::json!({
            "mechanism": Mechanism::from(mechanism).to_string(),
            "converged": converged,
            "iterations": iterations,
            "lambda0": lambda0,
            "kkt_residual": residual,
            "constraint_violation": violation.max(0.0),
            "y_hat": profile.y_hat,
            "variance": profile.variance,
            "utility_gap": gaps,
            "beta_sum": betas,
        });
        let text = serde_json::to_string_pretty(&doc).expect("result serializes") + "\n";
        std::fs::write(p, text).map_err(io_fail(p))?;
        writeln!(out, "result written to {}", p.display()).map_err(&io)?;
    }
    Ok(())
}

fn cmd_sweep(
    cli: &Cli,
    path: &Path,
    spec: &SweepSpec,
    heterogeneous: Option<u64>,
    out_path: &Path,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut inst = load(path)?;
    if let Some(seed) = heterogeneous {
        inst = heterogeneous_instance(&inst, 0.5, 1.5, seed).map_err(fail("experiments"))?;
    }
    let result = run_sweep(&inst, spec).map_err(fail("experiments"))?;
    emit_csv(&result, out_path).map_err(fail("experiments"))?;

    let io = io_fail(Path::new("<stdout>"));
    writeln!(out, "sweep over {} ({}), {} rows", spec.parameter, spec.mechanism, result.row_count()).map_err(&io)?;
    for (value, cost) in result.mean_social_cost() {
        writeln!(out, "{} = {:<8} social cost {}", spec.parameter, value, format_sig12(cost)).map_err(&io)?;
    }
    if cli.verbose {
        for p in &result.points {
            writeln!(out, "{} = {} seed {}: converged {} in {} iterations", spec.parameter, p.sweep_value, p.seed, p.converged, p.iterations)
                .map_err(&io)?;
        }
    }
    writeln!(out, "csv written to {}", out_path.display()).map_err(&io)?;
    Ok(())
}

fn cmd_certify(cli: &Cli, path: &Path, samples: usize, out: &mut dyn Write) -> Result<(), Failure> {
    if samples == 0 {
        return Err(Failure { component: "cli", error: Error::InvalidOptions("--samples must be at least 1".into()) });
    }
    let inst = load(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let report = monotonicity_certificate(&inst, samples, &mut rng);

    let io = io_fail(Path::new("<stdout>"));
    writeln!(out, "monotonicity certificate ({} directions)", report.n_samples).map_err(&io)?;
    writeln!(out, "min eigenvalue = {}", format_sig12(report.min_eigenvalue)).map_err(&io)?;
    writeln!(out, "min quadratic form = {}", format_sig12(report.min_quadratic_form)).map_err(&io)?;
    writeln!(out, "positive semidefinite: {}", report.min_eigenvalue >= -1e-12).map_err(&io)?;
    writeln!(
        out,
        "lower bound violations: {} (max excess {})",
        report.lower_bound_violations,
        format_sig12(report.max_lower_bound_excess)
    )
    .map_err(&io)?;

    if has_equal_shares(&inst) {
        let worst = potential_identity_error(&inst, 1000, &mut rng);
        writeln!(out, "potential identity: max error {} ({})", format_sig12(worst), if worst < 1e-10 { "holds" } else { "fails" })
            .map_err(&io)?;
    } else {
        writeln!(out, "potential identity: not applicable (sensitivity shares differ)").map_err(&io)?;
    }
    Ok(())
}
