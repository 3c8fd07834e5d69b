//! Privacy-aware peer-to-peer electricity market.
//!
//! Prosumers report a (possibly biased, Gaussian-perturbed) estimate of their
//! net demand `y = D* - ΔG`; a uniform clearing price is computed in closed
//! form from the reports, and the reporting itself is a generalized Nash game
//! with a privacy budget per agent. The crate provides the closed-form market,
//! the privacy mechanism, the analytic game layer, a penalized gradient solver
//! for the equilibrium and a small experiment harness around a 13-node test
//! system.

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod game;
pub mod model;
pub mod numeric;
pub mod privacy;
pub mod solver;

pub use equilibrium::{clearing_price, equilibrium_decisions, sensitivity, EquilibriumOutcome, Sensitivity};
pub use error::{Error, Result, ValidationError, ValidationErrorKind, ValidationErrors};
pub use game::{expected_cost, pseudo_gradient, social_cost, utility_gap, OperatorVariant};
pub use model::{ieee13_instance, load_instance, validate_instance, AgentParams, MarketInstance, PriceMode, ReportProfile};
pub use privacy::{optimal_variance, privacy_price};
pub use solver::{solve_coordinated, solve_ve_datp, truthful_baseline, SolverMode, SolverOptions, SolverResult};
