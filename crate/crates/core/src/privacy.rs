//! Gaussian report mechanism `ỹ = ŷ + ε`, `ε ~ N(0, V)`.
//!
//! For two Gaussians with equal variance the privacy loss random variable is
//! itself Gaussian, `N(η, 2η)` with `η = (y - ŷ)² / (2V)`, and its mean is the
//! KL divergence between the outputs at the true and the reported value.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::equilibrium::Sensitivity;
use crate::error::{Error, Result};

/// Smallest variance used when a KL evaluation must not divide by zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

pub fn sample_report<R: Rng + ?Sized>(y_hat: f64, v: f64, rng: &mut R) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::NegativeVariance(v));
    }
    if v == 0.0 {
        return Ok(y_hat);
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(y_hat + v.sqrt() * z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyLossStats {
    pub eta: f64,
    pub mean: f64,
    pub variance: f64,
}

impl PrivacyLossStats {
    fn from_eta(eta: f64) -> Self {
        PrivacyLossStats { eta, mean: eta, variance: 2.0 * eta }
    }
}

pub fn privacy_loss_stats(y: f64, y_hat: f64, v: f64) -> Result<PrivacyLossStats> {
    if !(v >= 0.0) {
        return Err(Error::NegativeVariance(v));
    }
    let dev = y_hat - y;
    if v == 0.0 {
        if dev == 0.0 {
            return Ok(PrivacyLossStats::from_eta(0.0));
        }
        return Err(Error::DegenerateMechanism { y, y_hat });
    }
    Ok(PrivacyLossStats::from_eta(dev * dev / (2.0 * v)))
}

/// Like [`privacy_loss_stats`] but with `V` raised to `floor`, so a vanishing
/// variance produces a huge finite loss instead of an error.
pub fn privacy_loss_stats_floored(y: f64, y_hat: f64, v: f64, floor: f64) -> Result<PrivacyLossStats> {
    if !(v >= 0.0) {
        return Err(Error::NegativeVariance(v));
    }
    if y == y_hat {
        return Ok(PrivacyLossStats::from_eta(0.0));
    }
    privacy_loss_stats(y, y_hat, v.max(floor))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetCheck {
    pub satisfied: bool,
    /// `2VA - (ŷ - y)²`; negative when the budget is exceeded.
    pub slack: f64,
}

/// Whether the expected privacy loss stays within `A`, i.e. `(ŷ - y)² ≤ 2VA`.
pub fn kl_budget_satisfied(y: f64, y_hat: f64, v: f64, a_budget: f64) -> BudgetCheck {
    let dev2 = (y_hat - y) * (y_hat - y);
    // Compared in the form V ≥ (ŷ - y)²/(2A) so that the variance returned by
    // `optimal_variance` always passes.
    BudgetCheck {
        satisfied: optimal_variance(y, y_hat, a_budget) <= v,
        slack: 2.0 * v * a_budget - dev2,
    }
}

/// Smallest variance meeting the budget; the expected cost grows with `V`,
/// so this is also the cost-minimising choice.
pub fn optimal_variance(y: f64, y_hat: f64, a_budget: f64) -> f64 {
    let dev = y_hat - y;
    dev * dev / (2.0 * a_budget)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyPrice {
    /// `β̲ + β̄`; at most one of the two is nonzero.
    pub beta_sum: f64,
}

/// Price of the privacy budget, `Bₙ |ŷₙ - yₙ| / (2B²)`.
pub fn privacy_price(sens: &Sensitivity, n: usize, y: f64, y_hat: f64) -> PrivacyPrice {
    let b = sens.b_total;
    PrivacyPrice { beta_sum: sens.b_n[n] * (y_hat - y).abs() / (2.0 * b * b) }
}

/// Variance implied by a privacy price through the stationarity condition in `V`.
pub fn variance_from_price(sens: &Sensitivity, n: usize, a_budget: f64, price: PrivacyPrice) -> f64 {
    let b2 = sens.b_total * sens.b_total;
    let bn = sens.b_n[n];
    2.0 * b2 * b2 / (a_budget * bn * bn) * price.beta_sum * price.beta_sum
}
