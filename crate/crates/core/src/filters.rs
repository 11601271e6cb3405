//! Spectral filter families `g_t(λ)` and their residuals `r_t(λ) = 1 - λ g_t(λ)`.
//!
//! Every filter is evaluated through three primitives: [`Regularizer::filter`]
//! (`g_t(λ)`), [`Regularizer::shrinkage`] (`λ g_t(λ)`) and
//! [`Regularizer::residual`] (`r_t(λ)`). Shrinkage and residual are computed
//! independently rather than as `1 - x` of each other so that both stay
//! accurate in their own small regime.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this value of `ηλ` (Landweber) or `tλ` (Showalter) the filter is
/// evaluated by its first-order expansion around `λ = 0`.
const SMALL_ARG: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularizer {
    /// `g_t(λ) = (λ + 1/t)^{-1}`.
    Tikhonov,
    /// Gradient descent with constant step `eta`:
    /// `g_t(λ) = λ^{-1}(1 - (1 - ηλ)^t)` for `t >= 1`, `ηt` below.
    Landweber { eta: f64 },
    /// `g_t(λ) = λ^{-1}(1 - e^{-tλ})`.
    Showalter,
}

impl Regularizer {
    pub fn landweber(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!(
                "landweber step must be positive, got {eta}"
            )));
        }
        Ok(Regularizer::Landweber { eta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Tikhonov => "tikhonov",
            Regularizer::Landweber { .. } => "landweber",
            Regularizer::Showalter => "showalter",
        }
    }

    /// Constant `B` in `g_t(λ) <= B t`.
    pub fn upper_constant(&self) -> f64 {
        match *self {
            Regularizer::Landweber { eta } => eta,
            _ => 1.0,
        }
    }

    /// Constant `b` in `λ g_t(λ) >= b min(1, λt)`.
    ///
    /// For Landweber the bound `1 - (1 - ηλ)^t >= 1 - e^{-ηλt}` only gives
    /// `b = min(1, η) / 2`, which is `1/2` for every step `η >= 1`.
    pub fn lower_constant(&self) -> f64 {
        match *self {
            Regularizer::Landweber { eta } => 0.5 * eta.min(1.0),
            _ => 0.5,
        }
    }

    /// Qualification `(q, Q)` with `|r_t(λ)| <= Q (λt)^{-q}`, where known.
    pub fn qualification(&self) -> Option<(f64, f64)> {
        match self {
            Regularizer::Tikhonov => Some((1.0, 1.0)),
            _ => None,
        }
    }

    /// `g_t(λ)`. Accepts `t = +∞`, where `g_∞(λ) = 1/λ` for `λ > 0`.
    pub fn filter(&self, t: f64, lambda: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match *self {
            Regularizer::Tikhonov => {
                if t.is_infinite() {
                    1.0 / lambda
                } else {
                    t / (lambda * t + 1.0)
                }
            }
            Regularizer::Landweber { eta } => {
                if t < 1.0 {
                    eta * t
                } else if (eta * lambda).abs() < SMALL_ARG {
                    eta * t * (1.0 - 0.5 * (t - 1.0) * eta * lambda)
                } else {
                    self.shrinkage(t, lambda) / lambda
                }
            }
            Regularizer::Showalter => {
                if t.is_infinite() {
                    1.0 / lambda
                } else if t * lambda < SMALL_ARG {
                    t * (1.0 - 0.5 * t * lambda)
                } else {
                    -(-t * lambda).exp_m1() / lambda
                }
            }
        }
    }

    /// `λ g_t(λ)`; zero at `λ = 0` for every `t`, including `t = +∞`.
    pub fn shrinkage(&self, t: f64, lambda: f64) -> f64 {
        if t == 0.0 || lambda == 0.0 {
            return 0.0;
        }
        match *self {
            Regularizer::Tikhonov => {
                if t.is_infinite() {
                    1.0
                } else {
                    let s = lambda * t;
                    s / (s + 1.0)
                }
            }
            Regularizer::Landweber { eta } => {
                if t < 1.0 {
                    lambda * eta * t
                } else {
                    let x = eta * lambda;
                    if (0.0..1.0).contains(&x) && t.is_finite() {
                        -(t * (-x).ln_1p()).exp_m1()
                    } else {
                        1.0 - landweber_power(eta, t, lambda)
                    }
                }
            }
            Regularizer::Showalter => -(-t * lambda).exp_m1(),
        }
    }

    /// `r_t(λ) = 1 - λ g_t(λ)`.
    pub fn residual(&self, t: f64, lambda: f64) -> f64 {
        if t == 0.0 || lambda == 0.0 {
            return 1.0;
        }
        match *self {
            Regularizer::Tikhonov => {
                if t.is_infinite() {
                    0.0
                } else {
                    1.0 / (lambda * t + 1.0)
                }
            }
            Regularizer::Landweber { eta } => {
                if t < 1.0 {
                    1.0 - lambda * eta * t
                } else {
                    landweber_power(eta, t, lambda)
                }
            }
            Regularizer::Showalter => (-t * lambda).exp(),
        }
    }

    /// Checks that the filter is bounded on a spectrum with top eigenvalue
    /// `lambda_max`. Landweber requires `η λ_max < 2`.
    pub fn check_stable(&self, lambda_max: f64) -> Result<()> {
        if let Regularizer::Landweber { eta } = *self {
            if eta * lambda_max >= 2.0 {
                return Err(Error::Numerical(format!(
                    "landweber step {eta} unstable: eta * lambda_max = {} >= 2",
                    eta * lambda_max
                )));
            }
        }
        Ok(())
    }

    /// Whether `t ↦ g_t(λ)` is defined for non-integer `t` on the whole
    /// spectrum, i.e. `1 - η λ_max >= 0` for Landweber.
    pub fn supports_continuous_time(&self, lambda_max: f64) -> bool {
        match *self {
            Regularizer::Landweber { eta } => 1.0 - eta * lambda_max >= 0.0,
            _ => true,
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::Landweber { eta } => write!(f, "landweber(eta={eta})"),
            other => f.write_str(other.name()),
        }
    }
}

/// `(1 - ηλ)^t` for `t >= 1`; integer `t` uses repeated multiplication so a
/// negative base stays well defined.
#[inline]
fn landweber_power(eta: f64, t: f64, lambda: f64) -> f64 {
    let base = 1.0 - eta * lambda;
    if t.is_infinite() {
        return if base.abs() < 1.0 { 0.0 } else { base.powf(t) };
    }
    if t.fract() == 0.0 && t <= i32::MAX as f64 {
        base.powi(t as i32)
    } else {
        base.powf(t)
    }
}
