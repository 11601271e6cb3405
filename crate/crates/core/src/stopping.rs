//! Early stopping rules.
//!
//! Data-driven rules (`dp`, `sdp`) compare a residual functional of the
//! observations with a threshold; analytic rules (`balancing`,
//! `smoothed-balancing`, `oracle`) use the noiseless signal and serve as
//! references. Every defining gap is monotone in `t`, so each rule is a
//! first-crossing search: binary search over integer iterations or bisection
//! over continuous time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{EmpiricalCoords, SpectralDecomposition, SpectralEstimator};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Upper limit on doubling when the emergency stop is infinite.
const DOUBLING_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchMode {
    /// `t ∈ {0, 1, …, min(⌊T⌋, max_iter)}`.
    IntegerGrid { max_iter: u64 },
    /// Bisection on `[0, T]` to relative tolerance in `t`.
    Continuous { tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    /// Known noise variance `σ²`.
    pub sigma_sq: f64,
    /// Emergency stop `T`; may be `+∞`.
    #[serde(with = "crate::report::extended_f64")]
    pub emergency_stop: f64,
    pub mode: SearchMode,
    /// Horizon of the Tikhonov smoother; defaults to the emergency stop.
    pub smoothing_horizon: Option<f64>,
}

impl StoppingConfig {
    pub fn grid(sigma_sq: f64, emergency_stop: f64, max_iter: u64) -> Self {
        StoppingConfig {
            sigma_sq,
            emergency_stop,
            mode: SearchMode::IntegerGrid { max_iter },
            smoothing_horizon: None,
        }
    }

    pub fn continuous(sigma_sq: f64, emergency_stop: f64) -> Self {
        StoppingConfig {
            sigma_sq,
            emergency_stop,
            mode: SearchMode::Continuous {
                tolerance: DEFAULT_TOLERANCE,
            },
            smoothing_horizon: None,
        }
    }

    pub fn with_smoothing_horizon(mut self, horizon: f64) -> Self {
        self.smoothing_horizon = Some(horizon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variance must be finite and non-negative, got {}",
                self.sigma_sq
            )));
        }
        if !(self.emergency_stop >= 0.0) {
            return Err(Error::invalid(format!(
                "emergency stop must be non-negative, got {}",
                self.emergency_stop
            )));
        }
        match self.mode {
            SearchMode::IntegerGrid { max_iter } if max_iter < 1 => {
                return Err(Error::invalid("integer grid needs max_iter >= 1"))
            }
            SearchMode::Continuous { tolerance } if !(tolerance > 0.0) => {
                return Err(Error::invalid("continuous tolerance must be positive"))
            }
            _ => {}
        }
        if let Some(h) = self.smoothing_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!(
                    "smoothing horizon must be positive and finite, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Largest time the search may return.
    pub fn cap(&self) -> f64 {
        match self.mode {
            SearchMode::IntegerGrid { max_iter } => {
                self.emergency_stop.floor().min(max_iter as f64)
            }
            SearchMode::Continuous { .. } => self.emergency_stop,
        }
    }

    fn horizon(&self) -> Result<f64> {
        let h = self.smoothing_horizon.unwrap_or(self.emergency_stop);
        if h > 0.0 && h.is_finite() {
            Ok(h)
        } else {
            Err(Error::invalid(format!(
                "smoothed rules need a positive finite horizon, got {h}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StoppingRule {
    #[serde(rename = "dp")]
    Dp,
    #[serde(rename = "sdp")]
    Sdp,
    #[serde(rename = "balancing")]
    Balancing,
    #[serde(rename = "smoothed-balancing")]
    SmoothedBalancing,
    #[serde(rename = "oracle")]
    Oracle,
}

impl StoppingRule {
    pub const ALL: [StoppingRule; 5] = [
        StoppingRule::Dp,
        StoppingRule::Sdp,
        StoppingRule::Balancing,
        StoppingRule::SmoothedBalancing,
        StoppingRule::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StoppingRule::Dp => "dp",
            StoppingRule::Sdp => "sdp",
            StoppingRule::Balancing => "balancing",
            StoppingRule::SmoothedBalancing => "smoothed-balancing",
            StoppingRule::Oracle => "oracle",
        }
    }

    /// Whether the stopping time depends on the observations.
    pub fn is_data_driven(&self) -> bool {
        matches!(self, StoppingRule::Dp | StoppingRule::Sdp)
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StoppingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StoppingRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stopping rule '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingOutcome {
    #[serde(with = "crate::report::extended_f64")]
    pub time: f64,
    pub rule: StoppingRule,
    pub hit_emergency: bool,
    /// Right-hand side of the defining inequality at the returned time.
    pub threshold_at_stop: f64,
}

/// Smallest `t` in `[lower, cap]` with `gap(t) <= 0` for a non-increasing
/// `gap`, or `(cap, true)` if there is none.
fn first_crossing(
    lower: f64,
    cap: f64,
    mode: SearchMode,
    mut gap: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, bool)> {
    let lower = lower.min(cap);
    if gap(lower)? <= 0.0 {
        return Ok((lower, false));
    }
    match mode {
        SearchMode::IntegerGrid { .. } => {
            let hi = cap as u64;
            let mut lo = lower.ceil() as u64;
            if lo > hi || gap(hi as f64)? > 0.0 {
                return Ok((cap, true));
            }
            if lo as f64 != lower && gap(lo as f64)? <= 0.0 {
                return Ok((lo as f64, false));
            }
            // invariant: gap(lo) > 0 >= gap(hi)
            let mut hi = hi;
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if gap(mid as f64)? <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok((hi as f64, false))
        }
        SearchMode::Continuous { tolerance } => {
            let mut lo = lower;
            let mut hi = if cap.is_finite() {
                if gap(cap)? > 0.0 {
                    return Ok((cap, true));
                }
                cap
            } else {
                let mut h = lower.max(1.0);
                loop {
                    if gap(h)? <= 0.0 {
                        break h;
                    }
                    lo = h;
                    h *= 2.0;
                    if h > DOUBLING_LIMIT {
                        return if gap(f64::INFINITY)? <= 0.0 {
                            Ok((f64::INFINITY, false))
                        } else {
                            Ok((f64::INFINITY, true))
                        };
                    }
                }
            };
            while hi - lo > tolerance * hi.max(f64::MIN_POSITIVE) {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if gap(mid)? <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok((hi, false))
        }
    }
}

fn check_mode(est: &SpectralEstimator<'_>, config: &StoppingConfig) -> Result<()> {
    config.validate()?;
    if matches!(config.mode, SearchMode::Continuous { .. }) && !est.supports_continuous_time() {
        return Err(Error::UnsupportedMode(format!(
            "{} is not defined for non-integer t on this spectrum (1 - eta * lambda_max < 0); \
             use the integer grid",
            est.regularizer()
        )));
    }
    Ok(())
}

/// Discrepancy principle: first `t` with `‖Y - f̂^(t)‖_n² <= σ²`, capped at `T`.
pub fn tau_dp(
    est: &SpectralEstimator<'_>,
    zy: &EmpiricalCoords,
    config: &StoppingConfig,
) -> Result<StoppingOutcome> {
    check_mode(est, config)?;
    let threshold = config.sigma_sq;
    let (time, hit) = first_crossing(0.0, config.cap(), config.mode, |t| {
        Ok(est.empirical_risk(t, zy)? - threshold)
    })?;
    Ok(StoppingOutcome {
        time,
        rule: StoppingRule::Dp,
        hit_emergency: hit,
        threshold_at_stop: threshold,
    })
}

/// Smoothed discrepancy principle with a Tikhonov smoother of horizon `T`:
/// first `t` with smoothed risk `<= σ² N_n(T) / n`.
pub fn tau_sdp(
    est: &SpectralEstimator<'_>,
    zy: &EmpiricalCoords,
    config: &StoppingConfig,
) -> Result<StoppingOutcome> {
    check_mode(est, config)?;
    let horizon = config.horizon()?;
    let threshold = sdp_threshold(est.decomposition(), config.sigma_sq, horizon);
    let (time, hit) = first_crossing(0.0, config.cap(), config.mode, |t| {
        Ok(est.smoothed_risk(t, horizon, zy)? - threshold)
    })?;
    Ok(StoppingOutcome {
        time,
        rule: StoppingRule::Sdp,
        hit_emergency: hit,
        threshold_at_stop: threshold,
    })
}

/// `σ² N_n(T) / n`, the expected smoothed noise level.
pub fn sdp_threshold(decomp: &SpectralDecomposition, sigma_sq: f64, horizon: f64) -> f64 {
    sigma_sq * decomp.effective_dimension(horizon) / decomp.n() as f64
}

/// Balancing time `t_n*`: first `t` with `b_t² <= v_t`. Returns the cap with
/// `hit_emergency` when the bias dominates up to `T`.
pub fn balancing_time(
    est: &SpectralEstimator<'_>,
    zf: &EmpiricalCoords,
    config: &StoppingConfig,
) -> Result<StoppingOutcome> {
    check_mode(est, config)?;
    let sigma_sq = config.sigma_sq;
    let (time, hit) = first_crossing(0.0, config.cap(), config.mode, |t| {
        Ok(est.bias_sq(t, zf)? - est.proxy_variance(t, sigma_sq))
    })?;
    Ok(StoppingOutcome {
        time,
        rule: StoppingRule::Balancing,
        hit_emergency: hit,
        threshold_at_stop: est.proxy_variance(time, sigma_sq),
    })
}

/// Smoothed balancing time: first `t` with
/// `‖r_t(K_n) f̃‖_n² <= σ² Ñ_n^g(t) / n`, smoothing horizon defaulting to `T`.
pub fn smoothed_balancing_time(
    est: &SpectralEstimator<'_>,
    zf: &EmpiricalCoords,
    config: &StoppingConfig,
) -> Result<StoppingOutcome> {
    check_mode(est, config)?;
    let horizon = config.horizon()?;
    let scale = config.sigma_sq / est.n() as f64;
    let (time, hit) = first_crossing(0.0, config.cap(), config.mode, |t| {
        Ok(est.smoothed_bias_sq(t, horizon, zf)?
            - scale * est.smoothed_g_effective_dimension(t, horizon)?)
    })?;
    Ok(StoppingOutcome {
        time,
        rule: StoppingRule::SmoothedBalancing,
        hit_emergency: hit,
        threshold_at_stop: scale * est.smoothed_g_effective_dimension(time, horizon)?,
    })
}

/// Grid point minimizing the expected risk; ties go to the smallest `t`.
pub fn oracle_time(
    est: &SpectralEstimator<'_>,
    zf: &EmpiricalCoords,
    sigma_sq: f64,
    grid: &[f64],
) -> Result<StoppingOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("oracle grid must be non-empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("oracle grid must be strictly increasing"));
    }
    let mut best = (grid[0], est.expected_risk(grid[0], zf, sigma_sq)?);
    for &t in &grid[1..] {
        let risk = est.expected_risk(t, zf, sigma_sq)?;
        if risk < best.1 {
            best = (t, risk);
        }
    }
    Ok(StoppingOutcome {
        time: best.0,
        rule: StoppingRule::Oracle,
        hit_emergency: false,
        threshold_at_stop: best.1,
    })
}

/// Integer grid `1, 2, …, t_max` used by the oracle rule.
pub fn iteration_grid(t_max: u64) -> Vec<f64> {
    (1..=t_max).map(|t| t as f64).collect()
}

/// Data-driven emergency stop: the root `T̂` of `T N_n(T) = n`, capped at
/// `cap`. Returns `cap` when the spectrum is zero.
pub fn data_driven_emergency_stop(decomp: &SpectralDecomposition, cap: f64) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(Error::invalid(format!("cap must be positive, got {cap}")));
    }
    if decomp.lambda_max() <= 0.0 {
        return Ok(cap);
    }
    let n = decomp.n() as f64;
    let h = |t: f64| t * decomp.effective_dimension(t) - n;
    let mut hi = 1.0;
    while h(hi) < 0.0 {
        if hi >= cap {
            return Ok(cap);
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > DEFAULT_TOLERANCE * hi * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.min(cap))
}

/// Deterministic guard `c n / ln n` used alongside [`data_driven_emergency_stop`].
pub fn log_cap(n: usize, c: f64) -> f64 {
    let nf = n as f64;
    if n < 2 {
        f64::INFINITY
    } else {
        c * nf / nf.ln()
    }
}
