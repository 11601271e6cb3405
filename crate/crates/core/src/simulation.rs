//! Monte Carlo harness for fixed-design experiments: signal generators,
//! noisy samples, replications, aggregate statistics and deviation
//! frequencies.
//!
//! Replication `i` draws its noise from a ChaCha8 stream keyed by the master
//! seed with stream id `i`, so results do not depend on how replications
//! are scheduled across workers.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Regularizer;
use crate::kernels::{Design, Kernel, KernelMatrix};
use crate::report::{extended_f64, extended_f64_vec};
use crate::spectral::{
    log_grid, smoothing_weight, EmpiricalCoords, SpectralDecomposition, SpectralEstimator,
};
use crate::stopping::{
    balancing_time, iteration_grid, oracle_time, smoothed_balancing_time, tau_dp, tau_sdp,
    SearchMode, StoppingConfig, StoppingOutcome, StoppingRule,
};

/// Points in the oracle's log grid when the search mode is continuous.
const CONTINUOUS_ORACLE_POINTS: usize = 4096;

const HISTOGRAM_BINS: usize = 20;

/// 97.5% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Piecewise-constant signal outside the Sobolev RKHS.
pub fn outer_signal(x: f64) -> f64 {
    if (0.15..0.3).contains(&x) {
        2.0
    } else if (0.3..0.5).contains(&x) {
        -1.0
    } else if (0.5..0.85).contains(&x) {
        1.0
    } else if (0.85..1.0).contains(&x) {
        -1.0
    } else {
        0.0
    }
}

/// Smooth chirp `(1 + x)/2 · sin(2πx(1 + x))`.
pub fn inner_signal(x: f64) -> f64 {
    (1.0 + x) / 2.0 * (2.0 * PI * x * (1.0 + x)).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSpec {
    OuterPiecewise,
    InnerSine,
    /// Signal values tabulated at the design points.
    Custom(Vec<f64>),
}

impl SignalSpec {
    pub fn values(&self, design: &Design) -> Result<Vec<f64>> {
        match self {
            SignalSpec::OuterPiecewise => {
                Ok(design.points().iter().map(|&x| outer_signal(x)).collect())
            }
            SignalSpec::InnerSine => Ok(design.points().iter().map(|&x| inner_signal(x)).collect()),
            SignalSpec::Custom(v) => {
                if v.len() != design.len() {
                    return Err(Error::invalid(format!(
                        "custom signal has {} values for {} design points",
                        v.len(),
                        design.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("custom signal values must be finite"));
                }
                Ok(v.clone())
            }
        }
    }
}

/// `Y_i = f_i + ε_i` with `ε_i ~ N(0, σ²)` i.i.d.
pub fn generate_sample<R: Rng + ?Sized>(
    signal: &[f64],
    sigma_sq: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be finite and non-negative, got {sigma_sq}"
        )));
    }
    let sigma = sigma_sq.sqrt();
    Ok(signal
        .iter()
        .map(|&f| {
            let e: f64 = rng.sample(StandardNormal);
            f + sigma * e
        })
        .collect())
}

/// Noise stream of replication `index`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: StoppingRule,
    pub config: StoppingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub kernel: Kernel,
    pub regularizer: Regularizer,
    pub signal: SignalSpec,
    pub sigma_sq: f64,
    pub replications: u64,
    pub rules: Vec<RuleSpec>,
    pub t_max: u64,
    pub seed: u64,
    /// Worker threads; `1` runs serially.
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("sample size must be >= 1"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("need at least one replication"));
        }
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::invalid(
                "noise variance must be finite and non-negative",
            ));
        }
        for (i, spec) in self.rules.iter().enumerate() {
            spec.config.validate()?;
            if self.rules[..i].iter().any(|s| s.rule == spec.rule) {
                return Err(Error::invalid(format!("rule '{}' listed twice", spec.rule)));
            }
            if let SearchMode::IntegerGrid { .. } = spec.config.mode {
                if spec.config.emergency_stop > self.t_max as f64 {
                    return Err(Error::invalid(format!(
                        "rule '{}': emergency stop {} exceeds t_max {}",
                        spec.rule, spec.config.emergency_stop, self.t_max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rule(&self, rule: StoppingRule) -> Option<&RuleSpec> {
        self.rules.iter().find(|s| s.rule == rule)
    }
}

/// The simulation presets of the fixed-design study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    InnerSobolev,
    InnerGaussian,
    OuterSobolev,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::InnerSobolev,
        Preset::InnerGaussian,
        Preset::OuterSobolev,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::InnerSobolev => "inner-sobolev",
            Preset::InnerGaussian => "inner-gaussian",
            Preset::OuterSobolev => "outer-sobolev",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s)
    }

    pub const DEFAULT_N: usize = 200;
    pub const DEFAULT_REPLICATIONS: u64 = 200;
    pub const SIGMA_SQ: f64 = 1.0;
    pub const GAUSSIAN_BANDWIDTH: f64 = 0.02;

    pub fn kernel(&self) -> Kernel {
        match self {
            Preset::InnerGaussian => Kernel::Gaussian {
                bandwidth: Self::GAUSSIAN_BANDWIDTH,
            },
            _ => Kernel::Sobolev,
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            Preset::InnerGaussian => 0.5,
            _ => 2.4,
        }
    }

    pub fn signal(&self) -> SignalSpec {
        match self {
            Preset::OuterSobolev => SignalSpec::OuterPiecewise,
            _ => SignalSpec::InnerSine,
        }
    }

    pub fn default_rules(&self) -> Vec<StoppingRule> {
        match self {
            Preset::OuterSobolev => vec![StoppingRule::Dp, StoppingRule::Sdp, StoppingRule::Oracle],
            _ => vec![
                StoppingRule::Dp,
                StoppingRule::Sdp,
                StoppingRule::Balancing,
                StoppingRule::Oracle,
            ],
        }
    }

    /// Iteration budget: 500 for the inner case; for the outer case 500 up to
    /// `n = 400`, then 1000, 2000 and 3000 for `n` up to 600, 800 and beyond.
    pub fn t_max(&self, n: usize) -> u64 {
        match self {
            Preset::OuterSobolev => match n {
                0..=400 => 500,
                401..=600 => 1000,
                601..=800 => 2000,
                _ => 3000,
            },
            _ => 500,
        }
    }

    /// SDP emergency stop rounded up to the iteration grid:
    /// `⌈4√n⌉` (inner) or `⌈2n / ln n⌉` (outer).
    pub fn sdp_emergency_stop(&self, n: usize) -> u64 {
        let nf = n as f64;
        let t = match self {
            Preset::OuterSobolev => {
                if n < 2 {
                    1.0
                } else {
                    2.0 * nf / nf.ln()
                }
            }
            _ => 4.0 * nf.sqrt(),
        };
        t.ceil().max(1.0) as u64
    }

    pub fn expand(&self, n: usize) -> ExperimentConfig {
        build_config(
            n,
            self.kernel(),
            self.eta(),
            self.signal(),
            Self::SIGMA_SQ,
            self.t_max(n),
            self.sdp_emergency_stop(n) as f64,
            &self.default_rules(),
        )
    }
}

/// Landweber experiment on the integer grid. DP, balancing and oracle run up
/// to `t_max`; SDP and smoothed balancing stop at `sdp_stop`, which is also
/// their smoothing horizon.
#[allow(clippy::too_many_arguments)]
pub fn build_config(
    n: usize,
    kernel: Kernel,
    eta: f64,
    signal: SignalSpec,
    sigma_sq: f64,
    t_max: u64,
    sdp_stop: f64,
    rules: &[StoppingRule],
) -> ExperimentConfig {
    let sdp_stop = sdp_stop.min(t_max as f64);
    let rules = rules
        .iter()
        .map(|&rule| {
            let config = match rule {
                StoppingRule::Sdp | StoppingRule::SmoothedBalancing => {
                    StoppingConfig::grid(sigma_sq, sdp_stop, t_max).with_smoothing_horizon(sdp_stop)
                }
                _ => StoppingConfig::grid(sigma_sq, t_max as f64, t_max),
            };
            RuleSpec { rule, config }
        })
        .collect();
    ExperimentConfig {
        n,
        kernel,
        regularizer: Regularizer::Landweber { eta },
        signal,
        sigma_sq,
        replications: Preset::DEFAULT_REPLICATIONS,
        rules,
        t_max,
        seed: 1,
        jobs: 1,
    }
}

/// Stopping time and realized loss of one rule in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationRecord {
    pub outcome: StoppingOutcome,
    pub loss: f64,
}

/// Design, decomposition and signal coordinates shared by all replications.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    config: ExperimentConfig,
    decomp: SpectralDecomposition,
    signal: Vec<f64>,
    zf: EmpiricalCoords,
    /// Outcomes of rules that do not look at the noise, computed once.
    fixed: Vec<Option<StoppingOutcome>>,
}

impl PreparedExperiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let design = Design::fixed(config.n)?;
        let signal = config.signal.values(&design)?;
        let k = KernelMatrix::new(&config.kernel, &design)?;
        let decomp = SpectralDecomposition::new(&k)?;
        let zf = decomp.coords(&signal)?;
        let mut prepared = PreparedExperiment {
            config: config.clone(),
            decomp,
            signal,
            zf,
            fixed: Vec::new(),
        };
        let est = prepared.estimator()?;
        let fixed = config
            .rules
            .iter()
            .map(|spec| analytic_outcome(&est, &prepared.zf, spec))
            .collect::<Result<Vec<_>>>()?;
        prepared.fixed = fixed;
        Ok(prepared)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomp
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn signal_coords(&self) -> &EmpiricalCoords {
        &self.zf
    }

    pub fn estimator(&self) -> Result<SpectralEstimator<'_>> {
        SpectralEstimator::new(&self.decomp, self.config.regularizer)
    }

    /// Coordinates of one noisy observation vector for replication `index`.
    pub fn observation_coords(&self, index: u64) -> Result<EmpiricalCoords> {
        let mut rng = replication_rng(self.config.seed, index);
        let y = generate_sample(&self.signal, self.config.sigma_sq, &mut rng)?;
        self.decomp.coords(&y)
    }

    /// Runs every configured rule on the data of replication `index`.
    pub fn run_replication(&self, index: u64) -> Result<Vec<ReplicationRecord>> {
        let wrap = |e: Error| Error::Replication {
            index,
            seed: self.config.seed,
            source: Box::new(e),
        };
        let est = self.estimator().map_err(wrap)?;
        let zy = self.observation_coords(index).map_err(wrap)?;
        self.config
            .rules
            .iter()
            .zip(&self.fixed)
            .map(|(spec, fixed)| {
                let outcome = match fixed {
                    Some(o) => *o,
                    None => data_outcome(&est, &zy, spec)?,
                };
                let loss = est.loss(outcome.time, &zy, &self.zf)?;
                Ok(ReplicationRecord { outcome, loss })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)
    }

    /// Per-replication records in replication order.
    pub fn run_all(&self) -> Result<Vec<Vec<ReplicationRecord>>> {
        run_indexed(self.config.replications, self.config.jobs, |i| {
            self.run_replication(i)
        })
    }
}

/// Outcome of a rule that ignores the noise, or `None` for data-driven rules.
fn analytic_outcome(
    est: &SpectralEstimator<'_>,
    zf: &EmpiricalCoords,
    spec: &RuleSpec,
) -> Result<Option<StoppingOutcome>> {
    let cfg = &spec.config;
    Ok(match spec.rule {
        StoppingRule::Balancing => Some(balancing_time(est, zf, cfg)?),
        StoppingRule::SmoothedBalancing => Some(smoothed_balancing_time(est, zf, cfg)?),
        StoppingRule::Oracle => Some(oracle_time(est, zf, cfg.sigma_sq, &oracle_grid(cfg)?)?),
        StoppingRule::Dp | StoppingRule::Sdp => None,
    })
}

fn data_outcome(
    est: &SpectralEstimator<'_>,
    zy: &EmpiricalCoords,
    spec: &RuleSpec,
) -> Result<StoppingOutcome> {
    match spec.rule {
        StoppingRule::Dp => tau_dp(est, zy, &spec.config),
        StoppingRule::Sdp => tau_sdp(est, zy, &spec.config),
        other => Err(Error::invalid(format!("rule '{other}' is not data-driven"))),
    }
}

/// `1, …, cap` on the integer grid; a log grid ending at `T` otherwise.
pub fn oracle_grid(cfg: &StoppingConfig) -> Result<Vec<f64>> {
    let cap = cfg.cap();
    match cfg.mode {
        SearchMode::IntegerGrid { .. } => {
            if cap < 1.0 {
                return Err(Error::invalid("oracle needs an emergency stop >= 1"));
            }
            Ok(iteration_grid(cap as u64))
        }
        SearchMode::Continuous { .. } => {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::invalid("oracle needs a finite emergency stop"));
            }
            Ok(log_grid(cap * 1e-6, cap, CONTINUOUS_ORACLE_POINTS))
        }
    }
}

fn run_indexed<T: Send>(
    count: u64,
    jobs: usize,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;
    // collect preserves index order, so aggregation below is schedule-independent
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    #[serde(with = "extended_f64_vec")]
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over the finite values; infinite values go to an
    /// overflow bin with upper edge `+∞`.
    pub fn new(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let overflow = (values.len() - finite.len()) as u64;
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        if !finite.is_empty() {
            let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                let width = (hi - lo) / HISTOGRAM_BINS as f64;
                edges = (0..=HISTOGRAM_BINS)
                    .map(|i| lo + width * i as f64)
                    .collect();
                edges[HISTOGRAM_BINS] = hi;
                counts = vec![0; HISTOGRAM_BINS];
                for v in &finite {
                    let bin = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                    counts[bin] += 1;
                }
            } else {
                edges = vec![lo, hi];
                counts = vec![finite.len() as u64];
            }
        }
        if overflow > 0 {
            if edges.is_empty() {
                edges.push(f64::INFINITY);
            }
            edges.push(f64::INFINITY);
            counts.push(overflow);
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub rule: StoppingRule,
    pub mean_loss: f64,
    pub sd_loss: f64,
    #[serde(with = "extended_f64")]
    pub mean_tau: f64,
    #[serde(with = "extended_f64")]
    pub sd_tau: f64,
    pub emergency_rate: f64,
    pub histogram: Histogram,
    pub losses: Vec<f64>,
    #[serde(with = "extended_f64_vec")]
    pub times: Vec<f64>,
}

impl RuleSummary {
    fn from_records(rule: StoppingRule, records: &[ReplicationRecord]) -> Self {
        let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
        let times: Vec<f64> = records.iter().map(|r| r.outcome.time).collect();
        let hits = records.iter().filter(|r| r.outcome.hit_emergency).count();
        let (mean_loss, sd_loss) = mean_sd(&losses);
        let (mean_tau, sd_tau) = mean_sd(&times);
        RuleSummary {
            rule,
            mean_loss,
            sd_loss,
            mean_tau,
            sd_tau,
            emergency_rate: hits as f64 / records.len() as f64,
            histogram: Histogram::new(&times),
            losses,
            times,
        }
    }

    pub fn standard_error(&self) -> f64 {
        self.sd_loss / (self.losses.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub rules: Vec<RuleSummary>,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn rule(&self, rule: StoppingRule) -> Option<&RuleSummary> {
        self.rules.iter().find(|r| r.rule == rule)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator, `0` for one value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 || !mean.is_finite() {
        return (mean, if xs.len() < 2 { 0.0 } else { f64::NAN });
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let prepared = PreparedExperiment::new(config)?;
    let records = prepared.run_all()?;
    let rules = config
        .rules
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let column: Vec<ReplicationRecord> = records.iter().map(|r| r[k]).collect();
            RuleSummary::from_records(spec.rule, &column)
        })
        .collect();
    Ok(ExperimentResult {
        config: config.clone(),
        rules,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Threshold grids for deviation estimates. Times must exceed the relevant
/// balancing time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationTargets {
    pub times: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurve {
    /// Event family, e.g. `dp_time` for `{τ_DP > t}`.
    pub event: String,
    /// Balancing time the event is measured against.
    pub reference: f64,
    pub thresholds: Vec<f64>,
    pub exceedances: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub wilson_low: Vec<f64>,
    pub wilson_high: Vec<f64>,
}

impl DeviationCurve {
    fn from_counts(
        event: &str,
        reference: f64,
        thresholds: &[f64],
        counts: Vec<u64>,
        n: u64,
    ) -> Self {
        let (wilson_low, wilson_high) = counts.iter().map(|&k| wilson_interval(k, n)).unzip();
        DeviationCurve {
            event: event.to_string(),
            reference,
            thresholds: thresholds.to_vec(),
            frequencies: counts.iter().map(|&k| k as f64 / n as f64).collect(),
            exceedances: counts,
            wilson_low,
            wilson_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub replications: u64,
    pub balancing: Option<StoppingOutcome>,
    pub smoothed_balancing: Option<StoppingOutcome>,
    pub curves: Vec<DeviationCurve>,
}

impl DeviationEstimate {
    pub fn curve(&self, event: &str) -> Option<&DeviationCurve> {
        self.curves.iter().find(|c| c.event == event)
    }
}

/// Per-replication quantities needed for the deviation events.
struct DeviationDraw {
    dp: Option<(f64, f64, f64)>,
    sdp: Option<(f64, f64, f64)>,
}

/// Monte Carlo frequencies of the right and left deviation events of `τ_DP`
/// (against `t_n*`) and `τ_SDP` (against the smoothed balancing time):
///
/// - `dp_time`: `τ_DP > t`
/// - `dp_variance`: `v_{τ_DP} > v_{t_n*} + y`
/// - `dp_bias`: `b²_{τ_DP} > 2 b²_{t_n*} + y`
/// - `sdp_time`: `τ_SDP > t`
/// - `sdp_dimension`: `Ñ(τ_SDP) > Ñ(t̃_n*) + y`
/// - `sdp_bias`: `‖r_{τ_SDP} f̃‖² > 2 ‖r_{t̃_n*} f̃‖² + σ² y / n`
///
/// DP events use the configured `dp` rule and SDP events the `sdp` rule;
/// families whose rule is not configured are omitted.
pub fn estimate_deviation(
    config: &ExperimentConfig,
    targets: &DeviationTargets,
) -> Result<DeviationEstimate> {
    if targets.ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::invalid("deviation thresholds y must be positive"));
    }
    let prepared = PreparedExperiment::new(config)?;
    let est = prepared.estimator()?;
    let zf = prepared.signal_coords();
    let n = config.n as f64;
    let sigma_sq = config.sigma_sq;

    let dp_spec = config.rule(StoppingRule::Dp).copied();
    let sdp_spec = config.rule(StoppingRule::Sdp).copied();
    if dp_spec.is_none() && sdp_spec.is_none() {
        return Err(Error::invalid(
            "deviation estimates need a 'dp' or 'sdp' rule",
        ));
    }

    let balancing = dp_spec
        .map(|s| {
            let cfg = config
                .rule(StoppingRule::Balancing)
                .map_or(s.config, |b| b.config);
            balancing_time(&est, zf, &cfg)
        })
        .transpose()?;
    let smoothed = sdp_spec
        .map(|s| smoothed_balancing_time(&est, zf, &s.config))
        .transpose()?;
    for (reference, name) in [(balancing, "balancing"), (smoothed, "smoothed balancing")] {
        if let Some(r) = reference {
            if let Some(t) = targets.times.iter().find(|&&t| t <= r.time) {
                return Err(Error::invalid(format!(
                    "deviation time {t} must exceed the {name} time {}",
                    r.time
                )));
            }
        }
    }
    let sdp_horizon = sdp_spec.map(|s| {
        s.config
            .smoothing_horizon
            .unwrap_or(s.config.emergency_stop)
    });

    let draws = run_indexed(config.replications, config.jobs, |i| {
        let wrap = |e: Error| Error::Replication {
            index: i,
            seed: config.seed,
            source: Box::new(e),
        };
        let zy = prepared.observation_coords(i).map_err(wrap)?;
        let dp = dp_spec
            .map(|s| -> Result<_> {
                let tau = tau_dp(&est, &zy, &s.config)?.time;
                Ok((
                    tau,
                    est.proxy_variance(tau, sigma_sq),
                    est.bias_sq(tau, zf)?,
                ))
            })
            .transpose()
            .map_err(wrap)?;
        let sdp = sdp_spec
            .map(|s| -> Result<_> {
                let h = sdp_horizon.unwrap_or(s.config.emergency_stop);
                let tau = tau_sdp(&est, &zy, &s.config)?.time;
                Ok((
                    tau,
                    est.smoothed_g_effective_dimension(tau, h)?,
                    est.smoothed_bias_sq(tau, h, zf)?,
                ))
            })
            .transpose()
            .map_err(wrap)?;
        Ok(DeviationDraw { dp, sdp })
    })?;

    let reps = config.replications;
    let count = |pick: &dyn Fn(&DeviationDraw) -> Option<bool>| -> u64 {
        draws.iter().filter(|d| pick(d) == Some(true)).count() as u64
    };
    let mut curves = Vec::new();

    if let Some(b) = balancing {
        let t_star = b.time;
        let v_star = est.proxy_variance(t_star, sigma_sq);
        let b_star = est.bias_sq(t_star, zf)?;
        if !targets.times.is_empty() {
            let counts = targets
                .times
                .iter()
                .map(|&t| count(&|d| d.dp.map(|(tau, _, _)| tau > t)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "dp_time",
                t_star,
                &targets.times,
                counts,
                reps,
            ));
        }
        if !targets.ys.is_empty() {
            let counts = targets
                .ys
                .iter()
                .map(|&y| count(&|d| d.dp.map(|(_, v, _)| v > v_star + y)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "dp_variance",
                t_star,
                &targets.ys,
                counts,
                reps,
            ));
            let counts = targets
                .ys
                .iter()
                .map(|&y| count(&|d| d.dp.map(|(_, _, b2)| b2 > 2.0 * b_star + y)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "dp_bias",
                t_star,
                &targets.ys,
                counts,
                reps,
            ));
        }
    }

    if let (Some(s), Some(h)) = (smoothed, sdp_horizon) {
        let t_star = s.time;
        let dim_star = est.smoothed_g_effective_dimension(t_star, h)?;
        let b_star = est.smoothed_bias_sq(t_star, h, zf)?;
        if !targets.times.is_empty() {
            let counts = targets
                .times
                .iter()
                .map(|&t| count(&|d| d.sdp.map(|(tau, _, _)| tau > t)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "sdp_time",
                t_star,
                &targets.times,
                counts,
                reps,
            ));
        }
        if !targets.ys.is_empty() {
            let counts = targets
                .ys
                .iter()
                .map(|&y| count(&|d| d.sdp.map(|(_, dim, _)| dim > dim_star + y)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "sdp_dimension",
                t_star,
                &targets.ys,
                counts,
                reps,
            ));
            let counts = targets
                .ys
                .iter()
                .map(|&y| count(&|d| d.sdp.map(|(_, _, b2)| b2 > 2.0 * b_star + sigma_sq * y / n)))
                .collect();
            curves.push(DeviationCurve::from_counts(
                "sdp_bias",
                t_star,
                &targets.ys,
                counts,
                reps,
            ));
        }
    }

    Ok(DeviationEstimate {
        replications: reps,
        balancing,
        smoothed_balancing: smoothed,
        curves,
    })
}

/// Smoothed signal coordinates `f̃_j = √(λ_j T / (λ_j T + 1)) f_j`.
pub fn smoothed_coords(
    decomp: &SpectralDecomposition,
    zf: &EmpiricalCoords,
    horizon: f64,
) -> EmpiricalCoords {
    EmpiricalCoords::new(
        decomp
            .eigenvalues()
            .iter()
            .zip(zf.as_slice())
            .map(|(&l, &c)| smoothing_weight(horizon, l).sqrt() * c)
            .collect(),
    )
}
