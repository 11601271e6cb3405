//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use earlystop::report::summary_csv;
use earlystop::simulation::{
    estimate_deviation, run_experiment, DeviationTargets, ExperimentResult, Preset,
};
use earlystop::spectral::log_grid;
use earlystop::stopping::{balancing_time, data_driven_emergency_stop, tau_dp, StoppingRule};
use earlystop::{
    Design, EmpiricalCoords, Kernel, KernelMatrix, Regularizer, SpectralDecomposition,
    SpectralEstimator, StoppingConfig,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SEED: u64 = 20_240_601;

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> KernelMatrix {
    let mut pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
    pts.sort_by(f64::total_cmp);
    let kernel = if rng.random_bool(0.5) {
        Kernel::Sobolev
    } else {
        Kernel::gaussian(rng.random_range(0.05..0.5)).unwrap()
    };
    KernelMatrix::new(&kernel, &Design::new(pts).unwrap()).unwrap()
}

fn random_spectrum(rng: &mut ChaCha8Rng, n: usize, lmax: f64) -> SpectralDecomposition {
    let mut eig: Vec<f64> = (0..n)
        .map(|_| lmax * 10f64.powf(rng.random_range(-6.0..0.0)))
        .collect();
    eig[0] = lmax;
    if n > 3 {
        eig[n - 1] = 0.0;
    }
    SpectralDecomposition::from_eigenvalues(eig).unwrap()
}

/// The three filter families with the top eigenvalue their axioms are
/// checked on. Landweber needs `η λ_max <= 1` for (BdF) at non-integer t.
fn filters() -> Vec<(Regularizer, f64)> {
    vec![
        (Regularizer::Tikhonov, 1.0),
        (Regularizer::Showalter, 1.0),
        (Regularizer::Landweber { eta: 1.0 }, 1.0),
        (Regularizer::Landweber { eta: 2.4 }, 1.0 / 2.4),
    ]
}

fn c1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut worst_fit, mut worst_risk) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let k = random_instance(&mut rng, n);
        let d = SpectralDecomposition::new(&k).map_err(|e| e.to_string())?;
        let eta = rng.random_range(0.2..1.9) / d.lambda_max();
        let est = SpectralEstimator::new(&d, Regularizer::Landweber { eta }).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zy = d.coords(&y).unwrap();
        let yv = DVector::from_column_slice(&y);
        let mut f = DVector::<f64>::zeros(n);
        for t in 0..=100u32 {
            if t > 0 {
                f = &f + k.entries() * (&yv - &f) * eta;
            }
            let spectral = est.estimate(t as f64, &y).unwrap();
            let diff = spectral
                .iter()
                .zip(f.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_fit = worst_fit.max(diff);
            let direct = (&yv - &f).norm_squared() / n as f64;
            let risk = est.empirical_risk(t as f64, &zy).unwrap();
            worst_risk = worst_risk.max((risk - direct).abs() / direct);
        }
    }
    let detail = format!(
        "max |spectral - iterative| = {worst_fit:.2e}, max rel risk error = {worst_risk:.2e}"
    );
    if worst_fit <= 1e-8 && worst_risk <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c2_regularizer_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut violations = Vec::new();
    let mut checked = 0;
    for (reg, lmax) in filters() {
        let big_b = match reg {
            Regularizer::Landweber { eta } => eta,
            _ => 1.0,
        };
        for _ in 0..10_000 {
            let lambda = lmax * (1.0 - rng.random::<f64>());
            let t = rng.random_range(0.0..=1e4);
            let g = reg.filter(t, lambda);
            let lg = lambda * g;
            checked += 1;
            let bdf = (-1e-15..=1.0 + 1e-15).contains(&lg);
            let lfu = g <= big_b * t * (1.0 + 1e-12);
            let lfl = lg >= 0.5 * (1.0f64).min(lambda * t) * (1.0 - 1e-12);
            let qual_ok = match reg {
                Regularizer::Tikhonov if lambda * t >= 1.0 => {
                    reg.residual(t, lambda).abs() <= (lambda * t).recip() * (1.0 + 1e-12)
                }
                _ => true,
            };
            if !(bdf && lfu && lfl && qual_ok) {
                violations.push(format!("{reg} t={t} λ={lambda}"));
            }
        }
    }
    let detail = format!(
        "{} violations over {checked} (λ, t) pairs",
        violations.len()
    );
    if violations.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {}", violations[0]))
    }
}

fn c3_dimension_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let grid = log_grid(1e-3, 1e7, 50);
    let mut bad = 0;
    let mut checked = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=80);
        for (reg, lmax) in filters() {
            let d = random_spectrum(&mut rng, n, lmax);
            let est = SpectralEstimator::new(&d, reg).unwrap();
            let b_up = reg.upper_constant().max(1.0);
            for &t in &grid {
                // independent evaluation of N_n(t)
                let nt: f64 = d.eigenvalues().iter().map(|&l| l * t / (l * t + 1.0)).sum();
                let ng = est.g_effective_dimension(t);
                checked += 1;
                if ng < 0.5 * nt * (1.0 - 1e-12) || ng > 2.0 * b_up * nt * (1.0 + 1e-12) {
                    bad += 1;
                }
            }
        }
    }
    let detail = format!("{bad} violations over {checked} (spectrum, filter, t) points");
    if bad == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c4_basic_inequality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let grid = log_grid(1e-3, 1e7, 50);
    let mut bad = 0;
    let mut checked = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=80);
        let zf = EmpiricalCoords::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let sigma_sq = rng.random_range(0.05..3.0);
        for (reg, lmax) in filters() {
            let d = random_spectrum(&mut rng, n, lmax);
            let est = SpectralEstimator::new(&d, reg).unwrap();
            for &t in &grid {
                let lam = d.eigenvalues();
                let b2: f64 = lam
                    .iter()
                    .zip(zf.as_slice())
                    .map(|(&l, &c)| (reg.residual(t, l) * c).powi(2))
                    .sum();
                let v =
                    sigma_sq / n as f64 * lam.iter().map(|&l| l * reg.filter(t, l)).sum::<f64>();
                let expected_emp = b2
                    + sigma_sq / n as f64
                        * lam.iter().map(|&l| reg.residual(t, l).powi(2)).sum::<f64>();
                let lib = est.expected_empirical_risk(t, &zf, sigma_sq).unwrap();
                let mid = expected_emp - sigma_sq;
                let slack = 1e-12 * (b2 + sigma_sq);
                checked += 1;
                if mid < b2 - 2.0 * v - slack
                    || mid > b2 - v + slack
                    || (lib - expected_emp).abs() > 1e-12 * expected_emp
                {
                    bad += 1;
                }
            }
        }
    }
    let detail = format!("{bad} violations over {checked} grid points");
    if bad == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c5_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let grid = log_grid(1e-3, 1e7, 50);
    let mut bad = Vec::new();
    let mut checked = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=80);
        let zy = EmpiricalCoords::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let horizon = 10f64.powf(rng.random_range(0.0..4.0));
        for (reg, lmax) in filters() {
            let d = random_spectrum(&mut rng, n, lmax);
            let est = SpectralEstimator::new(&d, reg).unwrap();
            let series: Vec<[f64; 7]> = grid
                .iter()
                .map(|&t| {
                    [
                        est.empirical_risk(t, &zy).unwrap(),
                        est.bias_sq(t, &zy).unwrap(),
                        est.smoothed_risk(t, horizon, &zy).unwrap(),
                        d.effective_dimension(t),
                        est.g_effective_dimension(t),
                        est.smoothed_g_effective_dimension(t, horizon).unwrap(),
                        est.proxy_variance(t, 1.0),
                    ]
                })
                .collect();
            let tol = 1e-12;
            for (i, cur) in series.iter().enumerate() {
                checked += 1;
                if cur[2] > cur[0] * (1.0 + tol) || cur[5] > cur[4] * (1.0 + tol) {
                    bad.push(format!(
                        "{reg}: smoothed exceeds unsmoothed at t={}",
                        grid[i]
                    ));
                }
                if i == 0 {
                    continue;
                }
                let prev = &series[i - 1];
                for k in 0..3 {
                    if cur[k] > prev[k] * (1.0 + tol) {
                        bad.push(format!("{reg}: functional {k} increases at t={}", grid[i]));
                    }
                }
                for k in 3..7 {
                    if cur[k] < prev[k] * (1.0 - tol) {
                        bad.push(format!("{reg}: functional {k} decreases at t={}", grid[i]));
                    }
                }
            }
        }
    }
    let detail = format!("{} violations over {checked} grid points", bad.len());
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first: {}", bad[0]))
    }
}

/// Index of the first grid point where `gap <= 0`.
fn scan(grid: &[f64], gap: impl Fn(f64) -> f64) -> Option<usize> {
    grid.iter().position(|&t| gap(t) <= 0.0)
}

/// Continuous answer `t` lies within one grid step of the scan's crossing.
fn within_one_step(grid: &[f64], idx: Option<usize>, t: f64, hit: bool) -> bool {
    match idx {
        None => hit,
        Some(0) => t <= grid[0],
        Some(i) => !hit && t >= grid[i - 1] && t <= grid[i] * (1.0 + 1e-9),
    }
}

fn c6_stopping_correctness() -> Outcome {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let one = SpectralDecomposition::from_eigenvalues(vec![1.0]).unwrap();
    let tik = SpectralEstimator::new(&one, Regularizer::Tikhonov).unwrap();
    let inf = StoppingConfig::continuous(1.0, f64::INFINITY);
    let dp = tau_dp(&tik, &EmpiricalCoords::new(vec![2.0]), &inf)
        .unwrap()
        .time;
    let bal = balancing_time(&tik, &EmpiricalCoords::new(vec![1.0]), &inf)
        .unwrap()
        .time;
    let that = data_driven_emergency_stop(&one, 1e12).unwrap();
    let closed = [(dp, 1.0), (bal, golden), (that, 1.0 + golden)];
    if let Some((got, want)) = closed.iter().find(|(g, w)| (g - w).abs() > 1e-6) {
        return Err(format!("closed form mismatch: got {got}, want {want}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let cap = 1e5;
    let grid = log_grid(1e-4, cap, 10_000);
    let mut instances = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=30);
        let k = random_instance(&mut rng, n);
        let d = SpectralDecomposition::new(&k).unwrap();
        let reg = if rng.random_bool(0.5) {
            Regularizer::Tikhonov
        } else {
            Regularizer::Showalter
        };
        let est = SpectralEstimator::new(&d, reg).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zy = d.coords(&y).unwrap();
        let zf = EmpiricalCoords::new(zy.as_slice().iter().map(|c| 0.7 * c).collect());
        let sigma_sq = zy.norm_sq() * rng.random_range(0.02..0.9);
        let cfg = StoppingConfig::continuous(sigma_sq, cap);

        let out = tau_dp(&est, &zy, &cfg).unwrap();
        let idx = scan(&grid, |t| est.empirical_risk(t, &zy).unwrap() - sigma_sq);
        if !within_one_step(&grid, idx, out.time, out.hit_emergency) {
            return Err(format!("tau_dp {} vs scan index {idx:?} (n={n})", out.time));
        }

        let out = balancing_time(&est, &zf, &cfg).unwrap();
        let idx = scan(&grid, |t| {
            est.bias_sq(t, &zf).unwrap() - est.proxy_variance(t, sigma_sq)
        });
        if !within_one_step(&grid, idx, out.time, out.hit_emergency) {
            return Err(format!(
                "balancing {} vs scan index {idx:?} (n={n})",
                out.time
            ));
        }

        let that = data_driven_emergency_stop(&d, cap).unwrap();
        let nf = n as f64;
        let idx = scan(&grid, |t| nf - t * d.effective_dimension(t));
        if !within_one_step(&grid, idx, that, that >= cap) {
            return Err(format!(
                "emergency stop {that} vs scan index {idx:?} (n={n})"
            ));
        }
        instances += 1;
    }
    Ok(format!(
        "closed forms within 1e-6; {instances} random instances agree with a 10^4-point scan"
    ))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Paired per-replication difference `loss(worse) - loss(better)`.
fn paired_gap(res: &ExperimentResult, better: StoppingRule, worse: StoppingRule) -> (f64, f64) {
    let a = &res.rule(better).unwrap().losses;
    let b = &res.rule(worse).unwrap().losses;
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    mean_se(&d)
}

fn c7_inner_ordering() -> Outcome {
    let start = Instant::now();
    let mut cfg = Preset::InnerSobolev.expand(200);
    cfg.replications = 50;
    cfg.seed = SEED;
    let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    use StoppingRule::*;
    let chain = [(Oracle, Balancing), (Balancing, Sdp), (Sdp, Dp)];
    let mut parts = Vec::new();
    let mut ok = true;
    for (better, worse) in chain {
        let (gap, se) = paired_gap(&res, better, worse);
        ok &= gap >= se && gap > 0.0;
        parts.push(format!("{worse}-{better} = {gap:.3e} (se {se:.1e})"));
    }
    let sd_sdp = res.rule(Sdp).unwrap().sd_tau;
    let sd_dp = res.rule(Dp).unwrap().sd_tau;
    ok &= sd_sdp < sd_dp;
    ok &= elapsed < 60.0;
    let means: Vec<String> = [Oracle, Balancing, Sdp, Dp]
        .iter()
        .map(|r| format!("{r}={:.4e}", res.rule(*r).unwrap().mean_loss))
        .collect();
    let detail = format!(
        "mean loss {}; {}; sd tau sdp={sd_sdp:.2} dp={sd_dp:.2}; {elapsed:.1}s",
        means.join(" "),
        parts.join(", ")
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_outer_ordering() -> Outcome {
    let mut dp_means = Vec::new();
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [100, 200] {
        let mut cfg = Preset::OuterSobolev.expand(n);
        cfg.replications = 50;
        cfg.seed = SEED;
        let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let dp = res.rule(StoppingRule::Dp).unwrap().mean_loss;
        let sdp = res.rule(StoppingRule::Sdp).unwrap().mean_loss;
        ok &= dp < sdp;
        dp_means.push(dp);
        parts.push(format!("n={n}: dp={dp:.4e} sdp={sdp:.4e}"));
    }
    ok &= dp_means[1] < dp_means[0];
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn non_increasing_with_slack(freq: &[f64], low: &[f64], high: &[f64]) -> bool {
    (1..freq.len()).all(|i| freq[i] <= freq[i - 1] || low[i] <= high[i - 1])
}

fn c9_deviation_monotonicity() -> Outcome {
    let mut cfg = Preset::InnerSobolev.expand(100);
    cfg.replications = 2000;
    cfg.seed = SEED;
    // locate the balancing time first so the time targets satisfy t > t_n*
    let probe = estimate_deviation(
        &cfg,
        &DeviationTargets {
            times: vec![],
            ys: vec![1e-3],
        },
    )
    .map_err(|e| e.to_string())?;
    let t_star = probe.balancing.unwrap().time;
    let times: Vec<f64> = [1.0, 3.0, 6.0, 10.0, 20.0]
        .iter()
        .map(|d| t_star + d)
        .collect();
    let ys = vec![0.005, 0.01, 0.02, 0.05, 0.1];
    let est =
        estimate_deviation(&cfg, &DeviationTargets { times, ys }).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for event in ["dp_time", "dp_bias"] {
        let c = est.curve(event).ok_or(format!("missing curve {event}"))?;
        ok &= c.frequencies.iter().all(|f| (0.0..=1.0).contains(f));
        ok &= non_increasing_with_slack(&c.frequencies, &c.wilson_low, &c.wilson_high);
        let f: Vec<String> = c.frequencies.iter().map(|f| format!("{f:.3}")).collect();
        parts.push(format!("{event} [{}]", f.join(", ")));
    }
    let detail = format!("t* = {t_star}; {}", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c10_determinism() -> Outcome {
    let mut sizes = Vec::new();
    for preset in Preset::ALL {
        let mut cfg = preset.expand(100);
        cfg.replications = 20;
        cfg.seed = SEED;
        let a = summary_csv(&[run_experiment(&cfg).map_err(|e| e.to_string())?]);
        let b = summary_csv(&[run_experiment(&cfg).map_err(|e| e.to_string())?]);
        if a != b {
            return Err(format!("{} produced different CSV output", preset.name()));
        }
        sizes.push(format!("{}: {} bytes", preset.name(), a.len()));
    }
    Ok(format!(
        "identical CSV across reruns ({})",
        sizes.join(", ")
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle-equivalence", c1_oracle_equivalence),
        ("regularizer-axioms", c2_regularizer_axioms),
        ("effective-dimension-sandwich", c3_dimension_sandwich),
        ("basic-inequality", c4_basic_inequality),
        ("monotonicity", c5_monotonicity),
        ("stopping-rule-correctness", c6_stopping_correctness),
        ("inner-case-ordering", c7_inner_ordering),
        ("outer-case-ordering", c8_outer_ordering),
        ("deviation-monotonicity", c9_deviation_monotonicity),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
