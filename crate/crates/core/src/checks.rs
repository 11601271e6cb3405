//! Self-checks of the numerical identities and inequalities the library
//! relies on, run on seeded random instances. Backs the CLI `check` command.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::filters::Regularizer;
use crate::kernels::{Design, Kernel, KernelMatrix};
use crate::spectral::{log_grid, EmpiricalCoords, SpectralDecomposition, SpectralEstimator};
use crate::stopping::{balancing_time, data_driven_emergency_stop, tau_dp, StoppingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &'static str, violations: usize, trials: usize) -> Self {
        CheckReport {
            name,
            passed: violations == 0,
            detail: format!("{violations} violations in {trials} checks"),
        }
    }
}

/// Runs every check with the given seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        decomposition(&mut rng)?,
        landweber_recursion(&mut rng)?,
        regularizer_axioms(&mut rng),
        dimension_sandwich(&mut rng)?,
        basic_inequality(&mut rng)?,
        monotonicity(&mut rng)?,
        closed_form_stops()?,
    ])
}

/// Random sorted design of size `n` with a random kernel.
pub fn random_kernel_matrix(rng: &mut impl Rng, n: usize) -> Result<KernelMatrix> {
    let mut pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
    pts.sort_by(f64::total_cmp);
    let kernel = if rng.random_bool(0.5) {
        Kernel::Sobolev
    } else {
        Kernel::gaussian(rng.random_range(0.05..0.5))?
    };
    KernelMatrix::new(&kernel, &Design::new(pts)?)
}

/// Spectrum of `n` eigenvalues in `(0, 1]` with a few exact zeros.
pub fn random_spectrum(rng: &mut impl Rng, n: usize) -> Result<SpectralDecomposition> {
    let eig = (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                0.0
            } else {
                10f64.powf(rng.random_range(-6.0..0.0))
            }
        })
        .collect();
    SpectralDecomposition::from_eigenvalues(eig)
}

pub fn random_coords(rng: &mut impl Rng, n: usize) -> EmpiricalCoords {
    EmpiricalCoords::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Filters exercised by the checks, each with the largest eigenvalue on
/// which its axioms are stated.
pub fn filter_cases() -> Vec<(Regularizer, f64)> {
    vec![
        (Regularizer::Tikhonov, 1.0),
        (Regularizer::Showalter, 1.0),
        (Regularizer::Landweber { eta: 1.0 }, 1.0),
        (Regularizer::Landweber { eta: 2.4 }, 1.0 / 2.4),
    ]
}

fn decomposition(rng: &mut impl Rng) -> Result<CheckReport> {
    let mut bad = 0;
    let trials = 10;
    for _ in 0..trials {
        let n = rng.random_range(1..=50);
        let k = random_kernel_matrix(rng, n)?;
        let d = SpectralDecomposition::new(&k)?;
        let recon = (d.reconstruct() - k.entries()).amax();
        let gram = (d.basis().tr_mul(d.basis()) - nalgebra::DMatrix::identity(n, n)).amax();
        let sorted = d.eigenvalues().windows(2).all(|w| w[0] >= w[1]);
        if recon > 1e-8 * d.lambda_max().max(f64::MIN_POSITIVE) || gram > 1e-10 || !sorted {
            bad += 1;
        }
    }
    Ok(CheckReport::new("decomposition", bad, trials))
}

fn landweber_recursion(rng: &mut impl Rng) -> Result<CheckReport> {
    let mut bad = 0;
    let mut trials = 0;
    for _ in 0..10 {
        let n = rng.random_range(2..=50);
        let k = random_kernel_matrix(rng, n)?;
        let d = SpectralDecomposition::new(&k)?;
        let eta = rng.random_range(0.1..1.9) / d.lambda_max();
        let est = SpectralEstimator::new(&d, Regularizer::Landweber { eta })?;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let yv = DVector::from_column_slice(&y);
        let mut f = DVector::zeros(n);
        for t in 0..=100 {
            if t > 0 {
                f = &f + k.entries() * (&yv - &f) * eta;
            }
            let s = est.estimate(t as f64, &y)?;
            let diff = s
                .iter()
                .zip(f.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            trials += 1;
            if diff > 1e-8 {
                bad += 1;
            }
        }
    }
    Ok(CheckReport::new("landweber-recursion", bad, trials))
}

fn regularizer_axioms(rng: &mut impl Rng) -> CheckReport {
    let mut bad = 0;
    let mut trials = 0;
    for (reg, lmax) in filter_cases() {
        let b_lo = reg.lower_constant();
        let b_up = reg.upper_constant();
        for _ in 0..10_000 {
            let lambda = lmax * (1.0 - rng.random::<f64>());
            let t = rng.random_range(0.0..=1e4);
            let g = reg.filter(t, lambda);
            let s = reg.shrinkage(t, lambda);
            trials += 1;
            let mut ok = (0.0..=1.0).contains(&s) && g <= b_up * t * (1.0 + 1e-12);
            ok &= s >= b_lo * (1.0f64).min(lambda * t) * (1.0 - 1e-12);
            if let Some((q, big_q)) = reg.qualification() {
                if lambda * t >= 1.0 {
                    ok &= reg.residual(t, lambda).abs()
                        <= big_q * (lambda * t).powf(-q) * (1.0 + 1e-12);
                }
            }
            if !ok {
                bad += 1;
            }
        }
    }
    CheckReport::new("regularizer-axioms", bad, trials)
}

fn dimension_sandwich(rng: &mut impl Rng) -> Result<CheckReport> {
    let mut bad = 0;
    let mut trials = 0;
    let grid = log_grid(1e-3, 1e6, 50);
    for _ in 0..20 {
        let n = rng.random_range(1..=60);
        let d = random_spectrum(rng, n)?;
        for (reg, lmax) in filter_cases() {
            let scaled = SpectralDecomposition::from_eigenvalues(
                d.eigenvalues().iter().map(|l| l * lmax).collect(),
            )?;
            let est = SpectralEstimator::new(&scaled, reg)?;
            for &t in &grid {
                let nt = scaled.effective_dimension(t);
                let ng = est.g_effective_dimension(t);
                let hi = 2.0 * reg.upper_constant().max(1.0) * nt;
                trials += 1;
                if ng < reg.lower_constant() * nt * (1.0 - 1e-12) || ng > hi * (1.0 + 1e-12) {
                    bad += 1;
                }
            }
        }
    }
    Ok(CheckReport::new(
        "effective-dimension-sandwich",
        bad,
        trials,
    ))
}

fn basic_inequality(rng: &mut impl Rng) -> Result<CheckReport> {
    let mut bad = 0;
    let mut trials = 0;
    let grid = log_grid(1e-3, 1e6, 50);
    for _ in 0..20 {
        let n = rng.random_range(1..=60);
        let d = random_spectrum(rng, n)?;
        let zf = random_coords(rng, n);
        let sigma_sq = rng.random_range(0.1..2.0);
        for (reg, lmax) in filter_cases() {
            let scaled = SpectralDecomposition::from_eigenvalues(
                d.eigenvalues().iter().map(|l| l * lmax).collect(),
            )?;
            let est = SpectralEstimator::new(&scaled, reg)?;
            for &t in &grid {
                let b2 = est.bias_sq(t, &zf)?;
                let v = est.proxy_variance(t, sigma_sq);
                let mid = est.expected_empirical_risk(t, &zf, sigma_sq)? - sigma_sq;
                let slack = 1e-12 * (b2 + sigma_sq);
                trials += 1;
                if mid < b2 - 2.0 * v - slack || mid > b2 - v + slack {
                    bad += 1;
                }
            }
        }
    }
    Ok(CheckReport::new("basic-inequality", bad, trials))
}

fn monotonicity(rng: &mut impl Rng) -> Result<CheckReport> {
    let mut bad = 0;
    let mut trials = 0;
    let grid = log_grid(1e-3, 1e6, 50);
    for _ in 0..20 {
        let n = rng.random_range(1..=60);
        let d = random_spectrum(rng, n)?;
        let zy = random_coords(rng, n);
        let horizon = rng.random_range(1.0..1e3);
        for (reg, lmax) in filter_cases() {
            let d = SpectralDecomposition::from_eigenvalues(
                d.eigenvalues().iter().map(|l| l * lmax).collect(),
            )?;
            let est = SpectralEstimator::new(&d, reg)?;
            let mut prev: Option<[f64; 6]> = None;
            for &t in &grid {
                let cur = [
                    est.empirical_risk(t, &zy)?,
                    est.smoothed_risk(t, horizon, &zy)?,
                    d.effective_dimension(t),
                    est.g_effective_dimension(t),
                    est.smoothed_g_effective_dimension(t, horizon)?,
                    est.proxy_variance(t, 1.0),
                ];
                trials += 1;
                let tol = 1e-12;
                let mut ok = cur[1] <= cur[0] * (1.0 + tol) && cur[4] <= cur[3] * (1.0 + tol);
                if let Some(p) = prev {
                    ok &= cur[0] <= p[0] * (1.0 + tol) && cur[1] <= p[1] * (1.0 + tol);
                    ok &= (2..6).all(|k| cur[k] >= p[k] * (1.0 - tol));
                }
                if !ok {
                    bad += 1;
                }
                prev = Some(cur);
            }
        }
    }
    Ok(CheckReport::new("monotonicity", bad, trials))
}

fn closed_form_stops() -> Result<CheckReport> {
    let d = SpectralDecomposition::from_eigenvalues(vec![1.0])?;
    let est = SpectralEstimator::new(&d, Regularizer::Tikhonov)?;
    let cfg = StoppingConfig::continuous(1.0, f64::INFINITY);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let dp = tau_dp(&est, &EmpiricalCoords::new(vec![2.0]), &cfg)?.time;
    let bal = balancing_time(&est, &EmpiricalCoords::new(vec![1.0]), &cfg)?.time;
    let emergency = data_driven_emergency_stop(&d, 1e9)?;
    let errors = [
        (dp - 1.0).abs(),
        (bal - golden).abs(),
        (emergency - (1.0 + golden)).abs(),
    ];
    let bad = errors.iter().filter(|&&e| e > 1e-6).count();
    Ok(CheckReport::new(
        "closed-form-stopping-times",
        bad,
        errors.len(),
    ))
}
