//! Eigendecomposition of the kernel matrix and the spectral functionals
//! built on it: fitted values, risks, bias/variance terms and effective
//! dimensions.
//!
//! The eigenbasis is stored Euclidean-orthonormal (`u_j`). Coordinates in the
//! empirical inner product `<a, b>_n = (1/n) Σ a_i b_i` are `(u_jᵀ a) / √n`,
//! so `‖a‖_n² = Σ_j coeffs_j²`. That conversion happens only in
//! [`SpectralDecomposition::coords`] and [`SpectralDecomposition::vector`].

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Regularizer;
use crate::kernels::KernelMatrix;
use crate::report::fmt_f64;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
}

impl SpectralDecomposition {
    /// Symmetric eigendecomposition with eigenvalues sorted descending and
    /// negative jitter clamped to zero.
    pub fn new(k: &KernelMatrix) -> Result<Self> {
        let m = k.entries().clone();
        let n = m.nrows();
        let frob = m.norm();
        let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100 * n.max(10)).ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (n = {n}, frobenius norm = {frob:e})"
            ))
        })?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut eigenvalues = Vec::with_capacity(n);
        let mut basis = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let lam = eig.eigenvalues[src];
            if !lam.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite eigenvalue {lam} (n = {n}, frobenius norm = {frob:e})"
                )));
            }
            eigenvalues.push(lam.max(0.0));
            basis.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(SpectralDecomposition { eigenvalues, basis })
    }

    /// Decomposition with the given eigenvalues and the identity basis.
    /// Sorts descending and clamps negatives.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum must be non-empty"));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("eigenvalues must be finite"));
        }
        let n = eigenvalues.len();
        for l in &mut eigenvalues {
            *l = l.max(0.0);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
        let mut basis = DMatrix::zeros(n, n);
        let sorted = order
            .iter()
            .enumerate()
            .map(|(dst, &src)| {
                basis[(src, dst)] = 1.0;
                eigenvalues[src]
            })
            .collect();
        Ok(SpectralDecomposition {
            eigenvalues: sorted,
            basis,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Euclidean-orthonormal eigenvectors as columns.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.basis * lam * self.basis.transpose()
    }

    pub fn coords(&self, a: &[f64]) -> Result<EmpiricalCoords> {
        let n = self.n();
        if a.len() != n {
            return Err(Error::invalid(format!(
                "vector length {} does not match n = {n}",
                a.len()
            )));
        }
        let v = DVector::from_column_slice(a);
        let scale = 1.0 / (n as f64).sqrt();
        let coeffs = (self.basis.tr_mul(&v) * scale).data.into();
        Ok(EmpiricalCoords { coeffs })
    }

    /// Inverse of [`coords`](Self::coords): `a = √n Σ_j c_j u_j`.
    pub fn vector(&self, c: &EmpiricalCoords) -> Vec<f64> {
        let scale = (self.n() as f64).sqrt();
        let v = &self.basis * DVector::from_column_slice(&c.coeffs) * scale;
        v.data.into()
    }

    /// `N_n(t) = Σ_j λ_j t / (λ_j t + 1)`.
    pub fn effective_dimension(&self, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .map(|&l| Regularizer::Tikhonov.shrinkage(t, l))
            .sum()
    }

    /// Largest tail-to-next-eigenvalue ratio `Σ_{j>k} λ_j / (λ_{k+1} k)`
    /// over all `k >= 1` with `λ_k T >= 1`. A zero next eigenvalue has a zero
    /// tail and contributes `0`; no qualifying `k` gives `0`.
    pub fn effective_rank_diagnostic(&self, horizon: f64) -> Result<f64> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let lam = &self.eigenvalues;
        let n = lam.len();
        let mut tail: Vec<f64> = vec![0.0; n + 1];
        for j in (0..n).rev() {
            tail[j] = tail[j + 1] + lam[j];
        }
        let mut worst = 0.0_f64;
        // k counts leading eigenvalues; lam[k] is λ_{k+1} in 1-based terms.
        for k in 1..n {
            if lam[k - 1] * horizon < 1.0 {
                break;
            }
            let next = lam[k];
            if next <= 0.0 {
                break;
            }
            let ratio = (tail[k] / next) / k as f64;
            worst = worst.max(ratio);
        }
        Ok(worst)
    }
}

pub fn decompose(k: &KernelMatrix) -> Result<SpectralDecomposition> {
    SpectralDecomposition::new(k)
}

/// Coordinates `⟨v̂_j, a⟩_n` of a vector in the empirical eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCoords {
    coeffs: Vec<f64>,
}

impl EmpiricalCoords {
    pub fn new(coeffs: Vec<f64>) -> Self {
        EmpiricalCoords { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        EmpiricalCoords {
            coeffs: vec![0.0; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `‖a‖_n²`.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// A regularizer bound to a spectrum it is stable on. All risk and dimension
/// functionals that depend on the filter live here.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimator<'a> {
    decomp: &'a SpectralDecomposition,
    reg: Regularizer,
}

impl<'a> SpectralEstimator<'a> {
    pub fn new(decomp: &'a SpectralDecomposition, reg: Regularizer) -> Result<Self> {
        reg.check_stable(decomp.lambda_max())?;
        Ok(SpectralEstimator { decomp, reg })
    }

    pub fn decomposition(&self) -> &'a SpectralDecomposition {
        self.decomp
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    pub fn n(&self) -> usize {
        self.decomp.n()
    }

    pub fn supports_continuous_time(&self) -> bool {
        self.reg.supports_continuous_time(self.decomp.lambda_max())
    }

    fn lambdas(&self) -> &'a [f64] {
        &self.decomp.eigenvalues
    }

    fn check_len(&self, c: &EmpiricalCoords) -> Result<()> {
        if c.len() != self.n() {
            return Err(Error::invalid(format!(
                "coordinate length {} does not match n = {}",
                c.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Fitted values `K_n g_t(K_n) Y`.
    pub fn estimate(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let zy = self.decomp.coords(y)?;
        Ok(self.decomp.vector(&self.fitted_coords(t, &zy)))
    }

    pub fn fitted_coords(&self, t: f64, zy: &EmpiricalCoords) -> EmpiricalCoords {
        let coeffs = self
            .lambdas()
            .iter()
            .zip(zy.as_slice())
            .map(|(&l, &c)| self.reg.shrinkage(t, l) * c)
            .collect();
        EmpiricalCoords { coeffs }
    }

    /// `Σ_j w_j r_t(λ_j)² c_j²` with weights supplied per eigenvalue.
    #[inline]
    fn weighted_residual(&self, t: f64, c: &[f64], weight: impl Fn(f64) -> f64) -> f64 {
        self.lambdas()
            .iter()
            .zip(c)
            .map(|(&l, &c)| {
                let r = self.reg.residual(t, l);
                weight(l) * r * r * c * c
            })
            .sum()
    }

    /// `‖Y - f̂^(t)‖_n²`.
    pub fn empirical_risk(&self, t: f64, zy: &EmpiricalCoords) -> Result<f64> {
        self.check_len(zy)?;
        Ok(self.weighted_residual(t, zy.as_slice(), |_| 1.0))
    }

    /// Residual norm after Tikhonov smoothing with horizon `T`:
    /// `Σ_j [λ_j T / (λ_j T + 1)] r_t(λ_j)² zY_j²`.
    pub fn smoothed_risk(&self, t: f64, horizon: f64, zy: &EmpiricalCoords) -> Result<f64> {
        check_horizon(horizon)?;
        self.check_len(zy)?;
        Ok(self.weighted_residual(t, zy.as_slice(), |l| smoothing_weight(horizon, l)))
    }

    /// `N_n^g(t) = Σ_j λ_j g_t(λ_j)`.
    pub fn g_effective_dimension(&self, t: f64) -> f64 {
        self.lambdas()
            .iter()
            .map(|&l| self.reg.shrinkage(t, l))
            .sum()
    }

    /// `Ñ_n^g(t) = Σ_j [λ_j T / (λ_j T + 1)] λ_j g_t(λ_j)`.
    pub fn smoothed_g_effective_dimension(&self, t: f64, horizon: f64) -> Result<f64> {
        check_horizon(horizon)?;
        Ok(self
            .lambdas()
            .iter()
            .map(|&l| smoothing_weight(horizon, l) * self.reg.shrinkage(t, l))
            .sum())
    }

    /// Squared bias `b_t² = ‖r_t(K_n) f‖_n²`.
    pub fn bias_sq(&self, t: f64, zf: &EmpiricalCoords) -> Result<f64> {
        self.empirical_risk(t, zf)
    }

    /// Smoothed squared bias `‖r_t(K_n) f̃‖_n²` with
    /// `f̃_j = √(λ_j T / (λ_j T + 1)) f_j`.
    pub fn smoothed_bias_sq(&self, t: f64, horizon: f64, zf: &EmpiricalCoords) -> Result<f64> {
        self.smoothed_risk(t, horizon, zf)
    }

    /// Proxy variance `v_t = σ² N_n^g(t) / n`.
    pub fn proxy_variance(&self, t: f64, sigma_sq: f64) -> f64 {
        sigma_sq * self.g_effective_dimension(t) / self.n() as f64
    }

    /// `(σ²/n) tr(g_t(K_n)² K_n²)`.
    pub fn variance_term(&self, t: f64, sigma_sq: f64) -> f64 {
        let s: f64 = self
            .lambdas()
            .iter()
            .map(|&l| {
                let s = self.reg.shrinkage(t, l);
                s * s
            })
            .sum();
        sigma_sq * s / self.n() as f64
    }

    /// `E_ε ‖f - f̂^(t)‖_n² = b_t² + (σ²/n) tr(g_t² K_n²)`.
    pub fn expected_risk(&self, t: f64, zf: &EmpiricalCoords, sigma_sq: f64) -> Result<f64> {
        Ok(self.bias_sq(t, zf)? + self.variance_term(t, sigma_sq))
    }

    /// `E_ε ‖Y - f̂^(t)‖_n² = b_t² + (σ²/n) Σ_j r_t(λ_j)²`.
    pub fn expected_empirical_risk(
        &self,
        t: f64,
        zf: &EmpiricalCoords,
        sigma_sq: f64,
    ) -> Result<f64> {
        let noise: f64 = self
            .lambdas()
            .iter()
            .map(|&l| {
                let r = self.reg.residual(t, l);
                r * r
            })
            .sum();
        Ok(self.bias_sq(t, zf)? + sigma_sq * noise / self.n() as f64)
    }

    /// Realized loss `‖f - f̂^(t)‖_n²` from coordinates of the signal and the
    /// observations.
    pub fn loss(&self, t: f64, zy: &EmpiricalCoords, zf: &EmpiricalCoords) -> Result<f64> {
        self.check_len(zy)?;
        self.check_len(zf)?;
        Ok(self
            .lambdas()
            .iter()
            .zip(zy.as_slice().iter().zip(zf.as_slice()))
            .map(|(&l, (&y, &f))| {
                let d = f - self.reg.shrinkage(t, l) * y;
                d * d
            })
            .sum())
    }
}

/// `λT / (λT + 1)`, the spectral weight of the Tikhonov smoother.
#[inline]
pub(crate) fn smoothing_weight(horizon: f64, lambda: f64) -> f64 {
    Regularizer::Tikhonov.shrinkage(horizon, lambda)
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "smoothing horizon must be positive, got {horizon}"
        )))
    }
}

/// A scalar functional sampled on an increasing time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl RiskCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::invalid("grid and values differ in length"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(RiskCurve { grid, values })
    }

    /// Samples `f` on `grid`.
    pub fn tabulate(grid: Vec<f64>, f: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        let values = grid.iter().copied().map(f).collect::<Result<Vec<_>>>()?;
        RiskCurve::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_non_increasing(&self, rel_tol: f64) -> bool {
        self.values
            .windows(2)
            .all(|w| w[1] <= w[0] + rel_tol * w[0].abs().max(w[1].abs()))
    }

    pub fn is_non_decreasing(&self, rel_tol: f64) -> bool {
        self.values
            .windows(2)
            .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(w[1].abs()))
    }

    /// Two-column CSV `t,value` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.grid.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*v));
        }
        out
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}
