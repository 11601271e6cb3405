//! Kernel functions on `[0, 1]`, fixed design points and the normalized
//! kernel matrix `(K_n)_ij = k(x_i, x_j) / n`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive-definite kernel on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    /// `k(x, y) = min(x, y)`, the first-order Sobolev kernel.
    Sobolev,
    /// `k(x, y) = exp(-(x - y)^2 / w^2)`.
    Gaussian { bandwidth: f64 },
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Kernel::Gaussian { bandwidth })
    }

    /// Builds a kernel from its CLI name. The bandwidth is required for
    /// `"gaussian"` and ignored for `"sobolev"`.
    pub fn from_name(name: &str, bandwidth: Option<f64>) -> Result<Self> {
        match name {
            "sobolev" => Ok(Kernel::Sobolev),
            "gaussian" => Kernel::gaussian(bandwidth.unwrap_or(0.02)),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Sobolev => "sobolev",
            Kernel::Gaussian { .. } => "gaussian",
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        check_unit(x)?;
        check_unit(y)?;
        if let Kernel::Gaussian { bandwidth } = self {
            if !(*bandwidth > 0.0) {
                return Err(Error::invalid("gaussian bandwidth must be positive"));
            }
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        match *self {
            Kernel::Sobolev => x.min(y),
            Kernel::Gaussian { bandwidth } => {
                let d = (x - y) / bandwidth;
                (-d * d).exp()
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Sobolev => write!(f, "sobolev"),
            Kernel::Gaussian { bandwidth } => write!(f, "gaussian(w={bandwidth})"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::from_name(s, None)
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(format!("point {x} outside [0, 1]")))
    }
}

/// Ordered design points in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    points: Vec<f64>,
}

impl Design {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("design must contain at least one point"));
        }
        for &x in &points {
            check_unit(x)?;
        }
        Ok(Design { points })
    }

    /// Equispaced design `x_i = i / n`, `i = 1..=n`.
    pub fn fixed(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("fixed design needs n >= 1"));
        }
        let nf = n as f64;
        Ok(Design {
            points: (1..=n).map(|i| i as f64 / nf).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// Dense symmetric kernel matrix with the `1/n` normalization applied.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn new(kernel: &Kernel, design: &Design) -> Result<Self> {
        if let Kernel::Gaussian { bandwidth } = kernel {
            if !(*bandwidth > 0.0) {
                return Err(Error::invalid("gaussian bandwidth must be positive"));
            }
        }
        let n = design.len();
        let nf = n as f64;
        let x = design.points();
        let mut entries = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = kernel.eval_unchecked(x[i], x[j]) / nf;
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Ok(KernelMatrix { entries })
    }

    /// Wraps an arbitrary matrix; used for hand-built spectra in tests and
    /// diagnostics. The matrix must be square and symmetric.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::invalid("kernel matrix must be square and non-empty"));
        }
        let n = entries.nrows();
        for j in 0..n {
            for i in 0..j {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::invalid(format!(
                        "kernel matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(KernelMatrix { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Largest diagonal kernel value `max_i k(x_i, x_i)`.
    pub fn max_diagonal_kernel(&self) -> f64 {
        let nf = self.n() as f64;
        self.entries
            .diagonal()
            .iter()
            .fold(0.0_f64, |m, &d| m.max(d * nf))
    }
}

pub fn kernel_matrix(kernel: &Kernel, design: &Design) -> Result<KernelMatrix> {
    KernelMatrix::new(kernel, design)
}
