use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern52,
    SquaredExponential,
}

/// Stationary anisotropic covariance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
}

const SQRT5: f64 = 2.236_067_977_499_79;

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::invalid("kernel needs at least one lengthscale"));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("lengthscales must be positive and finite"));
        }
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::invalid("signal variance must be positive and finite"));
        }
        Ok(Self { family, lengthscales, signal_variance })
    }

    pub fn isotropic(family: KernelFamily, dim: usize, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(family, vec![lengthscale; dim], signal_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Squared anisotropically scaled distance.
    #[inline]
    pub(crate) fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let t = (a - b) / l;
            r2 += t * t;
        }
        r2
    }

    #[inline]
    pub(crate) fn from_sq_dist(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                self.signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
            KernelFamily::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
        }
    }

    /// `g(r)` such that the derivative with respect to `ln l_i` is `g(r) * (dx_i / l_i)^2`.
    #[inline]
    pub(crate) fn lengthscale_factor(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                self.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
            KernelFamily::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
        }
    }

    /// Kernel value without dimension checks.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.from_sq_dist(self.scaled_sq_dist(x, y))
    }
}

/// `k(x, x')` for the given kernel.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Error::check_dim(spec.dim(), x.len())?;
    Error::check_dim(spec.dim(), y.len())?;
    Ok(spec.eval_unchecked(x, y))
}
