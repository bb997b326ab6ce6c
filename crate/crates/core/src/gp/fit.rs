//! Type-II maximum likelihood for kernel hyperparameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cholesky_jittered, gram_matrix, Dataset, GpModel, KernelSpec, JITTER_LADDER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of optimizer starts. The first starts from the initial spec.
    pub restarts: usize,
    pub max_iterations: usize,
    pub lengthscale_bounds: (f64, f64),
    pub signal_variance_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iterations: 100,
            lengthscale_bounds: (0.01, 20.0),
            signal_variance_bounds: (0.01, 100.0),
        }
    }
}

/// Gaussian log marginal likelihood of `data` under `kernel`.
pub fn log_marginal_likelihood(kernel: &KernelSpec, data: &Dataset) -> Result<f64> {
    Ok(GpModel::condition(kernel.clone(), data.clone())?.log_marginal_likelihood())
}

/// Fits lengthscales and signal variance by maximizing the log marginal
/// likelihood; the noise variance stays at the dataset's value.
pub fn fit<R: Rng + ?Sized>(data: &Dataset, spec0: &KernelSpec, options: &FitOptions, rng: &mut R) -> Result<GpModel> {
    if data.len() < 2 {
        return Err(Error::invalid("fitting needs at least two observations"));
    }
    Error::check_dim(spec0.dim(), data.dim())?;
    if options.restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let objective = Objective::new(data, spec0, options);
    let d = spec0.dim();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for restart in 0..options.restarts {
        let start = if restart == 0 {
            objective.encode(spec0)
        } else {
            let ls: Vec<f64> = (0..d).map(|_| log_uniform(rng, 0.1, 3.0)).collect();
            let sv = log_uniform(rng, 0.5, 2.0);
            objective.encode(&KernelSpec { family: spec0.family, lengthscales: ls, signal_variance: sv })
        };
        if let Some((value, u)) = lbfgs(&objective, start, options.max_iterations) {
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, u));
            }
        }
    }
    match best {
        Some((_, u)) => GpModel::condition(objective.decode(&u), data.clone()),
        None => Err(Error::Numerical {
            context: "hyperparameter fit".to_string(),
            jitter_ladder: JITTER_LADDER.to_vec(),
        }),
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Negative LML over unconstrained coordinates `u`; each log-hyperparameter
/// is `lo + (hi - lo) * sigmoid(u)`.
struct Objective<'a> {
    data: &'a Dataset,
    family: super::KernelFamily,
    log_bounds: Vec<(f64, f64)>,
}

impl<'a> Objective<'a> {
    fn new(data: &'a Dataset, spec0: &KernelSpec, options: &FitOptions) -> Self {
        let (ll, lh) = options.lengthscale_bounds;
        let (sl, sh) = options.signal_variance_bounds;
        let mut log_bounds = vec![(ll.ln(), lh.ln()); spec0.dim()];
        log_bounds.push((sl.ln(), sh.ln()));
        Self { data, family: spec0.family, log_bounds }
    }

    fn encode(&self, spec: &KernelSpec) -> DVector<f64> {
        let logs = spec.lengthscales.iter().chain(std::iter::once(&spec.signal_variance)).map(|v| v.ln());
        DVector::from_iterator(
            self.log_bounds.len(),
            logs.zip(&self.log_bounds).map(|(v, &(lo, hi))| {
                let s = ((v - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
                (s / (1.0 - s)).ln()
            }),
        )
    }

    fn log_params(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter().zip(&self.log_bounds).map(|(&u, &(lo, hi))| lo + (hi - lo) * sigmoid(u)).collect()
    }

    fn decode(&self, u: &DVector<f64>) -> KernelSpec {
        let p = self.log_params(u);
        let d = p.len() - 1;
        KernelSpec {
            family: self.family,
            lengthscales: p[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: p[d].exp(),
        }
    }

    /// Negative LML and its gradient in `u`, or `None` if the covariance cannot be factored.
    fn evaluate(&self, u: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let kernel = self.decode(u);
        let sites = self.data.sites();
        let n = sites.len();
        let d = kernel.dim();
        let gram = gram_matrix(&kernel, sites, self.data.noise_variance());
        let (chol, _) = cholesky_jittered(gram, "likelihood").ok()?;
        let y = DVector::from_column_slice(self.data.values());
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let nll = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        if !nll.is_finite() {
            return None;
        }
        let w: DMatrix<f64> = &alpha * alpha.transpose() - chol.inverse();

        // grad[0..d] w.r.t. ln l_i, grad[d] w.r.t. ln sigma^2, of the LML.
        let mut grad = vec![0.0; d + 1];
        let mut t2 = vec![0.0; d];
        for i in 0..n {
            grad[d] += 0.5 * w[(i, i)] * kernel.signal_variance;
            for j in 0..i {
                let mut r2 = 0.0;
                for k in 0..d {
                    let t = (sites[i][k] - sites[j][k]) / kernel.lengthscales[k];
                    t2[k] = t * t;
                    r2 += t2[k];
                }
                let wij = w[(i, j)];
                grad[d] += wij * kernel.from_sq_dist(r2);
                let g = wij * kernel.lengthscale_factor(r2);
                for k in 0..d {
                    grad[k] += g * t2[k];
                }
            }
        }
        let chain = u.iter().zip(&self.log_bounds).map(|(&u, &(lo, hi))| {
            let s = sigmoid(u);
            (hi - lo) * s * (1.0 - s)
        });
        let grad = DVector::from_iterator(d + 1, grad.iter().zip(chain).map(|(g, c)| -g * c));
        Some((nll, grad))
    }
}

/// Limited-memory BFGS with a backtracking Armijo line search.
fn lbfgs(objective: &Objective<'_>, mut x: DVector<f64>, max_iterations: usize) -> Option<(f64, DVector<f64>)> {
    const MEMORY: usize = 8;
    let (mut f, mut g) = objective.evaluate(&x)?;
    let mut history: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();
    for _ in 0..max_iterations {
        if g.amax() < 1e-6 {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut coefficients = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q -= a * y;
            coefficients.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in history.iter().zip(coefficients.iter().rev()) {
            let b = rho * y.dot(&q);
            q += (a - b) * s;
        }
        let mut direction = -q;
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) {
            history.clear();
            direction = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = if history.is_empty() { 1.0 / g.amax().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &x + step * &direction;
            if let Some((fc, gc)) = objective.evaluate(&candidate) {
                if fc <= f + 1e-4 * step * slope {
                    accepted = Some((candidate, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else { break };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let improvement = f - f_new;
        x = x_new;
        g = g_new;
        f = f_new;
        if sy > 1e-12 {
            history.push((s, y, 1.0 / sy));
            if history.len() > MEMORY {
                history.remove(0);
            }
        }
        if improvement.abs() <= 1e-10 * f.abs().max(1.0) {
            break;
        }
    }
    Some((f, x))
}
