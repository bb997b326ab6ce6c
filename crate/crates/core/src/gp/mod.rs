//! Exact Gaussian-process regression with a zero prior mean.
//!
//! Models live on the unit box `[0,1]^d`; callers normalize inputs and
//! standardize outputs before building a [`Dataset`]. A fitted [`GpModel`] is
//! immutable and can be shared freely between threads.

mod fit;
mod kernel;
mod nystrom;
mod path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use fit::{fit, log_marginal_likelihood, FitOptions};
pub use kernel::{kernel_eval, KernelFamily, KernelSpec};
pub use nystrom::{nystrom_inverse_sqrt, nystrom_sqrt};
pub use path::{Landmarks, PathSampler};

use crate::error::{Error, Result};

/// Diagonal jitter tried, in order, until a Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Two sites closer than this (max-norm, normalized units) count as the same point.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    sites: Vec<Vec<f64>>,
    values: Vec<f64>,
    noise_variance: f64,
}

impl Dataset {
    pub fn new(sites: Vec<Vec<f64>>, values: Vec<f64>, noise_variance: f64) -> Result<Self> {
        Error::check_dim(sites.len(), values.len())?;
        if sites.is_empty() {
            return Err(Error::invalid("dataset has no sites"));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::invalid("noise variance must be finite and nonnegative"));
        }
        let d = sites[0].len();
        if d == 0 {
            return Err(Error::invalid("sites must have at least one coordinate"));
        }
        for s in &sites {
            Error::check_dim(d, s.len())?;
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("dataset sites must lie in the unit box"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        for i in 0..sites.len() {
            for j in 0..i {
                if same_site(&sites[i], &sites[j]) {
                    return Err(Error::invalid(format!("sites {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { sites, values, noise_variance })
    }

    pub fn sites(&self) -> &[Vec<f64>] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sites[0].len()
    }
}

pub(crate) fn same_site(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DUPLICATE_TOLERANCE)
}

/// Iterative refinement of `gram^{-1} y` preconditioned by the jittered factor.
/// Stops as soon as the residual stops shrinking.
fn refine(gram: &DMatrix<f64>, chol: &Cholesky<f64, nalgebra::Dyn>, y: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
    let mut alpha = start;
    let mut residual = y - gram * &alpha;
    let mut norm = residual.norm();
    for _ in 0..20 {
        if norm <= 1e-14 * y.norm() {
            break;
        }
        let next = &alpha + chol.solve(&residual);
        let next_residual = y - gram * &next;
        let next_norm = next_residual.norm();
        if !(next_norm < norm) {
            break;
        }
        alpha = next;
        residual = next_residual;
        norm = next_norm;
    }
    alpha
}

/// A GP conditioned on a dataset under fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    data: Dataset,
    /// Lower Cholesky factor of `K_n + (tau^2 + jitter) I`.
    chol: DMatrix<f64>,
    /// `(K_n + tau^2 I)^{-1} y_n`, refined from the jittered solve when that converges.
    alpha: DVector<f64>,
    jitter: f64,
    log_likelihood: f64,
}

impl GpModel {
    /// Conditions the prior `kernel` on `data` (no hyperparameter search).
    pub fn condition(kernel: KernelSpec, data: Dataset) -> Result<Self> {
        Error::check_dim(kernel.dim(), data.dim())?;
        let gram = gram_matrix(&kernel, data.sites(), data.noise_variance());
        let (chol, jitter) = cholesky_jittered(gram.clone(), "training covariance")?;
        let y = DVector::from_column_slice(data.values());
        let alpha = refine(&gram, &chol, &y, chol.solve(&y));
        let l = chol.unpack();
        let log_likelihood = -0.5 * y.dot(&alpha)
            - l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
            - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self { kernel, data, chol: l, alpha, jitter, log_likelihood })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// The cached lower Cholesky factor.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        Error::check_dim(self.dim(), x.len())?;
        let k = DVector::from_iterator(
            self.data.len(),
            self.data.sites().iter().map(|s| self.kernel.eval_unchecked(x, s)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k)
            .ok_or_else(|| numerical("posterior triangular solve"))?;
        Ok((mean, self.clamp_variance(self.kernel.signal_variance - v.norm_squared())))
    }

    fn clamp_variance(&self, v: f64) -> f64 {
        v.clamp(0.0, self.kernel.signal_variance + self.data.noise_variance())
    }

    /// Cross-covariances `k(X_n, xs)` and their whitened form `L^{-1} k(X_n, xs)`.
    pub(crate) fn whiten<P: AsRef<[f64]>>(&self, xs: &[P]) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.cross_covariance(xs);
        let mut v = k.clone();
        self.chol.solve_lower_triangular_mut(&mut v);
        (k, v)
    }

    pub(crate) fn cross_covariance<P: AsRef<[f64]>>(&self, xs: &[P]) -> DMatrix<f64> {
        let sites = self.data.sites();
        DMatrix::from_fn(sites.len(), xs.len(), |i, j| {
            self.kernel.eval_unchecked(&sites[i], xs[j].as_ref())
        })
    }

    /// Joint posterior mean vector and covariance matrix over a block of points.
    pub fn posterior_block<P: AsRef<[f64]>>(&self, xs: &[P]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        for x in xs {
            Error::check_dim(self.dim(), x.as_ref().len())?;
        }
        let (k, v) = self.whiten(xs);
        let mean = k.tr_mul(&self.alpha);
        let prior = gram_matrix(&self.kernel, xs, 0.0);
        let cov = prior - v.tr_mul(&v);
        Ok((mean, cov))
    }

    /// Posterior means and variances for many points, in chunks, using an
    /// explicit inverse factor so the heavy lifting is a matrix product.
    pub fn posterior_many<P: AsRef<[f64]>>(&self, xs: &[P]) -> Result<Vec<(f64, f64)>> {
        for x in xs {
            Error::check_dim(self.dim(), x.as_ref().len())?;
        }
        let n = self.data.len();
        let mut linv = DMatrix::<f64>::identity(n, n);
        self.chol.solve_lower_triangular_mut(&mut linv);
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(2048) {
            let k = self.cross_covariance(chunk);
            let mean = k.tr_mul(&self.alpha);
            let v = &linv * &k;
            for j in 0..chunk.len() {
                let var = self.kernel.signal_variance - v.column(j).norm_squared();
                out.push((mean[j], self.clamp_variance(var)));
            }
        }
        Ok(out)
    }
}

/// Posterior mean and variance of `model` at `x`.
pub fn posterior(model: &GpModel, x: &[f64]) -> Result<(f64, f64)> {
    model.posterior(x)
}

pub(crate) fn gram_matrix<P: AsRef<[f64]>>(kernel: &KernelSpec, xs: &[P], diag: f64) -> DMatrix<f64> {
    let n = xs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = kernel.signal_variance + diag;
        for j in 0..i {
            let v = kernel.eval_unchecked(xs[i].as_ref(), xs[j].as_ref());
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub(crate) fn numerical(context: &str) -> Error {
    Error::Numerical { context: context.to_string(), jitter_ladder: Vec::new() }
}

/// Cholesky factorization, escalating diagonal jitter along [`JITTER_LADDER`].
pub(crate) fn cholesky_jittered(matrix: DMatrix<f64>, context: &str) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { context: format!("{context} (non-finite entries)"), jitter_ladder: Vec::new() });
    }
    let mut previous = 0.0;
    let mut m = matrix;
    for &jitter in &JITTER_LADDER {
        for i in 0..m.nrows() {
            m[(i, i)] += jitter - previous;
        }
        previous = jitter;
        if let Some(c) = Cholesky::new(m.clone()) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Numerical { context: context.to_string(), jitter_ladder: JITTER_LADDER.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(noise: f64) -> Dataset {
        let xs = [0.05, 0.3, 0.5, 0.72, 0.95];
        let sites: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let values = xs.iter().map(|&x: &f64| (6.0 * x).sin() + 0.3 * x).collect();
        Dataset::new(sites, values, noise).unwrap()
    }

    /// Dense oracle: build the full system and solve it with an LU decomposition.
    fn dense_oracle(kernel: &KernelSpec, data: &Dataset, jitter: f64, x: &[f64]) -> (f64, f64) {
        let n = data.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel_eval(kernel, &data.sites()[i], &data.sites()[j]).unwrap();
            }
            k[(i, i)] += data.noise_variance() + jitter;
        }
        let kx = DVector::from_iterator(n, data.sites().iter().map(|s| kernel_eval(kernel, x, s).unwrap()));
        let lu = k.lu();
        let w = lu.solve(&kx).unwrap();
        let y = DVector::from_column_slice(data.values());
        (w.dot(&y), kernel_eval(kernel, x, x).unwrap() - w.dot(&kx))
    }

    #[test]
    fn posterior_matches_dense_solve() {
        let data = toy_data(1e-3);
        let kernel = KernelSpec::isotropic(KernelFamily::Matern52, 1, 0.25, 1.3).unwrap();
        let model = GpModel::condition(kernel.clone(), data.clone()).unwrap();
        let (m, v) = model.posterior(&[0.4]).unwrap();
        let (om, ov) = dense_oracle(&kernel, &data, model.jitter(), &[0.4]);
        assert!((m - om).abs() < 1e-10);
        assert!((v - ov).abs() < 1e-10);
    }

    #[test]
    fn noiseless_interpolation() {
        let data = toy_data(0.0);
        let kernel = KernelSpec::isotropic(KernelFamily::SquaredExponential, 1, 0.2, 1.0).unwrap();
        let model = GpModel::condition(kernel, data.clone()).unwrap();
        for (s, y) in data.sites().iter().zip(data.values()) {
            let (m, v) = model.posterior(s).unwrap();
            assert!((m - y).abs() < 1e-6);
            assert!(v < 1e-6);
        }
    }

    #[test]
    fn grid_max_variance_decays_with_more_data() {
        let grid: Vec<Vec<f64>> = (0..256).map(|i| vec![i as f64 / 255.0]).collect();
        let kernel = KernelSpec::isotropic(KernelFamily::Matern52, 1, 0.2, 1.0).unwrap();
        let mut previous = f64::INFINITY;
        for n in [5, 10, 20, 40] {
            let sites: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
            let values = sites.iter().map(|s| (6.0 * s[0]).sin()).collect();
            let model = GpModel::condition(kernel.clone(), Dataset::new(sites, values, 1e-3).unwrap()).unwrap();
            let worst = model.posterior_many(&grid).unwrap().iter().map(|p| p.1).fold(0.0, f64::max);
            assert!(worst < previous, "n={n}: {worst} >= {previous}");
            previous = worst;
        }
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let data = Dataset::new(vec![vec![0.0, 0.0], vec![0.01, 0.02]], vec![1.0, -1.0], 1e-3).unwrap();
        let kernel = KernelSpec::isotropic(KernelFamily::Matern52, 2, 1e-3, 2.5).unwrap();
        let model = GpModel::condition(kernel, data).unwrap();
        let (m, v) = model.posterior(&[1.0, 1.0]).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reconstructs_training_covariance() {
        let data = toy_data(1e-3);
        let kernel = KernelSpec::isotropic(KernelFamily::Matern52, 1, 0.4, 1.0).unwrap();
        let model = GpModel::condition(kernel.clone(), data.clone()).unwrap();
        let l = model.cholesky();
        let target = gram_matrix(&kernel, data.sites(), data.noise_variance() + model.jitter());
        let err = (l * l.transpose() - &target).norm() / target.norm();
        assert!(err < 1e-8);
    }

    #[test]
    fn block_and_many_agree_with_pointwise() {
        let data = toy_data(1e-3);
        let kernel = KernelSpec::isotropic(KernelFamily::Matern52, 1, 0.3, 1.0).unwrap();
        let model = GpModel::condition(kernel, data).unwrap();
        let xs = vec![vec![0.1], vec![0.45], vec![0.8]];
        let (mean, cov) = model.posterior_block(&xs).unwrap();
        let many = model.posterior_many(&xs).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let (m, v) = model.posterior(x).unwrap();
            assert!((mean[j] - m).abs() < 1e-12 && (cov[(j, j)] - v).abs() < 1e-12);
            assert!((many[j].0 - m).abs() < 1e-12 && (many[j].1 - v).abs() < 1e-10);
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![0.5]], vec![1.0, 2.0], 0.0).is_err());
        assert!(Dataset::new(vec![vec![1.5]], vec![1.0], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.5], vec![0.5 + 1e-12]], vec![1.0, 2.0], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.5]], vec![1.0], -1.0).is_err());
    }

    #[test]
    fn jitter_ladder_rescues_singular_matrix_and_reports_failure() {
        let singular = DMatrix::from_element(3, 3, 1.0);
        let (_, jitter) = cholesky_jittered(singular, "test").unwrap();
        assert!(jitter > 0.0);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match cholesky_jittered(indefinite, "test") {
            Err(Error::Numerical { jitter_ladder, .. }) => assert_eq!(jitter_ladder, JITTER_LADDER.to_vec()),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }
}
