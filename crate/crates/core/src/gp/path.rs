//! Consistent posterior sample paths.
//!
//! A [`PathSampler`] realizes one draw `Y(·, ω)` per function lazily: every
//! block of query points is sampled from the posterior conditioned on the
//! training data and on the values already realized for this path.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{cholesky_jittered, gram_matrix, nystrom_inverse_sqrt, GpModel};
use crate::error::{Error, Result};

/// Landmark points for the low-rank path approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmarks {
    /// Fixed landmark sites, typically the nondominated training points.
    Sites(Vec<Vec<f64>>),
    /// The first `m` distinct points of the first queried block.
    FirstM(usize),
}

type Key = Vec<u64>;

fn key(x: &[f64]) -> Key {
    x.iter().map(|v| v.to_bits()).collect()
}

#[derive(Debug, Clone)]
pub struct PathSampler {
    models: Vec<GpModel>,
    rng: ChaCha8Rng,
    paths: Vec<FunctionPath>,
    landmarks: Option<Landmarks>,
}

#[derive(Debug, Clone, Default)]
struct FunctionPath {
    cache: HashMap<Key, f64>,
    exact: Conditioned,
    lowrank: Option<LowRank>,
}

/// Joint state of the points this path is currently conditioned on.
#[derive(Debug, Clone, Default)]
struct Conditioned {
    sites: Vec<Vec<f64>>,
    keys: Vec<Key>,
    /// `L_n^{-1} k(X_n, S)`.
    whitened: DMatrix<f64>,
    /// Cholesky factor of the posterior covariance over `S`.
    chol: DMatrix<f64>,
    /// `chol^{-1} (values - means)`.
    residual: DVector<f64>,
    means: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LowRank {
    landmarks: Vec<Vec<f64>>,
    whitened: DMatrix<f64>,
    /// `Σ_mm^{-1/2} z` for a single standard-normal draw `z`.
    weights: DVector<f64>,
}

impl PathSampler {
    /// Exact incremental-conditioning sampler, one path per model.
    pub fn new(models: Vec<GpModel>, rng: ChaCha8Rng) -> Result<Self> {
        Self::build(models, rng, None)
    }

    /// Low-rank sampler; each path is `μ(x) + Σ(x, X_m) Σ_mm^{-1/2} z`.
    pub fn with_nystrom(models: Vec<GpModel>, landmarks: Landmarks, rng: ChaCha8Rng) -> Result<Self> {
        match &landmarks {
            Landmarks::Sites(s) if s.is_empty() => return Err(Error::invalid("no landmark sites")),
            Landmarks::FirstM(0) => return Err(Error::invalid("landmark count must be positive")),
            _ => {}
        }
        Self::build(models, rng, Some(landmarks))
    }

    fn build(models: Vec<GpModel>, rng: ChaCha8Rng, landmarks: Option<Landmarks>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::invalid("path sampler needs at least one model"));
        }
        let d = models[0].dim();
        for m in &models {
            Error::check_dim(d, m.dim())?;
        }
        if let Some(Landmarks::Sites(sites)) = &landmarks {
            for s in sites {
                Error::check_dim(d, s.len())?;
            }
        }
        let paths = vec![FunctionPath::default(); models.len()];
        Ok(Self { models, rng, paths, landmarks })
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn num_functions(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn is_low_rank(&self) -> bool {
        self.landmarks.is_some()
    }

    /// Points the path for `fn_index` is currently conditioned on.
    pub fn conditioning_sites(&self, fn_index: usize) -> &[Vec<f64>] {
        &self.paths[fn_index].exact.sites
    }

    /// Samples the path of function `fn_index` jointly over `block`.
    pub fn joint_sample<P: AsRef<[f64]>>(&mut self, fn_index: usize, block: &[P]) -> Result<Vec<f64>> {
        if fn_index >= self.models.len() {
            return Err(Error::invalid(format!("function index {fn_index} out of range")));
        }
        let d = self.dim();
        for x in block {
            Error::check_dim(d, x.as_ref().len())?;
        }
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        let mut fresh_keys: HashSet<Key> = HashSet::new();
        for x in block {
            let k = key(x.as_ref());
            if !self.paths[fn_index].cache.contains_key(&k) && fresh_keys.insert(k) {
                fresh.push(x.as_ref().to_vec());
            }
        }
        if !fresh.is_empty() {
            let values = if self.landmarks.is_some() {
                self.sample_low_rank(fn_index, &fresh)?
            } else {
                self.sample_exact(fn_index, &fresh)?
            };
            let cache = &mut self.paths[fn_index].cache;
            for (x, v) in fresh.iter().zip(values) {
                cache.insert(key(x), v);
            }
        }
        let cache = &self.paths[fn_index].cache;
        Ok(block.iter().map(|x| cache[&key(x.as_ref())]).collect())
    }

    /// Samples every function's path over `block`; result is indexed `[function][point]`.
    pub fn sample_all<P: AsRef<[f64]>>(&mut self, block: &[P]) -> Result<Vec<Vec<f64>>> {
        (0..self.models.len()).map(|i| self.joint_sample(i, block)).collect()
    }

    /// Stops conditioning on realized points not in `survivors`, marginalizing them out.
    /// Values already returned stay cached, so repeated queries remain consistent.
    pub fn retain<P: AsRef<[f64]>>(&mut self, survivors: &[P]) -> Result<()> {
        if self.landmarks.is_some() {
            return Ok(());
        }
        let keep: HashSet<Key> = survivors.iter().map(|x| key(x.as_ref())).collect();
        for (path, model) in self.paths.iter_mut().zip(&self.models) {
            let idx: Vec<usize> = (0..path.exact.keys.len()).filter(|&i| keep.contains(&path.exact.keys[i])).collect();
            if idx.len() == path.exact.keys.len() {
                continue;
            }
            path.exact = path.exact.restricted(model, &idx)?;
        }
        Ok(())
    }

    fn standard_normals(&mut self, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)))
    }

    fn sample_exact(&mut self, fn_index: usize, block: &[Vec<f64>]) -> Result<Vec<f64>> {
        let model = &self.models[fn_index];
        let (k_nb, v_b) = model.whiten(block);
        let mean_b = k_nb.tr_mul(model.alpha());
        let mut cov_bb = gram_matrix(model.kernel(), block, 0.0) - v_b.tr_mul(&v_b);
        let state = &self.paths[fn_index].exact;
        let s = state.sites.len();
        let mut cond_mean = mean_b.clone();
        let mut w = DMatrix::zeros(s, block.len());
        if s > 0 {
            let kernel = model.kernel();
            let k_sb = DMatrix::from_fn(s, block.len(), |i, j| kernel.eval_unchecked(&state.sites[i], &block[j]));
            let sigma_sb = k_sb - state.whitened.tr_mul(&v_b);
            w = state
                .chol
                .solve_lower_triangular(&sigma_sb)
                .ok_or_else(|| super::numerical("path conditioning solve"))?;
            cond_mean += w.tr_mul(&state.residual);
            cov_bb -= w.tr_mul(&w);
        }
        let (chol_c, _) = cholesky_jittered(cov_bb, "path block covariance")?;
        let l_c = chol_c.unpack();
        let z = self.standard_normals(block.len());
        let values = &cond_mean + &l_c * &z;

        let state = &mut self.paths[fn_index].exact;
        let b = block.len();
        let mut chol = DMatrix::zeros(s + b, s + b);
        chol.view_mut((0, 0), (s, s)).copy_from(&state.chol);
        chol.view_mut((s, 0), (b, s)).copy_from(&w.transpose());
        chol.view_mut((s, s), (b, b)).copy_from(&l_c);
        state.chol = chol;
        let mut whitened = DMatrix::zeros(v_b.nrows(), s + b);
        if s > 0 {
            whitened.columns_mut(0, s).copy_from(&state.whitened);
        }
        whitened.columns_mut(s, b).copy_from(&v_b);
        state.whitened = whitened;
        state.residual = DVector::from_iterator(s + b, state.residual.iter().copied().chain(z.iter().copied()));
        for (j, x) in block.iter().enumerate() {
            state.keys.push(key(x));
            state.sites.push(x.clone());
            state.means.push(mean_b[j]);
            state.values.push(values[j]);
        }
        Ok(values.iter().copied().collect())
    }

    fn sample_low_rank(&mut self, fn_index: usize, block: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.paths[fn_index].lowrank.is_none() {
            let landmarks = match self.landmarks.as_ref().expect("low-rank mode") {
                Landmarks::Sites(s) => s.clone(),
                Landmarks::FirstM(m) => block.iter().take(*m).cloned().collect(),
            };
            let model = &self.models[fn_index];
            let (_, v_l) = model.whiten(&landmarks);
            let cov_ll = gram_matrix(model.kernel(), &landmarks, 0.0) - v_l.tr_mul(&v_l);
            let inv_sqrt = nystrom_inverse_sqrt(&cov_ll)?;
            let z = self.standard_normals(landmarks.len());
            let weights = inv_sqrt * z;
            self.paths[fn_index].lowrank = Some(LowRank { landmarks, whitened: v_l, weights });
        }
        let model = &self.models[fn_index];
        let lr = self.paths[fn_index].lowrank.as_ref().expect("initialized above");
        let (k_nb, v_b) = model.whiten(block);
        let kernel = model.kernel();
        let k_bl = DMatrix::from_fn(block.len(), lr.landmarks.len(), |i, j| kernel.eval_unchecked(&block[i], &lr.landmarks[j]));
        let sigma_bl = k_bl - v_b.tr_mul(&lr.whitened);
        let values = k_nb.tr_mul(model.alpha()) + sigma_bl * &lr.weights;
        Ok(values.iter().copied().collect())
    }
}

impl Conditioned {
    /// The same path state marginalized onto the sites at `idx`.
    fn restricted(&self, model: &GpModel, idx: &[usize]) -> Result<Self> {
        let sites: Vec<Vec<f64>> = idx.iter().map(|&i| self.sites[i].clone()).collect();
        if sites.is_empty() {
            return Ok(Self::default());
        }
        let whitened = self.whitened.select_columns(idx);
        let cov = gram_matrix(model.kernel(), &sites, 0.0) - whitened.tr_mul(&whitened);
        let (chol, _) = cholesky_jittered(cov, "path marginalization")?;
        let chol = chol.unpack();
        let means: Vec<f64> = idx.iter().map(|&i| self.means[i]).collect();
        let values: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
        let centered = DVector::from_iterator(idx.len(), values.iter().zip(&means).map(|(v, m)| v - m));
        let residual = chol
            .solve_lower_triangular(&centered)
            .ok_or_else(|| super::numerical("path marginalization solve"))?;
        Ok(Self {
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            sites,
            whitened,
            chol,
            residual,
            means,
            values,
        })
    }
}
