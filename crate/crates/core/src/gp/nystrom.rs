//! Low-rank square roots of posterior covariance matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one are treated as zero.
const RELATIVE_RANK_TOLERANCE: f64 = 1e-10;

/// Pseudo-inverse square root `Σ_mm^{-1/2}` of a symmetric positive semidefinite matrix.
pub fn nystrom_inverse_sqrt(cov_landmarks: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = cov_landmarks.nrows();
    if m == 0 || cov_landmarks.ncols() != m {
        return Err(Error::invalid("landmark covariance must be square and nonempty"));
    }
    if cov_landmarks.iter().any(|v| !v.is_finite()) {
        return Err(numerical("landmark covariance has non-finite entries"));
    }
    let sym = (cov_landmarks + cov_landmarks.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(numerical("landmark covariance has no positive eigenvalue"));
    }
    if eig.eigenvalues.min() < -1e-6 * top {
        return Err(numerical("landmark covariance is indefinite"));
    }
    let cutoff = RELATIVE_RANK_TOLERANCE * top;
    let scales = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 });
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    Ok(scaled * q.transpose())
}

/// `R = Σ_mNᵀ Σ_mm^{-1/2}`, so that `R Rᵀ = Σ_Nm Σ_mm⁺ Σ_mN ≈ Σ_NN`.
pub fn nystrom_sqrt(cov_full_rows: &DMatrix<f64>, cov_landmarks: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Error::check_dim(cov_landmarks.nrows(), cov_full_rows.nrows())?;
    let inv_sqrt = nystrom_inverse_sqrt(cov_landmarks)?;
    Ok(cov_full_rows.tr_mul(&inv_sqrt))
}

fn numerical(context: &str) -> Error {
    Error::Numerical { context: context.to_string(), jitter_ladder: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{gram_matrix, KernelFamily, KernelSpec};

    fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
        m.select_rows(idx)
    }

    fn rel_err(approx: &DMatrix<f64>, exact: &DMatrix<f64>) -> f64 {
        (approx - exact).norm() / exact.norm()
    }

    fn grid_cov(n: usize) -> DMatrix<f64> {
        let k = KernelSpec::isotropic(KernelFamily::Matern52, 2, 0.5, 1.0).unwrap();
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 5) as f64 / 4.0, (i / 5) as f64 / 4.0]).collect();
        gram_matrix(&k, &pts, 0.0)
    }

    #[test]
    fn exact_at_full_rank() {
        let sigma = grid_cov(12);
        let all: Vec<usize> = (0..12).collect();
        let r = nystrom_sqrt(&rows(&sigma, &all), &sigma).unwrap();
        assert!(rel_err(&(&r * r.transpose()), &sigma) < 1e-6);
    }

    #[test]
    fn exact_for_low_rank_when_landmarks_span() {
        // Rank 3: Σ = A Aᵀ with A 8×3.
        let a = DMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + 0.1 * j as f64);
        let sigma = &a * a.transpose();
        let landmarks = [0, 1, 2];
        assert_eq!(a.select_rows(&landmarks).rank(1e-9), 3);
        let r = nystrom_sqrt(&rows(&sigma, &landmarks), &sigma.select_rows(&landmarks).select_columns(&landmarks)).unwrap();
        assert!(rel_err(&(&r * r.transpose()), &sigma) < 1e-6);
    }

    #[test]
    fn rank_one_matches_hand_formula() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.4, 0.6, 1.5, 0.3, -0.4, 0.3, 1.0]);
        let r = nystrom_sqrt(&rows(&sigma, &[0]), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        // Σ_Nm Σ_mm⁻¹ Σ_mN entrywise with m = {0}: s_i0 s_j0 / s_00.
        let hand = DMatrix::from_fn(3, 3, |i, j| sigma[(i, 0)] * sigma[(j, 0)] / sigma[(0, 0)]);
        let approx = &r * r.transpose();
        assert!((approx - &hand).norm() < 1e-12);
        assert!((rel_err(&(&r * r.transpose()), &sigma) - rel_err(&hand, &sigma)).abs() < 1e-12);
    }

    #[test]
    fn error_is_monotone_along_nested_landmarks() {
        let sigma = grid_cov(25);
        let order = [12, 0, 24, 4, 20, 6, 18, 8, 16, 2, 10, 14, 22];
        let mut last = f64::INFINITY;
        for m in 1..=order.len() {
            let idx = &order[..m];
            let r = nystrom_sqrt(&rows(&sigma, idx), &sigma.select_rows(idx).select_columns(idx)).unwrap();
            let e = rel_err(&(&r * r.transpose()), &sigma);
            assert!(e <= last + 1e-12, "m={m}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn rejects_bad_landmark_covariance() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(nystrom_inverse_sqrt(&indefinite), Err(Error::Numerical { .. })));
        assert!(nystrom_inverse_sqrt(&DMatrix::zeros(2, 2)).is_err());
        assert!(nystrom_sqrt(&DMatrix::zeros(3, 4), &DMatrix::identity(2, 2)).is_err());
    }
}
