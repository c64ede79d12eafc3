//! Dense symmetric positive definite kernels.
//!
//! Every covariance-like matrix in this crate passes through
//! [`SpdFactor`], which symmetrizes its input (cross-product accumulation
//! leaves roundoff-level asymmetry), estimates the reciprocal condition
//! number from the eigenvalues, and refuses matrices that are indefinite
//! or conditioned worse than [`RCOND_LIMIT`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Reciprocal condition estimate below which a matrix is treated as singular.
pub const RCOND_LIMIT: f64 = 1e-12;

/// Maximum tolerated relative asymmetry of an SPD input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Cholesky factorization of a validated SPD matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    rcond: f64,
    dim: usize,
}

/// `(m + m')/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>, label: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    let asymmetry = worst / scale;
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            matrix: label.to_string(),
            asymmetry,
        });
    }
    Ok(())
}

impl SpdFactor {
    /// Validates and factors `m`, which must be square, finite, symmetric to
    /// [`SYMMETRY_TOL`], and positive definite with reciprocal condition at
    /// least [`RCOND_LIMIT`].  `label` names the matrix in errors.
    pub fn new(m: &DMatrix<f64>, label: &str) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: format!("{label} is {}x{}, expected square", m.nrows(), m.ncols()),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::MomentEstimation {
                reason: format!("{label} contains non-finite entries"),
            });
        }
        check_symmetric(m, label)?;
        let sym = symmetrize(m);

        let eig = SymmetricEigen::new(sym.clone());
        let mut min = f64::INFINITY;
        let mut min_idx = 0;
        let mut max = 0.0f64;
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda < min {
                min = lambda;
                min_idx = i;
            }
            max = max.max(lambda.abs());
        }
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                matrix: label.to_string(),
                index: min_idx,
                value: min,
            });
        }
        let rcond = if max > 0.0 { min / max } else { 0.0 };
        if rcond < RCOND_LIMIT {
            return Err(Error::Singular {
                matrix: label.to_string(),
                rcond,
                limit: RCOND_LIMIT,
            });
        }

        let chol = Cholesky::new(sym).ok_or_else(|| Error::Singular {
            matrix: label.to_string(),
            rcond,
            limit: RCOND_LIMIT,
        })?;
        Ok(Self {
            chol,
            rcond,
            dim: m.nrows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Reciprocal condition estimate `lambda_min / lambda_max`.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// Solves `m x = rhs` for a matrix right-hand side.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Solves `m x = rhs` for a vector right-hand side.
    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// In-place vector solve.
    pub fn solve_vec_mut(&self, rhs: &mut DVector<f64>) {
        self.chol.solve_mut(rhs);
    }

    /// Quadratic form `v' m^{-1} v`.
    pub fn inv_quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.chol.solve(v))
    }

    /// Symmetrized explicit inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}

/// Solves `m x = rhs` against a symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    Ok(SpdFactor::new(m, label)?.solve(rhs))
}

/// Symmetric inverse square root `m^{-1/2}` of an SPD matrix, computed from
/// the eigendecomposition; `result * m * result = I` up to roundoff.
pub fn spd_inv_sqrt(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    // SpdFactor::new performs the symmetry/PD/conditioning checks.
    let _ = SpdFactor::new(m, label)?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt()
    });
    Ok(symmetrize(&(&scaled * eig.eigenvectors.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd(dim: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(dim, dim)
    }

    #[test]
    fn identity_solve_and_inv_sqrt() {
        let id = DMatrix::identity(4, 4);
        let rhs = DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(spd_solve(&id, &rhs, "I").unwrap(), rhs);
        let root = spd_inv_sqrt(&id, "I").unwrap();
        assert!((root - DMatrix::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn diagonal_inv_sqrt() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let root = spd_inv_sqrt(&m, "diag").unwrap();
        assert!((root[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((root[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        assert!(root[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn random_spd_residuals() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let m = random_spd(5, &mut rng);
            let rhs = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0));
            let x = spd_solve(&m, &rhs, "m").unwrap();
            let resid = (&m * &x - &rhs).amax() / rhs.amax().max(1.0);
            assert!(resid < 1e-10, "solve residual {resid}");

            let w = spd_inv_sqrt(&m, "m").unwrap();
            let recon = (&w * &m * &w - DMatrix::identity(5, 5)).amax();
            assert!(recon < 1e-8, "inv_sqrt residual {recon}");
            assert!((&w - w.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_with_index() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0, 3.0]));
        match SpdFactor::new(&m, "bad") {
            Err(Error::NotPositiveDefinite { value, .. }) => assert!(value < 0.0),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        match SpdFactor::new(&m, "asym") {
            Err(Error::NotSymmetric { .. }) => {}
            other => panic!("expected NotSymmetric, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ill_conditioned() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        match SpdFactor::new(&m, "sing") {
            Err(Error::Singular { rcond, .. }) => assert!(rcond < RCOND_LIMIT),
            other => panic!("expected Singular, got {other:?}"),
        }
    }
}
