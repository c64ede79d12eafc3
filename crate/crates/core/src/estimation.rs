//! Sample means, cross-product matrices, and the closed-form maximum
//! likelihood estimators for the monotone layout.
//!
//! With `tau = n/N`, the estimators are
//!
//! ```text
//! mu1_hat = x_bar - tau_bar * A12 A22n^{-1} (y_bar1 - y_bar2),   mu2_hat = y_bar,
//! S11_hat = A11.2/n + A12 A22n^{-1} A22N A22n^{-1} A21 / N,
//! S12_hat = A12 A22n^{-1} A22N / N,                 S22_hat = A22N / N,
//! ```
//!
//! assembled here through the partial Iwasawa coordinates
//! `D11 = A11.2/n`, `D12 = A12 A22n^{-1}`, `D22 = A22N/N`, which factor
//! `S_hat` as `U diag(D11, D22) U'` with `U` unit upper-triangular.  The
//! same coordinates give the exact block inverse, so `S_hat^{-1}` is never
//! obtained by dense inversion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::sample::MonotoneSample;

/// Sample means and cross-product matrices.
#[derive(Clone, Debug)]
pub struct CrossProducts {
    /// Mean of the complete X rows.
    pub x_bar: DVector<f64>,
    /// Mean of the first `n` Y rows.
    pub y_bar1: DVector<f64>,
    /// Mean of the trailing `N - n` Y rows; `None` when `n = N`.
    pub y_bar2: Option<DVector<f64>>,
    /// Mean of all `N` Y rows.
    pub y_bar: DVector<f64>,
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    /// Y cross-products over the complete rows, centered at `y_bar1`.
    pub a22_n: DMatrix<f64>,
    /// Y cross-products over all rows, centered at `y_bar`.
    pub a22_all: DMatrix<f64>,
    /// Schur complement `A11 - A12 A22n^{-1} A21`.
    pub a11_dot2: DMatrix<f64>,
}

/// Maximum likelihood estimate with Iwasawa coordinates and block inverse.
#[derive(Clone, Debug)]
pub struct MleEstimate {
    p: usize,
    q: usize,
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub delta11: DMatrix<f64>,
    pub delta12: DMatrix<f64>,
    pub delta22: DMatrix<f64>,
    pub sigma_hat_inv: DMatrix<f64>,
}

impl MleEstimate {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    /// X-part of the mean estimate.
    pub fn mu1(&self) -> DVector<f64> {
        self.mu_hat.rows(0, self.p).into_owned()
    }

    /// Y-part of the mean estimate.
    pub fn mu2(&self) -> DVector<f64> {
        self.mu_hat.rows(self.p, self.q).into_owned()
    }

    pub fn sigma11(&self) -> DMatrix<f64> {
        self.sigma_hat.view((0, 0), (self.p, self.p)).into_owned()
    }

    pub fn sigma12(&self) -> DMatrix<f64> {
        self.sigma_hat.view((0, self.p), (self.p, self.q)).into_owned()
    }

    pub fn sigma22(&self) -> DMatrix<f64> {
        self.sigma_hat
            .view((self.p, self.p), (self.q, self.q))
            .into_owned()
    }
}

/// Two-pass means and centered cross-products for a monotone sample.
///
/// Sums run in row order within each block, so results do not depend on
/// thread count or iteration scheduling.
pub fn cross_products(sample: &MonotoneSample) -> Result<CrossProducts> {
    let (p, q) = (sample.p(), sample.q());
    let (n, n_total) = (sample.n(), sample.n_total());
    let x = sample.x_block();
    let y = sample.y_block();

    // First pass: means.
    let mut x_bar = DVector::zeros(p);
    let mut y_bar1 = DVector::zeros(q);
    let mut y_bar = DVector::zeros(q);
    for j in 0..n {
        for c in 0..p {
            x_bar[c] += x[(j, c)];
        }
        for c in 0..q {
            y_bar1[c] += y[(j, c)];
        }
    }
    x_bar /= n as f64;
    y_bar1 /= n as f64;
    for j in 0..n_total {
        for c in 0..q {
            y_bar[c] += y[(j, c)];
        }
    }
    y_bar /= n_total as f64;
    let y_bar2 = if n < n_total {
        let mut m = DVector::zeros(q);
        for j in n..n_total {
            for c in 0..q {
                m[c] += y[(j, c)];
            }
        }
        Some(m / (n_total - n) as f64)
    } else {
        None
    };

    // Second pass: centered cross-products.
    let mut a11 = DMatrix::zeros(p, p);
    let mut a12 = DMatrix::zeros(p, q);
    let mut a22_n = DMatrix::zeros(q, q);
    let mut a22_all = DMatrix::zeros(q, q);
    let mut dx = DVector::zeros(p);
    let mut dy = DVector::zeros(q);
    for j in 0..n {
        for c in 0..p {
            dx[c] = x[(j, c)] - x_bar[c];
        }
        for c in 0..q {
            dy[c] = y[(j, c)] - y_bar1[c];
        }
        a11.ger(1.0, &dx, &dx, 1.0);
        a12.ger(1.0, &dx, &dy, 1.0);
        a22_n.ger(1.0, &dy, &dy, 1.0);
    }
    for j in 0..n_total {
        for c in 0..q {
            dy[c] = y[(j, c)] - y_bar[c];
        }
        a22_all.ger(1.0, &dy, &dy, 1.0);
    }
    let a11 = symmetrize(&a11);
    let a22_n = symmetrize(&a22_n);
    let a22_all = symmetrize(&a22_all);

    let a22_n_factor = SpdFactor::new(&a22_n, "A22,n")?;
    let a11_dot2 = symmetrize(&(&a11 - &a12 * a22_n_factor.solve(&a12.transpose())));

    Ok(CrossProducts {
        x_bar,
        y_bar1,
        y_bar2,
        y_bar,
        a11,
        a12,
        a22_n,
        a22_all,
        a11_dot2,
    })
}

/// Maximum likelihood estimators of the mean and covariance, the partial
/// Iwasawa coordinates, and the exact block inverse of the covariance.
pub fn mle(sample: &MonotoneSample) -> Result<MleEstimate> {
    let cp = cross_products(sample)?;
    mle_from_cross_products(sample, &cp)
}

/// As [`mle`], reusing precomputed cross-products.
pub fn mle_from_cross_products(
    sample: &MonotoneSample,
    cp: &CrossProducts,
) -> Result<MleEstimate> {
    let (p, q) = (sample.p(), sample.q());
    let n = sample.n() as f64;
    let n_total = sample.n_total() as f64;
    let tau_bar = sample.tau_bar();

    let a22_n_factor = SpdFactor::new(&cp.a22_n, "A22,n")?;
    // delta12 = A12 A22n^{-1}, computed as (A22n^{-1} A21)'.
    let delta12 = a22_n_factor.solve(&cp.a12.transpose()).transpose();
    let delta11 = &cp.a11_dot2 / n;
    let delta22 = SpdFactor::new(&cp.a22_all, "A22,N")
        .map(|_| &cp.a22_all / n_total)
        .map_err(|e| rename_singular(e, "A22,N"))?;

    let mu1 = match &cp.y_bar2 {
        Some(y_bar2) => &cp.x_bar - &delta12 * ((&cp.y_bar1 - y_bar2) * tau_bar),
        None => cp.x_bar.clone(),
    };
    let mut mu_hat = DVector::zeros(p + q);
    mu_hat.rows_mut(0, p).copy_from(&mu1);
    mu_hat.rows_mut(p, q).copy_from(&cp.y_bar);

    // Sigma_hat = U diag(D11, D22) U' with U = [[I, D12], [0, I]].
    let s12 = &delta12 * &delta22;
    let s11 = symmetrize(&(&delta11 + &s12 * delta12.transpose()));
    let mut sigma_hat = DMatrix::zeros(p + q, p + q);
    sigma_hat.view_mut((0, 0), (p, p)).copy_from(&s11);
    sigma_hat.view_mut((0, p), (p, q)).copy_from(&s12);
    sigma_hat
        .view_mut((p, 0), (q, p))
        .copy_from(&s12.transpose());
    sigma_hat.view_mut((p, p), (q, q)).copy_from(&delta22);

    // Block inverse from the Iwasawa coordinates:
    //   [ D11^{-1}           -D11^{-1} D12                      ]
    //   [ -D21 D11^{-1}       D22^{-1} + D21 D11^{-1} D12       ]
    let inv11 = SpdFactor::new(&delta11, "A11.2,n")?.inverse();
    let inv22 = SpdFactor::new(&delta22, "A22,N")?.inverse();
    let cross = &inv11 * &delta12; // D11^{-1} D12
    let lower = symmetrize(&(&inv22 + delta12.transpose() * &cross));
    let mut sigma_hat_inv = DMatrix::zeros(p + q, p + q);
    sigma_hat_inv.view_mut((0, 0), (p, p)).copy_from(&inv11);
    sigma_hat_inv.view_mut((0, p), (p, q)).copy_from(&(-&cross));
    sigma_hat_inv
        .view_mut((p, 0), (q, p))
        .copy_from(&(-cross.transpose()));
    sigma_hat_inv.view_mut((p, p), (q, q)).copy_from(&lower);

    Ok(MleEstimate {
        p,
        q,
        mu_hat,
        sigma_hat,
        delta11,
        delta12,
        delta22,
        sigma_hat_inv,
    })
}

fn rename_singular(e: Error, name: &str) -> Error {
    match e {
        Error::Singular { rcond, limit, .. } => Error::Singular {
            matrix: name.to_string(),
            rcond,
            limit,
        },
        Error::NotPositiveDefinite { index, value, .. } => Error::NotPositiveDefinite {
            matrix: name.to_string(),
            index,
            value,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn toy_sample() -> MonotoneSample {
        MonotoneSample::new(
            1,
            1,
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 2.0, 4.0]),
        )
        .unwrap()
    }

    #[test]
    fn toy_cross_products() {
        let cp = cross_products(&toy_sample()).unwrap();
        assert_eq!(cp.x_bar[0], 2.0);
        assert_eq!(cp.y_bar1[0], 2.0);
        assert_eq!(cp.y_bar2.as_ref().unwrap()[0], 4.0);
        assert_eq!(cp.y_bar[0], 2.5);
        assert_eq!(cp.a11[(0, 0)], 2.0);
        assert_eq!(cp.a12[(0, 0)], 1.0);
        assert_eq!(cp.a22_n[(0, 0)], 2.0);
        assert_eq!(cp.a22_all[(0, 0)], 5.0);
        assert!((cp.a11_dot2[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn grand_mean_identity() {
        let s = toy_sample();
        let cp = cross_products(&s).unwrap();
        let recon = &cp.y_bar1 * s.tau() + cp.y_bar2.as_ref().unwrap() * s.tau_bar();
        assert!((&recon - &cp.y_bar).amax() <= 1e-12 * cp.y_bar.amax().max(1.0));
    }

    #[test]
    fn toy_mle_matches_hand_computation() {
        let est = mle(&toy_sample()).unwrap();
        assert!((est.mu_hat[0] - 2.25).abs() < 1e-14);
        assert!((est.mu_hat[1] - 2.5).abs() < 1e-14);
        assert!((est.sigma_hat[(0, 0)] - 0.8125).abs() < 1e-14);
        assert!((est.sigma_hat[(0, 1)] - 0.625).abs() < 1e-14);
        assert!((est.sigma_hat[(1, 1)] - 1.25).abs() < 1e-14);
        // 2x2 closed-form inverse: det = 0.625.
        assert!((est.sigma_hat_inv[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((est.sigma_hat_inv[(0, 1)] + 1.0).abs() < 1e-12);
        assert!((est.sigma_hat_inv[(1, 1)] - 1.3).abs() < 1e-12);
        // Iwasawa coordinates.
        assert!((est.delta11[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((est.delta12[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((est.delta22[(0, 0)] - 1.25).abs() < 1e-14);
    }

    #[test]
    fn complete_sample_collapses_to_classical_mle() {
        let x = dmatrix![1.0; 2.0; 4.0; 3.5];
        let y = dmatrix![0.5; 2.5; 3.0; 1.0];
        let s = MonotoneSample::new(1, 1, x.clone(), y.clone()).unwrap();
        let est = mle(&s).unwrap();

        let m = s.n() as f64;
        let xb = x.column(0).sum() / m;
        let yb = y.column(0).sum() / m;
        assert!((est.mu_hat[0] - xb).abs() < 1e-14);
        assert!((est.mu_hat[1] - yb).abs() < 1e-14);
        let mut cov = DMatrix::zeros(2, 2);
        for j in 0..s.n() {
            let d = DVector::from_vec(vec![x[(j, 0)] - xb, y[(j, 0)] - yb]);
            cov.ger(1.0 / m, &d, &d, 1.0);
        }
        assert!((&est.sigma_hat - &cov).amax() < 1e-12);
    }

    #[test]
    fn constant_y_column_reports_singular_a22n() {
        let s = MonotoneSample::new(
            1,
            1,
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        match cross_products(&s) {
            Err(Error::NotPositiveDefinite { matrix, .. }) | Err(Error::Singular { matrix, .. }) => {
                assert_eq!(matrix, "A22,n")
            }
            other => panic!("expected singular A22,n, got {other:?}"),
        }
    }

    #[test]
    fn iwasawa_reconstruction_and_inverse() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..20 {
            let (p, q) = (rng.gen_range(1..4usize), rng.gen_range(1..4usize));
            let n = rng.gen_range(p + q + 2..30);
            let n_total = n + rng.gen_range(0..20usize);
            let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
            let y = DMatrix::from_fn(n_total, q, |_, _| rng.gen_range(-1.0..1.0));
            let s = MonotoneSample::new(p, q, x, y).unwrap();
            let est = mle(&s).unwrap();

            // Triple-product reconstruction.
            let d = p + q;
            let mut u = DMatrix::identity(d, d);
            u.view_mut((0, p), (p, q)).copy_from(&est.delta12);
            let mut mid = DMatrix::zeros(d, d);
            mid.view_mut((0, 0), (p, p)).copy_from(&est.delta11);
            mid.view_mut((p, p), (q, q)).copy_from(&est.delta22);
            let recon = &u * mid * u.transpose();
            let rel = (&recon - &est.sigma_hat).amax() / est.sigma_hat.amax();
            assert!(rel < 1e-10, "reconstruction error {rel}");

            // Block inverse really inverts.
            let prod = &est.sigma_hat * &est.sigma_hat_inv;
            let err = (&prod - DMatrix::identity(d, d)).amax();
            assert!(err < 1e-8, "inverse residual {err}");
        }
    }
}
