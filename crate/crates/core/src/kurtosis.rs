//! The weighted kurtosis statistic, regression imputation, and the affine
//! group under which the statistic is invariant.
//!
//! For complete rows the Mahalanobis-type quadratic form is evaluated
//! through the Iwasawa split
//!
//! ```text
//! (z - mu)' S^{-1} (z - mu) = e' D11^{-1} e + w' D22^{-1} w,
//!     w = y - mu2,   e = x - mu1 - D12 w,
//! ```
//!
//! which avoids forming a dense inverse and mirrors the regression-residual
//! structure the invariance proof rests on.  Incomplete rows contribute
//! `w' D22^{-1} w` alone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::MleEstimate;
use crate::linalg::{spd_inv_sqrt, symmetrize, SpdFactor};
use crate::sample::{KurtosisWeights, MonotoneSample};

/// Value of the kurtosis statistic together with its two raw sums.
#[derive(Clone, Copy, Debug)]
pub struct KurtosisValue {
    /// Sum of squared full quadratic forms over the complete rows.
    pub b1: f64,
    /// Sum of squared Y-block quadratic forms over the incomplete rows.
    pub b2: f64,
    /// `(c1 * b1 + c2 * b2) / N`.
    pub b: f64,
    pub weights: KurtosisWeights,
}

struct QuadraticSplit {
    d11: SpdFactor,
    d22: SpdFactor,
}

impl QuadraticSplit {
    fn new(est: &MleEstimate) -> Result<Self> {
        Ok(Self {
            d11: SpdFactor::new(&est.delta11, "A11.2,n")?,
            d22: SpdFactor::new(&est.delta22, "A22,N")?,
        })
    }

    /// Full quadratic form at a complete (or imputed) row.
    fn full(&self, est: &MleEstimate, z: &DVector<f64>) -> f64 {
        let p = est.p();
        let q = est.q();
        let w = z.rows(p, q) - est.mu_hat.rows(p, q);
        let e = z.rows(0, p) - est.mu_hat.rows(0, p) - &est.delta12 * &w;
        self.d11.inv_quad_form(&e.into_owned()) + self.d22.inv_quad_form(&w.into_owned())
    }

    /// Y-block quadratic form at an incomplete row.
    fn marginal(&self, est: &MleEstimate, y_row: &DVector<f64>) -> f64 {
        let w = y_row - est.mu_hat.rows(est.p(), est.q());
        self.d22.inv_quad_form(&w.into_owned())
    }
}

fn check_weights(sample: &MonotoneSample, w: &KurtosisWeights) -> Result<()> {
    if sample.n() < sample.n_total() && w.c2() <= 0.0 {
        return Err(Error::InvalidWeights {
            reason: format!(
                "c2 must be positive when incomplete rows are present (n={} < N={})",
                sample.n(),
                sample.n_total()
            ),
        });
    }
    Ok(())
}

fn check_match(sample: &MonotoneSample, est: &MleEstimate) -> Result<()> {
    if sample.p() != est.p() || sample.q() != est.q() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "sample is (p={}, q={}) but estimate is (p={}, q={})",
                sample.p(),
                sample.q(),
                est.p(),
                est.q()
            ),
        });
    }
    Ok(())
}

/// The weighted kurtosis statistic on the observed data.
///
/// When `n = N` the incomplete sum is empty, `b2 = 0`, and `c2` is ignored.
pub fn kurtosis_statistic(
    sample: &MonotoneSample,
    est: &MleEstimate,
    w: &KurtosisWeights,
) -> Result<KurtosisValue> {
    check_match(sample, est)?;
    check_weights(sample, w)?;
    let split = QuadraticSplit::new(est)?;

    let mut b1 = 0.0;
    for j in 0..sample.n() {
        let qf = split.full(est, &sample.complete_row(j));
        b1 += qf * qf;
    }
    let mut b2 = 0.0;
    for j in sample.n()..sample.n_total() {
        let qf = split.marginal(est, &sample.y_block().row(j).transpose());
        b2 += qf * qf;
    }
    let b = (w.c1() * b1 + w.c2() * b2) / sample.n_total() as f64;
    Ok(KurtosisValue {
        b1,
        b2,
        b,
        weights: *w,
    })
}

/// Completes the data by linear regression imputation: row `j > n` gets
/// `x_hat = mu1 + S12 S22^{-1} (y_j - mu2)`, where `S12 S22^{-1}` equals the
/// Iwasawa coordinate `D12` identically.  Returns the merged `N x (p+q)`
/// matrix with the first `n` rows unchanged.
pub fn impute(sample: &MonotoneSample, est: &MleEstimate) -> Result<DMatrix<f64>> {
    check_match(sample, est)?;
    let (p, q) = (sample.p(), sample.q());
    let mu1 = est.mu1();
    let mu2 = est.mu2();
    let mut merged = DMatrix::zeros(sample.n_total(), p + q);
    for j in 0..sample.n_total() {
        let y_row = sample.y_block().row(j).transpose();
        let x_row: DVector<f64> = if j < sample.n() {
            sample.x_block().row(j).transpose()
        } else {
            &mu1 + &est.delta12 * (&y_row - &mu2)
        };
        for c in 0..p {
            merged[(j, c)] = x_row[c];
        }
        for c in 0..q {
            merged[(j, p + c)] = y_row[c];
        }
    }
    Ok(merged)
}

/// The kurtosis statistic evaluated on the merged observed-plus-imputed
/// data, every row entering through the full quadratic form.  Identical to
/// [`kurtosis_statistic`] because the imputed rows have zero regression
/// residual.
pub fn kurtosis_statistic_imputed(
    sample: &MonotoneSample,
    est: &MleEstimate,
    w: &KurtosisWeights,
) -> Result<KurtosisValue> {
    check_weights(sample, w)?;
    let merged = impute(sample, est)?;
    let split = QuadraticSplit::new(est)?;

    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for j in 0..sample.n_total() {
        let z = merged.row(j).transpose();
        let qf = split.full(est, &z);
        if j < sample.n() {
            b1 += qf * qf;
        } else {
            b2 += qf * qf;
        }
    }
    let b = (w.c1() * b1 + w.c2() * b2) / sample.n_total() as f64;
    Ok(KurtosisValue {
        b1,
        b2,
        b,
        weights: *w,
    })
}

/// Element of the block upper-triangular affine group acting on monotone
/// samples: complete rows map to `L C z + nu`, incomplete rows to
/// `L22 y + nu2`, with `L = diag(L11, L22)` and `C = [[I, L12], [0, I]]`.
#[derive(Clone, Debug)]
pub struct AffineElement {
    pub lambda11: DMatrix<f64>,
    pub lambda22: DMatrix<f64>,
    pub lambda12: DMatrix<f64>,
    pub nu1: DVector<f64>,
    pub nu2: DVector<f64>,
}

impl AffineElement {
    /// Validates block dimensions and positive definiteness of the diagonal
    /// blocks.
    pub fn new(
        lambda11: DMatrix<f64>,
        lambda22: DMatrix<f64>,
        lambda12: DMatrix<f64>,
        nu1: DVector<f64>,
        nu2: DVector<f64>,
    ) -> Result<Self> {
        let p = lambda11.nrows();
        let q = lambda22.nrows();
        SpdFactor::new(&lambda11, "Lambda11")?;
        SpdFactor::new(&lambda22, "Lambda22")?;
        if lambda12.shape() != (p, q) || nu1.len() != p || nu2.len() != q {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "affine element blocks inconsistent with p={p}, q={q}: Lambda12 is {:?}, nu sizes ({}, {})",
                    lambda12.shape(),
                    nu1.len(),
                    nu2.len()
                ),
            });
        }
        Ok(Self {
            lambda11,
            lambda22,
            lambda12,
            nu1,
            nu2,
        })
    }

    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            lambda11: DMatrix::identity(p, p),
            lambda22: DMatrix::identity(q, q),
            lambda12: DMatrix::zeros(p, q),
            nu1: DVector::zeros(p),
            nu2: DVector::zeros(q),
        }
    }

    pub fn p(&self) -> usize {
        self.lambda11.nrows()
    }

    pub fn q(&self) -> usize {
        self.lambda22.nrows()
    }

    /// Group inverse: the element undoing this one's action.
    pub fn inverse(&self) -> Result<Self> {
        let inv11 = SpdFactor::new(&self.lambda11, "Lambda11")?.inverse();
        let l22 = SpdFactor::new(&self.lambda22, "Lambda22")?;
        let inv22 = l22.inverse();
        // (L C)^{-1} = [[L11^{-1}, -L12 L22^{-1}], [0, L22^{-1}]], so the
        // inverse element has L12* = -L11 L12 L22^{-1} and nu* = -(L C)^{-1} nu.
        let l12_s22inv = l22.solve(&self.lambda12.transpose()).transpose();
        let lambda12_inv = -(&self.lambda11 * &l12_s22inv);
        let nu1_new = -(&inv11 * &self.nu1) + &l12_s22inv * &self.nu2;
        let nu2_new = -(&inv22 * &self.nu2);
        AffineElement::new(inv11, inv22, lambda12_inv, nu1_new, nu2_new)
    }
}

/// Applies a group element to a sample.
pub fn transform(sample: &MonotoneSample, g: &AffineElement) -> Result<MonotoneSample> {
    if g.p() != sample.p() || g.q() != sample.q() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "group element is (p={}, q={}) but sample is (p={}, q={})",
                g.p(),
                g.q(),
                sample.p(),
                sample.q()
            ),
        });
    }
    let (p, q) = (sample.p(), sample.q());
    let n = sample.n();
    let n_total = sample.n_total();

    let mut x_new = DMatrix::zeros(n, p);
    for j in 0..n {
        let x = sample.x_block().row(j).transpose();
        let y = sample.y_block().row(j).transpose();
        let xt = &g.lambda11 * (x + &g.lambda12 * y) + &g.nu1;
        for c in 0..p {
            x_new[(j, c)] = xt[c];
        }
    }
    let mut y_new = DMatrix::zeros(n_total, q);
    for j in 0..n_total {
        let y = sample.y_block().row(j).transpose();
        let yt = &g.lambda22 * y + &g.nu2;
        for c in 0..q {
            y_new[(j, c)] = yt[c];
        }
    }
    MonotoneSample::new(p, q, x_new, y_new)
}

/// Group element mapping a population with mean `mu` and covariance `sigma`
/// to mean zero and identity covariance:
/// `L11 = S11.2^{-1/2}`, `L22 = S22^{-1/2}`, `L12 = -S12 S22^{-1}`,
/// `nu = -L C mu`.
pub fn canonicalizer(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    p: usize,
    q: usize,
) -> Result<AffineElement> {
    if mu.len() != p + q || sigma.shape() != (p + q, p + q) {
        return Err(Error::DimensionMismatch {
            context: format!(
                "canonicalizer expects ({}, {}x{}), got ({}, {}x{})",
                p + q,
                p + q,
                p + q,
                mu.len(),
                sigma.nrows(),
                sigma.ncols()
            ),
        });
    }
    let s11 = sigma.view((0, 0), (p, p)).into_owned();
    let s12 = sigma.view((0, p), (p, q)).into_owned();
    let s22 = sigma.view((p, p), (q, q)).into_owned();

    let s22_factor = SpdFactor::new(&s22, "Sigma22")?;
    // S22^{-1} S21, transposed to S12 S22^{-1}.
    let reg = s22_factor.solve(&s12.transpose()).transpose();
    let lambda12 = -&reg;
    let s11_dot2 = symmetrize(&(&s11 - &reg * s12.transpose()));
    let lambda11 = spd_inv_sqrt(&s11_dot2, "Sigma11.2")?;
    let lambda22 = spd_inv_sqrt(&s22, "Sigma22")?;

    let mu1 = mu.rows(0, p).into_owned();
    let mu2 = mu.rows(p, q).into_owned();
    let nu1 = -(&lambda11 * (&mu1 + &lambda12 * &mu2));
    let nu2 = -(&lambda22 * &mu2);
    AffineElement::new(lambda11, lambda22, lambda12, nu1, nu2)
}
