//! Asymptotic mean and variance of the kurtosis statistic.
//!
//! For a canonical population (mean zero, identity covariance) the scaled
//! statistic `sqrt(N) (b - nu) / sigma` is asymptotically standard normal
//! with
//!
//! ```text
//! nu = c1 tau E||Z||^4 + c2 tau_bar E||Y||^4
//! sigma^2 = tau { c1^2 Var||Z||^4 + 4 Var(Z' Xt Z) + 16 Tt'Tt
//!                 - 4 c1 Cov(||Z||^4, Z' Xt Z) - 8 c1 E(||Z||^4 Z')Tt
//!                 + 16 E(Z' Xt Z Z')Tt }
//!         + tau_bar { same with Y, c2, Xt22, Tt2 }
//! ```
//!
//! where `Xt` and `Tt` are the weighted moment functionals assembled by
//! [`tilde_functionals`].  Under normality everything is available in
//! closed form ([`normal_moments`], [`null_moments`]); under alternatives
//! the functionals are plugged in analytically or estimated from a large
//! reference sample ([`empirical_moments`]).
//!
//! The general null-variance formula implemented by [`null_moments`] is the
//! authoritative one; the shortcut displays for the weight choices
//! `(tau, tau_bar)` and `(1, 1)` are provided separately because the former
//! is not algebraically consistent with the general formula (it drops a
//! factor `q` on its cross term) and is retained only as a documented
//! reference candidate for the Monte Carlo variance oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kurtosis::canonicalizer;
use crate::linalg::symmetrize;
use crate::sample::KurtosisWeights;

/// Population moment functionals of a canonical (mean zero, identity
/// covariance) population, partitioned as `Z = (X, Y)`.
///
/// The scalar fields involving the weighted matrix `Xt` depend on the
/// `(tau, weights)` pair they were built with, which is recorded so that
/// [`nonnull_sigma`] can refuse mismatched inputs.
#[derive(Clone, Debug)]
pub struct MomentFunctionals {
    pub p: usize,
    pub q: usize,
    /// `(tau, weights)` used for the tilde-dependent scalar fields.
    pub tau: f64,
    pub weights: KurtosisWeights,
    /// `E(||Z||^2 Z Z')`.
    pub xi: DMatrix<f64>,
    /// `E(||Y||^2 Y Y')`.
    pub xi_star: DMatrix<f64>,
    /// `E(||Z||^2 Z)`.
    pub theta: DVector<f64>,
    /// `E(||Y||^2 Y)`.
    pub theta_star: DVector<f64>,
    /// `E||Z||^4`, `E||Y||^4`.
    pub m4_z: f64,
    pub m4_y: f64,
    /// `Var||Z||^4`, `Var||Y||^4`.
    pub var4_z: f64,
    pub var4_y: f64,
    /// `Var(Z' Xt Z)`, `Var(Y' Xt22 Y)`.
    pub q_var_z: f64,
    pub q_var_y: f64,
    /// `Cov(||Z||^4, Z' Xt Z)`, `Cov(||Y||^4, Y' Xt22 Y)`.
    pub q_cov_z: f64,
    pub q_cov_y: f64,
    /// `E(||Z||^4 Z)`, `E(||Y||^4 Y)`.
    pub v6_z: DVector<f64>,
    pub v6_y: DVector<f64>,
    /// `E((Z' Xt Z) Z)`, `E((Y' Xt22 Y) Y)`.
    pub w_z: DVector<f64>,
    pub w_y: DVector<f64>,
}

/// Asymptotic mean and variance of the statistic: `sqrt(N)(b - nu)` has
/// limiting variance `sigma2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticMoments {
    pub nu: f64,
    pub sigma2: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("tau must lie in (0, 1], got {tau}"),
        });
    }
    Ok(())
}

/// Weighted functionals: `Xt` has blocks `(c1 Xi11, c1 Xi12; c1 Xi21,
/// c1 tau Xi22 + c2 tau_bar Xi*)` and `Tt = (c1 Theta1; c1 tau Theta2 +
/// c2 tau_bar Theta*)`.
pub fn tilde_functionals(
    m: &MomentFunctionals,
    tau: f64,
    w: &KurtosisWeights,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_tau(tau)?;
    let (p, q) = (m.p, m.q);
    let d = p + q;
    if m.xi.shape() != (d, d) || m.xi_star.shape() != (q, q) {
        return Err(Error::DimensionMismatch {
            context: format!(
                "moment functionals have Xi {:?} and Xi* {:?}, expected ({d},{d}) and ({q},{q})",
                m.xi.shape(),
                m.xi_star.shape()
            ),
        });
    }
    if m.theta.len() != d || m.theta_star.len() != q {
        return Err(Error::DimensionMismatch {
            context: "Theta blocks inconsistent with (p, q)".into(),
        });
    }
    let tau_bar = 1.0 - tau;
    let (c1, c2) = (w.c1(), w.c2());

    let mut xi_tilde = &m.xi * c1;
    let lower = m.xi.view((p, p), (q, q)) * (c1 * tau) + &m.xi_star * (c2 * tau_bar);
    xi_tilde.view_mut((p, p), (q, q)).copy_from(&lower);

    let mut theta_tilde = &m.theta * c1;
    let lower_t = m.theta.rows(p, q) * (c1 * tau) + &m.theta_star * (c2 * tau_bar);
    theta_tilde.rows_mut(p, q).copy_from(&lower_t);
    Ok((xi_tilde, theta_tilde))
}

/// Closed-form moment functionals of the standard normal population.
///
/// `Xi11 = (p+q+2) I_p`, `Xi22 = (p+q+2) I_q`, `Xi12 = 0`, `Xi* = (q+2) I_q`,
/// all odd functionals vanish, `Var||Z||^4 = 8 d (d+2) (d+3)`, and the
/// quadratic-form scalars reduce to traces:
/// `Var(Z' Xt Z) = 2 tr(Xt^2)`, `Cov(||Z||^4, Z' Xt Z) = 4 (d+2) tr(Xt)`.
pub fn normal_moments(
    p: usize,
    q: usize,
    tau: f64,
    w: &KurtosisWeights,
) -> Result<MomentFunctionals> {
    check_tau(tau)?;
    if p == 0 || q == 0 {
        return Err(Error::InvalidConfig {
            reason: "p and q must be at least 1".into(),
        });
    }
    let d = p + q;
    let (df, qf) = (d as f64, q as f64);

    let xi = DMatrix::identity(d, d) * (df + 2.0);
    let xi_star = DMatrix::identity(q, q) * (qf + 2.0);
    let theta = DVector::zeros(d);
    let theta_star = DVector::zeros(q);

    let m4_z = df * (df + 2.0);
    let m4_y = qf * (qf + 2.0);
    let var4_z = 8.0 * df * (df + 2.0) * (df + 3.0);
    let var4_y = 8.0 * qf * (qf + 2.0) * (qf + 3.0);

    let mut m = MomentFunctionals {
        p,
        q,
        tau,
        weights: *w,
        xi,
        xi_star,
        theta,
        theta_star,
        m4_z,
        m4_y,
        var4_z,
        var4_y,
        q_var_z: 0.0,
        q_var_y: 0.0,
        q_cov_z: 0.0,
        q_cov_y: 0.0,
        v6_z: DVector::zeros(d),
        v6_y: DVector::zeros(q),
        w_z: DVector::zeros(d),
        w_y: DVector::zeros(q),
    };
    let (xi_tilde, _) = tilde_functionals(&m, tau, w)?;
    let xt22 = xi_tilde.view((p, p), (q, q)).into_owned();
    let tr = xi_tilde.trace();
    let tr2 = (&xi_tilde * &xi_tilde).trace();
    let tr22 = xt22.trace();
    let tr22_2 = (&xt22 * &xt22).trace();
    m.q_var_z = 2.0 * tr2;
    m.q_var_y = 2.0 * tr22_2;
    m.q_cov_z = 4.0 * (df + 2.0) * tr;
    m.q_cov_y = 4.0 * (qf + 2.0) * tr22;
    Ok(m)
}

/// Closed-form null moments (the general weighted display).
pub fn null_moments(p: usize, q: usize, tau: f64, w: &KurtosisWeights) -> Result<AsymptoticMoments> {
    check_tau(tau)?;
    let d = (p + q) as f64;
    let qf = q as f64;
    let pf = p as f64;
    let tau_bar = 1.0 - tau;
    let (c1, c2) = (w.c1(), w.c2());

    let nu = c1 * tau * d * (d + 2.0) + c2 * tau_bar * qf * (qf + 2.0);

    // Eigenvalue of the weighted functional on the Y block.
    let beta = c1 * tau * (d + 2.0) + c2 * tau_bar * (qf + 2.0);
    let complete_brace = c1 * c1 * d * (d + 2.0) * (d + 3.0)
        + c1 * c1 * pf * (d + 2.0) * (d + 2.0)
        + qf * beta * beta
        - 2.0 * c1 * (d + 2.0) * (pf * c1 * (d + 2.0) + qf * beta);
    let incomplete_brace = c2 * c2 * qf * (qf + 2.0) * (qf + 3.0) + qf * beta * beta
        - 2.0 * c2 * (qf + 2.0) * qf * beta;
    let sigma2 = 8.0 * tau * complete_brace + 8.0 * tau_bar * incomplete_brace;
    Ok(AsymptoticMoments { nu, sigma2 })
}

/// Shortcut null moments for `(c1, c2) = (tau, tau_bar)` as displayed in the
/// source analysis.  The variance is NOT consistent with [`null_moments`]
/// at these weights (its cross term lacks a factor `q`); it is kept as a
/// candidate value for the Monte Carlo variance oracle to reject.
pub fn null_moments_tau_weights_closed(p: usize, q: usize, tau: f64) -> AsymptoticMoments {
    let d = (p + q) as f64;
    let qf = q as f64;
    let tau_bar = 1.0 - tau;
    let nu = tau * tau * d * (d + 2.0) + tau_bar * tau_bar * qf * (qf + 2.0);
    let gap = tau * (d + 2.0) - tau_bar * (qf + 2.0);
    let sigma2 = 8.0
        * (tau.powi(3) * d * (d + 2.0)
            + tau_bar.powi(3) * qf * (qf + 2.0)
            + tau * tau_bar * gap * gap);
    AsymptoticMoments { nu, sigma2 }
}

/// Shortcut null moments for `(c1, c2) = (1, 1)`; algebraically equal to
/// [`null_moments`] at unit weights.
pub fn null_moments_unit_weights_closed(p: usize, q: usize, tau: f64) -> AsymptoticMoments {
    let d = (p + q) as f64;
    let qf = q as f64;
    let pf = p as f64;
    let tau_bar = 1.0 - tau;
    let nu = tau * d * (d + 2.0) + tau_bar * qf * (qf + 2.0);
    let sigma2 =
        8.0 * (tau * d * (d + 2.0) + tau_bar * qf * (qf + 2.0) + tau * tau_bar * pf * pf * qf);
    AsymptoticMoments { nu, sigma2 }
}

/// Non-null moments from plugged-in functionals, evaluated term by term.
///
/// `m` must describe a canonical population and must have been built with
/// the same `(tau, w)` pair passed here.
pub fn nonnull_sigma(
    m: &MomentFunctionals,
    tau: f64,
    w: &KurtosisWeights,
) -> Result<AsymptoticMoments> {
    check_tau(tau)?;
    if (m.tau - tau).abs() > 1e-12
        || (m.weights.c1() - w.c1()).abs() > 1e-12
        || (m.weights.c2() - w.c2()).abs() > 1e-12
    {
        return Err(Error::InvalidConfig {
            reason: format!(
                "moment functionals were built for (tau, c1, c2) = ({}, {}, {}), not ({}, {}, {})",
                m.tau,
                m.weights.c1(),
                m.weights.c2(),
                tau,
                w.c1(),
                w.c2()
            ),
        });
    }
    let tau_bar = 1.0 - tau;
    let (c1, c2) = (w.c1(), w.c2());
    let (xi_tilde, theta_tilde) = tilde_functionals(m, tau, w)?;
    let _ = xi_tilde;
    let tt2 = theta_tilde.rows(m.p, m.q).into_owned();

    let nu = c1 * tau * m.m4_z + c2 * tau_bar * m.m4_y;

    let complete_brace = c1 * c1 * m.var4_z + 4.0 * m.q_var_z + 16.0 * theta_tilde.dot(&theta_tilde)
        - 4.0 * c1 * m.q_cov_z
        - 8.0 * c1 * m.v6_z.dot(&theta_tilde)
        + 16.0 * m.w_z.dot(&theta_tilde);
    let incomplete_brace = c2 * c2 * m.var4_y + 4.0 * m.q_var_y + 16.0 * tt2.dot(&tt2)
        - 4.0 * c2 * m.q_cov_y
        - 8.0 * c2 * m.v6_y.dot(&tt2)
        + 16.0 * m.w_y.dot(&tt2);
    let sigma2 = tau * complete_brace + tau_bar * incomplete_brace;

    if !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(Error::MomentEstimation {
            reason: format!("computed asymptotic variance {sigma2} is not positive"),
        });
    }
    Ok(AsymptoticMoments { nu, sigma2 })
}

/// Sample analogues of every functional, from `K` i.i.d. reference draws
/// (rows of `reference`).  The draws are re-standardized internally with
/// the canonicalizing group element of their sample moments, so the caller
/// only needs the reference distribution to have finite eighth moments.
pub fn empirical_moments(
    reference: &DMatrix<f64>,
    p: usize,
    q: usize,
    tau: f64,
    w: &KurtosisWeights,
) -> Result<MomentFunctionals> {
    check_tau(tau)?;
    let d = p + q;
    let k = reference.nrows();
    if reference.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: format!(
                "reference sample has {} columns, expected p+q = {d}",
                reference.ncols()
            ),
        });
    }
    if k < d + 1 {
        return Err(Error::InvalidConfig {
            reason: format!("reference sample too small: {k} rows < p+q+1 = {}", d + 1),
        });
    }

    // Sample moments, then the canonical reduction.
    let mut mean = DVector::zeros(d);
    for j in 0..k {
        mean += reference.row(j).transpose();
    }
    mean /= k as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut dev = DVector::zeros(d);
    for j in 0..k {
        for c in 0..d {
            dev[c] = reference[(j, c)] - mean[c];
        }
        cov.ger(1.0 / k as f64, &dev, &dev, 1.0);
    }
    let g = canonicalizer(&mean, &symmetrize(&cov), p, q)?;
    let mut lc = DMatrix::zeros(d, d);
    lc.view_mut((0, 0), (p, p)).copy_from(&g.lambda11);
    lc.view_mut((0, p), (p, q))
        .copy_from(&(&g.lambda11 * &g.lambda12));
    lc.view_mut((p, p), (q, q)).copy_from(&g.lambda22);

    // First sweep: moments not involving the weighted matrix.
    let kf = k as f64;
    let mut xi = DMatrix::zeros(d, d);
    let mut xi_star = DMatrix::zeros(q, q);
    let mut theta = DVector::zeros(d);
    let mut theta_star = DVector::zeros(q);
    let mut v6_z = DVector::zeros(d);
    let mut v6_y = DVector::zeros(q);
    let mut m4_z = 0.0;
    let mut m4_y = 0.0;
    let mut m8_z = 0.0;
    let mut m8_y = 0.0;
    let mut z = DVector::zeros(d);
    for j in 0..k {
        for c in 0..d {
            dev[c] = reference[(j, c)] - mean[c];
        }
        z.gemv(1.0, &lc, &dev, 0.0);
        let y = z.rows(p, q).into_owned();
        let nz2 = z.dot(&z);
        let ny2 = y.dot(&y);
        xi.ger(nz2 / kf, &z, &z, 1.0);
        xi_star.ger(ny2 / kf, &y, &y, 1.0);
        theta.axpy(nz2 / kf, &z, 1.0);
        theta_star.axpy(ny2 / kf, &y, 1.0);
        v6_z.axpy(nz2 * nz2 / kf, &z, 1.0);
        v6_y.axpy(ny2 * ny2 / kf, &y, 1.0);
        m4_z += nz2 * nz2 / kf;
        m4_y += ny2 * ny2 / kf;
        m8_z += nz2 * nz2 * nz2 * nz2 / kf;
        m8_y += ny2 * ny2 * ny2 * ny2 / kf;
    }
    let xi = symmetrize(&xi);
    let xi_star = symmetrize(&xi_star);

    let mut m = MomentFunctionals {
        p,
        q,
        tau,
        weights: *w,
        xi,
        xi_star,
        theta,
        theta_star,
        m4_z,
        m4_y,
        var4_z: m8_z - m4_z * m4_z,
        var4_y: m8_y - m4_y * m4_y,
        q_var_z: 0.0,
        q_var_y: 0.0,
        q_cov_z: 0.0,
        q_cov_y: 0.0,
        v6_z,
        v6_y,
        w_z: DVector::zeros(d),
        w_y: DVector::zeros(q),
    };

    // Second sweep: scalars through the weighted matrix built from the
    // empirical functionals.
    let (xi_tilde, _) = tilde_functionals(&m, tau, w)?;
    let xt22 = xi_tilde.view((p, p), (q, q)).into_owned();
    let mut qz_mean = 0.0;
    let mut qz_sq = 0.0;
    let mut qy_mean = 0.0;
    let mut qy_sq = 0.0;
    let mut cross_z = 0.0;
    let mut cross_y = 0.0;
    let mut w_z = DVector::zeros(d);
    let mut w_y = DVector::zeros(q);
    for j in 0..k {
        for c in 0..d {
            dev[c] = reference[(j, c)] - mean[c];
        }
        z.gemv(1.0, &lc, &dev, 0.0);
        let y = z.rows(p, q).into_owned();
        let nz2 = z.dot(&z);
        let ny2 = y.dot(&y);
        let qz = z.dot(&(&xi_tilde * &z));
        let qy = y.dot(&(&xt22 * &y));
        qz_mean += qz / kf;
        qz_sq += qz * qz / kf;
        qy_mean += qy / kf;
        qy_sq += qy * qy / kf;
        cross_z += nz2 * nz2 * qz / kf;
        cross_y += ny2 * ny2 * qy / kf;
        w_z.axpy(qz / kf, &z, 1.0);
        w_y.axpy(qy / kf, &y, 1.0);
    }
    m.q_var_z = qz_sq - qz_mean * qz_mean;
    m.q_var_y = qy_sq - qy_mean * qy_mean;
    m.q_cov_z = cross_z - m.m4_z * qz_mean;
    m.q_cov_y = cross_y - m.m4_y * qy_mean;
    m.w_z = w_z;
    m.w_y = w_y;

    let all_finite = m.xi.iter().all(|v| v.is_finite())
        && m.xi_star.iter().all(|v| v.is_finite())
        && [m.m4_z, m.m4_y, m.var4_z, m.var4_y, m.q_var_z, m.q_var_y, m.q_cov_z, m.q_cov_y]
            .iter()
            .all(|v| v.is_finite());
    if !all_finite {
        return Err(Error::MomentEstimation {
            reason: "non-finite empirical moments (overflow in the reference sample)".into(),
        });
    }
    Ok(m)
}

/// Weights minimizing the null asymptotic variance subject to pinning the
/// null mean at its complete-data value `d(d+2)`.
///
/// The variance is a homogeneous quadratic in `(c1, c2)`, so without a
/// normalization its infimum is the degenerate `(0, 0)`; the constraint
/// fixes the scale.  The minimizer is found in closed form along the
/// constraint line; a degenerate quadratic falls back to the rescaled
/// `(tau, tau_bar)` pair.
pub fn optimize_weights(p: usize, q: usize, tau: f64) -> Result<KurtosisWeights> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("weight optimization requires 0 < tau < 1, got {tau}"),
        });
    }
    let d = (p + q) as f64;
    let qf = q as f64;
    let tau_bar = 1.0 - tau;
    let target = d * (d + 2.0);
    let a_coef = tau * d * (d + 2.0); // nu-contribution per unit c1
    let b_coef = tau_bar * qf * (qf + 2.0); // per unit c2

    // sigma2(c1, c2) = q11 c1^2 + 2 q12 c1 c2 + q22 c2^2, recovered from
    // three evaluations of the closed-form display.
    let q11 = null_sigma2_raw(p, q, tau, 1.0, 0.0);
    let q22 = null_sigma2_raw(p, q, tau, 0.0, 1.0);
    let q12 = (null_sigma2_raw(p, q, tau, 1.0, 1.0) - q11 - q22) / 2.0;

    // Substitute c2 = (target - a c1)/b and minimize over c1.
    let quad = q11 - 2.0 * q12 * a_coef / b_coef + q22 * (a_coef / b_coef).powi(2);
    let lin = 2.0 * q12 * target / b_coef - 2.0 * q22 * target * a_coef / (b_coef * b_coef);
    let c1_max = target / a_coef; // c2 = 0 boundary
    let c1 = if quad > 1e-12 {
        (-lin / (2.0 * quad)).clamp(c1_max * 1e-9, c1_max * (1.0 - 1e-9))
    } else {
        // Degenerate quadratic: fall back to (tau, tau_bar) rescaled onto
        // the constraint.
        tau * target / (a_coef * tau + b_coef * tau_bar)
    };
    let c2 = (target - a_coef * c1) / b_coef;
    KurtosisWeights::new(c1, c2)
}

// The raw quadratic form behind null_moments, valid for any (c1, c2)
// including zero entries (used only for probing the quadratic).
fn null_sigma2_raw(p: usize, q: usize, tau: f64, c1: f64, c2: f64) -> f64 {
    let d = (p + q) as f64;
    let qf = q as f64;
    let pf = p as f64;
    let tau_bar = 1.0 - tau;
    let beta = c1 * tau * (d + 2.0) + c2 * tau_bar * (qf + 2.0);
    let complete_brace = c1 * c1 * d * (d + 2.0) * (d + 3.0)
        + c1 * c1 * pf * (d + 2.0) * (d + 2.0)
        + qf * beta * beta
        - 2.0 * c1 * (d + 2.0) * (pf * c1 * (d + 2.0) + qf * beta);
    let incomplete_brace = c2 * c2 * qf * (qf + 2.0) * (qf + 3.0) + qf * beta * beta
        - 2.0 * c2 * (qf + 2.0) * qf * beta;
    8.0 * tau * complete_brace + 8.0 * tau_bar * incomplete_brace
}
