//! The assembled hypothesis test and the classical complete-data Mardia
//! test used for comparison.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::null_moments;
use crate::error::{Error, Result};
use crate::estimation::mle;
use crate::kurtosis::kurtosis_statistic;
use crate::linalg::{symmetrize, SpdFactor};
use crate::sample::{KurtosisWeights, MonotoneSample};

/// Alternative direction for the p-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    /// `2 Phi(-|z|)` (default; matches the worked analyses).
    TwoSided,
    /// `1 - Phi(z)`, for excess-kurtosis alternatives.
    Upper,
}

/// Standard normal distribution function, evaluated through the
/// complementary error function: `Phi(x) = erfc(-x / sqrt(2)) / 2`.
/// Absolute error is below 1e-12 over the real line.
pub fn std_normal_cdf(x: f64) -> f64 {
    debug_assert!(!x.is_nan());
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Full report of one hypothesis test.
///
/// For the classical complete-data Mardia test the same shape is reused
/// with `q = 0`, `n = n_total`, `tau = 1`, and weights `(1, 0)`; `b` is then
/// the ordinary Mardia kurtosis average.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestReport {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub n_total: usize,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub b1: f64,
    pub b2: f64,
    pub b: f64,
    pub nu: f64,
    pub sigma2: f64,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub complete_case: Option<Box<TestReport>>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("alpha must lie in (0, 1), got {alpha}"),
        });
    }
    Ok(())
}

fn p_value_for(z: f64, tail: Tail) -> f64 {
    match tail {
        Tail::TwoSided => 2.0 * std_normal_cdf(-z.abs()),
        Tail::Upper => 1.0 - std_normal_cdf(z),
    }
}

/// Runs the monotone-data kurtosis test: statistic, null moments, z-score,
/// p-value, decision, plus (when computable) the classical Mardia test on
/// the `n` complete `(p+q)`-dimensional rows.
pub fn run_test(
    sample: &MonotoneSample,
    w: &KurtosisWeights,
    alpha: f64,
    tail: Tail,
) -> Result<TestReport> {
    check_alpha(alpha)?;
    let est = mle(sample)?;
    let kv = kurtosis_statistic(sample, &est, w)?;
    let moments = null_moments(sample.p(), sample.q(), sample.tau(), w)?;
    let sigma = moments.sigma2.sqrt();
    let z = (sample.n_total() as f64).sqrt() * (kv.b - moments.nu) / sigma;
    let p_value = p_value_for(z, tail);

    let complete_case = if sample.n() > sample.dim() + 1 {
        let mut rows = DMatrix::zeros(sample.n(), sample.dim());
        for j in 0..sample.n() {
            rows.row_mut(j).copy_from(&sample.complete_row(j).transpose());
        }
        mardia_complete(&rows, alpha, tail).ok().map(Box::new)
    } else {
        None
    };

    Ok(TestReport {
        p: sample.p(),
        q: sample.q(),
        n: sample.n(),
        n_total: sample.n_total(),
        tau: sample.tau(),
        c1: w.c1(),
        c2: w.c2(),
        b1: kv.b1,
        b2: kv.b2,
        b: kv.b,
        nu: moments.nu,
        sigma2: moments.sigma2,
        z,
        p_value,
        alpha,
        reject: p_value < alpha,
        complete_case,
    })
}

/// Classical Mardia kurtosis test on complete `m x d` data.
///
/// `b = (1/m) sum [(z_j - z_bar)' S^{-1} (z_j - z_bar)]^2` with `S` the MLE
/// covariance (divisor `m`); `z = sqrt(m) (b - d(d+2)) / sqrt(8 d (d+2))`.
pub fn mardia_complete(rows: &DMatrix<f64>, alpha: f64, tail: Tail) -> Result<TestReport> {
    check_alpha(alpha)?;
    let m = rows.nrows();
    let d = rows.ncols();
    if m <= d {
        return Err(Error::InvalidSample {
            reason: format!("Mardia test needs more rows than dimensions (m={m}, d={d})"),
        });
    }
    let mf = m as f64;
    let df = d as f64;

    let mut mean = DVector::zeros(d);
    for j in 0..m {
        mean += rows.row(j).transpose();
    }
    mean /= mf;
    let mut cov = DMatrix::zeros(d, d);
    let mut dev = DVector::zeros(d);
    for j in 0..m {
        for c in 0..d {
            dev[c] = rows[(j, c)] - mean[c];
        }
        cov.ger(1.0 / mf, &dev, &dev, 1.0);
    }
    let factor = SpdFactor::new(&symmetrize(&cov), "S")?;

    let mut sum = 0.0;
    for j in 0..m {
        for c in 0..d {
            dev[c] = rows[(j, c)] - mean[c];
        }
        let qf = factor.inv_quad_form(&dev);
        sum += qf * qf;
    }
    let b = sum / mf;
    let nu = df * (df + 2.0);
    let sigma2 = 8.0 * df * (df + 2.0);
    let z = mf.sqrt() * (b - nu) / sigma2.sqrt();
    let p_value = p_value_for(z, tail);

    Ok(TestReport {
        p: d,
        q: 0,
        n: m,
        n_total: m,
        tau: 1.0,
        c1: 1.0,
        c2: 0.0,
        b1: sum,
        b2: 0.0,
        b,
        nu,
        sigma2,
        z,
        p_value,
        alpha,
        reject: p_value < alpha,
        complete_case: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn cdf_basic_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        // Standard normal quantile oracle.
        assert!((std_normal_cdf(-1.959964) - 0.025).abs() < 1e-6);
        assert!((std_normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        // Worked-example value (one-sided).
        assert!((std_normal_cdf(-0.7356) - 0.2310).abs() < 5e-5);
        // High-accuracy anchors.
        assert!((std_normal_cdf(-1.0) - 0.15865525393145705).abs() < 1e-12);
        assert!((std_normal_cdf(2.0) - 0.9772498680518208).abs() < 1e-12);
    }

    #[test]
    fn cdf_symmetry_and_monotonicity() {
        let mut prev = 0.0;
        let mut x = -8.0;
        while x <= 8.0 {
            let v = std_normal_cdf(x);
            assert!((v + std_normal_cdf(-x) - 1.0).abs() < 1e-12, "symmetry at {x}");
            assert!(v >= prev, "monotonicity at {x}");
            prev = v;
            x += 0.01;
        }
    }

    #[test]
    fn zero_z_gives_unit_p_value() {
        // A synthetic report at b = nu: z = 0, two-sided p = 1.
        assert_eq!(p_value_for(0.0, Tail::TwoSided), 1.0);
        assert_eq!(p_value_for(0.0, Tail::Upper), 0.5);
    }

    #[test]
    fn report_invariants_on_random_samples() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..10 {
            let n = rng.gen_range(25..60);
            let n_total = n + rng.gen_range(1..30);
            let x = DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
            let y = DMatrix::from_fn(n_total, 1, |_, _| rng.sample(StandardNormal));
            let s = MonotoneSample::new(2, 1, x, y).unwrap();
            let w = KurtosisWeights::tau_bar_weights(s.tau()).unwrap();
            let r = run_test(&s, &w, 0.05, Tail::TwoSided).unwrap();
            assert!((0.0..=1.0).contains(&r.p_value));
            assert_eq!(r.reject, r.p_value < r.alpha);
            // z * sigma / sqrt(N) + nu recovers b.
            let recon = r.z * r.sigma2.sqrt() / (r.n_total as f64).sqrt() + r.nu;
            assert!((recon - r.b).abs() <= 1e-10 * r.b.abs().max(1.0));
            assert!(r.complete_case.is_some());
        }
    }

    #[test]
    fn complete_sample_matches_classical_mardia_pipeline() {
        let mut rng = StdRng::seed_from_u64(123);
        let n = 80;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample(StandardNormal));
        let y = DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let s = MonotoneSample::new(1, 2, x.clone(), y.clone()).unwrap();
        let r = run_test(&s, &KurtosisWeights::unit(), 0.05, Tail::TwoSided).unwrap();

        let mut rows = DMatrix::zeros(n, 3);
        rows.view_mut((0, 0), (n, 1)).copy_from(&x);
        rows.view_mut((0, 1), (n, 2)).copy_from(&y);
        let classical = mardia_complete(&rows, 0.05, Tail::TwoSided).unwrap();

        assert!((r.b - classical.b).abs() <= 1e-10 * classical.b);
        assert!((r.z - classical.z).abs() <= 1e-10 * classical.z.abs());
        assert!((r.p_value - classical.p_value).abs() <= 1e-10);
        assert_eq!(r.nu, classical.nu);
        assert_eq!(r.sigma2, classical.sigma2);
    }

    #[test]
    fn mardia_rejects_degenerate_covariance() {
        // Rank-deficient data: third column is the sum of the first two.
        let mut rows = DMatrix::zeros(20, 3);
        let mut rng = StdRng::seed_from_u64(9);
        for j in 0..20 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            rows[(j, 0)] = a;
            rows[(j, 1)] = b;
            rows[(j, 2)] = a + b;
        }
        match mardia_complete(&rows, 0.05, Tail::TwoSided) {
            Err(Error::Singular { .. }) | Err(Error::NotPositiveDefinite { .. }) => {}
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn mardia_z_is_calibrated_on_large_normal_sample() {
        let mut rng = StdRng::seed_from_u64(2024);
        let rows = DMatrix::from_fn(100_000, 2, |_, _| rng.sample(StandardNormal));
        let r = mardia_complete(&rows, 0.05, Tail::TwoSided).unwrap();
        assert!(r.z.abs() < 4.0, "z = {}", r.z);
    }
}
