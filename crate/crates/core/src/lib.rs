//! Kurtosis tests for multivariate normality with two-step monotone
//! incomplete data.
//!
//! A sample in this layout consists of `n` complete observations on a
//! `(p+q)`-dimensional vector `(X, Y)` followed by `N - n` observations on
//! the `Y`-block alone.  The crate computes the closed-form maximum
//! likelihood estimators of the mean and covariance under multivariate
//! normality, a weighted Mardia-type kurtosis statistic built from them,
//! its asymptotic null and non-null moments, and the resulting z-test,
//! together with seeded Monte Carlo machinery used to validate every
//! asymptotic formula empirically.
//!
//! The main entry points are [`ingest_csv`] / [`MonotoneSample::new`] to
//! build a sample, [`run_test`] for the full hypothesis test, and the
//! [`simulation`] module for calibration experiments.

pub mod asymptotics;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod kurtosis;
pub mod linalg;
pub mod report;
pub mod sample;
pub mod simulation;

pub use asymptotics::{
    empirical_moments, nonnull_sigma, normal_moments, null_moments, optimize_weights,
    tilde_functionals, AsymptoticMoments, MomentFunctionals,
};
pub use error::{Error, Result};
pub use estimation::{cross_products, mle, CrossProducts, MleEstimate};
pub use inference::{mardia_complete, run_test, std_normal_cdf, Tail, TestReport};
pub use kurtosis::{
    canonicalizer, impute, kurtosis_statistic, kurtosis_statistic_imputed, transform,
    AffineElement, KurtosisValue,
};
pub use sample::{ingest_csv, IngestOptions, KurtosisWeights, MonotoneSample, ValidationWarning};
pub use simulation::{
    draw_reference, draw_sample, expansion_order_check, null_calibration, variance_oracle,
    AlternativeFamily, ExpansionCheckConfig, SimConfig,
};
