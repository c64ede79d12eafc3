//! Seeded Monte Carlo experiments validating the asymptotic formulas.
//!
//! Reproducibility contract: replication `r` of a run with seed `s` draws
//! from a ChaCha12 generator initialized with `seed_from_u64(s)` and stream
//! `r` (a documented, counter-based construction), and all summaries reduce
//! per-replication results in index order.  Output is therefore identical
//! for any worker-thread count, and byte-identical as JSON.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::mle;
use crate::inference::{run_test, std_normal_cdf, Tail};
use crate::kurtosis::kurtosis_statistic;
use crate::sample::{KurtosisWeights, MonotoneSample};

/// Population to draw from.  Every family is standardized so the resulting
/// vector has mean zero and identity covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlternativeFamily {
    StandardNormal,
    /// Independent Laplace components scaled to unit variance.
    ProductLaplace,
    /// Independent uniform components on `(-sqrt(3), sqrt(3))`.
    ProductUniform,
    /// Multivariate t with identity shape, scaled to unit covariance.
    /// The eighth-moment hypothesis of the limit theory needs `df > 8`.
    MultivariateT { df: f64 },
    /// Scale mixture: with probability `eps` the row is inflated by
    /// `scale`, then the whole vector is rescaled to unit variance.
    NormalMixture { eps: f64, scale: f64 },
}

impl AlternativeFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlternativeFamily::MultivariateT { df } => {
                if !(df > 8.0) {
                    return Err(Error::InvalidConfig {
                        reason: format!(
                            "multivariate t requires df > 8 for finite eighth moments, got {df}"
                        ),
                    });
                }
            }
            AlternativeFamily::NormalMixture { eps, scale } => {
                if !(0.0..1.0).contains(&eps) || !(scale > 0.0) {
                    return Err(Error::InvalidConfig {
                        reason: format!(
                            "normal mixture needs eps in [0,1) and scale > 0, got ({eps}, {scale})"
                        ),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Fills `row` with one standardized draw.
    fn sample_into(&self, row: &mut DVector<f64>, rng: &mut ChaCha12Rng) {
        match *self {
            AlternativeFamily::StandardNormal => {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            AlternativeFamily::ProductLaplace => {
                // Inverse CDF with scale 1/sqrt(2) so the variance is 1.
                let b = std::f64::consts::FRAC_1_SQRT_2;
                for v in row.iter_mut() {
                    loop {
                        let u: f64 = rng.gen::<f64>() - 0.5;
                        let t = 1.0 - 2.0 * u.abs();
                        if t > 0.0 {
                            *v = -b * u.signum() * t.ln();
                            break;
                        }
                    }
                }
            }
            AlternativeFamily::ProductUniform => {
                let half_width = 3.0f64.sqrt();
                for v in row.iter_mut() {
                    *v = (rng.gen::<f64>() - 0.5) * 2.0 * half_width;
                }
            }
            AlternativeFamily::MultivariateT { df } => {
                let chi = ChiSquared::new(df).expect("validated df");
                let g: f64 = chi.sample(rng);
                let scale = ((df - 2.0) / g).sqrt();
                for v in row.iter_mut() {
                    let w: f64 = rng.sample(StandardNormal);
                    *v = w * scale;
                }
            }
            AlternativeFamily::NormalMixture { eps, scale } => {
                let norm = ((1.0 - eps) + eps * scale * scale).sqrt();
                let inflate = rng.gen::<f64>() < eps;
                let s = if inflate { scale / norm } else { 1.0 / norm };
                for v in row.iter_mut() {
                    let w: f64 = rng.sample(StandardNormal);
                    *v = w * s;
                }
            }
        }
    }
}

/// Configuration of one Monte Carlo experiment.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub alt: AlternativeFamily,
    pub p: usize,
    pub q: usize,
    pub n_total: usize,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub replications: usize,
    pub seed: u64,
    /// Mask rows independently with probability `tau` instead of taking a
    /// deterministic count `n = floor(tau N)`.
    pub bernoulli_masking: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.alt.validate()?;
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidConfig {
                reason: "p and q must be at least 1".into(),
            });
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("tau must lie in (0, 1], got {}", self.tau),
            });
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig {
                reason: "at least one replication required".into(),
            });
        }
        let n = (self.tau * self.n_total as f64).floor() as usize;
        if n < self.p + self.q + 1 {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "floor(tau N) = {n} complete rows cannot support p+q+1 = {}",
                    self.p + self.q + 1
                ),
            });
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<KurtosisWeights> {
        KurtosisWeights::new(self.c1, self.c2)
    }

    /// Parses a flat `key=value` configuration (one pair per line; `#`
    /// starts a comment).  Keys: `family` (standard-normal,
    /// product-laplace, product-uniform, multivariate-t, normal-mixture),
    /// `df`, `eps`, `scale`, `p`, `q`, `n-total`, `tau`, `c1`, `c2`,
    /// `replications`, `seed`, `bernoulli`.
    pub fn from_key_values(text: &str) -> Result<SimConfig> {
        let mut family = None;
        let mut df = None;
        let mut eps = None;
        let mut scale = None;
        let mut p = None;
        let mut q = None;
        let mut n_total = None;
        let mut tau = None;
        let mut c1 = None;
        let mut c2 = None;
        let mut replications = None;
        let mut seed = 0u64;
        let mut bernoulli = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::InvalidConfig {
                reason: format!("line {}: expected key=value, got {line:?}", idx + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::InvalidConfig {
                reason: format!("line {}: cannot parse {what} from {value:?}", idx + 1),
            };
            match key {
                "family" => family = Some(value.to_string()),
                "df" => df = Some(value.parse::<f64>().map_err(|_| bad("df"))?),
                "eps" => eps = Some(value.parse::<f64>().map_err(|_| bad("eps"))?),
                "scale" => scale = Some(value.parse::<f64>().map_err(|_| bad("scale"))?),
                "p" => p = Some(value.parse::<usize>().map_err(|_| bad("p"))?),
                "q" => q = Some(value.parse::<usize>().map_err(|_| bad("q"))?),
                "n-total" | "n_total" | "N" => {
                    n_total = Some(value.parse::<usize>().map_err(|_| bad("n-total"))?)
                }
                "tau" => tau = Some(value.parse::<f64>().map_err(|_| bad("tau"))?),
                "c1" => c1 = Some(value.parse::<f64>().map_err(|_| bad("c1"))?),
                "c2" => c2 = Some(value.parse::<f64>().map_err(|_| bad("c2"))?),
                "replications" | "R" => {
                    replications = Some(value.parse::<usize>().map_err(|_| bad("replications"))?)
                }
                "seed" => seed = value.parse::<u64>().map_err(|_| bad("seed"))?,
                "bernoulli" => bernoulli = value.parse::<bool>().map_err(|_| bad("bernoulli"))?,
                other => {
                    return Err(Error::InvalidConfig {
                        reason: format!("line {}: unknown key {other:?}", idx + 1),
                    })
                }
            }
        }

        let require = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::InvalidConfig {
                reason: format!("missing key {name:?}"),
            })
        };
        let alt = match family.as_deref() {
            Some("standard-normal") | Some("standard_normal") | None => {
                AlternativeFamily::StandardNormal
            }
            Some("product-laplace") | Some("product_laplace") => AlternativeFamily::ProductLaplace,
            Some("product-uniform") | Some("product_uniform") => AlternativeFamily::ProductUniform,
            Some("multivariate-t") | Some("multivariate_t") => AlternativeFamily::MultivariateT {
                df: require("df", df)?,
            },
            Some("normal-mixture") | Some("normal_mixture") => AlternativeFamily::NormalMixture {
                eps: require("eps", eps)?,
                scale: require("scale", scale)?,
            },
            Some(other) => {
                return Err(Error::InvalidConfig {
                    reason: format!("unknown family {other:?}"),
                })
            }
        };
        let tau = require("tau", tau)?;
        let cfg = SimConfig {
            alt,
            p: p.ok_or_else(|| Error::InvalidConfig {
                reason: "missing key \"p\"".into(),
            })?,
            q: q.ok_or_else(|| Error::InvalidConfig {
                reason: "missing key \"q\"".into(),
            })?,
            n_total: n_total.ok_or_else(|| Error::InvalidConfig {
                reason: "missing key \"n-total\"".into(),
            })?,
            tau,
            c1: c1.unwrap_or(tau),
            c2: c2.unwrap_or(1.0 - tau),
            replications: replications.unwrap_or(1),
            seed,
            bernoulli_masking: bernoulli,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-replication generator: ChaCha12 keyed by the run seed on stream
/// `rep_index`, so replications are independent and reproducible.
fn rep_rng(seed: u64, rep_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(rep_index);
    rng
}

/// `k` i.i.d. standardized draws as rows, e.g. as the reference sample for
/// empirical moment estimation.
pub fn draw_reference(
    family: &AlternativeFamily,
    dim: usize,
    k: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    family.validate()?;
    if dim == 0 || k == 0 {
        return Err(Error::InvalidConfig {
            reason: "reference sample needs dim >= 1 and k >= 1".into(),
        });
    }
    let mut rng = rep_rng(seed, 0);
    let mut rows = DMatrix::zeros(k, dim);
    let mut row = DVector::zeros(dim);
    for j in 0..k {
        family.sample_into(&mut row, &mut rng);
        rows.row_mut(j).copy_from(&row.transpose());
    }
    Ok(rows)
}

/// Draws one monotone sample for replication `rep_index`.
///
/// All `N` rows are drawn in full; the trailing rows then lose their X
/// block.  With deterministic masking the first `floor(tau N)` rows are
/// complete (an MCAR-equivalent design conditioning on the count); with
/// Bernoulli masking each row is complete with probability `tau`, rows
/// re-ordered complete-first, and masks are redrawn until the complete
/// count supports estimation.
pub fn draw_sample(cfg: &SimConfig, rep_index: usize) -> Result<MonotoneSample> {
    cfg.validate()?;
    let dim = cfg.p + cfg.q;
    let mut rng = rep_rng(cfg.seed, rep_index as u64);
    let mut rows = DMatrix::zeros(cfg.n_total, dim);
    let mut row = DVector::zeros(dim);
    for j in 0..cfg.n_total {
        cfg.alt.sample_into(&mut row, &mut rng);
        rows.row_mut(j).copy_from(&row.transpose());
    }

    let complete_idx: Vec<usize> = if cfg.bernoulli_masking {
        let minimum = cfg.p + cfg.q + 1;
        let mut attempts = 0;
        loop {
            let mask: Vec<usize> = (0..cfg.n_total)
                .filter(|_| rng.gen::<f64>() < cfg.tau)
                .collect();
            if mask.len() >= minimum {
                break mask;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::InvalidConfig {
                    reason: "Bernoulli masking failed to produce enough complete rows".into(),
                });
            }
        }
    } else {
        (0..(cfg.tau * cfg.n_total as f64).floor() as usize).collect()
    };

    let n = complete_idx.len();
    let mut x_block = DMatrix::zeros(n, cfg.p);
    let mut y_block = DMatrix::zeros(cfg.n_total, cfg.q);
    for (slot, &j) in complete_idx.iter().enumerate() {
        for c in 0..cfg.p {
            x_block[(slot, c)] = rows[(j, c)];
        }
        for c in 0..cfg.q {
            y_block[(slot, c)] = rows[(j, cfg.p + c)];
        }
    }
    let mut slot = n;
    let mut is_complete = vec![false; cfg.n_total];
    for &j in &complete_idx {
        is_complete[j] = true;
    }
    for j in 0..cfg.n_total {
        if !is_complete[j] {
            for c in 0..cfg.q {
                y_block[(slot, c)] = rows[(j, cfg.p + c)];
            }
            slot += 1;
        }
    }
    MonotoneSample::new(cfg.p, cfg.q, x_block, y_block)
}

/// Summary of a null-calibration run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullCalibrationSummary {
    pub p: usize,
    pub q: usize,
    pub n_total: usize,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub nu: f64,
    pub sigma2: f64,
    pub mean_z: f64,
    /// `None` when fewer than two replications.
    pub var_z: Option<f64>,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    pub rejection_rate: f64,
}

/// Runs the full test once per replication and summarizes the standardized
/// statistic against its limiting standard normal law.
pub fn null_calibration(cfg: &SimConfig, alpha: f64) -> Result<NullCalibrationSummary> {
    cfg.validate()?;
    let w = cfg.weights()?;
    let reports: Vec<(f64, f64)> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let sample = draw_sample(cfg, rep)?;
            let report = run_test(&sample, &w, alpha, Tail::TwoSided)?;
            Ok((report.z, report.p_value))
        })
        .collect::<Result<_>>()?;

    let r = reports.len();
    let rf = r as f64;
    let mean_z = reports.iter().map(|(z, _)| z).sum::<f64>() / rf;
    let var_z = if r > 1 {
        Some(reports.iter().map(|(z, _)| (z - mean_z).powi(2)).sum::<f64>() / (rf - 1.0))
    } else {
        None
    };
    let rejection_rate = reports.iter().filter(|(_, p)| *p < alpha).count() as f64 / rf;

    let mut zs: Vec<f64> = reports.iter().map(|(z, _)| *z).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).expect("finite z-scores"));
    let mut ks = 0.0f64;
    for (i, z) in zs.iter().enumerate() {
        let cdf = std_normal_cdf(*z);
        let hi = (i + 1) as f64 / rf - cdf;
        let lo = cdf - i as f64 / rf;
        ks = ks.max(hi.max(lo));
    }

    let moments = crate::asymptotics::null_moments(cfg.p, cfg.q, cfg.tau, &w)?;
    Ok(NullCalibrationSummary {
        p: cfg.p,
        q: cfg.q,
        n_total: cfg.n_total,
        tau: cfg.tau,
        c1: cfg.c1,
        c2: cfg.c2,
        replications: r,
        seed: cfg.seed,
        alpha,
        nu: moments.nu,
        sigma2: moments.sigma2,
        mean_z,
        var_z,
        ks_distance: ks,
        ks_p_value: kolmogorov_p(ks, r),
        rejection_rate,
    })
}

/// Asymptotic Kolmogorov-Smirnov p-value with the Stephens small-sample
/// adjustment of the effective sample size.
fn kolmogorov_p(d: f64, r: usize) -> f64 {
    let rf = (r as f64).sqrt();
    let lambda = (rf + 0.12 + 0.11 / rf) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Summary of a variance-oracle run: the Monte Carlo estimate of
/// `N Var(b)`, which the asymptotic variance formulas predict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceOracleSummary {
    pub p: usize,
    pub q: usize,
    pub n_total: usize,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub replications: usize,
    pub seed: u64,
    pub mean_b: f64,
    /// `N` times the sample variance of `b` across replications.
    pub scaled_variance: f64,
    /// Jackknife standard error of `scaled_variance`.
    pub jackknife_se: f64,
}

/// Computes the statistic per replication and returns the scaled variance
/// with a leave-one-out (jackknife) standard error.
pub fn variance_oracle(cfg: &SimConfig) -> Result<VarianceOracleSummary> {
    cfg.validate()?;
    if cfg.replications < 3 {
        return Err(Error::InvalidConfig {
            reason: "variance oracle needs at least 3 replications".into(),
        });
    }
    let w = cfg.weights()?;
    let bs: Vec<f64> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let sample = draw_sample(cfg, rep)?;
            let est = mle(&sample)?;
            Ok(kurtosis_statistic(&sample, &est, &w)?.b)
        })
        .collect::<Result<_>>()?;

    let r = bs.len();
    let rf = r as f64;
    let nf = cfg.n_total as f64;
    let mean = bs.iter().sum::<f64>() / rf;
    let ss = bs.iter().map(|b| (b - mean).powi(2)).sum::<f64>();
    let variance = ss / (rf - 1.0);

    // Leave-one-out variances via the standard sum-of-squares identity.
    let mut loo = Vec::with_capacity(r);
    for b in &bs {
        let ss_i = ss - (b - mean).powi(2) * rf / (rf - 1.0);
        loo.push(ss_i / (rf - 2.0));
    }
    let loo_mean = loo.iter().sum::<f64>() / rf;
    let jk_var = loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>() * (rf - 1.0) / rf;

    Ok(VarianceOracleSummary {
        p: cfg.p,
        q: cfg.q,
        n_total: cfg.n_total,
        tau: cfg.tau,
        c1: cfg.c1,
        c2: cfg.c2,
        replications: r,
        seed: cfg.seed,
        mean_b: mean,
        scaled_variance: nf * variance,
        jackknife_se: nf * jk_var.sqrt(),
    })
}

/// Configuration for the covariance-expansion order check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionCheckConfig {
    pub p: usize,
    pub q: usize,
    pub tau: f64,
    pub seed: u64,
    pub sample_sizes: Vec<usize>,
    pub replications_per_size: usize,
    /// Drop the first-order correction term (negative control: the
    /// remainder is then first order instead of second).
    pub drop_correction: bool,
}

/// Summary of the expansion order check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub p: usize,
    pub q: usize,
    pub tau: f64,
    pub seed: u64,
    pub replications_per_size: usize,
    pub drop_correction: bool,
    pub sample_sizes: Vec<usize>,
    pub median_norms: Vec<f64>,
    /// Least-squares slope of `log median norm` against `log N`.
    pub slope: f64,
}

/// Measures the remainder norm of the covariance estimator expansion
/// `S_hat = I + N^{-1/2} B + O(N^{-1})` under the canonical normal, where
/// `B` collects the scaled uncentered second-moment fluctuations of the
/// complete block and the pooled Y block.  The median remainder norm over
/// replications is regressed on `log N`; the expansion predicts slope -1,
/// and dropping the correction term (negative control) predicts -1/2.
pub fn expansion_order_check(cfg: &ExpansionCheckConfig) -> Result<ExpansionSummary> {
    if cfg.sample_sizes.len() < 4 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "need at least 4 sample sizes for a slope estimate, got {}",
                cfg.sample_sizes.len()
            ),
        });
    }
    if cfg.replications_per_size < 2 {
        return Err(Error::InvalidConfig {
            reason: "need at least 2 replications per size".into(),
        });
    }
    let dim = cfg.p + cfg.q;
    let mut median_norms = Vec::with_capacity(cfg.sample_sizes.len());
    for (size_idx, &n_total) in cfg.sample_sizes.iter().enumerate() {
        let sim = SimConfig {
            alt: AlternativeFamily::StandardNormal,
            p: cfg.p,
            q: cfg.q,
            n_total,
            tau: cfg.tau,
            c1: cfg.tau,
            c2: 1.0 - cfg.tau,
            replications: cfg.replications_per_size,
            // One seed stream block per size, so streams never collide.
            seed: cfg.seed.wrapping_add(size_idx as u64),
            bernoulli_masking: false,
        };
        sim.validate()?;
        let mut norms: Vec<f64> = (0..cfg.replications_per_size)
            .into_par_iter()
            .map(|rep| {
                let sample = draw_sample(&sim, rep)?;
                let est = mle(&sample)?;
                let nf = sample.n_total() as f64;
                let mut remainder = est.sigma_hat.clone() - DMatrix::identity(dim, dim);
                if !cfg.drop_correction {
                    let b = fluctuation_matrix(&sample);
                    remainder -= b / nf.sqrt();
                }
                Ok(remainder.norm())
            })
            .collect::<Result<_>>()?;
        norms.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
        let mid = norms.len() / 2;
        let median = if norms.len() % 2 == 1 {
            norms[mid]
        } else {
            0.5 * (norms[mid - 1] + norms[mid])
        };
        median_norms.push(median);
    }

    // log-log least squares.
    let xs: Vec<f64> = cfg.sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = median_norms.iter().map(|v| v.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;

    Ok(ExpansionSummary {
        p: cfg.p,
        q: cfg.q,
        tau: cfg.tau,
        seed: cfg.seed,
        replications_per_size: cfg.replications_per_size,
        drop_correction: cfg.drop_correction,
        sample_sizes: cfg.sample_sizes.clone(),
        median_norms,
        slope,
    })
}

/// The first-order fluctuation matrix of the covariance expansion: blocks
/// `sqrt(N) ((1/n) sum x x' - I)`, `sqrt(N) (1/n) sum x y'` over complete
/// rows, and `sqrt(N) ((1/N) sum y y' - I)` over all rows.
fn fluctuation_matrix(sample: &MonotoneSample) -> DMatrix<f64> {
    let (p, q) = (sample.p(), sample.q());
    let n = sample.n() as f64;
    let n_total_f = sample.n_total() as f64;
    let root_n = n_total_f.sqrt();

    let mut b11 = DMatrix::zeros(p, p);
    let mut b12 = DMatrix::zeros(p, q);
    let mut b22_all = DMatrix::zeros(q, q);
    let mut x = DVector::zeros(p);
    let mut y = DVector::zeros(q);
    for j in 0..sample.n() {
        for c in 0..p {
            x[c] = sample.x_block()[(j, c)];
        }
        for c in 0..q {
            y[c] = sample.y_block()[(j, c)];
        }
        b11.ger(1.0 / n, &x, &x, 1.0);
        b12.ger(1.0 / n, &x, &y, 1.0);
    }
    for j in 0..sample.n_total() {
        for c in 0..q {
            y[c] = sample.y_block()[(j, c)];
        }
        b22_all.ger(1.0 / n_total_f, &y, &y, 1.0);
    }
    b11 -= DMatrix::identity(p, p);
    b22_all -= DMatrix::identity(q, q);

    let mut b = DMatrix::zeros(p + q, p + q);
    b.view_mut((0, 0), (p, p)).copy_from(&(b11 * root_n));
    let b12 = b12 * root_n;
    b.view_mut((0, p), (p, q)).copy_from(&b12);
    b.view_mut((p, 0), (q, p)).copy_from(&b12.transpose());
    b.view_mut((p, p), (q, q)).copy_from(&(b22_all * root_n));
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> SimConfig {
        SimConfig {
            alt: AlternativeFamily::StandardNormal,
            p: 1,
            q: 2,
            n_total: 100,
            tau: 0.6,
            c1: 0.6,
            c2: 0.4,
            replications: 8,
            seed: 42,
            bernoulli_masking: false,
        }
    }

    #[test]
    fn draw_shapes_and_determinism() {
        let cfg = base_cfg();
        let s = draw_sample(&cfg, 0).unwrap();
        assert_eq!((s.n(), s.n_total()), (60, 100));
        assert_eq!((s.x_block().ncols(), s.y_block().ncols()), (1, 2));
        let again = draw_sample(&cfg, 0).unwrap();
        assert_eq!(s, again);
        let other = draw_sample(&cfg, 1).unwrap();
        assert_ne!(s, other);
    }

    #[test]
    fn invalid_t_dof_rejected() {
        let mut cfg = base_cfg();
        cfg.alt = AlternativeFamily::MultivariateT { df: 8.0 };
        assert!(matches!(
            draw_sample(&cfg, 0),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn families_are_standardized() {
        // Component variance within CLT tolerance of 1 over many draws.
        let families = [
            AlternativeFamily::ProductLaplace,
            AlternativeFamily::ProductUniform,
            AlternativeFamily::MultivariateT { df: 12.0 },
            AlternativeFamily::NormalMixture {
                eps: 0.1,
                scale: 3.0,
            },
        ];
        for family in families {
            let mut rng = rep_rng(7, 0);
            let mut row = DVector::zeros(2);
            let draws = 200_000;
            let mut sum = DVector::zeros(2);
            let mut sumsq = DMatrix::zeros(2, 2);
            for _ in 0..draws {
                family.sample_into(&mut row, &mut rng);
                sum += &row;
                sumsq.ger(1.0, &row, &row, 1.0);
            }
            let mean = sum / draws as f64;
            let cov = sumsq / draws as f64 - &mean * mean.transpose();
            assert!(mean.amax() < 0.02, "{family:?}: mean {mean}");
            assert!(
                (cov - DMatrix::identity(2, 2)).amax() < 0.05,
                "{family:?} covariance off"
            );
        }
    }

    #[test]
    fn bernoulli_masking_keeps_minimum_rows() {
        let mut cfg = base_cfg();
        cfg.bernoulli_masking = true;
        cfg.n_total = 30;
        cfg.tau = 0.5;
        for rep in 0..20 {
            let s = draw_sample(&cfg, rep).unwrap();
            assert!(s.n() >= cfg.p + cfg.q + 1);
            assert_eq!(s.n_total(), 30);
        }
    }

    #[test]
    fn calibration_summary_single_replication_degrades_gracefully() {
        let mut cfg = base_cfg();
        cfg.replications = 1;
        let summary = null_calibration(&cfg, 0.05).unwrap();
        assert!(summary.var_z.is_none());
        assert!(summary.mean_z.is_finite());
    }

    #[test]
    fn summaries_independent_of_thread_count() {
        let cfg = base_cfg();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                (
                    crate::report::to_json(&null_calibration(&cfg, 0.05).unwrap()),
                    crate::report::to_json(&variance_oracle(&cfg).unwrap()),
                )
            })
        };
        let one = run(1);
        let two = run(2);
        let four = run(4);
        assert_eq!(one, two);
        assert_eq!(one, four);
    }

    #[test]
    fn config_key_value_round_trip() {
        let text = "\
# experiment
family = multivariate-t
df = 12
p = 1
q = 2
n-total = 100
tau = 0.6
replications = 5
seed = 9
";
        let cfg = SimConfig::from_key_values(text).unwrap();
        assert_eq!(cfg.alt, AlternativeFamily::MultivariateT { df: 12.0 });
        assert_eq!(cfg.n_total, 100);
        assert_eq!(cfg.replications, 5);
        assert_eq!(cfg.seed, 9);
        // Defaults: weights fall back to (tau, tau_bar).
        assert!((cfg.c1 - 0.6).abs() < 1e-15);
        assert!((cfg.c2 - 0.4).abs() < 1e-15);

        assert!(SimConfig::from_key_values("p = 1\n").is_err());
        assert!(SimConfig::from_key_values("family = weird\np=1\nq=1\nn-total=50\ntau=0.5\n").is_err());
    }

    #[test]
    fn kolmogorov_p_sane() {
        assert!(kolmogorov_p(0.001, 1000) > 0.99);
        assert!(kolmogorov_p(0.2, 1000) < 1e-6);
    }
}
