//! The two-step monotone incomplete sample layout and CSV ingestion.
//!
//! A sample holds `n` complete rows on the stacked vector `(X, Y)` with
//! `X` of dimension `p` and `Y` of dimension `q`, plus `N - n` additional
//! rows observed on `Y` only.  Complete rows always come first; ingestion
//! reorders silently.  Missingness is assumed completely at random (MCAR);
//! that assumption is documented, not testable, and never checked here.

use nalgebra::{DMatrix, DVector};
use std::fmt;

use crate::error::{Error, Result};

/// Two-step monotone incomplete data set.  Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneSample {
    p: usize,
    q: usize,
    x_block: DMatrix<f64>,
    y_block: DMatrix<f64>,
}

/// Soft diagnostics produced by [`MonotoneSample::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidationWarning {
    /// `n < p+q+1`: the complete-data cross-product matrix cannot be
    /// positive definite.
    CompleteBlockTooSmall { n: usize, needed: usize },
    /// `N < q+1`: the pooled Y cross-product matrix is singular.
    TotalTooSmall { n_total: usize, needed: usize },
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::CompleteBlockTooSmall { n, needed } => write!(
                f,
                "n < p+q+1 ({n} < {needed}): complete-data cross-product matrix cannot be positive definite"
            ),
            ValidationWarning::TotalTooSmall { n_total, needed } => write!(
                f,
                "N < q+1 ({n_total} < {needed}): pooled Y cross-product matrix is singular"
            ),
        }
    }
}

impl MonotoneSample {
    /// Builds a sample from the complete-block `x` (`n x p`, paired with the
    /// first `n` rows of `y`) and the full `y` block (`N x q`).
    pub fn new(p: usize, q: usize, x_block: DMatrix<f64>, y_block: DMatrix<f64>) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::InvalidSample {
                reason: format!("p and q must be at least 1 (got p={p}, q={q})"),
            });
        }
        if x_block.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: format!("x block has {} columns, declared p={p}", x_block.ncols()),
            });
        }
        if y_block.ncols() != q {
            return Err(Error::DimensionMismatch {
                context: format!("y block has {} columns, declared q={q}", y_block.ncols()),
            });
        }
        let n = x_block.nrows();
        let n_total = y_block.nrows();
        if n == 0 {
            return Err(Error::InvalidSample {
                reason: "no complete observations (n = 0)".into(),
            });
        }
        if n > n_total {
            return Err(Error::InvalidSample {
                reason: format!("n > N ({n} > {n_total}): more complete rows than total rows"),
            });
        }
        for (block, m) in [("x block", &x_block), ("y block", &y_block)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if !m[(i, j)].is_finite() {
                        return Err(Error::NonFinite {
                            block,
                            row: i,
                            column: j,
                        });
                    }
                }
            }
        }
        Ok(Self {
            p,
            q,
            x_block,
            y_block,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    /// Number of complete observations.
    pub fn n(&self) -> usize {
        self.x_block.nrows()
    }

    /// Total number of observations.
    pub fn n_total(&self) -> usize {
        self.y_block.nrows()
    }

    /// Complete fraction `n / N`.
    pub fn tau(&self) -> f64 {
        self.n() as f64 / self.n_total() as f64
    }

    /// Incomplete fraction `1 - n / N`.
    pub fn tau_bar(&self) -> f64 {
        1.0 - self.tau()
    }

    pub fn x_block(&self) -> &DMatrix<f64> {
        &self.x_block
    }

    pub fn y_block(&self) -> &DMatrix<f64> {
        &self.y_block
    }

    /// Stacked complete observation `(x_j, y_j)` for `j < n`.
    pub fn complete_row(&self, j: usize) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for c in 0..self.p {
            z[c] = self.x_block[(j, c)];
        }
        for c in 0..self.q {
            z[self.p + c] = self.y_block[(j, c)];
        }
        z
    }

    /// Reports soft diagnostics; hard invariants are enforced at construction.
    pub fn validate(&self) -> Vec<ValidationWarning> {
        let mut warnings = Vec::new();
        if self.n() < self.dim() + 1 {
            warnings.push(ValidationWarning::CompleteBlockTooSmall {
                n: self.n(),
                needed: self.dim() + 1,
            });
        }
        if self.n_total() < self.q + 1 {
            warnings.push(ValidationWarning::TotalTooSmall {
                n_total: self.n_total(),
                needed: self.q + 1,
            });
        }
        warnings
    }

    /// Serializes to CSV: complete rows first, `missing_token` in the X
    /// fields of incomplete rows.  Floats use the shortest representation
    /// that round-trips, so ingest -> serialize -> ingest is bit-exact.
    pub fn to_csv(&self, missing_token: &str) -> String {
        let mut out = String::new();
        for j in 0..self.n_total() {
            let mut fields = Vec::with_capacity(self.dim());
            if j < self.n() {
                for c in 0..self.p {
                    fields.push(format!("{}", self.x_block[(j, c)]));
                }
            } else {
                for _ in 0..self.p {
                    fields.push(missing_token.to_string());
                }
            }
            for c in 0..self.q {
                fields.push(format!("{}", self.y_block[(j, c)]));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Weights `(c1, c2)` applied to the complete and incomplete kurtosis sums.
///
/// The asymptotic theory assumes `c1 = O(tau)` and `c2 = O(tau_bar)` with
/// neither tending to zero; any positive finite pair is accepted here and
/// the asymptotic conditions are the caller's responsibility.  `c2 = 0` is
/// legal only when the sample has no incomplete rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KurtosisWeights {
    c1: f64,
    c2: f64,
}

impl KurtosisWeights {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !c1.is_finite() || !c2.is_finite() || c1 <= 0.0 || c2 < 0.0 {
            return Err(Error::InvalidWeights {
                reason: format!("require c1 > 0 and c2 >= 0, got ({c1}, {c2})"),
            });
        }
        Ok(Self { c1, c2 })
    }

    /// The pair `(tau, 1 - tau)`.
    pub fn tau_bar_weights(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) || tau == 0.0 {
            return Err(Error::InvalidWeights {
                reason: format!("tau must lie in (0, 1], got {tau}"),
            });
        }
        Self::new(tau, 1.0 - tau)
    }

    /// The pair `(1, 1)`.
    pub fn unit() -> Self {
        Self { c1: 1.0, c2: 1.0 }
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }
}

/// Options controlling [`ingest_csv`].
#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub p: usize,
    pub q: usize,
    /// Token marking a missing field, compared exactly after trimming.
    pub missing_token: String,
    /// Skip one header line before the data.
    pub has_header: bool,
}

impl IngestOptions {
    pub fn new(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            missing_token: "NA".to_string(),
            has_header: false,
        }
    }

    pub fn with_missing_token(mut self, token: &str) -> Self {
        self.missing_token = token.to_string();
        self
    }

    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }
}

/// Parses comma-separated text into a [`MonotoneSample`].
///
/// The first `p` columns are the X block, the last `q` the Y block.  A row
/// with every X field missing and all Y fields present is an incomplete
/// observation; complete rows are moved ahead of incomplete ones keeping
/// the relative order within each group.  A row missing only part of its
/// X block, or any Y field, violates the two-step monotone pattern.
pub fn ingest_csv(text: &str, options: &IngestOptions) -> Result<MonotoneSample> {
    let IngestOptions {
        p,
        q,
        missing_token,
        has_header,
    } = options;
    let (p, q) = (*p, *q);
    if p == 0 || q == 0 {
        return Err(Error::InvalidConfig {
            reason: format!("p and q must be at least 1 (got p={p}, q={q})"),
        });
    }
    let mut complete: Vec<Vec<f64>> = Vec::new();
    let mut incomplete: Vec<Vec<f64>> = Vec::new();
    let mut skipped_header = !has_header;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != p + q {
            return Err(Error::Csv {
                line: line_no,
                reason: format!("expected {} fields, found {}", p + q, fields.len()),
            });
        }
        let x_missing = fields[..p].iter().filter(|f| **f == missing_token).count();
        let y_missing = fields[p..].iter().filter(|f| **f == missing_token).count();
        if y_missing > 0 {
            return Err(Error::Pattern {
                line: line_no,
                reason: "missing Y field".into(),
            });
        }
        if x_missing > 0 && x_missing < p {
            return Err(Error::Pattern {
                line: line_no,
                reason: format!(
                    "row missing {x_missing} of {p} X fields; the two-step monotone pattern requires all or none"
                ),
            });
        }
        let parse = |f: &str| -> Result<f64> {
            f.parse::<f64>().map_err(|_| Error::Csv {
                line: line_no,
                reason: format!("unparseable numeric token {f:?}"),
            })
        };
        if x_missing == 0 {
            let row: Vec<f64> = fields.iter().map(|f| parse(f)).collect::<Result<_>>()?;
            complete.push(row);
        } else {
            let row: Vec<f64> = fields[p..].iter().map(|f| parse(f)).collect::<Result<_>>()?;
            incomplete.push(row);
        }
    }

    if complete.is_empty() {
        return Err(Error::InvalidSample {
            reason: "no complete rows in input".into(),
        });
    }
    let n = complete.len();
    let n_total = n + incomplete.len();
    let x_block = DMatrix::from_fn(n, p, |i, j| complete[i][j]);
    let y_block = DMatrix::from_fn(n_total, q, |i, j| {
        if i < n {
            complete[i][p + j]
        } else {
            incomplete[i - n][j]
        }
    });
    MonotoneSample::new(p, q, x_block, y_block)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sample() -> MonotoneSample {
        // p=q=1, X=(1,2,3), Y=(1,3,2,4)
        MonotoneSample::new(
            1,
            1,
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 2.0, 4.0]),
        )
        .unwrap()
    }

    #[test]
    fn well_formed_sample_has_no_warnings() {
        let s = toy_sample();
        assert_eq!(s.n(), 3);
        assert_eq!(s.n_total(), 4);
        assert!((s.tau() - 0.75).abs() < 1e-15);
        assert!(s.validate().is_empty());
    }

    #[test]
    fn warns_when_complete_block_below_full_rank() {
        // p=2, q=2, n=3 < p+q+1 = 5
        let s = MonotoneSample::new(
            2,
            2,
            DMatrix::from_fn(3, 2, |i, j| (i + j) as f64),
            DMatrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64),
        )
        .unwrap();
        assert_eq!(
            s.validate(),
            vec![ValidationWarning::CompleteBlockTooSmall { n: 3, needed: 5 }]
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = MonotoneSample::new(
            1,
            1,
            DMatrix::from_fn(3, 1, |i, _| i as f64),
            DMatrix::from_fn(4, 2, |i, j| (i + j) as f64),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn non_finite_entry_names_position() {
        let mut y = DMatrix::from_fn(4, 1, |i, _| i as f64);
        y[(2, 0)] = f64::NAN;
        let err =
            MonotoneSample::new(1, 1, DMatrix::from_fn(3, 1, |i, _| i as f64), y).unwrap_err();
        match err {
            Error::NonFinite { row, column, .. } => {
                assert_eq!((row, column), (2, 0));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn ingest_basic_pattern() {
        let text = "1.0,1.0\n2.0,3.0\n3.0,2.0\nNA,4.0\n";
        let s = ingest_csv(text, &IngestOptions::new(1, 1)).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.n_total(), 4);
        assert_eq!(s, toy_sample());
    }

    #[test]
    fn ingest_rejects_missing_y() {
        let err = ingest_csv("1.0,NA\n", &IngestOptions::new(1, 1)).unwrap_err();
        match err {
            Error::Pattern { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("missing Y"));
            }
            other => panic!("expected Pattern, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_partial_x() {
        let err = ingest_csv("1.0,NA,5.0\n", &IngestOptions::new(2, 1)).unwrap_err();
        assert!(matches!(err, Error::Pattern { line: 1, .. }));
    }

    #[test]
    fn ingest_rejects_garbage_token() {
        let err = ingest_csv("1.0,abc\n", &IngestOptions::new(1, 1)).unwrap_err();
        match err {
            Error::Csv { reason, .. } => assert!(reason.contains("abc")),
            other => panic!("expected Csv, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_all_incomplete() {
        let err = ingest_csv("NA,1.0\nNA,2.0\n", &IngestOptions::new(1, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidSample { .. }));
    }

    #[test]
    fn interleaved_rows_are_reordered() {
        let text = "NA,4.0\n1.0,1.0\n2.0,3.0\n3.0,2.0\n";
        let s = ingest_csv(text, &IngestOptions::new(1, 1)).unwrap();
        assert_eq!(s, toy_sample());
    }

    #[test]
    fn header_and_custom_token() {
        let text = "x,y\n1.0,1.0\n?,2.0\n";
        let opts = IngestOptions::new(1, 1)
            .with_missing_token("?")
            .with_header(true);
        let s = ingest_csv(text, &opts).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.n_total(), 2);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let text = "0.1,0.30000000000000004\n1e-308,2.5\nNA,-3.725290298461914e-9\n";
        let opts = IngestOptions::new(1, 1);
        let s1 = ingest_csv(text, &opts).unwrap();
        let s2 = ingest_csv(&s1.to_csv("NA"), &opts).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn weights_validation() {
        assert!(KurtosisWeights::new(1.0, 0.0).is_ok());
        assert!(KurtosisWeights::new(0.0, 1.0).is_err());
        assert!(KurtosisWeights::new(-1.0, 1.0).is_err());
        assert!(KurtosisWeights::new(f64::NAN, 1.0).is_err());
        let w = KurtosisWeights::tau_bar_weights(0.75).unwrap();
        assert_eq!((w.c1(), w.c2()), (0.75, 0.25));
    }
}
