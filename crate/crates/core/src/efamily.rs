//! Covariance models of exponential-family sufficient statistics.
//!
//! A [`CovarianceModel`] holds the per-observation covariance `V` of `p`
//! sufficient statistics together with a partition index `t`. The first `t`
//! statistics belong to the parameters being estimated, the trailing `p - t`
//! to parameters whose values are known and can therefore act as control
//! variates. Partitioning `V` as
//!
//! ```text
//!     | A   B |
//! V = |       |      A: t x t,  B: t x (p-t),  D: (p-t) x (p-t)
//!     | B'  D |
//! ```
//!
//! the optimal control-variate estimator of a linear combination `alpha . y`
//! of the estimated statistics has variance `alpha' (A - B D^-1 B') alpha / n`,
//! while the asymptotic variance of the maximum-likelihood estimator is
//! `alpha' ((V^-1)[..t, ..t])^-1 alpha / n`. The two agree because the inverse
//! of the leading block of `V^-1` is the Schur complement of `D`.
//!
//! All solves go through Cholesky factorizations; explicit inverses are left
//! to test oracles.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::sketch::Sampler;

/// Relative element-wise tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Condition-number ceiling for reparametrization maps.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EfamilyError {
    #[error("covariance matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("covariance matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("partition index t={t} must satisfy 1 <= t < p={p}")]
    InvalidPartition { t: usize, p: usize },
    #[error("observation count must be positive")]
    InvalidCount,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("transformation matrix is numerically singular (condition number {0:e})")]
    SingularMatrix(f64),
    #[error("invalid bivariate normal parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, EfamilyError>;

/// Covariance of `p` sufficient statistics, estimated block first.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    v: DMatrix<f64>,
    t: usize,
    n: usize,
}

/// The three blocks of a partitioned covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl Partition {
    /// Reassemble the full matrix from its blocks.
    pub fn assemble(&self) -> DMatrix<f64> {
        let t = self.a.nrows();
        let q = self.d.nrows();
        let mut v = DMatrix::zeros(t + q, t + q);
        v.view_mut((0, 0), (t, t)).copy_from(&self.a);
        v.view_mut((0, t), (t, q)).copy_from(&self.b);
        v.view_mut((t, 0), (q, t)).copy_from(&self.b.transpose());
        v.view_mut((t, t), (q, q)).copy_from(&self.d);
        v
    }
}

/// Optimal control-variate corrections for one target combination.
#[derive(Debug, Clone, PartialEq)]
pub struct CvWeights {
    /// Corrections applied to the known statistics.
    pub c: DVector<f64>,
    /// Cross-covariance `B' alpha` of the target with the known statistics.
    pub d: DVector<f64>,
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> std::result::Result<(), (usize, usize)> {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let a = m[(i, j)];
            let b = m[(j, i)];
            let scale = a.abs().max(b.abs());
            if (a - b).abs() > SYMMETRY_TOL * scale {
                return Err((i, j));
            }
        }
    }
    Ok(())
}

fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

impl CovarianceModel {
    pub fn new(v: DMatrix<f64>, t: usize, n: usize) -> Result<Self> {
        let (rows, cols) = v.shape();
        if rows != cols {
            return Err(EfamilyError::NotSquare { rows, cols });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EfamilyError::NonFinite);
        }
        let p = rows;
        if t == 0 || t >= p {
            return Err(EfamilyError::InvalidPartition { t, p });
        }
        if n == 0 {
            return Err(EfamilyError::InvalidCount);
        }
        if let Err((i, j)) = check_symmetric(&v) {
            return Err(EfamilyError::NotSymmetric {
                i,
                j,
                a: v[(i, j)],
                b: v[(j, i)],
            });
        }
        if cholesky(&v).is_none() {
            return Err(EfamilyError::NotPositiveDefinite);
        }
        Ok(Self { v, t, n })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Number of sufficient statistics.
    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    /// Number of estimated statistics.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Same covariance with a different partition index.
    pub fn with_partition(&self, t: usize) -> Result<Self> {
        Self::new(self.v.clone(), t, self.n)
    }

    /// Reorder the statistics so that new index `i` holds old statistic
    /// `order[i]`, then partition at `t`.
    pub fn permuted(&self, order: &[usize], t: usize) -> Result<Self> {
        let p = self.p();
        if order.len() != p {
            return Err(EfamilyError::DimensionMismatch {
                expected: p,
                got: order.len(),
            });
        }
        let mut seen = vec![false; p];
        for &o in order {
            if o >= p || seen[o] {
                return Err(EfamilyError::DimensionMismatch { expected: p, got: o });
            }
            seen[o] = true;
        }
        let v = DMatrix::from_fn(p, p, |i, j| self.v[(order[i], order[j])]);
        Self::new(v, t, self.n)
    }

    pub fn partition(&self) -> Partition {
        let t = self.t;
        let q = self.p() - t;
        Partition {
            a: self.v.view((0, 0), (t, t)).into_owned(),
            b: self.v.view((0, t), (t, q)).into_owned(),
            d: self.v.view((t, t), (q, q)).into_owned(),
        }
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<DVector<f64>> {
        if alpha.len() != self.t {
            return Err(EfamilyError::DimensionMismatch {
                expected: self.t,
                got: alpha.len(),
            });
        }
        if alpha.iter().any(|x| !x.is_finite()) {
            return Err(EfamilyError::NonFinite);
        }
        Ok(DVector::from_column_slice(alpha))
    }

    /// Solve `D c = -B' alpha`.
    pub fn cv_weights(&self, alpha: &[f64]) -> Result<CvWeights> {
        let alpha = self.check_alpha(alpha)?;
        let Partition { b, d, .. } = self.partition();
        let cross = b.transpose() * &alpha;
        let chol = cholesky(&d).ok_or(EfamilyError::SingularSystem)?;
        let c = -chol.solve(&cross);
        Ok(CvWeights { c, d: cross })
    }

    /// Variance of the optimal control-variate estimator of `alpha . y_E`.
    pub fn cve_variance(&self, alpha: &[f64]) -> Result<f64> {
        let alpha_v = self.check_alpha(alpha)?;
        let Partition { a, b, d } = self.partition();
        let cross = b.transpose() * &alpha_v;
        let chol = cholesky(&d).ok_or(EfamilyError::SingularSystem)?;
        let reduction = cross.dot(&chol.solve(&cross));
        let base = alpha_v.dot(&(&a * &alpha_v));
        Ok((base - reduction) / self.n as f64)
    }

    /// Variance of the plain (uncorrected) estimator `alpha . y_E`.
    pub fn plain_variance(&self, alpha: &[f64]) -> Result<f64> {
        let alpha_v = self.check_alpha(alpha)?;
        let a = self.partition().a;
        Ok(alpha_v.dot(&(&a * &alpha_v)) / self.n as f64)
    }

    /// Asymptotic variance of the maximum-likelihood estimator of `alpha . nu_E`.
    pub fn mle_variance(&self, alpha: &[f64]) -> Result<f64> {
        let alpha_v = self.check_alpha(alpha)?;
        let w = self.information_block()?;
        let chol = cholesky(&w).ok_or(EfamilyError::SingularSystem)?;
        Ok(alpha_v.dot(&chol.solve(&alpha_v)) / self.n as f64)
    }

    /// Leading `t x t` block of `V^-1`, obtained by solving against the first
    /// `t` unit vectors.
    pub fn information_block(&self) -> Result<DMatrix<f64>> {
        let p = self.p();
        let t = self.t;
        let chol = cholesky(&self.v).ok_or(EfamilyError::SingularSystem)?;
        let rhs = DMatrix::from_fn(p, t, |i, j| if i == j { 1.0 } else { 0.0 });
        let cols = chol.solve(&rhs);
        let w = cols.view((0, 0), (t, t)).into_owned();
        Ok((&w + w.transpose()) * 0.5)
    }

    /// `A - B D^-1 B'`.
    pub fn schur_complement(&self) -> Result<DMatrix<f64>> {
        let Partition { a, b, d } = self.partition();
        let chol = cholesky(&d).ok_or(EfamilyError::SingularSystem)?;
        let s = &a - &b * chol.solve(&b.transpose());
        Ok((&s + s.transpose()) * 0.5)
    }

    /// `((V^-1)[..t, ..t])^-1`, which equals [`Self::schur_complement`].
    pub fn inverse_information_block(&self) -> Result<DMatrix<f64>> {
        let w = self.information_block()?;
        let t = w.nrows();
        let chol = cholesky(&w).ok_or(EfamilyError::SingularSystem)?;
        let s = chol.solve(&DMatrix::identity(t, t));
        Ok((&s + s.transpose()) * 0.5)
    }

    /// Covariance of the transformed statistics `a^-1 y`.
    ///
    /// A target `alpha . y` becomes `(a' alpha) . (a^-1 y)` in the new
    /// coordinates. When `a` is block diagonal with respect to the partition
    /// both variance routes are invariant under this change.
    pub fn reparametrize(&self, a: &DMatrix<f64>) -> Result<Self> {
        let p = self.p();
        if a.shape() != (p, p) {
            return Err(EfamilyError::DimensionMismatch {
                expected: p,
                got: a.nrows(),
            });
        }
        let sv = a.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond < MAX_CONDITION) {
            return Err(EfamilyError::SingularMatrix(cond));
        }
        let lu = a.clone().lu();
        // X = a^-1 V, then a^-1 V a^-T = (a^-1 X')' = a^-1 X'
        let x = lu.solve(&self.v).ok_or(EfamilyError::SingularMatrix(cond))?;
        let y = lu
            .solve(&x.transpose())
            .ok_or(EfamilyError::SingularMatrix(cond))?;
        let v = (&y + y.transpose()) * 0.5;
        Self::new(v, self.t, self.n)
    }
}

/// Covariance of a zero-mean bivariate normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateNormalParams {
    pub sigma11: f64,
    pub sigma22: f64,
    pub sigma12: f64,
}

impl BivariateNormalParams {
    pub fn new(sigma11: f64, sigma22: f64, sigma12: f64) -> Result<Self> {
        let p = Self {
            sigma11,
            sigma22,
            sigma12,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            sigma11,
            sigma22,
            sigma12,
        } = *self;
        if !(sigma11.is_finite() && sigma22.is_finite() && sigma12.is_finite()) {
            return Err(EfamilyError::InvalidParams("non-finite entry".into()));
        }
        if sigma11 <= 0.0 || sigma22 <= 0.0 {
            return Err(EfamilyError::InvalidParams(
                "variances must be positive".into(),
            ));
        }
        if sigma11 * sigma22 - sigma12 * sigma12 <= 0.0 {
            return Err(EfamilyError::InvalidParams(
                "covariance matrix is not positive definite".into(),
            ));
        }
        Ok(())
    }

    fn raw_matrix(&self) -> DMatrix<f64> {
        let (s11, s22, s12) = (self.sigma11, self.sigma22, self.sigma12);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0 * s11 * s11,
                2.0 * s12 * s12,
                2.0 * s11 * s12,
                2.0 * s12 * s12,
                2.0 * s22 * s22,
                2.0 * s22 * s12,
                2.0 * s11 * s12,
                2.0 * s22 * s12,
                s11 * s22 + s12 * s12,
            ],
        )
    }

    /// Closed-form `c` for estimating `sigma12` with both variances known.
    pub fn sigma12_cv_weights(&self) -> (f64, f64) {
        let denom = self.sigma12 * self.sigma12 + self.sigma11 * self.sigma22;
        (
            -self.sigma12 * self.sigma22 / denom,
            -self.sigma12 * self.sigma11 / denom,
        )
    }

    /// Closed-form variance of the `sigma12` estimator from `n` observations.
    pub fn sigma12_variance(&self, n: usize) -> f64 {
        let det = self.sigma11 * self.sigma22 - self.sigma12 * self.sigma12;
        let denom = self.sigma11 * self.sigma22 + self.sigma12 * self.sigma12;
        det * det / (n as f64 * denom)
    }
}

/// Covariance of `(mean x1^2, mean x2^2, mean x1 x2)` over `k` draws.
///
/// Statistics keep their natural order with `t = 2`, so the cross-product
/// statistic forms the trailing block. Use [`sigma12_model`] for the
/// estimated-first layout used when `sigma12` is the unknown.
pub fn bivariate_normal_cov(params: &BivariateNormalParams, k: usize) -> Result<CovarianceModel> {
    params.validate()?;
    CovarianceModel::new(params.raw_matrix(), 2, k)
}

/// Bivariate-normal covariance ordered `(x1 x2, x1^2, x2^2)` with `t = 1`.
pub fn sigma12_model(params: &BivariateNormalParams, k: usize) -> Result<CovarianceModel> {
    bivariate_normal_cov(params, k)?.permuted(&[2, 0, 1], 1)
}

/// Random symmetric positive-definite `p x p` matrix `G G' / p + floor I` with
/// standard-normal `G`.
pub fn random_spd(p: usize, floor: f64, sampler: &mut Sampler) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| sampler.normal());
    let mut v = &g * g.transpose() / p as f64 + DMatrix::identity(p, p) * floor;
    // exact symmetry despite rounding in the product
    for i in 0..p {
        for j in 0..i {
            v[(j, i)] = v[(i, j)];
        }
    }
    v
}
