//! Inner-product estimators for sketched vector pairs.
//!
//! Every estimator here targets `<x_i, x_j>` given a sketch pair and the known
//! squared norms `n1 = |x_i|^2`, `n2 = |x_j|^2`:
//!
//! - [`baseline`]: the raw sketch inner product `w3`.
//! - [`mle_newton`], [`mle_secant`]: root finding on the likelihood cubic.
//! - [`cv_init`]: control variates with weights evaluated at `w3`.
//! - [`cv_emp`]: control variates with weights from per-slot sample moments.
//! - [`cv_em`]: the control-variate fixed-point iteration. Its fixed points
//!   are exactly the roots of [`mle_cubic`].

mod cubic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sketch::{SketchPair, SuffStats};

pub use cubic::{mle_cubic, CubicPoly, RootClass};

/// Relative tolerance used by [`SolverConfig::for_norms`].
pub const DEFAULT_EPS_REL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Half-width of the secant starting bracket, relative to `sqrt(n1 n2)`.
pub const DEFAULT_SECANT_OFFSET_REL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "mle-nr")]
    MleNR,
    #[serde(rename = "mle-secant")]
    MleSecant,
    #[serde(rename = "cv-init")]
    CvInit,
    #[serde(rename = "cv-emp")]
    CvEmp,
    #[serde(rename = "cv-em")]
    CvEm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Baseline,
        Method::MleNR,
        Method::MleSecant,
        Method::CvInit,
        Method::CvEmp,
        Method::CvEm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::MleNR => "mle-nr",
            Method::MleSecant => "mle-secant",
            Method::CvInit => "cv-init",
            Method::CvEmp => "cv-emp",
            Method::CvEm => "cv-em",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == s)
    }

    /// Methods that iterate to a tolerance.
    pub fn is_iterative(self) -> bool {
        matches!(self, Method::MleNR | Method::MleSecant | Method::CvEm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Absolute tolerance on successive iterates.
    pub eps: f64,
    pub max_iter: usize,
    /// Secant starting points are `x0 + offsets.0` and `x0 + offsets.1`.
    pub secant_offsets: (f64, f64),
}

impl SolverConfig {
    pub fn new(eps: f64, max_iter: usize, secant_offsets: (f64, f64)) -> Result<Self, SolveError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(SolveError::InvalidConfig("eps must be positive".into()));
        }
        if max_iter == 0 {
            return Err(SolveError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if secant_offsets.0 == secant_offsets.1 {
            return Err(SolveError::InvalidConfig(
                "secant offsets must differ".into(),
            ));
        }
        Ok(Self {
            eps,
            max_iter,
            secant_offsets,
        })
    }

    /// Defaults scaled to the inner product's natural magnitude `sqrt(n1 n2)`.
    pub fn for_norms(n1: f64, n2: f64) -> Self {
        Self::scaled(n1, n2, DEFAULT_EPS_REL, DEFAULT_MAX_ITER, DEFAULT_SECANT_OFFSET_REL)
    }

    pub fn scaled(n1: f64, n2: f64, eps_rel: f64, max_iter: usize, offset_rel: f64) -> Self {
        let scale = (n1 * n2).sqrt();
        Self {
            eps: eps_rel * scale,
            max_iter,
            secant_offsets: (-offset_rel * scale, offset_rel * scale),
        }
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    /// Number of updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Iterates in order, starting points included.
    pub trace: Vec<f64>,
    pub method: Method,
    /// The estimator could not be formed and returned the baseline instead.
    pub fallback: bool,
}

impl EstimatorResult {
    fn one_shot(method: Method, estimate: f64, iterations: usize, fallback: bool) -> Self {
        Self {
            estimate,
            iterations,
            converged: true,
            trace: vec![estimate],
            method,
            fallback,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("{} did not converge within {} updates", .0.method.tag(), .0.iterations)]
    NotConverged(Box<EstimatorResult>),
    #[error("derivative vanished at x = {}", .0.estimate)]
    DerivativeVanished(Box<EstimatorResult>),
    #[error("secant stalled: equal function values at successive iterates")]
    SecantStall(Box<EstimatorResult>),
    #[error("sketch size {0} is too small (need at least 3)")]
    KTooSmall(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

impl SolveError {
    /// The partial result carried by solver failures, if any.
    pub fn partial(&self) -> Option<&EstimatorResult> {
        match self {
            SolveError::NotConverged(r)
            | SolveError::DerivativeVanished(r)
            | SolveError::SecantStall(r) => Some(r),
            _ => None,
        }
    }
}

pub type SolveResult = Result<EstimatorResult, SolveError>;

pub fn baseline(stats: &SuffStats) -> EstimatorResult {
    EstimatorResult::one_shot(Method::Baseline, stats.w3, 0, false)
}

/// Optimal control-variate weights evaluated at a trial inner product `f`.
pub fn cv_coefficients(f: f64, n1: f64, n2: f64) -> (f64, f64) {
    let denom = f * f + n1 * n2;
    (-f * n2 / denom, -f * n1 / denom)
}

/// One control-variate update: `w3 + c1 (w1 - n1) + c2 (w2 - n2)` with the
/// weights evaluated at `f`.
pub fn cv_update(f: f64, stats: &SuffStats, n1: f64, n2: f64) -> f64 {
    let (c1, c2) = cv_coefficients(f, n1, n2);
    stats.w3 + c1 * (stats.w1 - n1) + c2 * (stats.w2 - n2)
}

pub fn cv_init(stats: &SuffStats, n1: f64, n2: f64) -> EstimatorResult {
    EstimatorResult::one_shot(Method::CvInit, cv_update(stats.w3, stats, n1, n2), 1, false)
}

/// Fixed-point iteration `f <- cv_update(f)` from `f = w3`.
pub fn cv_em(stats: &SuffStats, n1: f64, n2: f64, cfg: &SolverConfig) -> SolveResult {
    let mut f = stats.w3;
    let mut trace = Vec::with_capacity(16);
    trace.push(f);
    for it in 1..=cfg.max_iter {
        let next = cv_update(f, stats, n1, n2);
        trace.push(next);
        let step = (next - f).abs();
        f = next;
        if step <= cfg.eps {
            return Ok(EstimatorResult {
                estimate: f,
                iterations: it,
                converged: true,
                trace,
                method: Method::CvEm,
                fallback: false,
            });
        }
        if !f.is_finite() {
            break;
        }
    }
    let iterations = trace.len() - 1;
    Err(SolveError::NotConverged(Box::new(EstimatorResult {
        estimate: f,
        iterations,
        converged: false,
        trace,
        method: Method::CvEm,
        fallback: false,
    })))
}

fn unfinished(method: Method, trace: Vec<f64>, updates: usize) -> Box<EstimatorResult> {
    // report the last finite iterate
    let estimate = trace
        .iter()
        .rev()
        .copied()
        .find(|x| x.is_finite())
        .unwrap_or(f64::NAN);
    Box::new(EstimatorResult {
        estimate,
        iterations: updates,
        converged: false,
        trace,
        method,
        fallback: false,
    })
}

/// Newton's method on `cubic` with its analytic derivative.
pub fn mle_newton(cubic: &CubicPoly, x0: f64, cfg: &SolverConfig) -> SolveResult {
    let mut x = x0;
    let mut trace = vec![x0];
    for it in 1..=cfg.max_iter {
        let d = cubic.derivative(x);
        if d.abs() < 1e-300 {
            return Err(SolveError::DerivativeVanished(unfinished(
                Method::MleNR,
                trace,
                it - 1,
            )));
        }
        let next = x - cubic.eval(x) / d;
        trace.push(next);
        if !next.is_finite() {
            return Err(SolveError::NotConverged(unfinished(Method::MleNR, trace, it)));
        }
        let step = (next - x).abs();
        x = next;
        if step <= cfg.eps {
            return Ok(EstimatorResult {
                estimate: x,
                iterations: it,
                converged: true,
                trace,
                method: Method::MleNR,
                fallback: false,
            });
        }
    }
    let n = cfg.max_iter;
    Err(SolveError::NotConverged(unfinished(Method::MleNR, trace, n)))
}

/// Secant method on `cubic` from the two starting points `x0`, `x1`.
pub fn mle_secant(cubic: &CubicPoly, x0: f64, x1: f64, cfg: &SolverConfig) -> SolveResult {
    if x0 == x1 {
        return Err(SolveError::InvalidConfig(
            "secant starting points must differ".into(),
        ));
    }
    let (mut a, mut b) = (x0, x1);
    let mut fa = cubic.eval(a);
    let mut trace = vec![x0, x1];
    for it in 1..=cfg.max_iter {
        let fb = cubic.eval(b);
        let next = if fb == 0.0 {
            b
        } else if fb == fa {
            return Err(SolveError::SecantStall(unfinished(
                Method::MleSecant,
                trace,
                it - 1,
            )));
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        trace.push(next);
        if !next.is_finite() {
            return Err(SolveError::NotConverged(unfinished(
                Method::MleSecant,
                trace,
                it,
            )));
        }
        let step = (next - b).abs();
        a = b;
        fa = fb;
        b = next;
        if step <= cfg.eps {
            return Ok(EstimatorResult {
                estimate: b,
                iterations: it,
                converged: true,
                trace,
                method: Method::MleSecant,
                fallback: false,
            });
        }
    }
    let n = cfg.max_iter;
    Err(SolveError::NotConverged(unfinished(Method::MleSecant, trace, n)))
}

/// Control variates with weights from the per-slot sample covariances of
/// `(v_i^2, v_j^2)` and their sample covariances with `v_i v_j`.
pub fn cv_emp(pair: &SketchPair) -> SolveResult {
    let k = pair.k();
    if k < 3 {
        return Err(SolveError::KTooSmall(k));
    }
    let kf = k as f64;
    let slots = pair.vi.iter().zip(&pair.vj).map(|(a, b)| (a * a, b * b, a * b));
    let (mut ma, mut mb, mut mg) = (0.0, 0.0, 0.0);
    for (a, b, g) in slots.clone() {
        ma += a;
        mb += b;
        mg += g;
    }
    ma /= kf;
    mb /= kf;
    mg /= kf;
    let (mut saa, mut sbb, mut sab, mut sga, mut sgb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b, g) in slots {
        let (da, db, dg) = (a - ma, b - mb, g - mg);
        saa += da * da;
        sbb += db * db;
        sab += da * db;
        sga += dg * da;
        sgb += dg * db;
    }
    let norm = 1.0 / (kf - 1.0);
    let (saa, sbb, sab, sga, sgb) = (saa * norm, sbb * norm, sab * norm, sga * norm, sgb * norm);

    let stats = crate::sketch::suff_stats(pair);
    let det = saa * sbb - sab * sab;
    if !(det > 1e-12 * saa * sbb) || !det.is_finite() {
        return Ok(EstimatorResult::one_shot(Method::CvEmp, stats.w3, 1, true));
    }
    // [saa sab; sab sbb] c = -[sga; sgb]
    let c1 = -(sbb * sga - sab * sgb) / det;
    let c2 = -(saa * sgb - sab * sga) / det;
    let estimate = stats.w3 + c1 * (stats.w1 - pair.norm_i_sq) + c2 * (stats.w2 - pair.norm_j_sq);
    Ok(EstimatorResult::one_shot(Method::CvEmp, estimate, 1, false))
}

/// Run `method` and fold solver failures into a non-converged result carrying
/// the last iterate.
pub fn run_method(method: Method, pair: &SketchPair, stats: &SuffStats, cfg: &SolverConfig) -> EstimatorResult {
    let (n1, n2) = (pair.norm_i_sq, pair.norm_j_sq);
    let outcome = match method {
        Method::Baseline => Ok(baseline(stats)),
        Method::CvInit => Ok(cv_init(stats, n1, n2)),
        Method::CvEm => cv_em(stats, n1, n2, cfg),
        Method::MleNR => mle_newton(&mle_cubic(stats, n1, n2), stats.w3, cfg),
        Method::MleSecant => mle_secant(
            &mle_cubic(stats, n1, n2),
            stats.w3 + cfg.secant_offsets.0,
            stats.w3 + cfg.secant_offsets.1,
            cfg,
        ),
        Method::CvEmp => cv_emp(pair),
    };
    match outcome {
        Ok(r) => r,
        Err(e) => match e.partial() {
            Some(r) => r.clone(),
            None => EstimatorResult {
                estimate: stats.w3,
                iterations: 0,
                converged: false,
                trace: vec![stats.w3],
                method,
                fallback: true,
            },
        },
    }
}
