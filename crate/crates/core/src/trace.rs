//! Stochastic trace estimators with control variates.
//!
//! Given a symmetric `M` and a known diagonal `B`, every estimator works from
//! a batch of `k` probe vectors `r_i`:
//!
//! - Hutchinson: `mean_i r_i' M r_i`.
//! - Adams: Hutchinson plus `c (mean_i r_i' B r_i - tr B)`, with `c` either
//!   `-tr(MB) / tr(B^2)` or estimated from the batch.
//! - Diagonal CV: one control per coordinate, `c_j = -m_jj / b_jj`.
//! - Bekas: the closed-form limit of iterating the diagonal CV weights,
//!   `sum_s b_ss (sum_i r_is (M r_i)_s) / (sum_i r_is (B r_i)_s)`.
//!
//! [`VarianceOracles`] collects the analytic variances and the slot
//! covariance identities used to validate them.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efamily::check_symmetric;
use crate::sketch::SeededRng;

/// Denominators at or below this magnitude are rejected by [`bekas`].
pub const ZERO_DENOMINATOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("diagonal control matrix has a zero entry at {0}")]
    ZeroDiagonal(usize),
    #[error("zero denominator in slot {0}")]
    ZeroDenominator(usize),
    #[error("need at least {need} probes, got {got}")]
    TooFewProbes { need: usize, got: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeKind {
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "rademacher")]
    Rademacher,
}

impl ProbeKind {
    pub fn tag(self) -> &'static str {
        match self {
            ProbeKind::Gaussian => "gaussian",
            ProbeKind::Rademacher => "rademacher",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraceMethod {
    #[serde(rename = "hutchinson")]
    Hutchinson,
    #[serde(rename = "adams")]
    AdamsCv,
    #[serde(rename = "adams-emp")]
    AdamsCvEmp,
    #[serde(rename = "diag-cv")]
    DiagCv,
    #[serde(rename = "bekas")]
    Bekas,
}

impl TraceMethod {
    pub const ALL: [TraceMethod; 5] = [
        TraceMethod::Hutchinson,
        TraceMethod::AdamsCv,
        TraceMethod::AdamsCvEmp,
        TraceMethod::DiagCv,
        TraceMethod::Bekas,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            TraceMethod::Hutchinson => "hutchinson",
            TraceMethod::AdamsCv => "adams",
            TraceMethod::AdamsCvEmp => "adams-emp",
            TraceMethod::DiagCv => "diag-cv",
            TraceMethod::Bekas => "bekas",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == s)
    }
}

/// Symmetric `M`, diagonal `B` (stored as its diagonal) and probe count.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceProblem {
    m: DMatrix<f64>,
    b: DVector<f64>,
    k: usize,
}

impl TraceProblem {
    pub fn new(m: DMatrix<f64>, b_diag: DVector<f64>, k: usize) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(TraceError::DimensionMismatch {
                expected: rows,
                got: cols,
            });
        }
        if b_diag.len() != rows {
            return Err(TraceError::DimensionMismatch {
                expected: rows,
                got: b_diag.len(),
            });
        }
        if let Err((i, j)) = check_symmetric(&m) {
            return Err(TraceError::NotSymmetric {
                i,
                j,
                a: m[(i, j)],
                b: m[(j, i)],
            });
        }
        if let Some(s) = b_diag.iter().position(|&x| x == 0.0 || !x.is_finite()) {
            return Err(TraceError::ZeroDiagonal(s));
        }
        Ok(Self { m, b: b_diag, k })
    }

    /// `B = I`.
    pub fn with_identity(m: DMatrix<f64>, k: usize) -> Result<Self> {
        let d = m.nrows();
        Self::new(m, DVector::from_element(d, 1.0), k)
    }

    pub fn d(&self) -> usize {
        self.m.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn b_diag(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn trace_m(&self) -> f64 {
        self.m.trace()
    }

    /// `tr(M B)` for diagonal `B`.
    pub fn trace_mb(&self) -> f64 {
        (0..self.d()).map(|s| self.m[(s, s)] * self.b[s]).sum()
    }

    pub fn trace_b2(&self) -> f64 {
        self.b.iter().map(|x| x * x).sum()
    }

    pub fn trace_b(&self) -> f64 {
        self.b.iter().sum()
    }

    /// Slot products `r_s (M r)_s` and `r_s (B r)_s` for one probe.
    pub fn slot_products(&self, r: &[f64], m_slots: &mut [f64], b_slots: &mut [f64]) {
        let d = self.d();
        for s in 0..d {
            let mut mr = 0.0;
            for (u, ru) in r.iter().enumerate() {
                mr += self.m[(s, u)] * ru;
            }
            m_slots[s] = r[s] * mr;
            b_slots[s] = r[s] * self.b[s] * r[s];
        }
    }
}

/// `k` probes of length `d`, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    r: DMatrix<f64>,
    kind: ProbeKind,
}

impl ProbeBatch {
    pub fn from_columns(r: DMatrix<f64>, kind: ProbeKind) -> Self {
        Self { r, kind }
    }

    /// Probes drawn from `rng`, one probe (column) after another.
    pub fn generate(d: usize, k: usize, kind: ProbeKind, rng: &SeededRng) -> Self {
        let mut s = rng.sampler();
        let r = match kind {
            ProbeKind::Gaussian => DMatrix::from_fn(d, k, |_, _| s.normal()),
            ProbeKind::Rademacher => DMatrix::from_fn(d, k, |_, _| s.rademacher()),
        };
        Self { r, kind }
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.r.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.r.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn probe(&self, i: usize) -> &[f64] {
        let d = self.r.nrows();
        &self.r.as_slice()[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    /// Per-probe values for the probe-averaged methods, per-slot diagonal
    /// estimates for Bekas.
    pub per_probe: Vec<f64>,
    pub method: TraceMethod,
    /// Empirical weights were undefined and the Hutchinson value was used.
    pub fallback: bool,
}

fn check_dims(problem: &TraceProblem, probes: &ProbeBatch) -> Result<()> {
    if probes.dim() != problem.d() {
        return Err(TraceError::DimensionMismatch {
            expected: problem.d(),
            got: probes.dim(),
        });
    }
    if probes.is_empty() {
        return Err(TraceError::TooFewProbes { need: 1, got: 0 });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-probe `(r' M r, r' B r)` and the per-probe slot sums needed by the
/// diagonal estimators.
struct ProbeScan {
    quad_m: Vec<f64>,
    quad_b: Vec<f64>,
    slot_m: Vec<f64>,
    slot_b: Vec<f64>,
    /// Per-probe per-slot `r_s (B r)_s`, probe-major.
    per_slot_b: Vec<f64>,
}

fn scan(problem: &TraceProblem, probes: &ProbeBatch) -> ProbeScan {
    let d = problem.d();
    let k = probes.len();
    let mut out = ProbeScan {
        quad_m: Vec::with_capacity(k),
        quad_b: Vec::with_capacity(k),
        slot_m: vec![0.0; d],
        slot_b: vec![0.0; d],
        per_slot_b: Vec::with_capacity(k * d),
    };
    let mut ms = vec![0.0; d];
    let mut bs = vec![0.0; d];
    for i in 0..k {
        problem.slot_products(probes.probe(i), &mut ms, &mut bs);
        out.quad_m.push(ms.iter().sum());
        out.quad_b.push(bs.iter().sum());
        for s in 0..d {
            out.slot_m[s] += ms[s];
            out.slot_b[s] += bs[s];
        }
        out.per_slot_b.extend_from_slice(&bs);
    }
    out
}

pub fn hutchinson(problem: &TraceProblem, probes: &ProbeBatch) -> Result<TraceEstimate> {
    check_dims(problem, probes)?;
    let per_probe = scan(problem, probes).quad_m;
    Ok(TraceEstimate {
        value: mean(&per_probe),
        per_probe,
        method: TraceMethod::Hutchinson,
        fallback: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdamsMode {
    /// Weight `-tr(MB) / tr(B^2)` from a known `tr(MB)`.
    Theoretical { trace_mb: f64 },
    /// Weight from the batch's sample covariance and variance.
    Empirical,
}

/// Weight used by the theoretical Adams estimator.
pub fn adams_coefficient(trace_mb: f64, trace_b2: f64) -> f64 {
    -trace_mb / trace_b2
}

pub fn adams_cv(problem: &TraceProblem, probes: &ProbeBatch, mode: AdamsMode) -> Result<TraceEstimate> {
    check_dims(problem, probes)?;
    let sc = scan(problem, probes);
    let tr_b = problem.trace_b();
    let (c, method) = match mode {
        AdamsMode::Theoretical { trace_mb } => (
            adams_coefficient(trace_mb, problem.trace_b2()),
            TraceMethod::AdamsCv,
        ),
        AdamsMode::Empirical => {
            let k = sc.quad_m.len();
            if k < 2 {
                return Err(TraceError::TooFewProbes { need: 2, got: k });
            }
            let my = mean(&sc.quad_m);
            let mx = mean(&sc.quad_b);
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (y, x) in sc.quad_m.iter().zip(&sc.quad_b) {
                sxy += (y - my) * (x - mx);
                sxx += (x - mx) * (x - mx);
            }
            let var = sxx / (k as f64 - 1.0);
            if var < 1e-300 {
                return Ok(TraceEstimate {
                    value: my,
                    per_probe: sc.quad_m,
                    method: TraceMethod::AdamsCvEmp,
                    fallback: true,
                });
            }
            (-sxy / sxx, TraceMethod::AdamsCvEmp)
        }
    };
    let per_probe: Vec<f64> = sc
        .quad_m
        .iter()
        .zip(&sc.quad_b)
        .map(|(y, x)| y + c * (x - tr_b))
        .collect();
    Ok(TraceEstimate {
        value: mean(&per_probe),
        per_probe,
        method,
        fallback: false,
    })
}

/// Diagonal control variates with weights `-m_jj / b_jj` from a known diagonal.
pub fn diag_cv(problem: &TraceProblem, probes: &ProbeBatch, m_diag_known: &[f64]) -> Result<TraceEstimate> {
    check_dims(problem, probes)?;
    let d = problem.d();
    if m_diag_known.len() != d {
        return Err(TraceError::DimensionMismatch {
            expected: d,
            got: m_diag_known.len(),
        });
    }
    let sc = scan(problem, probes);
    let b = problem.b_diag();
    let per_probe: Vec<f64> = sc
        .quad_m
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let slots = &sc.per_slot_b[i * d..(i + 1) * d];
            let correction: f64 = (0..d)
                .map(|j| -m_diag_known[j] / b[j] * (slots[j] - b[j]))
                .sum();
            y + correction
        })
        .collect();
    Ok(TraceEstimate {
        value: mean(&per_probe),
        per_probe,
        method: TraceMethod::DiagCv,
        fallback: false,
    })
}

/// Per-slot ratio estimates `b_ss sum_i r_is (M r_i)_s / sum_i r_is (B r_i)_s`.
pub fn bekas_diag(problem: &TraceProblem, probes: &ProbeBatch) -> Result<Vec<f64>> {
    check_dims(problem, probes)?;
    let sc = scan(problem, probes);
    let b = problem.b_diag();
    (0..problem.d())
        .map(|s| {
            let den = sc.slot_b[s];
            if den.abs() <= ZERO_DENOMINATOR {
                Err(TraceError::ZeroDenominator(s))
            } else {
                Ok(b[s] * sc.slot_m[s] / den)
            }
        })
        .collect()
}

pub fn bekas(problem: &TraceProblem, probes: &ProbeBatch) -> Result<TraceEstimate> {
    let diag = bekas_diag(problem, probes)?;
    Ok(TraceEstimate {
        value: diag.iter().sum(),
        per_probe: diag,
        method: TraceMethod::Bekas,
        fallback: false,
    })
}

/// Closed-form variances and covariance identities for one `(M, B, probe kind)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceOracles {
    m: DMatrix<f64>,
    b: DMatrix<f64>,
    kind: ProbeKind,
    pub frobenius_sq: f64,
    pub diag_sq: f64,
    pub trace_mb: f64,
    pub trace_b2: f64,
    /// `Var(r' M r)` for a single probe.
    pub hutchinson_per_probe: f64,
    /// `Var(r' B r)` for a single probe.
    pub control_per_probe: f64,
    /// `Cov(r' M r, r' B r)` for a single probe.
    pub cross_per_probe: f64,
    /// `2 sum_s m_ss^2`, as usually stated, without the `1/k` factor.
    pub diag_cv_reduction_stated: f64,
}

impl VarianceOracles {
    /// Single-probe covariance `Cov(r_s (X r)_s, r_t (Y r)_t)`.
    ///
    /// Gaussian probes: `delta_st sum_u x_su y_tu + x_st y_ts`. Rademacher
    /// probes subtract `2 delta_st x_ss y_ss` because `r_s^2` is constant.
    pub fn slot_cov(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, s: usize, t: usize) -> f64 {
        let d = x.nrows();
        let mut v = x[(s, t)] * y[(t, s)];
        if s == t {
            v += (0..d).map(|u| x[(s, u)] * y[(t, u)]).sum::<f64>();
            if self.kind == ProbeKind::Rademacher {
                v -= 2.0 * x[(s, s)] * y[(s, s)];
            }
        }
        v
    }

    pub fn new(m: &DMatrix<f64>, b_diag: &DVector<f64>, kind: ProbeKind) -> Self {
        let d = m.nrows();
        let b = DMatrix::from_diagonal(b_diag);
        let frobenius_sq = m.iter().map(|x| x * x).sum();
        let diag_sq = (0..d).map(|s| m[(s, s)] * m[(s, s)]).sum();
        let trace_mb = (m * &b).trace();
        let trace_b2 = (&b * &b).trace();
        let mut o = Self {
            m: m.clone(),
            b,
            kind,
            frobenius_sq,
            diag_sq,
            trace_mb,
            trace_b2,
            hutchinson_per_probe: 0.0,
            control_per_probe: 0.0,
            cross_per_probe: 0.0,
            diag_cv_reduction_stated: 2.0 * diag_sq,
        };
        let (mut vm, mut vb, mut cmb) = (0.0, 0.0, 0.0);
        for s in 0..d {
            for t in 0..d {
                vm += o.slot_cov(&o.m, &o.m, s, t);
                vb += o.slot_cov(&o.b, &o.b, s, t);
                cmb += o.slot_cov(&o.m, &o.b, s, t);
            }
        }
        o.hutchinson_per_probe = vm;
        o.control_per_probe = vb;
        o.cross_per_probe = cmb;
        o
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    /// `Var(Y)` of the Hutchinson estimator with `k` probes.
    pub fn hutchinson(&self, k: usize) -> f64 {
        self.hutchinson_per_probe / k as f64
    }

    /// Variance removed by the optimal single control `r' B r`.
    pub fn adams_reduction(&self, k: usize) -> f64 {
        if self.control_per_probe <= 0.0 {
            return 0.0;
        }
        self.cross_per_probe * self.cross_per_probe / (self.control_per_probe * k as f64)
    }

    /// `2 tr(MB)^2 / (k tr(B^2))`, the Gaussian-probe closed form.
    pub fn adams_reduction_closed_form(&self, k: usize) -> f64 {
        2.0 * self.trace_mb * self.trace_mb / (k as f64 * self.trace_b2)
    }

    /// Variance of the diagonal-CV estimator with `k` probes.
    pub fn diag_cv(&self, k: usize) -> f64 {
        2.0 * (self.frobenius_sq - self.diag_sq) / k as f64
    }

    /// First-order variance of the Bekas estimator with `k` probes.
    pub fn bekas(&self, k: usize) -> f64 {
        (2.0 * self.frobenius_sq - 2.0 * self.diag_sq) / k as f64
    }

    /// `Var(r_s (B r)_s)`; `|b_s|^2 + b_ss^2` for Gaussian probes.
    pub fn var_slot_b(&self, s: usize) -> f64 {
        self.slot_cov(&self.b, &self.b, s, s)
    }

    /// `Cov(r_s (B r)_s, r_t (B r)_t)`; `b_st b_ts` off the diagonal.
    pub fn cov_slot_bb(&self, s: usize, t: usize) -> f64 {
        self.slot_cov(&self.b, &self.b, s, t)
    }

    /// `Cov(r_s (M r)_s, r_t (B r)_t)`; for Gaussian probes
    /// `sum_u m_su b_su + m_ss b_ss` when `s = t` and `m_st b_ts` otherwise.
    pub fn cov_slot_mb(&self, s: usize, t: usize) -> f64 {
        self.slot_cov(&self.m, &self.b, s, t)
    }

    /// `Cov(r_s (M r)_s, r_t (M r)_t)`.
    pub fn cov_slot_mm(&self, s: usize, t: usize) -> f64 {
        self.slot_cov(&self.m, &self.m, s, t)
    }
}

/// Analytic variances for `(M, B)` under the given probe kind.
pub fn trace_variance_oracles(m: &DMatrix<f64>, b_diag: &DVector<f64>, kind: ProbeKind) -> VarianceOracles {
    VarianceOracles::new(m, b_diag, kind)
}

/// Parse the plain-text matrix format: a line with `d`, then `d` rows of `d`
/// whitespace-separated decimals. Blank lines are skipped. The matrix must
/// be symmetric.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, header) = lines.next().ok_or(TraceError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let d: usize = header.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("expected dimension, found {header:?}"),
    })?;
    if d == 0 {
        return Err(TraceError::Parse {
            line,
            msg: "dimension must be positive".into(),
        });
    }
    let mut data = Vec::with_capacity(d * d);
    for row in 0..d {
        let (line, text) = lines.next().ok_or(TraceError::Parse {
            line: line + row + 1,
            msg: format!("expected {d} rows, found {row}"),
        })?;
        let before = data.len();
        for tok in text.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| TraceError::Parse {
                line,
                msg: format!("invalid number {tok:?}"),
            })?;
            if !x.is_finite() {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("non-finite entry {tok:?}"),
                });
            }
            data.push(x);
        }
        if data.len() - before != d {
            return Err(TraceError::Parse {
                line,
                msg: format!("expected {d} entries, found {}", data.len() - before),
            });
        }
    }
    if let Some((line, _)) = lines.next() {
        return Err(TraceError::Parse {
            line,
            msg: "trailing content after matrix".into(),
        });
    }
    let m = DMatrix::from_row_slice(d, d, &data);
    if let Err((i, j)) = check_symmetric(&m) {
        return Err(TraceError::NotSymmetric {
            i,
            j,
            a: m[(i, j)],
            b: m[(j, i)],
        });
    }
    Ok(m)
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m22() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0])
    }

    #[test]
    fn hutchinson_identity_rademacher_is_exact() {
        let d = 6;
        let p = TraceProblem::with_identity(DMatrix::identity(d, d), 5).unwrap();
        let probes = ProbeBatch::generate(d, 5, ProbeKind::Rademacher, &SeededRng::new(1, 0));
        let e = hutchinson(&p, &probes).unwrap();
        assert!(e.per_probe.iter().all(|&y| y == d as f64));
        assert_eq!(e.value, d as f64);
    }

    #[test]
    fn zero_matrix() {
        let p = TraceProblem::with_identity(DMatrix::zeros(3, 3), 4).unwrap();
        let probes = ProbeBatch::generate(3, 4, ProbeKind::Gaussian, &SeededRng::new(2, 0));
        assert_eq!(hutchinson(&p, &probes).unwrap().value, 0.0);
        assert_eq!(bekas(&p, &probes).unwrap().value, 0.0);
        let o = trace_variance_oracles(p.m(), p.b_diag(), ProbeKind::Gaussian);
        assert_eq!(o.hutchinson(4), 0.0);
        assert_eq!(o.adams_reduction(4), 0.0);
        assert_eq!(o.bekas(4), 0.0);
    }

    #[test]
    fn adams_theoretical_coefficient() {
        let p = TraceProblem::with_identity(m22(), 4).unwrap();
        assert_eq!(adams_coefficient(p.trace_mb(), p.trace_b2()), -2.5);
    }

    #[test]
    fn adams_zero_coupling_is_hutchinson() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, -1.0]);
        let p = TraceProblem::with_identity(m, 8).unwrap();
        assert_eq!(p.trace_mb(), 0.0);
        let probes = ProbeBatch::generate(2, 8, ProbeKind::Gaussian, &SeededRng::new(3, 0));
        let h = hutchinson(&p, &probes).unwrap();
        let a = adams_cv(&p, &probes, AdamsMode::Theoretical { trace_mb: 0.0 }).unwrap();
        assert_eq!(h.value, a.value);
    }

    #[test]
    fn adams_empirical_degenerate_falls_back() {
        // Rademacher probes with diagonal B make r'Br constant
        let p = TraceProblem::with_identity(m22(), 8).unwrap();
        let probes = ProbeBatch::generate(2, 8, ProbeKind::Rademacher, &SeededRng::new(3, 1));
        let a = adams_cv(&p, &probes, AdamsMode::Empirical).unwrap();
        assert!(a.fallback);
        assert_eq!(a.value, hutchinson(&p, &probes).unwrap().value);
        let one = ProbeBatch::generate(2, 1, ProbeKind::Gaussian, &SeededRng::new(3, 1));
        assert!(matches!(
            adams_cv(&p, &one, AdamsMode::Empirical),
            Err(TraceError::TooFewProbes { .. })
        ));
    }

    #[test]
    fn diag_cv_cancels_for_diagonal_m() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, -2.0, 4.0]));
        let b = DVector::from_vec(vec![1.5, -2.0, 4.0]);
        let p = TraceProblem::new(m.clone(), b, 5).unwrap();
        let probes = ProbeBatch::generate(3, 5, ProbeKind::Gaussian, &SeededRng::new(4, 0));
        let e = diag_cv(&p, &probes, &[1.5, -2.0, 4.0]).unwrap();
        for y in &e.per_probe {
            assert!((y - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn diag_cv_weights() {
        let b = [1.0, 1.0];
        let md = [2.0, 3.0];
        let c: Vec<f64> = md.iter().zip(&b).map(|(m, b)| -m / b).collect();
        assert_eq!(c, vec![-2.0, -3.0]);
    }

    #[test]
    fn bekas_exact_on_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.5, -3.0, 7.0]));
        let p = TraceProblem::with_identity(m, 3).unwrap();
        let probes = ProbeBatch::generate(4, 3, ProbeKind::Gaussian, &SeededRng::new(5, 0));
        let diag = bekas_diag(&p, &probes).unwrap();
        for (got, want) in diag.iter().zip([1.0, 2.5, -3.0, 7.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let e = bekas(&p, &probes).unwrap();
        assert_eq!(e.value, diag.iter().sum::<f64>());
        assert!((e.value - 7.5).abs() < 1e-12);
    }

    #[test]
    fn bekas_zero_denominator() {
        let p = TraceProblem::with_identity(m22(), 1).unwrap();
        let r = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let probes = ProbeBatch::from_columns(r, ProbeKind::Gaussian);
        assert_eq!(bekas(&p, &probes), Err(TraceError::ZeroDenominator(1)));
    }

    #[test]
    fn oracle_values() {
        let m = m22();
        let b = DVector::from_element(2, 1.0);
        let g = trace_variance_oracles(&m, &b, ProbeKind::Gaussian);
        let r = trace_variance_oracles(&m, &b, ProbeKind::Rademacher);
        assert_eq!(g.frobenius_sq, 15.0);
        assert_eq!(g.diag_sq, 13.0);
        assert_eq!(g.hutchinson_per_probe, 30.0);
        assert_eq!(r.hutchinson_per_probe, 4.0);
        assert_eq!(g.var_slot_b(0), 2.0);
        assert_eq!(g.cov_slot_bb(0, 1), 0.0);
        assert_eq!(g.cov_slot_mb(0, 0), 4.0);
        assert_eq!(g.cov_slot_mb(0, 1), 0.0);
        assert_eq!(g.adams_reduction(4), 6.25);
        assert_eq!(g.adams_reduction_closed_form(4), 6.25);
        assert_eq!(g.diag_cv_reduction_stated, 26.0);
        assert_eq!(g.bekas(100), 0.04);
        assert_eq!(r.adams_reduction(4), 0.0);
    }

    #[test]
    fn problem_validation() {
        let mut m = m22();
        m[(0, 1)] = 1.5;
        assert!(matches!(
            TraceProblem::with_identity(m, 2),
            Err(TraceError::NotSymmetric { i: 0, j: 1, .. })
        ));
        assert_eq!(
            TraceProblem::new(m22(), DVector::from_vec(vec![1.0, 0.0]), 2),
            Err(TraceError::ZeroDiagonal(1))
        );
        let p = TraceProblem::with_identity(m22(), 2).unwrap();
        let probes = ProbeBatch::generate(3, 2, ProbeKind::Gaussian, &SeededRng::new(0, 0));
        assert!(matches!(
            hutchinson(&p, &probes),
            Err(TraceError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_file_parsing() {
        let m = parse_matrix("2\n2 1\n1 3\n").unwrap();
        assert_eq!(m, m22());
        assert!(matches!(
            parse_matrix("2\n2 1\n0 3\n"),
            Err(TraceError::NotSymmetric { i: 0, j: 1, .. })
        ));
        assert!(matches!(parse_matrix("2\n2 1\n"), Err(TraceError::Parse { .. })));
        assert!(matches!(parse_matrix("2\n2 1 4\n1 3\n"), Err(TraceError::Parse { line: 2, .. })));
        assert!(matches!(parse_matrix("x\n"), Err(TraceError::Parse { line: 1, .. })));
        assert!(matches!(parse_matrix(""), Err(TraceError::Parse { .. })));
    }
}
