//! Seeded Monte-Carlo experiments over sketched inner products and trace
//! estimators.
//!
//! Trials run in parallel on the current rayon pool. Every trial derives its
//! own random stream from `(base_seed, cell, k, trial)` and results are reduced
//! in trial order, so output does not depend on the thread count.

mod stats;

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inner_product::{
    mle_cubic, run_method, EstimatorResult, Method, SolverConfig, DEFAULT_EPS_REL, DEFAULT_MAX_ITER,
    DEFAULT_SECANT_OFFSET_REL,
};
use crate::sketch::{
    generate_vector_pair, hash64, hash_pair, project_pair, suff_stats, HashFamily, Scheme, SeededRng,
    SketchError, SketchPair, SuffStats,
};
use crate::trace::{
    adams_cv, bekas, diag_cv, hutchinson, AdamsMode, ProbeBatch, ProbeKind, TraceError, TraceMethod,
    TraceProblem,
};

pub use stats::{
    boxplot_stats, convergence_fit, mean, median, quantile_sorted, sample_variance, sorted, BoxplotStats,
    ConvergenceFit, StatsError,
};

/// Angles used throughout the experiments: pi/12, pi/4, pi/2, 3pi/4, 11pi/12.
pub const DEFAULT_ANGLES: [f64; 5] = [PI / 12.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, 11.0 * PI / 12.0];
pub const DEFAULT_RATIOS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 10.0];

// stream tags keep the vector-pair, sketch and probe streams apart
const PAIR_STREAM: u64 = 0x7061_6972;
const SKETCH_STREAM: u64 = 0x736b_6574;
const PROBE_STREAM: u64 = 0x7072_6f62;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("trials must be ≥ 1")]
    NoTrials,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Solver settings relative to the inner product's scale `sqrt(n1 n2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub eps_rel: f64,
    pub max_iter: usize,
    pub secant_offset_rel: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_rel: DEFAULT_EPS_REL,
            max_iter: DEFAULT_MAX_ITER,
            secant_offset_rel: DEFAULT_SECANT_OFFSET_REL,
        }
    }
}

impl SolverSettings {
    pub fn for_norms(&self, n1: f64, n2: f64) -> SolverConfig {
        SolverConfig::scaled(n1, n2, self.eps_rel, self.max_iter, self.secant_offset_rel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub ratios: Vec<f64>,
    pub angles: Vec<f64>,
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub scheme: Scheme,
    /// Hash family used when `scheme` is feature hashing.
    pub hash: HashFamily,
    pub solver: SolverSettings,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 1000,
            ratios: DEFAULT_RATIOS.to_vec(),
            angles: DEFAULT_ANGLES.to_vec(),
            k_values: (1..=10).map(|i| 10 * i).collect(),
            trials: 2000,
            base_seed: 0,
            scheme: Scheme::FeatureHash,
            hash: HashFamily::Random,
            solver: SolverSettings::default(),
            methods: Method::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::InvalidConfig(msg));
        if self.trials == 0 {
            return Err(BenchError::NoTrials);
        }
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("k values must be non-empty and ≥ 1".into());
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("ratios must be non-empty, positive and finite".into());
        }
        if self.angles.is_empty() || self.angles.iter().any(|a| !(0.0..=PI).contains(a)) {
            return bad("angles must be non-empty and within [0, pi]".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let s = &self.solver;
        if !(s.eps_rel.is_finite() && s.eps_rel > 0.0) || s.max_iter == 0 {
            return bad("solver eps_rel must be positive and max_iter ≥ 1".into());
        }
        if !(s.secant_offset_rel.is_finite() && s.secant_offset_rel != 0.0) {
            return bad("secant_offset_rel must be non-zero".into());
        }
        Ok(())
    }
}

/// Stream key of the `(r, theta)` cell.
pub fn cell_key(r: f64, theta: f64) -> u64 {
    hash64(r.to_bits(), theta.to_bits())
}

/// The fixed vector pair of one `(r, theta)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub r: f64,
    pub theta: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub n1: f64,
    pub n2: f64,
    pub truth: f64,
}

impl Cell {
    pub fn generate(d: usize, r: f64, theta: f64, base_seed: u64) -> Result<Self> {
        let rng = SeededRng::new(base_seed, hash64(cell_key(r, theta), PAIR_STREAM));
        let (x1, x2) = generate_vector_pair(d, r, theta, &rng)?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Ok(Self {
            r,
            theta,
            n1: dot(&x1, &x1),
            n2: dot(&x2, &x2),
            truth: dot(&x1, &x2),
            x1,
            x2,
        })
    }

    /// Sqrt of `n1 n2`, the natural scale of the inner product.
    pub fn scale(&self) -> f64 {
        (self.n1 * self.n2).sqrt()
    }

    fn trial_rng(&self, base_seed: u64, k: usize, trial: usize) -> SeededRng {
        let key = hash64(hash64(cell_key(self.r, self.theta), SKETCH_STREAM), k as u64);
        SeededRng::new(base_seed, hash64(key, trial as u64))
    }

    /// Sketch the pair with the stream of `(k, trial)`.
    pub fn sketch(&self, config: &ExperimentConfig, k: usize, trial: usize) -> SketchPair {
        let scheme = config.scheme;
        let mut sampler = self.trial_rng(config.base_seed, k, trial).sampler();
        let (v1, v2) = match scheme {
            Scheme::FeatureHash => hash_pair(&self.x1, &self.x2, k, config.hash, &mut sampler),
            Scheme::RandomProjection => project_pair(&self.x1, &self.x2, k, &mut sampler),
        };
        SketchPair::new(v1, v2, self.n1, self.n2, scheme).expect("cell norms are positive")
    }
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub stats: SuffStats,
    pub three_roots: bool,
    /// One entry per configured method, in configuration order.
    pub results: Vec<EstimatorResult>,
    /// On three-root trials, the index (ascending order) of the real root
    /// nearest each method's estimate. Empty otherwise.
    pub nearest_root: Vec<usize>,
}

/// All trials of one `(r, theta, k)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub r: f64,
    pub theta: f64,
    pub k: usize,
    pub truth: f64,
    pub n1: f64,
    pub n2: f64,
    pub trials: Vec<TrialRecord>,
}

pub fn run_trial(
    cell: &Cell,
    config: &ExperimentConfig,
    solver: &SolverConfig,
    k: usize,
    trial: usize,
) -> TrialRecord {
    let pair = cell.sketch(config, k, trial);
    let stats = suff_stats(&pair);
    let cubic = mle_cubic(&stats, cell.n1, cell.n2);
    let three_roots = cubic.classify_roots().count == 3;
    let results: Vec<EstimatorResult> = config
        .methods
        .iter()
        .map(|&m| run_method(m, &pair, &stats, solver))
        .collect();
    let nearest_root = if three_roots {
        let roots = cubic.companion_roots();
        results
            .iter()
            .map(|r| {
                (0..roots.len())
                    .min_by(|&a, &b| (roots[a] - r.estimate).abs().total_cmp(&(roots[b] - r.estimate).abs()))
                    .unwrap_or(0)
            })
            .collect()
    } else {
        Vec::new()
    };
    TrialRecord {
        stats,
        three_roots,
        results,
        nearest_root,
    }
}

/// Run every trial of one cell at sketch size `k`.
pub fn run_cell(cell: &Cell, config: &ExperimentConfig, k: usize) -> CellRun {
    let solver = config.solver.for_norms(cell.n1, cell.n2);
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|i| run_trial(cell, config, &solver, k, i))
        .collect();
    CellRun {
        r: cell.r,
        theta: cell.theta,
        k,
        truth: cell.truth,
        n1: cell.n1,
        n2: cell.n2,
        trials,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    pub scheme: Scheme,
    pub method: Method,
    pub k: usize,
    pub r: f64,
    pub theta: f64,
    pub truth: f64,
    pub mse: f64,
    pub mean: f64,
    /// Population variance of the estimates (divisor `trials`).
    pub variance: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outlier_fraction: f64,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub nonconverged_fraction: f64,
    pub three_root_fraction: f64,
}

impl SummaryStats {
    pub fn bias(&self) -> f64 {
        self.mean - self.truth
    }

    /// MSE divided by `n1 n2`.
    pub fn relative_mse(&self, n1: f64, n2: f64) -> f64 {
        self.mse / (n1 * n2)
    }
}

/// Summarize one method's column of a [`CellRun`].
pub fn summarize(run: &CellRun, scheme: Scheme, slot: usize) -> SummaryStats {
    let n = run.trials.len() as f64;
    let results: Vec<&EstimatorResult> = run.trials.iter().map(|t| &t.results[slot]).collect();
    let estimates: Vec<f64> = results.iter().map(|r| r.estimate).collect();
    let iterations: Vec<f64> = results.iter().map(|r| r.iterations as f64).collect();
    let m = mean(&estimates);
    let mse = estimates.iter().map(|x| (x - run.truth).powi(2)).sum::<f64>() / n;
    let variance = estimates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let b = stats::tukey(&sorted(&estimates));
    SummaryStats {
        scheme,
        method: results[0].method,
        k: run.k,
        r: run.r,
        theta: run.theta,
        truth: run.truth,
        mse,
        mean: m,
        variance,
        median: b.median,
        q1: b.q1,
        q3: b.q3,
        whisker_lo: b.whisker_lo,
        whisker_hi: b.whisker_hi,
        outlier_fraction: b.outlier_fraction,
        mean_iterations: mean(&iterations),
        median_iterations: median(&iterations),
        nonconverged_fraction: results.iter().filter(|r| !r.converged).count() as f64 / n,
        three_root_fraction: run.trials.iter().filter(|t| t.three_roots).count() as f64 / n,
    }
}

/// Summaries for every `(r, theta, k, method)`, in that nesting order.
///
/// `progress` is called once per finished `(r, theta, k)` cell.
pub fn run_inner_product_with(
    config: &ExperimentConfig,
    mut progress: impl FnMut(&CellRun),
) -> Result<Vec<SummaryStats>> {
    config.validate()?;
    let mut out = Vec::new();
    for &r in &config.ratios {
        for &theta in &config.angles {
            let cell = Cell::generate(config.d, r, theta, config.base_seed)?;
            for &k in &config.k_values {
                let run = run_cell(&cell, config, k);
                progress(&run);
                out.extend((0..config.methods.len()).map(|slot| summarize(&run, config.scheme, slot)));
            }
        }
    }
    Ok(out)
}

pub fn run_inner_product(config: &ExperimentConfig) -> Result<Vec<SummaryStats>> {
    run_inner_product_with(config, |_| {})
}

/// Per-run convergence fit of one iterative method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSample {
    pub method: Method,
    pub r: f64,
    pub theta: f64,
    pub k: usize,
    pub trial: usize,
    pub iterations: usize,
    pub fit: ConvergenceFit,
}

/// Outcome of a convergence study: valid fits plus the count of runs that
/// could not be fitted (too few pre-convergence points, or not converged).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceStudy {
    pub samples: Vec<ConvergenceSample>,
    pub skipped: Vec<(Method, usize)>,
}

/// Fit one solver trace.
///
/// Errors are measured relative to `scale` against the final iterate, so the
/// fitted constant is dimensionless and comparable across cells.
pub fn fit_trace(result: &EstimatorResult, scale: f64, eps_rel: f64) -> Option<ConvergenceFit> {
    if !result.converged || result.trace.len() < 4 {
        return None;
    }
    let normalized: Vec<f64> = result.trace.iter().map(|x| x / scale).collect();
    let truth = *normalized.last().unwrap();
    convergence_fit(&[normalized], truth, eps_rel).ok()
}

/// Fit every iterative method's trace in every trial of the configuration.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceStudy> {
    config.validate()?;
    let mut study = ConvergenceStudy::default();
    let iterative: Vec<(usize, Method)> = config
        .methods
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, m)| m.is_iterative())
        .collect();
    if iterative.is_empty() {
        return Err(BenchError::InvalidConfig(
            "convergence needs at least one iterative method".into(),
        ));
    }
    let mut skipped = vec![0usize; iterative.len()];
    for &r in &config.ratios {
        for &theta in &config.angles {
            let cell = Cell::generate(config.d, r, theta, config.base_seed)?;
            for &k in &config.k_values {
                let run = run_cell(&cell, config, k);
                for (trial, rec) in run.trials.iter().enumerate() {
                    for (j, &(slot, method)) in iterative.iter().enumerate() {
                        let res = &rec.results[slot];
                        match fit_trace(res, cell.scale(), config.solver.eps_rel) {
                            Some(fit) => study.samples.push(ConvergenceSample {
                                method,
                                r,
                                theta,
                                k,
                                trial,
                                iterations: res.iterations,
                                fit,
                            }),
                            None => skipped[j] += 1,
                        }
                    }
                }
            }
        }
    }
    study.skipped = iterative.iter().map(|&(_, m)| m).zip(skipped).collect();
    Ok(study)
}

/// Distribution of fitted `alpha` and `C` for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub method: Method,
    pub runs: usize,
    pub skipped: usize,
    pub alpha_median: f64,
    pub alpha_q1: f64,
    pub alpha_q3: f64,
    pub c_median: f64,
    pub c_q1: f64,
    pub c_q3: f64,
}

pub fn summarize_convergence(study: &ConvergenceStudy) -> Vec<ConvergenceSummary> {
    study
        .skipped
        .iter()
        .filter_map(|&(method, skipped)| {
            let fits: Vec<&ConvergenceFit> = study
                .samples
                .iter()
                .filter(|s| s.method == method)
                .map(|s| &s.fit)
                .collect();
            if fits.is_empty() {
                return None;
            }
            let alphas = sorted(&fits.iter().map(|f| f.alpha).collect::<Vec<_>>());
            let cs = sorted(&fits.iter().map(|f| f.c()).collect::<Vec<_>>());
            Some(ConvergenceSummary {
                method,
                runs: fits.len(),
                skipped,
                alpha_median: quantile_sorted(&alphas, 0.5),
                alpha_q1: quantile_sorted(&alphas, 0.25),
                alpha_q3: quantile_sorted(&alphas, 0.75),
                c_median: quantile_sorted(&cs, 0.5),
                c_q1: quantile_sorted(&cs, 0.25),
                c_q3: quantile_sorted(&cs, 0.75),
            })
        })
        .collect()
}

/// Trace experiment settings; the matrix comes separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub methods: Vec<TraceMethod>,
    pub k: usize,
    pub trials: usize,
    pub probe: ProbeKind,
    pub base_seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            methods: TraceMethod::ALL.to_vec(),
            k: 100,
            trials: 1000,
            probe: ProbeKind::Gaussian,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub method: TraceMethod,
    pub probe: ProbeKind,
    pub k: usize,
    pub trials: usize,
    pub truth: f64,
    pub mean: f64,
    /// Unbiased sample variance over the usable trials.
    pub variance: f64,
    pub mse: f64,
    /// Standard error of `mean`.
    pub standard_error: f64,
    pub zero_denominator_fraction: f64,
    pub fallback_fraction: f64,
}

/// Probe batch of trial `trial`; every method in a trial sees the same probes.
pub fn trace_probes(d: usize, config: &TraceConfig, trial: usize) -> ProbeBatch {
    let rng = SeededRng::new(config.base_seed, hash64(PROBE_STREAM, trial as u64));
    ProbeBatch::generate(d, config.k, config.probe, &rng)
}

fn trace_estimate(
    method: TraceMethod,
    problem: &TraceProblem,
    probes: &ProbeBatch,
    m_diag: &[f64],
) -> std::result::Result<(f64, bool), TraceError> {
    let est = match method {
        TraceMethod::Hutchinson => hutchinson(problem, probes)?,
        TraceMethod::AdamsCv => adams_cv(
            problem,
            probes,
            AdamsMode::Theoretical {
                trace_mb: problem.trace_mb(),
            },
        )?,
        TraceMethod::AdamsCvEmp => adams_cv(problem, probes, AdamsMode::Empirical)?,
        TraceMethod::DiagCv => diag_cv(problem, probes, m_diag)?,
        TraceMethod::Bekas => bekas(problem, probes)?,
    };
    Ok((est.value, est.fallback))
}

/// Repeated probe batches for every configured method.
///
/// Runs whose Bekas denominator vanishes are excluded from the statistics and
/// counted in `zero_denominator_fraction`.
pub fn run_trace(m: &DMatrix<f64>, b_diag: &DVector<f64>, config: &TraceConfig) -> Result<Vec<TraceSummary>> {
    if config.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    if config.methods.is_empty() {
        return Err(BenchError::InvalidConfig("at least one method is required".into()));
    }
    let problem = TraceProblem::new(m.clone(), b_diag.clone(), config.k)?;
    let truth = problem.trace_m();
    let m_diag: Vec<f64> = m.diagonal().iter().copied().collect();
    let d = problem.d();
    let per_trial: Vec<Vec<std::result::Result<(f64, bool), TraceError>>> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let probes = trace_probes(d, config, i);
            config
                .methods
                .iter()
                .map(|&method| trace_estimate(method, &problem, &probes, &m_diag))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(config.methods.len());
    for (slot, &method) in config.methods.iter().enumerate() {
        let mut values = Vec::with_capacity(config.trials);
        let mut zero_den = 0usize;
        let mut fallbacks = 0usize;
        for trial in &per_trial {
            match &trial[slot] {
                Ok((v, fb)) => {
                    values.push(*v);
                    fallbacks += usize::from(*fb);
                }
                Err(TraceError::ZeroDenominator(_)) => zero_den += 1,
                Err(e) => return Err(e.clone().into()),
            }
        }
        let n = values.len();
        let (m_est, var, mse) = if n == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let m_est = mean(&values);
            let var = if n > 1 { sample_variance(&values) } else { 0.0 };
            let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n as f64;
            (m_est, var, mse)
        };
        out.push(TraceSummary {
            method,
            probe: config.probe,
            k: config.k,
            trials: config.trials,
            truth,
            mean: m_est,
            variance: var,
            mse,
            standard_error: (var / n as f64).sqrt(),
            zero_denominator_fraction: zero_den as f64 / config.trials as f64,
            fallback_fraction: fallbacks as f64 / config.trials as f64,
        });
    }
    Ok(out)
}

/// Mean and spread of per-trial wall-clock ratios `time(numerator) /
/// time(denominator)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub k: usize,
    pub numerator: Method,
    pub denominator: Method,
    pub mean_ratio: f64,
    pub two_sd: f64,
}

/// Time one estimate by repeating it `reps` times; returns seconds per call.
fn time_method(method: Method, pair: &SketchPair, stats: &SuffStats, solver: &SolverConfig, reps: usize) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(run_method(
            method,
            std::hint::black_box(pair),
            std::hint::black_box(stats),
            solver,
        ));
    }
    start.elapsed().as_secs_f64() / reps as f64
}

/// Wall-clock ratios for each `(numerator, denominator)` pair at every k of
/// the first `(r, theta)` cell. Runs sequentially; results vary by machine.
pub fn timing_ratios(config: &ExperimentConfig, pairs: &[(Method, Method)], reps: usize) -> Result<Vec<TimingRow>> {
    config.validate()?;
    let reps = reps.max(1);
    let cell = Cell::generate(config.d, config.ratios[0], config.angles[0], config.base_seed)?;
    let solver = config.solver.for_norms(cell.n1, cell.n2);
    let mut rows = Vec::new();
    for &k in &config.k_values {
        let sketches: Vec<(SketchPair, SuffStats)> = (0..config.trials)
            .map(|i| {
                let p = cell.sketch(config, k, i);
                let s = suff_stats(&p);
                (p, s)
            })
            .collect();
        for &(num, den) in pairs {
            let ratios: Vec<f64> = sketches
                .iter()
                .map(|(p, s)| {
                    let tn = time_method(num, p, s, &solver, reps);
                    let td = time_method(den, p, s, &solver, reps);
                    tn / td
                })
                .collect();
            let sd = if ratios.len() > 1 {
                sample_variance(&ratios).sqrt()
            } else {
                0.0
            };
            rows.push(TimingRow {
                k,
                numerator: num,
                denominator: den,
                mean_ratio: mean(&ratios),
                two_sd: 2.0 * sd,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            d: 200,
            ratios: vec![1.0],
            angles: vec![PI / 4.0],
            k_values: vec![10, 50],
            trials: 64,
            base_seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..small_config()
        };
        assert_eq!(run_inner_product(&cfg), Err(BenchError::NoTrials));
        assert_eq!(BenchError::NoTrials.to_string(), "trials must be ≥ 1");
    }

    #[test]
    fn row_count_and_order() {
        let rows = run_inner_product(&small_config()).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].method, Method::Baseline);
        assert_eq!(rows[6].k, 50);
        for r in &rows {
            assert!(r.q1 <= r.median && r.median <= r.q3);
            assert!((0.0..=1.0).contains(&r.outlier_fraction));
            assert!(r.mse >= 0.0);
        }
    }

    #[test]
    fn mse_decomposes() {
        for s in run_inner_product(&small_config()).unwrap() {
            let recomposed = s.variance + s.bias().powi(2);
            assert!((s.mse - recomposed).abs() <= 1e-12 * s.mse.max(1e-300), "{s:?}");
        }
    }

    #[test]
    fn deterministic_across_pools() {
        let cfg = small_config();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_inner_product(&cfg)).unwrap();
        let b = four.install(|| run_inner_product(&cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diagonal_bekas_is_exact() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 2.5]));
        let cfg = TraceConfig {
            methods: vec![TraceMethod::Bekas],
            k: 5,
            trials: 200,
            probe: ProbeKind::Gaussian,
            base_seed: 1,
        };
        let s = &run_trace(&m, &DVector::repeat(3, 1.0), &cfg).unwrap()[0];
        assert!(s.mse < 1e-20);
        assert_eq!(s.zero_denominator_fraction, 0.0);
    }

    #[test]
    fn self_timing_ratio_near_one() {
        let cfg = ExperimentConfig {
            k_values: vec![20],
            trials: 50,
            ..small_config()
        };
        let rows = timing_ratios(&cfg, &[(Method::Baseline, Method::Baseline)], 200).unwrap();
        assert!((rows[0].mean_ratio - 1.0).abs() < 0.5, "{rows:?}");
    }
}
