use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use sketchcv::bench::{
    convergence_fit, run_convergence, run_inner_product_with, run_trace, summarize_convergence, timing_ratios,
    BenchError, ExperimentConfig, TraceConfig,
};
use sketchcv::efamily::{random_spd, sigma12_model, BivariateNormalParams, CovarianceModel};
use sketchcv::inner_product::Method;
use sketchcv::sketch::{hash64, HashFamily, Scheme, SeededRng};
use sketchcv::trace::{read_matrix_file, ProbeKind, TraceError, TraceMethod};

use crate::output::{render_float, write_file, Table};
use crate::{CliError, ExperimentArgs, Global};

pub const INNER_PRODUCT_COLUMNS: [&str; 14] = [
    "scheme",
    "method",
    "k",
    "r",
    "theta",
    "mse",
    "mean",
    "median",
    "q1",
    "q3",
    "outlier_fraction",
    "mean_iterations",
    "nonconverged_fraction",
    "three_root_fraction",
];

/// Largest relative deviation tolerated by the equivalence suite.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn bench_error(e: BenchError) -> CliError {
    match e {
        BenchError::Trace(TraceError::Io(msg)) => CliError::Io(msg),
        other => CliError::Usage(other.to_string()),
    }
}

fn parse_list<T>(s: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| f(t).ok_or_else(|| CliError::Usage(format!("invalid {what} {t:?}"))))
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<Method>, CliError> {
    parse_list(s, "method", Method::from_tag)
}

/// Build the experiment config: file values first, then flag overrides.
pub fn experiment_config(global: &Global, args: &ExperimentArgs, base: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => load_json(path)?,
        None => base,
    };
    if let Some(seed) = global.seed {
        cfg.base_seed = seed;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if let Some(h) = args.hash {
        cfg.hash = h;
    }
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(k) = &args.k {
        cfg.k_values = k.clone();
    }
    if let Some(r) = &args.ratios {
        cfg.ratios = r.clone();
    }
    if let Some(a) = &args.angles {
        cfg.angles = a.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(e) = args.eps_rel {
        cfg.solver.eps_rel = e;
    }
    if let Some(m) = args.max_iter {
        cfg.solver.max_iter = m;
    }
    if let Some(o) = args.secant_offset_rel {
        cfg.solver.secant_offset_rel = o;
    }
    cfg.validate().map_err(bench_error)?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn inner_product(global: &Global, args: &ExperimentArgs, timing: bool, timing_reps: usize) -> Result<(), CliError> {
    let cfg = experiment_config(global, args, ExperimentConfig::default())?;
    ensure_dir(&global.out_dir)?;
    let rows = run_inner_product_with(&cfg, |run| {
        eprintln!(
            "r={} theta={:.6} k={} trials={} done",
            run.r,
            run.theta,
            run.k,
            run.trials.len()
        );
    })
    .map_err(bench_error)?;
    let mut table = Table::new(&INNER_PRODUCT_COLUMNS);
    for s in &rows {
        table.push(vec![
            s.scheme.tag().into(),
            s.method.tag().into(),
            s.k.into(),
            s.r.into(),
            s.theta.into(),
            s.mse.into(),
            s.mean.into(),
            s.median.into(),
            s.q1.into(),
            s.q3.into(),
            s.outlier_fraction.into(),
            s.mean_iterations.into(),
            s.nonconverged_fraction.into(),
            s.three_root_fraction.into(),
        ]);
    }
    table.write(&global.out_dir, "inner_product", global.format)?;
    if timing {
        let pairs = [(Method::CvEm, Method::MleNR), (Method::CvEm, Method::MleSecant)];
        let rows = timing_ratios(&cfg, &pairs, timing_reps).map_err(bench_error)?;
        let mut t = Table::new(&["k", "numerator", "denominator", "mean_ratio", "two_sd"]);
        for r in rows {
            t.push(vec![
                r.k.into(),
                r.numerator.tag().into(),
                r.denominator.tag().into(),
                r.mean_ratio.into(),
                r.two_sd.into(),
            ]);
        }
        t.write(&global.out_dir, "timing", global.format)?;
    }
    Ok(())
}

pub struct TraceArgs<'a> {
    pub matrix: &'a Path,
    pub b_diag: Option<&'a str>,
    pub methods: Option<&'a str>,
    pub k: Option<usize>,
    pub trials: Option<usize>,
    pub probe: Option<ProbeKind>,
}

pub fn trace(global: &Global, args: &TraceArgs) -> Result<(), CliError> {
    let mut cfg: TraceConfig = match &global.config {
        Some(path) => load_json(path)?,
        None => TraceConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.base_seed = seed;
    }
    if let Some(m) = args.methods {
        cfg.methods = parse_list(m, "trace method", TraceMethod::from_tag)?;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(p) = args.probe {
        cfg.probe = p;
    }
    if cfg.k == 0 {
        return Err(CliError::Usage("k must be ≥ 1".into()));
    }
    let m = read_matrix_file(args.matrix).map_err(|e| match e {
        TraceError::Io(msg) => CliError::Io(msg),
        other => CliError::Usage(format!("{}: {other}", args.matrix.display())),
    })?;
    let b = match args.b_diag {
        Some(s) => DVector::from_vec(parse_list(s, "diagonal entry", |t| t.parse().ok())?),
        None => DVector::from_element(m.nrows(), 1.0),
    };
    ensure_dir(&global.out_dir)?;
    let rows = run_trace(&m, &b, &cfg).map_err(bench_error)?;
    let mut table = Table::new(&[
        "method",
        "probe",
        "k",
        "trials",
        "truth",
        "mean",
        "variance",
        "mse",
        "zero_denominator_fraction",
    ]);
    for s in rows {
        table.push(vec![
            s.method.tag().into(),
            s.probe.tag().into(),
            s.k.into(),
            s.trials.into(),
            s.truth.into(),
            s.mean.into(),
            s.variance.into(),
            s.mse.into(),
            s.zero_denominator_fraction.into(),
        ]);
    }
    table.write(&global.out_dir, "trace", global.format)
}

pub struct EquivalenceArgs<'a> {
    pub p: Option<usize>,
    pub t: Option<usize>,
    pub trials: usize,
    pub sigma: Option<&'a str>,
    pub n: usize,
}

fn relative_deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn dump_failure(dir: &Path, model: &CovarianceModel, alpha: &[f64], dev: f64) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join("equivalence_failure.txt");
    let mut text = format!(
        "relative deviation {}\np {} t {} n {}\nalpha {:?}\nV\n",
        render_float(dev),
        model.p(),
        model.t(),
        model.n(),
        alpha
    );
    for row in model.v().row_iter() {
        let cells: Vec<String> = row.iter().map(|x| render_float(*x)).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    write_file(&path, &text)?;
    Ok(path)
}

/// Maximum relative deviation between the MLE and CVE variance paths over
/// random SPD models, plus the bivariate-normal closed forms.
pub fn equivalence(global: &Global, args: &EquivalenceArgs) -> Result<(), CliError> {
    if let Some(s) = args.sigma {
        return equivalence_sigma(args, s);
    }
    if let Some(p) = args.p {
        if p < 2 {
            return Err(CliError::Usage(format!("p must be ≥ 2, got {p}")));
        }
        if let Some(t) = args.t {
            if t == 0 || t >= p {
                return Err(CliError::Usage(format!("t must be < p and ≥ 1 (got t={t}, p={p})")));
            }
        }
    }
    if args.trials == 0 {
        return Err(CliError::Usage("trials must be ≥ 1".into()));
    }
    if args.n == 0 {
        return Err(CliError::Usage("n must be ≥ 1".into()));
    }
    let seed = global.seed.unwrap_or(0);
    let mut max_dev = 0.0f64;
    for trial in 0..args.trials {
        let mut s = SeededRng::new(seed, hash64(0x6571_7569, trial as u64)).sampler();
        let p = args.p.unwrap_or_else(|| s.below(2, 9) as usize);
        if let Some(t) = args.t {
            if t >= p {
                return Err(CliError::Usage(format!("t must be < p (got t={t}, p={p})")));
            }
        }
        let t = args.t.unwrap_or_else(|| s.below(1, p as u64) as usize);
        let v = random_spd(p, 0.1, &mut s);
        let alpha: Vec<f64> = (0..t).map(|_| s.normal()).collect();
        let model = CovarianceModel::new(v, t, args.n).map_err(|e| CliError::Usage(e.to_string()))?;
        let cve = model.cve_variance(&alpha).map_err(|e| CliError::Usage(e.to_string()))?;
        let mle = model.mle_variance(&alpha).map_err(|e| CliError::Usage(e.to_string()))?;
        let dev = relative_deviation(cve, mle);
        max_dev = max_dev.max(dev);
        if !(dev <= EQUIVALENCE_TOL) {
            let path = dump_failure(&global.out_dir, &model, &alpha, dev)?;
            return Err(CliError::Identity(format!(
                "identity violated (relative deviation {dev:e}); model written to {}",
                path.display()
            )));
        }
    }
    // bivariate-normal closed forms against both matrix paths
    let mut s = SeededRng::new(seed, 0x7369_676d).sampler();
    for _ in 0..args.trials.min(100) {
        let s11 = 0.1 + 2.0 * s.uniform();
        let s22 = 0.1 + 2.0 * s.uniform();
        let s12 = (2.0 * s.uniform() - 1.0) * 0.95 * (s11 * s22).sqrt();
        let params = BivariateNormalParams::new(s11, s22, s12).map_err(|e| CliError::Usage(e.to_string()))?;
        let model = sigma12_model(&params, args.n).map_err(|e| CliError::Usage(e.to_string()))?;
        let closed = params.sigma12_variance(args.n);
        for path_value in [model.cve_variance(&[1.0]), model.mle_variance(&[1.0])] {
            let v = path_value.map_err(|e| CliError::Usage(e.to_string()))?;
            let dev = relative_deviation(closed, v);
            max_dev = max_dev.max(dev);
            if !(dev <= EQUIVALENCE_TOL) {
                let path = dump_failure(&global.out_dir, &model, &[1.0], dev)?;
                return Err(CliError::Identity(format!(
                    "closed form violated (relative deviation {dev:e}); model written to {}",
                    path.display()
                )));
            }
        }
    }
    println!("max relative deviation: {}", render_float(max_dev));
    Ok(())
}

fn short(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn equivalence_sigma(args: &EquivalenceArgs, sigma: &str) -> Result<(), CliError> {
    // statistics (x1^2, x2^2, x1 x2); t counts the known block
    if args.p.is_some_and(|p| p != 3) {
        return Err(CliError::Usage("the bivariate-normal model has p = 3".into()));
    }
    if args.t.is_some_and(|t| t != 2) {
        return Err(CliError::Usage(
            "the bivariate-normal model has t = 2 known statistics".into(),
        ));
    }
    if args.n == 0 {
        return Err(CliError::Usage("n must be ≥ 1".into()));
    }
    let vals = parse_list(sigma, "sigma value", |t| t.parse::<f64>().ok())?;
    let [s11, s22, s12] = vals[..] else {
        return Err(CliError::Usage("--sigma expects sigma11,sigma22,sigma12".into()));
    };
    let params = BivariateNormalParams::new(s11, s22, s12).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = sigma12_model(&params, args.n).map_err(|e| CliError::Usage(e.to_string()))?;
    let w = model.cv_weights(&[1.0]).map_err(|e| CliError::Usage(e.to_string()))?;
    let cve = model.cve_variance(&[1.0]).map_err(|e| CliError::Usage(e.to_string()))?;
    let mle = model.mle_variance(&[1.0]).map_err(|e| CliError::Usage(e.to_string()))?;
    let closed = params.sigma12_variance(args.n);
    println!("cv weights: {}, {}", short(w.c[0]), short(w.c[1]));
    println!("CVE variance: {}", short(cve));
    println!("MLE variance: {}", short(mle));
    println!("closed form variance: {}", short(closed));
    let dev = relative_deviation(cve, mle).max(relative_deviation(cve, closed));
    println!("max relative deviation: {}", render_float(dev));
    if dev > EQUIVALENCE_TOL {
        return Err(CliError::Identity(format!("relative deviation {dev:e} exceeds tolerance")));
    }
    Ok(())
}

/// Constructed sequences with known order: quadratic `e' = 0.5 e^2` and linear
/// `e' = 0.3 e`.
fn self_test(global: &Global) -> Result<(), CliError> {
    let mut quad = vec![0.1f64];
    for _ in 0..4 {
        let e = *quad.last().unwrap();
        quad.push(0.5 * e * e);
    }
    let lin: Vec<f64> = (0..8).map(|i| 0.3f64.powi(i)).collect();
    let mut table = Table::new(&["sequence", "alpha", "log_c", "c", "points_used"]);
    for (name, trace) in [("quadratic", quad), ("linear", lin)] {
        let fit = convergence_fit(&[trace], 0.0, 1e-300).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("{name}: alpha={} C={}", short(fit.alpha), short(fit.c()));
        table.push(vec![
            name.into(),
            fit.alpha.into(),
            fit.log_c.into(),
            fit.c().into(),
            fit.points_used.into(),
        ]);
    }
    ensure_dir(&global.out_dir)?;
    table.write(&global.out_dir, "convergence_self_test", global.format)
}

pub fn convergence(global: &Global, args: &ExperimentArgs, self_test_only: bool) -> Result<(), CliError> {
    if self_test_only {
        return self_test(global);
    }
    let base = ExperimentConfig {
        k_values: vec![100],
        trials: 200,
        methods: vec![Method::MleNR, Method::MleSecant, Method::CvEm],
        ..ExperimentConfig::default()
    };
    let cfg = experiment_config(global, args, base)?;
    ensure_dir(&global.out_dir)?;
    let study = run_convergence(&cfg).map_err(bench_error)?;
    let mut samples = Table::new(&[
        "method",
        "r",
        "theta",
        "k",
        "trial",
        "iterations",
        "alpha",
        "log_c",
        "c",
        "r_squared",
        "points_used",
    ]);
    for s in &study.samples {
        samples.push(vec![
            s.method.tag().into(),
            s.r.into(),
            s.theta.into(),
            s.k.into(),
            s.trial.into(),
            s.iterations.into(),
            s.fit.alpha.into(),
            s.fit.log_c.into(),
            s.fit.c().into(),
            s.fit.r_squared.into(),
            s.fit.points_used.into(),
        ]);
    }
    samples.write(&global.out_dir, "convergence_samples", global.format)?;
    let mut summary = Table::new(&[
        "method",
        "runs",
        "skipped",
        "alpha_median",
        "alpha_q1",
        "alpha_q3",
        "c_median",
        "c_q1",
        "c_q3",
    ]);
    for s in summarize_convergence(&study) {
        eprintln!(
            "{}: median alpha {} median C {} ({} runs, {} skipped)",
            s.method.tag(),
            short(s.alpha_median),
            short(s.c_median),
            s.runs,
            s.skipped
        );
        summary.push(vec![
            s.method.tag().into(),
            s.runs.into(),
            s.skipped.into(),
            s.alpha_median.into(),
            s.alpha_q1.into(),
            s.alpha_q3.into(),
            s.c_median.into(),
            s.c_q1.into(),
            s.c_q3.into(),
        ]);
    }
    summary.write(&global.out_dir, "convergence", global.format)
}

/// Parse helpers shared with clap.
pub fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "fh" => Ok(Scheme::FeatureHash),
        "rp" => Ok(Scheme::RandomProjection),
        _ => Err(format!("unknown scheme {s:?} (expected fh or rp)")),
    }
}

pub fn parse_hash(s: &str) -> Result<HashFamily, String> {
    match s {
        "linear" => Ok(HashFamily::Linear),
        "random" => Ok(HashFamily::Random),
        _ => Err(format!("unknown hash family {s:?} (expected linear or random)")),
    }
}

pub fn parse_probe(s: &str) -> Result<ProbeKind, String> {
    match s {
        "gaussian" => Ok(ProbeKind::Gaussian),
        "rademacher" => Ok(ProbeKind::Rademacher),
        _ => Err(format!("unknown probe {s:?} (expected gaussian or rademacher)")),
    }
}
