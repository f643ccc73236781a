//! `sketchcv` command line: inner-product and trace benchmarks, the
//! MLE/control-variate variance identity suite, and convergence-order fits.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sketchcv::sketch::{HashFamily, Scheme};
use sketchcv::trace::ProbeKind;
use thiserror::Error;

use output::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Identity(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Identity(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sketchcv", version, about = "Sketched inner-product and trace estimation benchmarks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "both")]
    pub format: Format,
    /// Worker threads; 0 picks automatically. Results do not depend on it.
    #[arg(long, global = true, env = "SKETCHCV_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// fh (feature hashing) or rp (Gaussian random projection).
    #[arg(long, value_parser = commands::parse_scheme)]
    pub scheme: Option<Scheme>,
    /// Feature-hashing family: random or linear.
    #[arg(long, value_parser = commands::parse_hash)]
    pub hash: Option<HashFamily>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Comma-separated sketch sizes.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Comma-separated norm ratios |x1|^2 / |x2|^2.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Comma-separated angles in radians.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated method tags (baseline, mle-nr, mle-secant, cv-init, cv-emp, cv-em).
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub eps_rel: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub secant_offset_rel: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo comparison of the six inner-product estimators.
    InnerProduct {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Also write per-k wall-clock ratios of CV-EM to the MLE solvers.
        #[arg(long)]
        timing: bool,
        #[arg(long, default_value_t = 20)]
        timing_reps: usize,
    },
    /// Trace estimators on a matrix read from a file.
    Trace {
        /// Matrix file: dimension on the first line, then one row per line.
        matrix: PathBuf,
        /// Comma-separated diagonal of B (default: identity).
        #[arg(long)]
        b_diag: Option<String>,
        /// Comma-separated methods (hutchinson, adams, adams-emp, diag-cv, bekas).
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_parser = commands::parse_probe)]
        probe: Option<ProbeKind>,
    },
    /// Check that MLE and control-variate variances coincide.
    Equivalence {
        /// Fixed number of statistics (default: random in 2..=8).
        #[arg(long)]
        p: Option<usize>,
        /// Fixed number of estimated statistics (default: random in 1..p).
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Observation count n.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// sigma11,sigma22,sigma12 of a bivariate normal; reports the
        /// variances of the sigma12 estimator.
        #[arg(long, allow_hyphen_values = true)]
        sigma: Option<String>,
    },
    /// Empirical convergence order and constant of the iterative solvers.
    Convergence {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Fit the constructed quadratic and linear sequences only.
        #[arg(long)]
        self_test: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::InnerProduct {
            exp,
            timing,
            timing_reps,
        } => commands::inner_product(g, exp, *timing, *timing_reps),
        Command::Trace {
            matrix,
            b_diag,
            methods,
            k,
            trials,
            probe,
        } => commands::trace(
            g,
            &commands::TraceArgs {
                matrix,
                b_diag: b_diag.as_deref(),
                methods: methods.as_deref(),
                k: *k,
                trials: *trials,
                probe: *probe,
            },
        ),
        Command::Equivalence {
            p,
            t,
            trials,
            n,
            sigma,
        } => commands::equivalence(
            g,
            &commands::EquivalenceArgs {
                p: *p,
                t: *t,
                trials: *trials,
                sigma: sigma.as_deref(),
                n: *n,
            },
        ),
        Command::Convergence { exp, self_test } => commands::convergence(g, exp, *self_test),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.global.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
