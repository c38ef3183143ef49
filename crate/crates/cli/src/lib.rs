//! Argument parsing, config merging and reporting for `erm-spectra`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use erm_core::ensemble::{run_experiment, EnsembleReport, ExperimentConfig, ExperimentKind, ExperimentResults};
use erm_core::Error;
use toml::{Table, Value};

pub const WORKERS_ENV: &str = "ERM_SPECTRA_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "erm-spectra",
    version,
    about = "Ensemble experiments on the decay-rate matrix of a Gaussian atomic cloud",
    long_about = "Ensemble experiments on the decay-rate matrix S_ij = sinc(sqrt(N/b0) |x_i - x_j|) \
                  of a Gaussian atomic cloud. Flags given on the command line override values \
                  from --config. Reports go to --out as JSON plus CSV tables."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalue histogram and spectral moments of S.
    Spectrum(SpectralArgs),
    /// Triangular-density fit of a narrow spectrum and the fourth moment of Q.
    TriangleFit(SpectralArgs),
    /// Windowed nearest-neighbour spacing fits across the spectrum.
    NnsdScan(NnsdArgs),
    /// Participation ratios and Porter–Thomas tests of the eigenvectors.
    EigvecStats(EigvecArgs),
    /// Eigenvector-moment scaling with matrix size (fractal dimensions).
    FractalScan(FractalArgs),
    /// Exact versus Monte Carlo moments of the off-diagonal entries of S.
    EntryMoments(MomentArgs),
    /// Decay rates of the symmetric, random-phase and extreme eigenmode states.
    DecayRate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Number of atoms N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Cooperativeness b0 = N/M (exclusive with --modes-m).
    #[arg(long, conflicts_with = "modes_m")]
    pub b0: Option<f64>,
    /// Mode count M (exclusive with --b0).
    #[arg(long = "modes-m")]
    pub modes_m: Option<f64>,
    /// Number of independent matrix realizations.
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Master seed; realization seeds are split from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for report.json and CSV tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: $ERM_SPECTRA_WORKERS, else all cores].
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML config file; explicit flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BinningArgs {
    /// Use this many histogram bins instead of the Freedman–Diaconis rule.
    #[arg(long, conflicts_with = "bin_width")]
    pub bins: Option<usize>,
    /// Use this histogram bin width instead of the Freedman–Diaconis rule.
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub binning: BinningArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Unfolding {
    Polynomial,
    Staircase,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Objective {
    LeastSquares,
    MaximumLikelihood,
}

#[derive(Debug, Args)]
pub struct NnsdArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Eigenvalues per window [default: 1000, or 600 when b0 >= 10].
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Counting-function estimator used for unfolding [default: polynomial].
    #[arg(long, value_enum)]
    pub unfolding: Option<Unfolding>,
    /// Polynomial degree for unfolding [default: 7].
    #[arg(long)]
    pub degree: Option<usize>,
    /// Objective for the surmise fit [default: least-squares].
    #[arg(long, value_enum)]
    pub objective: Option<Objective>,
    /// KS distance above which a window is flagged as a poor fit [default: 0.05].
    #[arg(long)]
    pub goodness_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EigvecArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Eigenvectors taken around each participation-ratio maximum [default: 100].
    #[arg(long)]
    pub window_vectors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FractalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Matrix sizes, comma separated [default: 500,1000,2000,4000].
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Moment orders q, comma separated [default: 2,3,4,5].
    #[arg(long = "q", value_delimiter = ',')]
    pub q_list: Option<Vec<u32>>,
    /// Eigenvectors averaged per realization [default: 100].
    #[arg(long)]
    pub window_vectors: Option<usize>,
    /// Spectral window: superradiant or subradiant PR maximum, or an eigenvalue.
    #[arg(long)]
    pub window: Option<String>,
}

#[derive(Debug, Args)]
pub struct MomentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Monte Carlo samples per moment [default: 1000000].
    #[arg(long)]
    pub samples: Option<u64>,
    /// Moment orders m, comma separated [default: 1,2,3].
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<u32>>,
}

fn section<'a>(t: &'a mut Table, key: &str) -> &'a mut Table {
    let v = t.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
    if !v.is_table() {
        *v = Value::Table(Table::new());
    }
    v.as_table_mut().unwrap()
}

fn int(x: impl TryInto<i64>) -> Result<Value, Error> {
    x.try_into()
        .map(Value::Integer)
        .map_err(|_| Error::InvalidArgument("integer flag out of range".into()))
}

fn apply_common(t: &mut Table, c: &CommonArgs) -> Result<(), Error> {
    if let Some(n) = c.n {
        t.insert("n_atoms".into(), int(n)?);
    }
    if let Some(b) = c.b0 {
        t.remove("modes");
        t.insert("b0".into(), Value::Float(b));
    }
    if let Some(m) = c.modes_m {
        t.remove("b0");
        t.insert("modes".into(), Value::Float(m));
    }
    if let Some(r) = c.realizations {
        t.insert("realizations".into(), int(r)?);
    }
    if let Some(o) = &c.out {
        t.insert("output_dir".into(), Value::String(o.to_string_lossy().into_owned()));
    }
    if let Some(w) = c.workers {
        t.insert("workers".into(), int(w)?);
    }
    Ok(())
}

fn apply_binning(t: &mut Table, b: &BinningArgs) -> Result<(), Error> {
    let rule = match (b.bins, b.bin_width) {
        (Some(n), _) => Some(("count", int(n)?)),
        (None, Some(w)) => Some(("width", Value::Float(w))),
        _ => None,
    };
    if let Some((name, value)) = rule {
        let mut r = Table::new();
        r.insert("rule".into(), Value::String(name.into()));
        r.insert("value".into(), value);
        section(t, "binning").insert("rule".into(), Value::Table(r));
    }
    Ok(())
}

/// Builds the effective config: file values, overridden by explicit flags,
/// with the worker count falling back to `ERM_SPECTRA_WORKERS`.
pub fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let (kind, common) = match &cli.command {
        Command::Spectrum(a) => (ExperimentKind::Spectrum, &a.common),
        Command::TriangleFit(a) => (ExperimentKind::TriangleFit, &a.common),
        Command::NnsdScan(a) => (ExperimentKind::NnsdScan, &a.common),
        Command::EigvecStats(a) => (ExperimentKind::EigvecStats, &a.common),
        Command::FractalScan(a) => (ExperimentKind::FractalScan, &a.common),
        Command::EntryMoments(a) => (ExperimentKind::EntryMoments, &a.common),
        Command::DecayRate(a) => (ExperimentKind::DecayRate, a),
    };
    let mut t = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            text.parse::<Table>().map_err(|e| Error::Serialization(e.to_string()))?
        }
        None => Table::new(),
    };
    t.insert("kind".into(), Value::String(kind.name().into()));
    apply_common(&mut t, common)?;

    match &cli.command {
        Command::Spectrum(a) | Command::TriangleFit(a) => apply_binning(&mut t, &a.binning)?,
        Command::NnsdScan(a) => {
            let u = section(&mut t, "unfolding");
            if let Some(w) = a.window_size {
                u.insert("window_size".into(), int(w)?);
            }
            match (a.unfolding, a.degree) {
                (Some(Unfolding::Staircase), Some(_)) => {
                    return Err(Error::InvalidArgument("--degree applies only to polynomial unfolding".into()));
                }
                (Some(Unfolding::Staircase), None) => {
                    let mut m = Table::new();
                    m.insert("method".into(), Value::String("ensemble_staircase".into()));
                    u.insert("method".into(), Value::Table(m));
                }
                (Some(Unfolding::Polynomial), _) | (None, Some(_)) => {
                    let mut m = Table::new();
                    m.insert("method".into(), Value::String("polynomial".into()));
                    m.insert("degree".into(), int(a.degree.unwrap_or(7))?);
                    u.insert("method".into(), Value::Table(m));
                }
                (None, None) => {}
            }
            if let Some(o) = a.objective {
                let name = match o {
                    Objective::LeastSquares => "least_squares",
                    Objective::MaximumLikelihood => "maximum_likelihood",
                };
                u.insert("objective".into(), Value::String(name.into()));
            }
            if let Some(g) = a.goodness_threshold {
                u.insert("goodness_threshold".into(), Value::Float(g));
            }
        }
        Command::EigvecStats(a) => {
            if let Some(k) = a.window_vectors {
                section(&mut t, "eigvec").insert("window_vectors".into(), int(k)?);
            }
        }
        Command::FractalScan(a) => {
            let e = section(&mut t, "eigvec");
            if let Some(s) = &a.sizes {
                e.insert("sizes".into(), Value::Array(s.iter().map(|&n| int(n)).collect::<Result<_, _>>()?));
            }
            if let Some(q) = &a.q_list {
                e.insert("q_list".into(), Value::Array(q.iter().map(|&n| int(n)).collect::<Result<_, _>>()?));
            }
            if let Some(k) = a.window_vectors {
                e.insert("window_vectors".into(), int(k)?);
            }
            if let Some(w) = &a.window {
                let v = match w.as_str() {
                    "superradiant" => Value::String("superradiant_maximum".into()),
                    "subradiant" => Value::String("subradiant_maximum".into()),
                    other => {
                        let x: f64 = other.parse().map_err(|_| {
                            Error::InvalidArgument(format!(
                                "--window must be superradiant, subradiant or an eigenvalue, got {other}"
                            ))
                        })?;
                        let mut a = Table::new();
                        a.insert("around".into(), Value::Float(x));
                        Value::Table(a)
                    }
                };
                e.insert("window".into(), v);
            }
        }
        Command::EntryMoments(a) => {
            let m = section(&mut t, "moments");
            if let Some(s) = a.samples {
                m.insert("samples".into(), int(s)?);
            }
            if let Some(o) = &a.orders {
                m.insert("orders".into(), Value::Array(o.iter().map(|&n| int(n)).collect::<Result<_, _>>()?));
            }
        }
        Command::DecayRate(_) => {}
    }

    if !t.contains_key("workers") {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let w: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
            t.insert("workers".into(), int(w)?);
        }
    }
    let mut cfg: ExperimentConfig = Value::Table(t).try_into().map_err(|e: toml::de::Error| Error::InvalidArgument(e.to_string()))?;
    // Applied after deserialization: TOML integers stop at i64::MAX.
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if kind == ExperimentKind::EntryMoments && cfg.b0.is_none() && cfg.modes.is_none() {
        cfg.modes = Some(1.0);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One JSON object on a single line: `{"error": <kind>, "message": <text>}`.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn fmt_est(m: f64, s: f64) -> String {
    format!("{m:.6} ± {s:.2e}")
}

/// Human-readable summary printed after a run.
pub fn summary(report: &EnsembleReport) -> Vec<String> {
    let cfg = &report.config;
    let mut out = vec![format!(
        "{}: N={} b0={} M={} realizations={} ({} failed)",
        cfg.kind.name(),
        cfg.n_atoms,
        cfg.cooperativeness(),
        cfg.mode_count(),
        cfg.realizations,
        report.failures.len()
    )];
    match &report.results {
        None => out.push("no realization succeeded".into()),
        Some(ExperimentResults::Spectrum(s)) => {
            for (k, m) in s.moments.iter().enumerate() {
                out.push(format!("<lambda^{}> = {}", k + 1, fmt_est(m.mean, m.stderr)));
            }
            out.push(format!("predicted <lambda^2> = {:.6}", s.second_moment_prediction));
            out.push(format!("eigenvalue range [{:.6e}, {:.6}]", s.min_eigenvalue, s.max_eigenvalue));
        }
        Some(ExperimentResults::TriangleFit(s)) => {
            out.push(format!("a = {:.5} ± {:.5} (predicted {:.5})", s.fit.a, s.fit.a_stderr, s.predicted_a));
            out.push(format!(
                "(1/N)<Tr Q^4> = {} (predicted {:.5}; Gaussian 1/15 = {:.5})",
                fmt_est(s.q_fourth_moment.mean, s.q_fourth_moment.stderr),
                s.q_fourth_prediction,
                s.gaussian_fourth_moment
            ));
        }
        Some(ExperimentResults::NnsdScan(s)) => {
            out.push(format!("window_center        q        r   goodness  flag   ({} levels each)", s.window_size));
            for w in &s.windows {
                match &w.fit {
                    Some(f) => out.push(format!(
                        "{:13.5} {:8.4} {:8.4} {:10.4}  {}",
                        w.center,
                        f.q(),
                        f.r(),
                        f.goodness,
                        w.flag.as_str()
                    )),
                    None => out.push(format!("{:13.5}        -        -          -  {}", w.center, w.flag.as_str())),
                }
            }
            if let Some(f) = &s.central_fit {
                out.push(format!("central window: q = {:.4} ± {:.4}, r = {:.4} ± {:.4}", f.q(), f.q_err, f.r(), f.r_err));
            }
            if let Some(e) = &s.central_exponent {
                out.push(format!("small-spacing exponent q = {:.4} ± {:.4}", e.q, e.stderr));
            }
        }
        Some(ExperimentResults::EigvecStats(s)) => {
            out.push(format!(
                "bulk Pi/N = {} (std {:.4})",
                fmt_est(s.bulk_pr_fraction.mean, s.bulk_pr_fraction.stderr),
                s.bulk_pr_fraction_std
            ));
            out.push(format!("median PR of the lowest eigenvector = {:.4}", s.min_eigenvalue_pr_median));
            out.push(format!("PR-maxima separation = {}", fmt_est(s.maxima_separation.mean, s.maxima_separation.stderr)));
            out.push(format!("Porter-Thomas KS at subradiant maximum = {:.4}", s.porter_thomas_ks_subradiant));
        }
        Some(ExperimentResults::FractalScan { scalings }) => {
            out.push(" q     tau(q)    stderr      D_q".into());
            for s in scalings {
                out.push(format!("{:2} {:10.4} {:9.4} {:8.4}", s.q, s.tau, s.tau_stderr, s.d_q));
            }
        }
        Some(ExperimentResults::EntryMoments(s)) => {
            out.push(format!("M = {}", s.modes));
            out.push(" m          exact    monte_carlo     stderr       z".into());
            for r in &s.rows {
                let exact = r.exact.map_or("-".to_string(), |e| format!("{e:.8}"));
                let z = r.z_score.map_or("-".to_string(), |z| format!("{z:+.2}"));
                out.push(format!(
                    "{:2} {:>14} {:14.8} {:10.2e} {:>7}",
                    r.m, exact, r.monte_carlo.mean, r.monte_carlo.stderr, z
                ));
            }
            out.push(format!(
                "<S_ij S_il>: exact {:.8}, monte carlo {}",
                s.shared_vertex_exact,
                fmt_est(s.shared_vertex_monte_carlo.mean, s.shared_vertex_monte_carlo.stderr)
            ));
        }
        Some(ExperimentResults::DecayRate(s)) => {
            out.push(format!("symmetric state   {}", fmt_est(s.symmetric.mean, s.symmetric.stderr)));
            out.push(format!("random phases     {}", fmt_est(s.random_phase.mean, s.random_phase.stderr)));
            out.push(format!("fastest eigenmode {}", fmt_est(s.fastest_mode.mean, s.fastest_mode.stderr)));
            out.push(format!("slowest eigenmode {}", fmt_est(s.slowest_mode.mean, s.slowest_mode.stderr)));
        }
    }
    out
}

/// Full CLI entry point, returning the process exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let fail = |stderr: &mut dyn Write, e: &Error| {
        let _ = writeln!(stderr, "{}", error_line(e.kind(), &e.to_string()));
        1
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(stderr, &e),
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(stderr, &e),
    };
    for line in summary(&report) {
        let _ = writeln!(stdout, "{line}");
    }
    if !report.succeeded {
        let msg = format!(
            "{} of {} realizations failed (limit {:.0}%)",
            report.failures.len(),
            cfg.realizations,
            100.0 * erm_core::ensemble::MAX_FAILURE_FRACTION
        );
        let _ = writeln!(stderr, "{}", error_line("realization_failures", &msg));
        return 1;
    }
    0
}
