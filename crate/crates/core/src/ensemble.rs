//! Experiment configuration and the seeded, parallel ensemble runner.
//!
//! Realizations are mapped over a worker pool and reduced afterwards in
//! realization-index order, so every reported number is a pure function of
//! the configuration regardless of worker count. Only the `timing` section
//! of a report varies between reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{rng_from_seed, sample_cloud};
use crate::eigvec::{
    bulk_pr_fraction, fractal_dimensions, participation_ratio, porter_thomas_test, pr_maxima, pr_profile,
    window_indices, window_vectors, write_pr_profile_csv, FractalScanConfig, MomentScaling, PrMaxima,
    VectorWindow, MAX_WINDOW_VECTORS,
};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::matrix::{build_decay_matrix, build_decay_matrix_with_modes, DecayMatrix};
use crate::moments::{
    correlated_entry_moment, entry_moment_asymptotic_coefficient, entry_moment_exact, monte_carlo_entry_moment,
    EntryProduct, McEstimate,
};
use crate::nnsd::{
    default_cutoffs, default_window_size, ensemble_window_spacings, small_spacing_exponent, windowed_surmise_scan,
    write_scan_csv, ExponentEstimate, ScanOptions, ScanWindow, WindowSelector,
};
use crate::seed::{derive_seed, realization_seeds};
use crate::spectrum::{
    decay_rate, eigendecompose, eigenvalue_histogram, ensemble_moment, fit_triangular, q_fourth_moment,
    BinningPolicy, Histogram, SpectrumResult, TriangularFit,
};
use crate::stats::{mean_stderr, MeanEstimate};
use crate::surmise::{fit_surmise, FitObjective, FitOptions, SurmiseFit};
use crate::unfold::UnfoldingMethod;

pub const SEED_RULE: &str = "seed_i = splitmix64(master_seed + (i + 1) * 0x9E3779B97F4A7C15)";
/// A run fails if more than this fraction of realizations fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Spectrum,
    TriangleFit,
    NnsdScan,
    EigvecStats,
    FractalScan,
    EntryMoments,
    DecayRate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::TriangleFit => "triangle-fit",
            ExperimentKind::NnsdScan => "nnsd-scan",
            ExperimentKind::EigvecStats => "eigvec-stats",
            ExperimentKind::FractalScan => "fractal-scan",
            ExperimentKind::EntryMoments => "entry-moments",
            ExperimentKind::DecayRate => "decay-rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnfoldingOptions {
    pub method: UnfoldingMethod,
    /// Levels per scan window; defaults to 1000 (600 when `b0 >= 10`).
    pub window_size: Option<usize>,
    pub objective: FitObjective,
    pub goodness_threshold: f64,
}

impl Default for UnfoldingOptions {
    fn default() -> Self {
        Self {
            method: UnfoldingMethod::default(),
            window_size: None,
            objective: FitObjective::LeastSquares,
            goodness_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigvecOptions {
    pub window_vectors: usize,
    pub sizes: Vec<usize>,
    pub q_list: Vec<u32>,
    pub window: VectorWindow,
}

impl Default for EigvecOptions {
    fn default() -> Self {
        Self {
            window_vectors: MAX_WINDOW_VECTORS,
            sizes: vec![500, 1000, 2000, 4000],
            q_list: vec![2, 3, 4, 5],
            window: VectorWindow::SuperradiantMaximum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentOptions {
    pub samples: u64,
    pub orders: Vec<u32>,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { samples: 1_000_000, orders: vec![1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_atoms: usize,
    pub b0: Option<f64>,
    /// Mode count `M = N / b0`; mutually exclusive with `b0`.
    pub modes: Option<f64>,
    pub realizations: usize,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub binning: BinningPolicy,
    pub unfolding: UnfoldingOptions,
    pub eigvec: EigvecOptions,
    pub moments: MomentOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Spectrum,
            n_atoms: 1000,
            b0: None,
            modes: None,
            realizations: 1,
            master_seed: 0,
            output_dir: None,
            workers: None,
            binning: BinningPolicy::default(),
            unfolding: UnfoldingOptions::default(),
            eigvec: EigvecOptions::default(),
            moments: MomentOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, n_atoms: usize, b0: f64, realizations: usize, master_seed: u64) -> Self {
        Self { kind, n_atoms, b0: Some(b0), realizations, master_seed, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// `b0`, either given or derived as `N / M`.
    pub fn cooperativeness(&self) -> f64 {
        match (self.b0, self.modes) {
            (Some(b), _) => b,
            (None, Some(m)) => self.n_atoms as f64 / m,
            (None, None) => f64::NAN,
        }
    }

    pub fn mode_count(&self) -> f64 {
        match (self.b0, self.modes) {
            (_, Some(m)) => m,
            (Some(b), None) => self.n_atoms as f64 / b,
            (None, None) => f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be a positive real, got {v}")))
            }
        };
        match (self.b0, self.modes) {
            (Some(b), None) => positive("b0", b)?,
            (None, Some(m)) => positive("M", m)?,
            _ => return Err(Error::invalid("exactly one of b0 and M must be set")),
        }
        if self.n_atoms == 0 {
            return Err(Error::invalid("n_atoms must be positive"));
        }
        if self.realizations == 0 {
            return Err(Error::invalid("realizations must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be positive"));
        }
        match self.kind {
            ExperimentKind::TriangleFit | ExperimentKind::Spectrum | ExperimentKind::DecayRate
                if self.n_atoms < 2 =>
            {
                return Err(Error::invalid("spectral experiments need at least two atoms"));
            }
            ExperimentKind::NnsdScan => {
                let w = self.window_size();
                if w < 50 || w > self.n_atoms {
                    return Err(Error::invalid(format!("window size {w} must lie in 50..={}", self.n_atoms)));
                }
            }
            ExperimentKind::EigvecStats if self.eigvec.window_vectors == 0 => {
                return Err(Error::invalid("window_vectors must be positive"));
            }
            ExperimentKind::FractalScan => {
                if self.modes.is_some() {
                    return Err(Error::invalid("fractal scans hold b0 fixed across sizes; give b0, not M"));
                }
                let s = &self.eigvec.sizes;
                if s.len() < 3 || s.iter().max().unwrap() < &(4 * s.iter().min().unwrap()) {
                    return Err(Error::invalid("fractal scans need >= 3 sizes spanning a factor of 4"));
                }
                if self.eigvec.q_list.is_empty() || self.eigvec.q_list.iter().any(|&q| q < 2) {
                    return Err(Error::invalid("q list must be nonempty with every q >= 2"));
                }
            }
            ExperimentKind::EntryMoments => {
                if self.moments.samples < 1000 {
                    return Err(Error::invalid("entry moments need at least 1000 samples"));
                }
                if self.moments.orders.is_empty() {
                    return Err(Error::invalid("no moment orders requested"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn window_size(&self) -> usize {
        self.unfolding
            .window_size
            .unwrap_or_else(|| default_window_size(self.cooperativeness(), self.n_atoms))
    }

    fn build_matrix(&self, seed: u64) -> Result<DecayMatrix> {
        let cloud = sample_cloud(self.n_atoms, seed)?;
        match self.modes {
            Some(m) => build_decay_matrix_with_modes(&cloud, m),
            None => build_decay_matrix(&cloud, self.cooperativeness()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    /// Summed over realizations; exceeds wall time under parallelism.
    pub solver_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    /// `(1/N) Σ λ^m` for m = 1..4, averaged over realizations.
    pub moments: Vec<MeanEstimate>,
    pub second_moment_prediction: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub histogram: Histogram,
    /// Per successful realization, ascending.
    pub eigenvalues: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleSummary {
    pub fit: TriangularFit,
    pub predicted_a: f64,
    pub histogram: Histogram,
    pub q_fourth_moment: MeanEstimate,
    pub q_fourth_prediction: f64,
    pub gaussian_fourth_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnsdSummary {
    pub window_size: usize,
    pub windows: Vec<ScanWindow>,
    /// Fit over the window centred on λ = 1.
    pub central_fit: Option<SurmiseFit>,
    pub central_exponent: Option<ExponentEstimate>,
    pub central_histogram: Option<Histogram>,
    pub central_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigvecRealization {
    pub maxima: PrMaxima,
    pub bulk_pr_fraction: f64,
    pub min_eigenvalue_pr: f64,
    pub porter_thomas_ks_subradiant: f64,
    pub porter_thomas_ks_superradiant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigvecSummary {
    pub per_realization: Vec<EigvecRealization>,
    pub bulk_pr_fraction: MeanEstimate,
    pub bulk_pr_fraction_std: f64,
    pub min_eigenvalue_pr_median: f64,
    pub maxima_separation: MeanEstimate,
    /// Pooled `u = √N ψ` histogram at the subradiant maximum.
    pub amplitude_histogram: Histogram,
    pub porter_thomas_ks_subradiant: f64,
    #[serde(skip)]
    first_profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMomentRow {
    pub m: u32,
    pub exact: Option<f64>,
    pub monte_carlo: McEstimate,
    pub z_score: Option<f64>,
    /// `a_m` in `<S^m> ~ a_m M^{-3/2}`, for m >= 3.
    pub asymptotic_coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMomentSummary {
    pub modes: f64,
    pub rows: Vec<EntryMomentRow>,
    pub shared_vertex_exact: f64,
    pub shared_vertex_monte_carlo: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRateSummary {
    /// Fully symmetric state `β_j = 1/√N`.
    pub symmetric: MeanEstimate,
    /// Uniform-amplitude state with random phases.
    pub random_phase: MeanEstimate,
    pub fastest_mode: MeanEstimate,
    pub slowest_mode: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentResults {
    Spectrum(SpectrumSummary),
    TriangleFit(TriangleSummary),
    NnsdScan(NnsdSummary),
    EigvecStats(EigvecSummary),
    FractalScan { scalings: Vec<MomentScaling> },
    EntryMoments(EntryMomentSummary),
    DecayRate(DecayRateSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub config: ExperimentConfig,
    pub seed_rule: String,
    pub realization_seeds: Vec<u64>,
    pub failures: Vec<RealizationFailure>,
    pub succeeded: bool,
    pub results: Option<ExperimentResults>,
    pub timing: Timing,
}

impl EnsembleReport {
    /// Serialized report with the timing section removed.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Serialization(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Creates the output directory and proves it writable before any compute.
fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

struct Outcome<T> {
    ok: Vec<T>,
    failures: Vec<RealizationFailure>,
    solver_seconds: f64,
}

/// Maps realizations over the pool and reduces in index order.
fn run_realizations<T, F>(pool: &rayon::ThreadPool, seeds: &[u64], f: F) -> Outcome<T>
where
    T: Send,
    F: Fn(u64) -> Result<(T, f64)> + Sync,
{
    let results: Vec<Result<(T, f64)>> = pool.install(|| seeds.par_iter().map(|&s| f(s)).collect());
    let mut out = Outcome { ok: Vec::new(), failures: Vec::new(), solver_seconds: 0.0 };
    for (index, (r, &seed)) in results.into_iter().zip(seeds).enumerate() {
        match r {
            Ok((t, secs)) => {
                out.solver_seconds += secs;
                out.ok.push(t);
            }
            Err(e) => out.failures.push(RealizationFailure {
                index,
                seed,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    out
}

fn timed_spectrum(cfg: &ExperimentConfig, seed: u64, vectors: bool) -> Result<(SpectrumResult, f64)> {
    let s = cfg.build_matrix(seed)?;
    let t = Instant::now();
    let spec = eigendecompose(&s, vectors)?;
    let secs = t.elapsed().as_secs_f64();
    spec.validate()?;
    Ok((spec, secs))
}

fn write_csv_file(dir: &Path, name: &str, body: impl FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>) -> Result<()> {
    write_atomic(&dir.join(name), body)
}

/// Runs the configured experiment. Report files are written only when an
/// output directory is configured; a run whose failure fraction exceeds
/// `MAX_FAILURE_FRACTION` still returns its report, with `succeeded = false`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.output_dir {
        prepare_output(dir)?;
    }
    let start = Instant::now();
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let seeds = realization_seeds(cfg.master_seed, cfg.realizations);
    let dir = cfg.output_dir.as_deref();

    let (results, failures, solver_seconds) = match cfg.kind {
        ExperimentKind::Spectrum => {
            let o = run_realizations(&pool, &seeds, |s| timed_spectrum(cfg, s, false));
            let r = (!o.ok.is_empty()).then(|| spectrum_summary(cfg, &o.ok)).transpose()?;
            if let (Some(d), Some(ExperimentResults::Spectrum(sum))) = (dir, &r) {
                write_csv_file(d, "eigenvalue_histogram.csv", |w| sum.histogram.write_csv(w))?;
            }
            (r, o.failures, o.solver_seconds)
        }
        ExperimentKind::TriangleFit => {
            let o = run_realizations(&pool, &seeds, |s| timed_spectrum(cfg, s, false));
            let r = (!o.ok.is_empty()).then(|| triangle_summary(cfg, &o.ok)).transpose()?;
            if let (Some(d), Some(ExperimentResults::TriangleFit(sum))) = (dir, &r) {
                write_csv_file(d, "eigenvalue_histogram.csv", |w| sum.histogram.write_csv(w))?;
            }
            (r, o.failures, o.solver_seconds)
        }
        ExperimentKind::NnsdScan => {
            let o = run_realizations(&pool, &seeds, |s| timed_spectrum(cfg, s, false));
            let r = (!o.ok.is_empty()).then(|| pool.install(|| nnsd_summary(cfg, &o.ok))).transpose()?;
            if let (Some(d), Some(ExperimentResults::NnsdScan(sum))) = (dir, &r) {
                write_csv_file(d, "nnsd_scan.csv", |w| write_scan_csv(&sum.windows, w))?;
                if let Some(h) = &sum.central_histogram {
                    write_csv_file(d, "spacing_histogram.csv", |w| h.write_csv(w))?;
                }
            }
            (r, o.failures, o.solver_seconds)
        }
        ExperimentKind::EigvecStats => {
            let o = run_realizations(&pool, &seeds, |s| {
                let (spec, secs) = timed_spectrum(cfg, s, true)?;
                Ok((eigvec_realization(cfg, &spec)?, secs))
            });
            let r = (!o.ok.is_empty()).then(|| eigvec_summary(o.ok)).transpose()?;
            if let (Some(d), Some(ExperimentResults::EigvecStats(sum))) = (dir, &r) {
                write_csv_file(d, "pr_profile.csv", |w| write_pr_profile_csv(&sum.first_profile, cfg.n_atoms, w))?;
                write_csv_file(d, "u_histogram.csv", |w| sum.amplitude_histogram.write_csv(w))?;
            }
            (r, o.failures, o.solver_seconds)
        }
        ExperimentKind::FractalScan => {
            let fc = FractalScanConfig {
                sizes: cfg.eigvec.sizes.clone(),
                q_list: cfg.eigvec.q_list.clone(),
                b0: cfg.cooperativeness(),
                realizations: cfg.realizations,
                seed: cfg.master_seed,
                window: cfg.eigvec.window,
                window_vectors: cfg.eigvec.window_vectors,
            };
            let t = Instant::now();
            let scalings = pool.install(|| fractal_dimensions(&fc))?;
            if let Some(d) = dir {
                write_json(&d.join("fractal.json"), &scalings)?;
            }
            (Some(ExperimentResults::FractalScan { scalings }), Vec::new(), t.elapsed().as_secs_f64())
        }
        ExperimentKind::EntryMoments => {
            let sum = pool.install(|| entry_moment_summary(cfg))?;
            if let Some(d) = dir {
                write_csv_file(d, "entry_moments.csv", |w| {
                    writeln!(w, "m,exact,mc_mean,mc_stderr,z_score")?;
                    for r in &sum.rows {
                        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                        writeln!(w, "{},{},{},{},{}", r.m, opt(r.exact), r.monte_carlo.mean, r.monte_carlo.stderr, opt(r.z_score))?;
                    }
                    Ok(())
                })?;
            }
            (Some(ExperimentResults::EntryMoments(sum)), Vec::new(), 0.0)
        }
        ExperimentKind::DecayRate => {
            let o = run_realizations(&pool, &seeds, |s| decay_rate_realization(cfg, s));
            let r = (!o.ok.is_empty()).then(|| decay_rate_summary(&o.ok)).transpose()?;
            (r, o.failures, o.solver_seconds)
        }
    };

    let succeeded = results.is_some() && (failures.len() as f64) <= MAX_FAILURE_FRACTION * cfg.realizations as f64;
    let report = EnsembleReport {
        config: cfg.clone(),
        seed_rule: SEED_RULE.to_string(),
        realization_seeds: seeds,
        failures,
        succeeded,
        results,
        timing: Timing { wall_seconds: start.elapsed().as_secs_f64(), solver_seconds },
    };
    if let Some(d) = dir {
        write_json(&d.join("report.json"), &report)?;
    }
    Ok(report)
}


fn spectrum_summary(cfg: &ExperimentConfig, specs: &[SpectrumResult]) -> Result<ExperimentResults> {
    let moments = (1..=4).map(|m| ensemble_moment(specs, m)).collect::<Result<_>>()?;
    Ok(ExperimentResults::Spectrum(SpectrumSummary {
        moments,
        second_moment_prediction: 1.0 + cfg.cooperativeness() / 4.0,
        min_eigenvalue: specs.iter().map(|s| s.eigenvalues()[0]).fold(f64::INFINITY, f64::min),
        max_eigenvalue: specs.iter().map(|s| s.eigenvalues()[s.n - 1]).fold(f64::NEG_INFINITY, f64::max),
        histogram: eigenvalue_histogram(specs, &cfg.binning)?,
        eigenvalues: specs.iter().map(|s| s.eigenvalues().to_vec()).collect(),
    }))
}

fn triangle_summary(cfg: &ExperimentConfig, specs: &[SpectrumResult]) -> Result<ExperimentResults> {
    let b0 = cfg.cooperativeness();
    let histogram = eigenvalue_histogram(specs, &cfg.binning)?;
    let fit = fit_triangular(&histogram)?;
    let centered: Vec<SpectrumResult> = specs.iter().map(|s| s.to_centered()).collect::<Result<_>>()?;
    Ok(ExperimentResults::TriangleFit(TriangleSummary {
        fit,
        predicted_a: (1.5 * b0).sqrt(),
        histogram,
        q_fourth_moment: q_fourth_moment(&centered)?,
        q_fourth_prediction: std::f64::consts::PI / (27.0 * 3f64.sqrt()),
        gaussian_fourth_moment: 1.0 / 15.0,
    }))
}

fn nnsd_summary(cfg: &ExperimentConfig, specs: &[SpectrumResult]) -> Result<ExperimentResults> {
    let window_size = cfg.window_size();
    let fit = FitOptions { objective: cfg.unfolding.objective, ..FitOptions::default() };
    let options = ScanOptions {
        window_size,
        unfolding: cfg.unfolding.method,
        fit,
        goodness_threshold: cfg.unfolding.goodness_threshold,
    };
    let windows = windowed_surmise_scan(specs, &options)?;
    let central = ensemble_window_spacings(
        specs,
        &WindowSelector::AroundValue { center: 1.0, len: window_size },
        cfg.unfolding.method,
    )
    .and_then(|p| {
        let f = fit_surmise(&p.spacings, &fit)?;
        let e = small_spacing_exponent(&p.spacings, &default_cutoffs()).ok();
        let h = Histogram::from_samples(&p.spacings, &BinningPolicy::default())?;
        Ok((f, e, h))
    });
    let (central_fit, central_exponent, central_histogram, central_error) = match central {
        Ok((f, e, h)) => (Some(f), e, Some(h), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    Ok(ExperimentResults::NnsdScan(NnsdSummary {
        window_size,
        windows,
        central_fit,
        central_exponent,
        central_histogram,
        central_error,
    }))
}

struct EigvecPart {
    stats: EigvecRealization,
    profile: Vec<(f64, f64)>,
    amplitudes: Vec<f64>,
}

fn eigvec_realization(cfg: &ExperimentConfig, spec: &SpectrumResult) -> Result<EigvecPart> {
    let profile = pr_profile(spec)?;
    let maxima = pr_maxima(&profile)?;
    let k = cfg.eigvec.window_vectors;
    let sub = window_indices(spec, VectorWindow::Around(maxima.subradiant.1), k)?;
    let sup = window_indices(spec, VectorWindow::Around(maxima.superradiant.1), k)?;
    let pt_sub = porter_thomas_test(&window_vectors(spec, &sub)?)?;
    let pt_sup = porter_thomas_test(&window_vectors(spec, &sup)?)?;
    let scale = (spec.n as f64).sqrt();
    let amplitudes = window_vectors(spec, &sub)?.iter().flat_map(|v| v.iter().map(move |x| x * scale)).collect();
    Ok(EigvecPart {
        stats: EigvecRealization {
            maxima,
            bulk_pr_fraction: bulk_pr_fraction(spec)?,
            min_eigenvalue_pr: participation_ratio(spec.vector(0).unwrap())?,
            porter_thomas_ks_subradiant: pt_sub.ks,
            porter_thomas_ks_superradiant: pt_sup.ks,
        },
        profile,
        amplitudes,
    })
}

fn eigvec_summary(parts: Vec<EigvecPart>) -> Result<ExperimentResults> {
    let fractions: Vec<f64> = parts.iter().map(|p| p.stats.bulk_pr_fraction).collect();
    let min_prs: Vec<f64> = parts.iter().map(|p| p.stats.min_eigenvalue_pr).collect();
    let seps: Vec<f64> = parts.iter().map(|p| p.stats.maxima.separation()).collect();
    let pooled: Vec<f64> = parts.iter().flat_map(|p| p.amplitudes.iter().copied()).collect();
    let amplitude_histogram = Histogram::from_samples(&pooled, &BinningPolicy::default())?;
    let ks = crate::stats::ks_statistic(&pooled, |x| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2));
    let first_profile = parts[0].profile.clone();
    Ok(ExperimentResults::EigvecStats(EigvecSummary {
        bulk_pr_fraction: mean_stderr(&fractions)?,
        bulk_pr_fraction_std: crate::stats::std_dev(&fractions),
        min_eigenvalue_pr_median: crate::stats::median(&min_prs),
        maxima_separation: mean_stderr(&seps)?,
        amplitude_histogram,
        porter_thomas_ks_subradiant: ks,
        per_realization: parts.into_iter().map(|p| p.stats).collect(),
        first_profile,
    }))
}

fn entry_moment_summary(cfg: &ExperimentConfig) -> Result<EntryMomentSummary> {
    let modes = cfg.mode_count();
    let samples = cfg.moments.samples;
    let mut rows = Vec::new();
    for (k, &m) in cfg.moments.orders.iter().enumerate() {
        let mc = monte_carlo_entry_moment(EntryProduct::Single { m }, modes, samples, derive_seed(cfg.master_seed, k as u64))?;
        let exact = entry_moment_exact(m, modes).ok();
        rows.push(EntryMomentRow {
            m,
            exact,
            monte_carlo: mc,
            z_score: exact.map(|e| (mc.mean - e) / mc.stderr),
            asymptotic_coefficient: (m >= 3).then(|| entry_moment_asymptotic_coefficient(m).ok()).flatten(),
        });
    }
    let shared_seed = derive_seed(cfg.master_seed, cfg.moments.orders.len() as u64);
    Ok(EntryMomentSummary {
        modes,
        rows,
        shared_vertex_exact: correlated_entry_moment(modes)?,
        shared_vertex_monte_carlo: monte_carlo_entry_moment(EntryProduct::SharedVertex, modes, samples, shared_seed)?,
    })
}

type Rates = [f64; 4];

fn decay_rate_realization(cfg: &ExperimentConfig, seed: u64) -> Result<(Rates, f64)> {
    let s = cfg.build_matrix(seed)?;
    let n = cfg.n_atoms;
    let amp = 1.0 / (n as f64).sqrt();
    let symmetric = vec![Complex64::new(amp, 0.0); n];
    // Phases from a stream independent of the cloud's.
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let random: Vec<Complex64> =
        (0..n).map(|_| Complex64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let t = Instant::now();
    let spec = eigendecompose(&s, false)?;
    let secs = t.elapsed().as_secs_f64();
    let ev = spec.eigenvalues();
    Ok(([decay_rate(&symmetric, &s)?, decay_rate(&random, &s)?, ev[n - 1], ev[0]], secs))
}

fn decay_rate_summary(rates: &[Rates]) -> Result<ExperimentResults> {
    let col = |k: usize| mean_stderr(&rates.iter().map(|r| r[k]).collect::<Vec<_>>());
    Ok(ExperimentResults::DecayRate(DecayRateSummary {
        symmetric: col(0)?,
        random_phase: col(1)?,
        fastest_mode: col(2)?,
        slowest_mode: col(3)?,
    }))
}
