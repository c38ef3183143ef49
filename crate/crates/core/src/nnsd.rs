//! Nearest-neighbour spacing statistics over spectral windows of an ensemble.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::SpectrumResult;
use crate::stats::{linear_regression, median};
use crate::surmise::{fit_surmise, FitOptions, SurmiseFit};
use crate::unfold::{spacings, unfold_ensemble, UnfoldingMethod};

/// Which eigenvalues of each realization make up a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum WindowSelector {
    /// Index range `[start, start + len)` in ascending order.
    Indices { start: usize, len: usize },
    /// `len` consecutive eigenvalues centred on the first one `>= center`.
    AroundValue { center: f64, len: usize },
    /// All eigenvalues in `[lo, hi]`.
    Range { lo: f64, hi: f64 },
}

impl WindowSelector {
    pub fn select<'a>(&self, spec: &'a SpectrumResult) -> Result<&'a [f64]> {
        let ev = spec.eigenvalues();
        let n = ev.len();
        let (a, b) = match *self {
            WindowSelector::Indices { start, len } => {
                if len == 0 || start + len > n {
                    return Err(Error::invalid(format!("index window [{start}, {}) outside 0..{n}", start + len)));
                }
                (start, start + len)
            }
            WindowSelector::AroundValue { center, len } => {
                if len == 0 || len > n {
                    return Err(Error::invalid(format!("window of {len} levels in a spectrum of {n}")));
                }
                let mid = ev.partition_point(|&x| x < center);
                let start = mid.saturating_sub(len / 2).min(n - len);
                (start, start + len)
            }
            WindowSelector::Range { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::invalid(format!("empty eigenvalue range [{lo}, {hi}]")));
                }
                (ev.partition_point(|&x| x < lo), ev.partition_point(|&x| x <= hi))
            }
        };
        Ok(&ev[a..b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSpacings {
    pub spacings: Vec<f64>,
    /// Smallest and largest raw eigenvalue used.
    pub window: (f64, f64),
    /// Median raw eigenvalue of the window, pooled over realizations.
    pub center: f64,
}

/// Selects the same window in every realization, unfolds them jointly and
/// pools the spacings. Spacings never straddle two realizations.
pub fn ensemble_window_spacings(
    specs: &[SpectrumResult],
    selector: &WindowSelector,
    unfolding: UnfoldingMethod,
) -> Result<PooledSpacings> {
    if specs.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    let windows: Vec<&[f64]> = specs.iter().map(|s| selector.select(s)).collect::<Result<_>>()?;
    let unfolded = unfold_ensemble(&windows, unfolding)?;
    let mut pooled = Vec::new();
    for u in &unfolded {
        pooled.extend(spacings(u)?);
    }
    let lo = unfolded.iter().map(|u| u.window.0).fold(f64::INFINITY, f64::min);
    let hi = unfolded.iter().map(|u| u.window.1).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = windows.iter().flat_map(|w| w.iter().copied()).collect();
    Ok(PooledSpacings { spacings: pooled, window: (lo, hi), center: median(&raw) })
}

/// Default window: 1000 levels, 600 for broad spectra (`b0 >= 10`).
pub fn default_window_size(b0: f64, n: usize) -> usize {
    let w = if b0 >= 10.0 { 600 } else { 1000 };
    w.min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub window_size: usize,
    pub unfolding: UnfoldingMethod,
    pub fit: FitOptions,
    /// Windows whose KS goodness exceeds this are flagged as poor fits.
    pub goodness_threshold: f64,
}

impl ScanOptions {
    pub fn new(window_size: usize) -> Self {
        Self {
            window_size,
            unfolding: UnfoldingMethod::default(),
            fit: FitOptions::default(),
            goodness_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFlag {
    Ok,
    PoorFit,
    Failed,
}

impl WindowFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            WindowFlag::Ok => "ok",
            WindowFlag::PoorFit => "poor_fit",
            WindowFlag::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanWindow {
    pub start: usize,
    pub center: f64,
    pub window: (f64, f64),
    pub fit: Option<SurmiseFit>,
    pub flag: WindowFlag,
    pub error: Option<String>,
}

/// Slides an index window by half its width across the spectrum, fitting
/// the surmise in each. Failed windows are kept and flagged.
pub fn windowed_surmise_scan(specs: &[SpectrumResult], options: &ScanOptions) -> Result<Vec<ScanWindow>> {
    let n = specs.first().ok_or_else(|| Error::invalid("empty ensemble"))?.n;
    if specs.iter().any(|s| s.n != n) {
        return Err(Error::invalid("ensemble mixes matrix sizes"));
    }
    let w = options.window_size;
    if w < 2 || w > n {
        return Err(Error::invalid(format!("window size {w} must lie in 2..={n}")));
    }
    let stride = (w / 2).max(1);
    let mut starts: Vec<usize> = (0..=(n - w)).step_by(stride).collect();
    if starts.last() != Some(&(n - w)) {
        starts.push(n - w);
    }
    Ok(starts
        .par_iter()
        .map(|&start| {
            let sel = WindowSelector::Indices { start, len: w };
            let raw: Vec<f64> = specs.iter().flat_map(|s| sel.select(s).unwrap().iter().copied()).collect();
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let center = median(&raw);
            let result = ensemble_window_spacings(specs, &sel, options.unfolding)
                .and_then(|p| fit_surmise(&p.spacings, &options.fit));
            let (fit, flag, error) = match result {
                Ok(f) if f.goodness > options.goodness_threshold => (Some(f), WindowFlag::PoorFit, None),
                Ok(f) => (Some(f), WindowFlag::Ok, None),
                Err(e) => (None, WindowFlag::Failed, Some(e.to_string())),
            };
            ScanWindow { start, center, window: (lo, hi), fit, flag, error }
        })
        .collect())
}

/// CSV with columns `window_center,q,q_err,r,r_err,goodness,flag`; failed
/// windows have empty numeric fields.
pub fn write_scan_csv<W: Write>(windows: &[ScanWindow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "window_center,q,q_err,r,r_err,goodness,flag")?;
    for w in windows {
        match &w.fit {
            Some(f) => writeln!(
                out,
                "{},{},{},{},{},{},{}",
                w.center,
                f.q(),
                f.q_err,
                f.r(),
                f.r_err,
                f.goodness,
                w.flag.as_str()
            )?,
            None => writeln!(out, "{},,,,,,{}", w.center, w.flag.as_str())?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub q: f64,
    pub stderr: f64,
}

/// Geometric cutoffs from 0.3 down to 0.05.
pub fn default_cutoffs() -> Vec<f64> {
    let (hi, lo, k) = (0.3f64, 0.05f64, 8);
    (0..k).map(|i| hi * (lo / hi).powf(i as f64 / (k - 1) as f64)).collect()
}

/// Slope of `log P(s <= s0)` against `log s0`, minus one.
pub fn small_spacing_exponent(spacings: &[f64], cutoffs: &[f64]) -> Result<ExponentEstimate> {
    if spacings.is_empty() {
        return Err(Error::invalid("no spacings"));
    }
    if cutoffs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("cutoffs must be positive"));
    }
    let mut sorted = spacings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut xs = Vec::with_capacity(cutoffs.len());
    let mut ys = Vec::with_capacity(cutoffs.len());
    for &s0 in cutoffs {
        let count = sorted.partition_point(|&s| s <= s0);
        if count == 0 {
            return Err(Error::Range(format!("no spacings below cutoff {s0}")));
        }
        xs.push(s0.ln());
        ys.push((count as f64 / n).ln());
    }
    let fit = linear_regression(&xs, &ys)?;
    Ok(ExponentEstimate { q: fit.slope - 1.0, stderr: fit.slope_stderr })
}
