//! Eigenvector (de)localization: participation ratios, amplitude
//! distributions and moment scaling with matrix size.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cloud::sample_cloud;
use crate::error::{Error, Result};
use crate::matrix::build_decay_matrix;
use crate::seed::derive_seed;
use crate::spectrum::{eigendecompose, BinningPolicy, Histogram, SpectrumResult};
use crate::stats::{ks_statistic, linear_regression};

pub const PR_SMOOTHING: usize = 51;
pub const MAX_WINDOW_VECTORS: usize = 100;

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_normalized(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    let n2 = norm_sq(v);
    if !((n2 - 1.0).abs() <= 1e-8) {
        return Err(Error::invalid(format!("vector is not normalized: |v|² = {n2}")));
    }
    Ok(n2)
}

/// `1 / Σ ψ_j⁴`, after renormalizing away any residual drift.
pub fn participation_ratio(v: &[f64]) -> Result<f64> {
    let n2 = check_normalized(v)?;
    let p4: f64 = v.iter().map(|x| x.powi(4)).sum();
    Ok(n2 * n2 / p4)
}

/// `Σ |ψ_j|^{2q}` of an exactly renormalized copy.
fn moment(v: &[f64], q: u32) -> f64 {
    let n2 = norm_sq(v);
    v.iter().map(|x| (x * x / n2).powi(q as i32)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStats {
    pub eigenvalue: f64,
    pub participation_ratio: f64,
    /// Scaled components `u = √N ψ_j`.
    pub amplitude_sample: Vec<f64>,
}

pub fn vector_stats(spec: &SpectrumResult, i: usize) -> Result<VectorStats> {
    let v = spec.vector(i).ok_or_else(|| Error::invalid("spectrum has no eigenvectors"))?;
    let pr = participation_ratio(v)?;
    let scale = (spec.n as f64 / norm_sq(v)).sqrt();
    Ok(VectorStats {
        eigenvalue: spec.eigenvalues()[i],
        participation_ratio: pr,
        amplitude_sample: v.iter().map(|x| x * scale).collect(),
    })
}

/// `(λ_i, Π_i)` in eigenvalue order.
pub fn pr_profile(spec: &SpectrumResult) -> Result<Vec<(f64, f64)>> {
    if !spec.has_vectors() {
        return Err(Error::invalid("participation ratios need eigenvectors"));
    }
    (0..spec.n)
        .into_par_iter()
        .map(|i| Ok((spec.eigenvalues()[i], participation_ratio(spec.vector(i).unwrap())?)))
        .collect()
}

pub fn write_pr_profile_csv<W: Write>(profile: &[(f64, f64)], n: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "eigenvalue,participation_ratio,pr_over_n")?;
    for &(l, p) in profile {
        writeln!(out, "{l},{p},{}", p / n as f64)?;
    }
    Ok(())
}

/// Average of `Σ |ψ_j|^{2q}` over a set of vectors.
pub fn eigenvector_moment(vectors: &[&[f64]], q: u32) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::invalid("no vectors in window"));
    }
    Ok(vectors.iter().map(|v| moment(v, q)).sum::<f64>() / vectors.len() as f64)
}

/// Centred moving average; the window shrinks symmetrically at the ends.
pub fn moving_average(xs: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = vec![0.0; xs.len() + 1];
    for (i, x) in xs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..xs.len())
        .map(|i| {
            let h = half.min(i).min(xs.len() - 1 - i);
            (prefix[i + h + 1] - prefix[i - h]) / (2 * h + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrMaxima {
    /// Index and eigenvalue of the smoothed-PR maximum below λ = 1.
    pub subradiant: (usize, f64),
    /// Same, above λ = 1.
    pub superradiant: (usize, f64),
}

impl PrMaxima {
    /// Eigenvalue separation between the two maxima.
    pub fn separation(&self) -> f64 {
        self.superradiant.1 - self.subradiant.1
    }
}

/// Locates the maxima of the PR profile smoothed over `PR_SMOOTHING` levels,
/// one on each side of λ = 1.
pub fn pr_maxima(profile: &[(f64, f64)]) -> Result<PrMaxima> {
    let prs: Vec<f64> = profile.iter().map(|p| p.1).collect();
    let smooth = moving_average(&prs, PR_SMOOTHING);
    let argmax = |range: std::ops::Range<usize>| {
        range.max_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).map(|i| (i, profile[i].0))
    };
    let split = profile.partition_point(|p| p.0 < 1.0);
    let sub = argmax(0..split).ok_or_else(|| Error::Data("no eigenvalues below 1".into()))?;
    let sup = argmax(split..profile.len()).ok_or_else(|| Error::Data("no eigenvalues above 1".into()))?;
    Ok(PrMaxima { subradiant: sub, superradiant: sup })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorWindow {
    SubradiantMaximum,
    SuperradiantMaximum,
    /// Nearest eigenvectors to a given eigenvalue.
    Around(f64),
}

/// Indices of the `count` eigenvectors whose eigenvalues are nearest the
/// window's anchor, ascending.
pub fn window_indices(spec: &SpectrumResult, window: VectorWindow, count: usize) -> Result<Vec<usize>> {
    let anchor = match window {
        VectorWindow::Around(x) => x,
        VectorWindow::SubradiantMaximum => pr_maxima(&pr_profile(spec)?)?.subradiant.1,
        VectorWindow::SuperradiantMaximum => pr_maxima(&pr_profile(spec)?)?.superradiant.1,
    };
    let ev = spec.eigenvalues();
    let count = count.min(ev.len());
    let (mut lo, mut hi) = {
        let k = ev.partition_point(|&x| x < anchor);
        (k, k)
    };
    // Grow [lo, hi) outwards, always taking the closer neighbour.
    while hi - lo < count {
        let left = (lo > 0).then(|| anchor - ev[lo - 1]);
        let right = (hi < ev.len()).then(|| ev[hi] - anchor);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => lo -= 1,
            (Some(_), None) => lo -= 1,
            _ => hi += 1,
        }
    }
    Ok((lo..hi).collect())
}

pub fn window_vectors<'a>(spec: &'a SpectrumResult, indices: &[usize]) -> Result<Vec<&'a [f64]>> {
    indices
        .iter()
        .map(|&i| spec.vector(i).ok_or_else(|| Error::invalid("spectrum has no eigenvectors")))
        .collect()
}

/// Mean `Π/N` over the eigenvectors nearest both PR maxima.
pub fn bulk_pr_fraction(spec: &SpectrumResult) -> Result<f64> {
    let profile = pr_profile(spec)?;
    let m = pr_maxima(&profile)?;
    let mut idx = window_indices(spec, VectorWindow::Around(m.subradiant.1), MAX_WINDOW_VECTORS)?;
    idx.extend(window_indices(spec, VectorWindow::Around(m.superradiant.1), MAX_WINDOW_VECTORS)?);
    idx.sort_unstable();
    idx.dedup();
    Ok(idx.iter().map(|&i| profile[i].1).sum::<f64>() / (idx.len() * spec.n) as f64)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PorterThomas {
    pub ks: f64,
    pub histogram: Histogram,
    pub n_components: usize,
}

/// Pools `u = √N ψ_j` over the vectors and compares with the standard normal.
pub fn porter_thomas_test(vectors: &[&[f64]]) -> Result<PorterThomas> {
    if vectors.is_empty() {
        return Err(Error::invalid("no vectors to test"));
    }
    let mut u = Vec::with_capacity(vectors.iter().map(|v| v.len()).sum());
    for v in vectors {
        let scale = (v.len() as f64 / norm_sq(v)).sqrt();
        u.extend(v.iter().map(|x| x * scale));
    }
    Ok(PorterThomas {
        ks: ks_statistic(&u, normal_cdf),
        histogram: Histogram::from_samples(&u, &BinningPolicy::default())?,
        n_components: u.len(),
    })
}

/// `count` vectors drawn uniformly from the unit sphere in `R^n`.
pub fn sphere_uniform_vectors<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = norm_sq(&g).sqrt();
            g.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// `(2q - 1)!!`, the Gaussian-amplitude prediction for `N^{q-1} M_q`.
pub fn double_factorial_odd(q: u32) -> f64 {
    (1..=q).map(|k| (2 * k - 1) as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentScaling {
    pub q: u32,
    pub sizes: Vec<usize>,
    /// `1 / ⟨M_q⟩` per size.
    pub inverse_moments: Vec<f64>,
    pub tau: f64,
    pub tau_stderr: f64,
    pub d_q: f64,
    pub d_q_stderr: f64,
}

/// Fits `log(1/M_q)` against `log N`.
pub fn moment_scaling(q: u32, sizes: &[usize], mean_moments: &[f64]) -> Result<MomentScaling> {
    if q < 2 {
        return Err(Error::invalid("fractal dimensions need q >= 2"));
    }
    if sizes.len() != mean_moments.len() {
        return Err(Error::invalid("one mean moment per size is required"));
    }
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = mean_moments.iter().map(|m| -m.ln()).collect();
    let fit = linear_regression(&x, &y)?;
    let qm1 = (q - 1) as f64;
    Ok(MomentScaling {
        q,
        sizes: sizes.to_vec(),
        inverse_moments: mean_moments.iter().map(|m| 1.0 / m).collect(),
        tau: fit.slope,
        tau_stderr: fit.slope_stderr,
        d_q: fit.slope / qm1,
        d_q_stderr: fit.slope_stderr / qm1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractalScanConfig {
    pub sizes: Vec<usize>,
    pub q_list: Vec<u32>,
    pub b0: f64,
    pub realizations: usize,
    pub seed: u64,
    pub window: VectorWindow,
    pub window_vectors: usize,
}

/// Seed of realization `j` at size index `k`.
pub fn size_realization_seed(master: u64, k: usize, j: usize) -> u64 {
    derive_seed(derive_seed(master, k as u64), j as u64)
}

/// Window-averaged moments for one realization, in `q_list` order.
fn realization_moments(cfg: &FractalScanConfig, n: usize, seed: u64) -> Result<Vec<f64>> {
    let s = build_decay_matrix(&sample_cloud(n, seed)?, cfg.b0)?;
    let spec = eigendecompose(&s, true)?;
    drop(s);
    let idx = window_indices(&spec, cfg.window, cfg.window_vectors)?;
    let vecs = window_vectors(&spec, &idx)?;
    cfg.q_list.iter().map(|&q| eigenvector_moment(&vecs, q)).collect()
}

/// Samples, diagonalizes and fits `τ(q)` for every `q` in the list.
pub fn fractal_dimensions(cfg: &FractalScanConfig) -> Result<Vec<MomentScaling>> {
    if cfg.sizes.len() < 3 {
        return Err(Error::invalid("fractal scan needs at least three sizes"));
    }
    let (lo, hi) = (cfg.sizes.iter().min().unwrap(), cfg.sizes.iter().max().unwrap());
    if *hi < 4 * lo {
        return Err(Error::invalid("sizes must span at least a factor of 4"));
    }
    if cfg.realizations == 0 || cfg.window_vectors == 0 || cfg.q_list.is_empty() {
        return Err(Error::invalid("realizations, window size and q list must be nonempty"));
    }
    let jobs: Vec<(usize, usize)> =
        (0..cfg.sizes.len()).flat_map(|k| (0..cfg.realizations).map(move |j| (k, j))).collect();
    let per: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(k, j)| realization_moments(cfg, cfg.sizes[k], size_realization_seed(cfg.seed, k, j)))
        .collect::<Result<_>>()?;
    cfg.q_list
        .iter()
        .enumerate()
        .map(|(qi, &q)| {
            let means: Vec<f64> = (0..cfg.sizes.len())
                .map(|k| {
                    let rows = &per[k * cfg.realizations..(k + 1) * cfg.realizations];
                    rows.iter().map(|r| r[qi]).sum::<f64>() / cfg.realizations as f64
                })
                .collect();
            moment_scaling(q, &cfg.sizes, &means)
        })
        .collect()
}
