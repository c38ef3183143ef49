//! Unfolding: mapping eigenvalues through a smooth estimate of the mean
//! counting function so that the mean level spacing is one.

use faer::prelude::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_UNFOLD_LEVELS: usize = 50;

/// Estimator for the mean counting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum UnfoldingMethod {
    /// Least-squares polynomial (Legendre basis) fitted to the pooled staircase.
    Polynomial { degree: usize },
    /// The pooled empirical staircase itself, averaged over realizations.
    EnsembleStaircase,
}

impl Default for UnfoldingMethod {
    fn default() -> Self {
        UnfoldingMethod::Polynomial { degree: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfoldedSpectrum {
    values: Vec<f64>,
    /// Raw eigenvalue range that was unfolded.
    pub window: (f64, f64),
    pub method: UnfoldingMethod,
    /// Polynomial degree actually used after any monotonicity fallback.
    pub degree_used: Option<usize>,
}

impl UnfoldedSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean_spacing(&self) -> f64 {
        let n = self.values.len();
        (self.values[n - 1] - self.values[0]) / (n - 1) as f64
    }
}

/// Unfolds a single ascending sequence. With `EnsembleStaircase` and one
/// realization the staircase is the sequence's own, which yields exactly
/// equal spacings; use `unfold_ensemble` for that method.
pub fn unfold(eigenvalues: &[f64], method: UnfoldingMethod) -> Result<UnfoldedSpectrum> {
    let mut out = unfold_ensemble(&[eigenvalues], method)?;
    Ok(out.pop().expect("one window in, one out"))
}

/// Unfolds several realizations of the same window with one counting
/// function estimated from all of them pooled. Levels outside the range
/// common to every realization are trimmed first, so the pooled staircase
/// is not distorted at the window edges.
pub fn unfold_ensemble(windows: &[&[f64]], method: UnfoldingMethod) -> Result<Vec<UnfoldedSpectrum>> {
    if windows.is_empty() {
        return Err(Error::invalid("no eigenvalue windows to unfold"));
    }
    for w in windows {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite eigenvalue".into()));
        }
        if w.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::invalid("eigenvalues must be ascending"));
        }
        if w.len() < MIN_UNFOLD_LEVELS {
            return Err(Error::invalid(format!(
                "window has {} eigenvalues; unfolding needs at least {MIN_UNFOLD_LEVELS}",
                w.len()
            )));
        }
    }
    let lo = windows.iter().map(|w| w[0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = windows.iter().map(|w| w[w.len() - 1]).fold(f64::INFINITY, f64::min);
    let trimmed: Vec<&[f64]> = windows
        .iter()
        .map(|w| {
            let a = w.partition_point(|&x| x < lo);
            let b = w.partition_point(|&x| x <= hi);
            &w[a..b]
        })
        .collect();
    if trimmed.iter().any(|w| w.len() < MIN_UNFOLD_LEVELS) {
        return Err(Error::invalid("realizations overlap in fewer than the minimum number of levels"));
    }

    let r = windows.len() as f64;
    let mut pooled: Vec<f64> = trimmed.iter().flat_map(|w| w.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    // Pooled staircase: the k-th pooled level sits at (k + 1/2) / R.
    let stair: Vec<f64> = (0..pooled.len()).map(|k| (k as f64 + 0.5) / r).collect();

    let (counting, degree_used): (Box<dyn Fn(f64) -> f64>, Option<usize>) = match method {
        UnfoldingMethod::EnsembleStaircase => {
            let p = pooled.clone();
            let s = stair.clone();
            (Box::new(move |x| interpolate(&p, &s, x)), None)
        }
        UnfoldingMethod::Polynomial { degree } => {
            if degree == 0 {
                return Err(Error::invalid("polynomial degree must be at least 1"));
            }
            let (poly, used) = monotone_polynomial(&pooled, &stair, degree, &trimmed)?;
            (Box::new(move |x| poly.eval(x)), Some(used))
        }
    };

    trimmed
        .iter()
        .map(|w| {
            let raw: Vec<f64> = w.iter().map(|&x| counting(x)).collect();
            let n = raw.len();
            let span = raw[n - 1] - raw[0];
            if !(span > 0.0) {
                return Err(Error::Data("window has zero spectral extent".into()));
            }
            // Affine rescale to unit mean spacing within this realization.
            let scale = (n - 1) as f64 / span;
            let values = raw.iter().map(|u| (u - raw[0]) * scale).collect();
            Ok(UnfoldedSpectrum { values, window: (w[0], w[n - 1]), method, degree_used })
        })
        .collect()
}

/// Piecewise-linear interpolation through ascending `xs` (ties averaged by
/// taking the first match) with linear extrapolation at the ends.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = xs.partition_point(|&v| v < x);
    if k < n && xs[k] == x {
        // Average over tied pooled levels.
        let end = xs[k..].partition_point(|&v| v == x) + k;
        return ys[k..end].iter().sum::<f64>() / (end - k) as f64;
    }
    let (i, j) = match k {
        0 => (0, 1),
        k if k >= n => (n - 2, n - 1),
        k => (k - 1, k),
    };
    if xs[j] == xs[i] {
        return ys[i];
    }
    ys[i] + (ys[j] - ys[i]) * (x - xs[i]) / (xs[j] - xs[i])
}

struct Legendre {
    coeffs: Vec<f64>,
    center: f64,
    half: f64,
}

impl Legendre {
    fn basis(t: f64, degree: usize, out: &mut [f64]) {
        out[0] = 1.0;
        if degree >= 1 {
            out[1] = t;
        }
        for k in 2..=degree {
            let kf = k as f64;
            out[k] = ((2.0 * kf - 1.0) * t * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let degree = self.coeffs.len() - 1;
        let mut b = vec![0.0; degree + 1];
        Self::basis((x - self.center) / self.half, degree, &mut b);
        b.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum()
    }
}

fn fit_legendre(xs: &[f64], ys: &[f64], degree: usize) -> Legendre {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let center = 0.5 * (lo + hi);
    let half = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let mut row = vec![0.0; degree + 1];
    let a = Mat::<f64>::from_fn(xs.len(), degree + 1, |i, j| {
        Legendre::basis((xs[i] - center) / half, degree, &mut row);
        row[j]
    });
    let b = Mat::<f64>::from_fn(ys.len(), 1, |i, _| ys[i]);
    let sol = a.qr().solve_lstsq(&b);
    Legendre { coeffs: (0..=degree).map(|j| sol[(j, 0)]).collect(), center, half }
}

/// Fits at `degree`, lowering it until the fit is nondecreasing over every
/// realization's levels.
fn monotone_polynomial(
    xs: &[f64],
    ys: &[f64],
    degree: usize,
    windows: &[&[f64]],
) -> Result<(Legendre, usize)> {
    let distinct = {
        let mut d = xs.to_vec();
        d.dedup();
        d.len()
    };
    let start = degree.min(distinct.saturating_sub(1)).max(1);
    for deg in (1..=start).rev() {
        let poly = fit_legendre(xs, ys, deg);
        let monotone = windows.iter().all(|w| {
            let u: Vec<f64> = w.iter().map(|&x| poly.eval(x)).collect();
            u.windows(2).all(|p| p[1] >= p[0]) && u[u.len() - 1] > u[0]
        });
        if monotone {
            return Ok((poly, deg));
        }
    }
    Err(Error::fit("no monotone polynomial counting function found"))
}

/// Nearest-neighbour spacings `s_i = u_{i+1} - u_i`.
pub fn spacings(u: &UnfoldedSpectrum) -> Result<Vec<f64>> {
    spacings_of(u.values())
}

pub fn spacings_of(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::invalid("spacings need at least two levels"));
    }
    Ok(values.windows(2).map(|w| w[1] - w[0]).collect())
}
