//! Moments of the off-diagonal entries of `S`, closed form and sampled.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cloud::{distance, gaussian_point, rng_from_seed};
use crate::error::{Error, Result};
use crate::matrix::sinc;
use crate::seed::derive_seed;

/// `<S_ij^m>` for `m` in {1, 2, 3} at mode count `M`.
///
/// The cubic moment follows from `sin³x = (3 sin x - sin 3x)/4` and
/// `∫ sin(kr)/r e^{-r²/4} dr = (π/2) erf(k)`.
pub fn entry_moment_exact(m: u32, modes: f64) -> Result<f64> {
    if !(modes.is_finite() && modes > 0.0) {
        return Err(Error::invalid(format!("M must be positive, got {modes}")));
    }
    let k = modes.sqrt();
    match m {
        1 => Ok((-modes).exp()),
        2 => Ok(-(-4.0 * modes).exp_m1() / (4.0 * modes)),
        3 => Ok(PI.sqrt() / 2.0 * (2.0 - 3.0 * erfc(k) + erfc(3.0 * k)) / (8.0 * modes.powf(1.5))),
        _ => Err(Error::invalid(format!("closed-form entry moment only for m in 1..=3, got {m}"))),
    }
}

fn binomial(n: u32, k: u32) -> i128 {
    let k = k.min(n - k);
    (0..k).fold(1i128, |acc, i| acc * (n - i) as i128 / (i + 1) as i128)
}

/// Large-`M` coefficient `a_m` in `<S_ij^m> ~ a_m M^{-3/2}`, `m >= 3`.
///
/// The alternating sum is accumulated exactly in `i128`; orders whose terms
/// overflow return a range error.
pub fn entry_moment_asymptotic_coefficient(m: u32) -> Result<f64> {
    if m < 3 {
        return Err(Error::invalid(format!("asymptotic coefficient defined for m >= 3, got {m}")));
    }
    let overflow = || Error::Range(format!("a_m sum overflows for m = {m}"));
    let mut sum: i128 = 0;
    for k in 0..=(m / 2) {
        let base = (m - 2 * k) as i128;
        let power = base.checked_pow(m - 3).ok_or_else(overflow)?;
        let term = binomial(m, k).checked_mul(power).ok_or_else(overflow)?;
        sum = if k % 2 == 0 { sum.checked_sub(term) } else { sum.checked_add(term) }
            .ok_or_else(overflow)?;
    }
    let factorial: f64 = (1..=(m - 3)).map(|i| i as f64).product();
    Ok(PI.sqrt() * sum as f64 / (2f64.powi(m as i32 + 1) * factorial))
}

/// `<S_ij S_il>` for distinct `i, j, l`: `e^{-2M} sinh(M) / M`.
pub fn correlated_entry_moment(modes: f64) -> Result<f64> {
    if !(modes.is_finite() && modes > 0.0) {
        return Err(Error::invalid(format!("M must be positive, got {modes}")));
    }
    // e^{-2M} sinh(M) = (e^{-M} - e^{-3M}) / 2 = -e^{-M} expm1(-2M) / 2
    Ok(-(-modes).exp() * (-2.0 * modes).exp_m1() / (2.0 * modes))
}

/// Which product of entries a Monte Carlo estimate samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EntryProduct {
    /// `S_ij^m`
    Single { m: u32 },
    /// `S_ij S_il`
    SharedVertex,
    /// `S_ij S_jk S_kl S_li` with all four indices distinct.
    FourCycle,
}

impl EntryProduct {
    fn points_needed(self) -> usize {
        match self {
            EntryProduct::Single { .. } => 2,
            EntryProduct::SharedVertex => 3,
            EntryProduct::FourCycle => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

const BATCH: u64 = 1 << 16;

#[derive(Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

/// Sample mean and standard error of an entry product over fresh Gaussian
/// points. Batches of 65536 samples each draw from their own derived seed and
/// are merged in batch order, so the result does not depend on thread count.
pub fn monte_carlo_entry_moment(
    product: EntryProduct,
    modes: f64,
    samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::invalid(format!("need at least 1000 samples, got {samples}")));
    }
    if !(modes.is_finite() && modes > 0.0) {
        return Err(Error::invalid(format!("M must be positive, got {modes}")));
    }
    if let EntryProduct::Single { m } = product {
        if m == 0 {
            return Err(Error::invalid("entry power must be at least 1"));
        }
    }
    let k = modes.sqrt();
    let batches = samples.div_ceil(BATCH);
    let stats = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, b));
            let count = BATCH.min(samples - b * BATCH);
            let mut acc = Welford::default();
            let mut pts = [[0.0; 3]; 4];
            for _ in 0..count {
                for p in pts.iter_mut().take(product.points_needed()) {
                    *p = gaussian_point(&mut rng);
                }
                let s = |a: usize, b: usize| sinc(k * distance(&pts[a], &pts[b]));
                let value = match product {
                    EntryProduct::Single { m } => s(0, 1).powi(m as i32),
                    EntryProduct::SharedVertex => s(0, 1) * s(0, 2),
                    EntryProduct::FourCycle => s(0, 1) * s(1, 2) * s(2, 3) * s(3, 0),
                };
                acc.push(value);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Welford::default(), Welford::merge);
    let var = stats.m2 / (stats.n - 1) as f64;
    Ok(McEstimate {
        mean: stats.mean,
        stderr: (var / stats.n as f64).sqrt(),
        samples: stats.n,
    })
}
