//! Gaussian atomic clouds and the analytic densities of interatomic distances.
//!
//! Positions are stored in units of the cloud width σ, so every coordinate
//! is an independent standard normal variate. Realizations are generated by
//! a ChaCha8 stream keyed by a 64-bit seed, which makes each cloud a pure
//! function of `(n_atoms, seed)` regardless of which thread builds it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Seeded random generator used for every sampled quantity in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a standard Gaussian point in three dimensions.
pub fn gaussian_point<R: Rng + ?Sized>(rng: &mut R) -> Point {
    [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]
}

#[inline]
pub fn distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSample {
    points: Vec<Point>,
    seed: u64,
}

impl CloudSample {
    /// Wraps explicit positions. The seed is kept only as provenance.
    pub fn from_points(points: Vec<Point>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a cloud needs at least one atom"));
        }
        Ok(Self { points, seed })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn n_atoms(&self) -> usize {
        self.points.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Samples `n_atoms` i.i.d. standard Gaussian positions.
pub fn sample_cloud(n_atoms: usize, seed: u64) -> Result<CloudSample> {
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..n_atoms).map(|_| gaussian_point(&mut rng)).collect();
    Ok(CloudSample { points, seed })
}

/// All interatomic distances in `(i, j)`, `i < j` lexicographic order.
pub fn pairwise_distances(cloud: &CloudSample) -> Vec<f64> {
    let pts = cloud.points();
    let n = pts.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(distance(&pts[i], &pts[j]));
        }
    }
    out
}

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!("{name} must be nonnegative, got {x}")));
    }
    Ok(())
}

/// Density of the distance between two independent standard Gaussian points:
/// `r² exp(-r²/4) / sqrt(4π)`.
pub fn pdf_pair_distance(r: f64) -> Result<f64> {
    check_nonneg("r", r)?;
    Ok(r * r * (-r * r / 4.0).exp() / (4.0 * PI).sqrt())
}

/// Joint density of the two distances `|x_i - x_j|`, `|x_i - x_l|` sharing
/// the vertex `x_i`.
pub fn pdf_shared_vertex(r: f64, r2: f64) -> Result<f64> {
    check_nonneg("r", r)?;
    check_nonneg("r2", r2)?;
    // exp(-(r²+r2²)/3) sinh(r r2/3), folded to avoid overflow of sinh.
    let base = r * r + r2 * r2;
    let cross = r * r2;
    let sinh_part = 0.5 * ((-(base - cross) / 3.0).exp() - (-(base + cross) / 3.0).exp());
    Ok(2.0 / (3f64.sqrt() * PI) * r * r2 * sinh_part)
}

/// Joint density of `|X_0|` and the `k` lengths `|X_i - X_0|` for
/// independent standard Gaussian vectors `X_0, ..., X_k`.
///
/// The `x0^(2-k)` prefactor is combined with the `sinh(x0 r_i)` factors so the
/// density stays finite at `x0 = 0`, where it vanishes for every `k`.
pub fn joint_length_density(x0: f64, lengths: &[f64]) -> Result<f64> {
    if lengths.is_empty() {
        return Err(Error::invalid("joint_length_density needs at least one length"));
    }
    check_nonneg("x0", x0)?;
    for &r in lengths {
        check_nonneg("length", r)?;
    }
    let k = lengths.len() as f64;
    let mut value = (2.0 / PI).powf((k + 1.0) / 2.0) * x0 * x0 * (-x0 * x0 / 2.0).exp();
    for &r in lengths {
        // r e^{-(x0²+r²)/2} sinh(x0 r) / x0
        let z = x0 * r;
        let factor = if z < 1e-4 {
            r * r * (-(x0 * x0 + r * r) / 2.0).exp() * (1.0 + z * z / 6.0)
        } else {
            r * 0.5 * ((-(x0 - r) * (x0 - r) / 2.0).exp() - (-(x0 + r) * (x0 + r) / 2.0).exp()) / x0
        };
        value *= factor;
    }
    Ok(value)
}
