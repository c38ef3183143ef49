//! The two-parameter spacing family `p(s) = a s^q exp(-b s^r)`, with `a` and
//! `b` fixed by unit normalization and unit mean, and its fitting.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_lr, gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::spectrum::{BinningPolicy, Histogram};
use crate::stats::ks_statistic;

pub const MIN_FIT_SPACINGS: usize = 300;
const Q_FLOOR: f64 = -1.0 + 1e-3;
const R_FLOOR: f64 = 1e-3;
const PARAM_CEILING: f64 = 50.0;
const STARTS: [(f64, f64); 3] = [(0.0, 1.0), (1.0, 2.0), (1.0, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurmiseParams {
    pub q: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
}

impl SurmiseParams {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q > -1.0) || !(r > 0.0) || !q.is_finite() || !r.is_finite() {
            return Err(Error::invalid(format!("surmise needs q > -1 and r > 0, got ({q}, {r})")));
        }
        let g1 = ln_gamma((q + 1.0) / r);
        let g2 = ln_gamma((q + 2.0) / r);
        let a = r * ((q + 1.0) * g2 - (q + 2.0) * g1).exp();
        let b = (r * (g2 - g1)).exp();
        if !a.is_finite() || !b.is_finite() || a <= 0.0 || b <= 0.0 {
            return Err(Error::Range(format!("normalization constants overflow at ({q}, {r})")));
        }
        Ok(Self { q, r, a, b })
    }

    pub fn pdf(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        if s == 0.0 {
            return match self.q {
                q if q > 0.0 => 0.0,
                q if q == 0.0 => self.a,
                _ => f64::INFINITY,
            };
        }
        self.ln_pdf(s).exp()
    }

    pub fn ln_pdf(&self, s: f64) -> f64 {
        self.a.ln() + self.q * s.ln() - self.b * s.powf(self.r)
    }

    /// `P((q+1)/r, b s^r)`, the regularized lower incomplete gamma function.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        checked_gamma_lr((self.q + 1.0) / self.r, self.b * s.powf(self.r)).unwrap_or(f64::NAN)
    }

    /// Exact draws: if `g ~ Gamma((q+1)/r, 1)` then `(g/b)^{1/r}` has this density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let g = Gamma::new((self.q + 1.0) / self.r, 1.0).expect("shape is positive");
        (0..n).map(|_| (g.sample(rng) / self.b).powf(1.0 / self.r)).collect()
    }
}

pub fn surmise_pdf(q: f64, r: f64, s: f64) -> Result<f64> {
    if s < 0.0 || !s.is_finite() {
        return Err(Error::invalid(format!("spacing must be a nonnegative real, got {s}")));
    }
    Ok(SurmiseParams::new(q, r)?.pdf(s))
}

/// One-parameter Brody density, written out directly:
/// `(β+1) c s^β exp(-c s^{β+1})` with `c = Γ((β+2)/(β+1))^{β+1}`.
pub fn brody_pdf(beta: f64, s: f64) -> f64 {
    let c = gamma((beta + 2.0) / (beta + 1.0)).powf(beta + 1.0);
    (beta + 1.0) * c * s.powf(beta) * (-c * s.powf(beta + 1.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitObjective {
    /// Squared error between bin-averaged model and histogram densities.
    #[default]
    LeastSquares,
    MaximumLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub objective: FitObjective,
    pub binning: BinningPolicy,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { objective: FitObjective::LeastSquares, binning: BinningPolicy::default(), max_iters: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurmiseFit {
    pub params: SurmiseParams,
    /// Covariance of `(q, r)`.
    pub covariance: [[f64; 2]; 2],
    pub q_err: f64,
    pub r_err: f64,
    /// Kolmogorov–Smirnov distance between the spacings and the fitted law.
    pub goodness: f64,
    pub objective_value: f64,
    pub objective: FitObjective,
    pub n_spacings: usize,
}

impl SurmiseFit {
    pub fn q(&self) -> f64 {
        self.params.q
    }

    pub fn r(&self) -> f64 {
        self.params.r
    }
}

enum Target {
    Binned { lefts: Vec<f64>, rights: Vec<f64>, densities: Vec<f64> },
    Sample(Vec<f64>),
}

impl Target {
    fn residuals(&self, p: &SurmiseParams) -> Vec<f64> {
        match self {
            Target::Binned { lefts, rights, densities } => lefts
                .iter()
                .zip(rights)
                .zip(densities)
                .map(|((&l, &r), &d)| (p.cdf(r) - p.cdf(l)) / (r - l) - d)
                .collect(),
            Target::Sample(_) => unreachable!("likelihood target has no residuals"),
        }
    }

    fn value(&self, q: f64, r: f64) -> f64 {
        if !(q > Q_FLOOR && r > R_FLOOR && q < PARAM_CEILING && r < PARAM_CEILING) {
            return f64::MAX;
        }
        let Ok(p) = SurmiseParams::new(q, r) else {
            return f64::MAX;
        };
        let v = match self {
            Target::Binned { .. } => self.residuals(&p).iter().map(|e| e * e).sum(),
            Target::Sample(s) => -s.iter().map(|&x| p.ln_pdf(x.max(f64::MIN_POSITIVE))).sum::<f64>(),
        };
        if v.is_finite() { v } else { f64::MAX }
    }
}

impl CostFunction for &Target {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p[0], p[1]))
    }
}

/// Fits `(q, r)` by a multi-start simplex search.
pub fn fit_surmise(spacings: &[f64], options: &FitOptions) -> Result<SurmiseFit> {
    if spacings.len() < MIN_FIT_SPACINGS {
        return Err(Error::invalid(format!(
            "{} spacings given; a fit needs at least {MIN_FIT_SPACINGS}",
            spacings.len()
        )));
    }
    if spacings.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Data("spacings must be finite and nonnegative".into()));
    }
    let target = match options.objective {
        FitObjective::LeastSquares => {
            let h = Histogram::from_samples(spacings, &options.binning)?;
            let n = h.n_bins();
            Target::Binned {
                lefts: h.bin_edges[..n].to_vec(),
                rights: h.bin_edges[1..].to_vec(),
                densities: h.densities.clone(),
            }
        }
        FitObjective::MaximumLikelihood => Target::Sample(spacings.to_vec()),
    };

    let mut best: Option<(f64, [f64; 2])> = None;
    let mut diagnostics = Vec::new();
    for (k, &(q0, r0)) in STARTS.iter().enumerate() {
        let simplex = vec![vec![q0, r0], vec![q0 + 0.1, r0], vec![q0, r0 + 0.1]];
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-14)
            .map_err(|e| Error::fit(e.to_string()))?;
        let run = Executor::new(&target, solver)
            .configure(|s| s.max_iters(options.max_iters))
            .run()
            .map_err(|e| Error::fit(e.to_string()))?;
        let state = run.state();
        let cost = state.get_best_cost();
        let converged = matches!(
            state.get_termination_status(),
            TerminationStatus::Terminated(TerminationReason::SolverConverged)
        );
        diagnostics.push((format!("start{k}_cost"), cost));
        diagnostics.push((format!("start{k}_converged"), f64::from(u8::from(converged))));
        if let (true, Some(p)) = (converged && cost < f64::MAX, state.get_best_param()) {
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, [p[0], p[1]]));
            }
        }
    }
    let Some((cost, [q, r])) = best else {
        return Err(Error::Fit { reason: "simplex search did not converge from any start".into(), diagnostics });
    };
    let params = SurmiseParams::new(q, r)?;
    let covariance = covariance(&target, &params);
    Ok(SurmiseFit {
        params,
        covariance,
        q_err: covariance[0][0].sqrt(),
        r_err: covariance[1][1].sqrt(),
        goodness: ks_statistic(spacings, |s| params.cdf(s)),
        objective_value: cost,
        objective: options.objective,
        n_spacings: spacings.len(),
    })
}

fn covariance(target: &Target, p: &SurmiseParams) -> [[f64; 2]; 2] {
    let nan = [[f64::NAN; 2]; 2];
    let (q, r) = (p.q, p.r);
    let h = 1e-5;
    let m = match target {
        Target::Binned { .. } => {
            // Gauss–Newton: sigma² (JᵀJ)⁻¹ with a central-difference Jacobian.
            let at = |dq: f64, dr: f64| match SurmiseParams::new(q + dq, r + dr) {
                Ok(pp) => target.residuals(&pp),
                Err(_) => Vec::new(),
            };
            let (qp, qm, rp, rm) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
            if [&qp, &qm, &rp, &rm].iter().any(|v| v.is_empty()) {
                return nan;
            }
            let jq: Vec<f64> = qp.iter().zip(&qm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let jr: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let res = target.residuals(p);
            let dof = res.len().saturating_sub(2).max(1) as f64;
            let s2 = res.iter().map(|e| e * e).sum::<f64>() / dof;
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            let jtj = [[dot(&jq, &jq), dot(&jq, &jr)], [dot(&jr, &jq), dot(&jr, &jr)]];
            return scale(invert(jtj), s2);
        }
        Target::Sample(_) => {
            // Observed information: Hessian of the negative log-likelihood.
            let f = |dq: f64, dr: f64| target.value(q + dq, r + dr);
            let k = 1e-4;
            let f0 = f(0.0, 0.0);
            let hqq = (f(k, 0.0) - 2.0 * f0 + f(-k, 0.0)) / (k * k);
            let hrr = (f(0.0, k) - 2.0 * f0 + f(0.0, -k)) / (k * k);
            let hqr = (f(k, k) - f(k, -k) - f(-k, k) + f(-k, -k)) / (4.0 * k * k);
            [[hqq, hqr], [hqr, hrr]]
        }
    };
    invert(m)
}

fn invert(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return [[f64::NAN; 2]; 2];
    }
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn scale(m: [[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::rng_from_seed;
    use crate::quadrature::integrate;
    use std::f64::consts::PI;

    #[test]
    fn poisson_and_wigner_members() {
        for s in [0.0, 0.3, 1.0, 2.5, 7.0] {
            assert!((surmise_pdf(0.0, 1.0, s).unwrap() - (-s).exp()).abs() < 1e-13);
            let wd = PI * s / 2.0 * (-PI * s * s / 4.0).exp();
            assert!((surmise_pdf(1.0, 2.0, s).unwrap() - wd).abs() < 1e-13);
        }
    }

    #[test]
    fn normalization_and_unit_mean() {
        for (q, r) in [(0.0, 1.0), (1.0, 2.0), (1.0, 1.0), (0.5, 1.5), (2.0, 3.0), (0.2, 0.8)] {
            let p = SurmiseParams::new(q, r).unwrap();
            let mass = integrate(|s| p.pdf(s), 1e-12, 50.0, 1e-12);
            let mean = integrate(|s| s * p.pdf(s), 1e-12, 50.0, 1e-12);
            assert!((mass - 1.0).abs() < 1e-8, "({q},{r}) mass {mass}");
            assert!((mean - 1.0).abs() < 1e-8, "({q},{r}) mean {mean}");
        }
    }

    #[test]
    fn constants_match_gamma_ratios() {
        for (q, r) in [(0.3, 1.7), (1.0, 2.0), (4.0, 2.5)] {
            let p = SurmiseParams::new(q, r).unwrap();
            let (g1, g2) = (gamma((q + 1.0) / r), gamma((q + 2.0) / r));
            assert!((p.a / (r * g2.powf(q + 1.0) / g1.powf(q + 2.0)) - 1.0).abs() < 1e-10);
            assert!((p.b / (g2 / g1).powf(r) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn brody_special_case() {
        for beta in [0.0, 0.3, 0.7, 1.0] {
            let p = SurmiseParams::new(beta, beta + 1.0).unwrap();
            for k in 0..60 {
                let s = 0.05 + 0.1 * k as f64;
                assert!((p.pdf(s) - brody_pdf(beta, s)).abs() < 1e-12, "beta {beta} s {s}");
            }
        }
    }

    #[test]
    fn semi_poisson_special_case() {
        let p = SurmiseParams::new(1.0, 1.0).unwrap();
        for k in 0..50 {
            let s = 0.1 * k as f64;
            assert!((p.pdf(s) - 4.0 * s * (-2.0 * s).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_matches_quadrature() {
        let p = SurmiseParams::new(0.5, 1.5).unwrap();
        for s in [0.2, 1.0, 2.3] {
            let q = integrate(|t| p.pdf(t), 1e-14, s, 1e-12);
            assert!((p.cdf(s) - q).abs() < 1e-8);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(surmise_pdf(-1.0, 1.0, 1.0).is_err());
        assert!(surmise_pdf(0.0, 0.0, 1.0).is_err());
        assert!(surmise_pdf(0.0, 1.0, -0.5).is_err());
        assert!(fit_surmise(&[1.0; 100], &FitOptions::default()).is_err());
    }

    fn recover(q: f64, r: f64, objective: FitObjective, seed: u64) -> SurmiseFit {
        let p = SurmiseParams::new(q, r).unwrap();
        let draws = p.sample(&mut rng_from_seed(seed), 100_000);
        fit_surmise(&draws, &FitOptions { objective, ..FitOptions::default() }).unwrap()
    }

    #[test]
    fn closure_under_fitting() {
        for (q, r) in [(0.0, 1.0), (1.0, 2.0), (1.0, 1.0), (0.5, 1.5)] {
            let fit = recover(q, r, FitObjective::LeastSquares, 3);
            assert!((fit.q() - q).abs() < 0.05 && (fit.r() - r).abs() < 0.1, "({q},{r}) -> {fit:?}");
            assert!(fit.goodness < 0.01);
            assert!(fit.q_err > 0.0 && fit.q_err < 0.05);
        }
    }

    #[test]
    fn maximum_likelihood_option() {
        let fit = recover(1.0, 2.0, FitObjective::MaximumLikelihood, 8);
        assert!((fit.q() - 1.0).abs() < 0.05 && (fit.r() - 2.0).abs() < 0.1, "{fit:?}");
        assert!(fit.r_err > 0.0 && fit.r_err < 0.05);
    }
}
