//! Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion.
//! Failures are reported but only fail the process when
//! `ERM_ACCEPTANCE_STRICT=1`, so `cargo test --workspace` stays usable while
//! known-red criteria are on record.
//!
//! Runs single-threaded-friendly ensembles; expect on the order of ten
//! minutes on one core.

use std::f64::consts::PI;
use std::time::Instant;

use erm_core::cloud::sample_cloud;
use erm_core::eigvec::{
    bulk_pr_fraction, eigenvector_moment, moment_scaling, participation_ratio, porter_thomas_test, pr_maxima,
    pr_profile, window_indices, window_vectors, VectorWindow,
};
use erm_core::matrix::{build_decay_matrix, sinc, DecayMatrix, SymmetricMatrix};
use erm_core::moments::{
    entry_moment_asymptotic_coefficient, entry_moment_exact, monte_carlo_entry_moment, EntryProduct,
};
use erm_core::nnsd::{default_cutoffs, ensemble_window_spacings, small_spacing_exponent, WindowSelector};
use erm_core::quadrature::integrate;
use erm_core::seed::{derive_seed, realization_seeds};
use erm_core::spectrum::{
    decay_rate, eigendecompose, eigenvalue_histogram, ensemble_moment, fit_triangular, q_fourth_moment,
    spectral_moment, BinningPolicy, SpectrumResult,
};
use erm_core::surmise::{fit_surmise, FitObjective, FitOptions, SurmiseParams};
use erm_core::unfold::UnfoldingMethod;
use num_complex::Complex64;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn spectra(n: usize, b0: f64, realizations: usize, master: u64, vectors: bool) -> Vec<SpectrumResult> {
    realization_seeds(master, realizations)
        .into_iter()
        .map(|seed| {
            let s = build_decay_matrix(&sample_cloud(n, seed).unwrap(), b0).unwrap();
            eigendecompose(&s, vectors).unwrap()
        })
        .collect()
}

fn trace_and_positivity() -> Verdict {
    let b0s = [0.1, 1.0, 3.0, 10.0];
    let n = 500;
    let mut worst_trace = 0.0f64;
    let mut worst_min = f64::INFINITY;
    let mut count = 0;
    let mut ok = true;
    for r in 0..50 {
        let b0 = b0s[r % b0s.len()];
        let spec = &spectra(n, b0, 1, derive_seed(1, r as u64), false)[0];
        let sum: f64 = spec.eigenvalues().iter().sum();
        worst_trace = worst_trace.max((sum - n as f64).abs() / n as f64);
        worst_min = worst_min.min(spec.eigenvalues()[0] / n as f64);
        ok &= (sum - n as f64).abs() <= 1e-8 * n as f64 && spec.eigenvalues()[0] >= -1e-10 * n as f64;
        count += 1;
    }
    verdict(ok, format!("{count} realizations, max |Σλ-N|/N = {worst_trace:.2e}, min λ/N = {worst_min:.2e}"))
}

fn second_moment_law() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, b0) in [0.1, 1.0].into_iter().enumerate() {
        let specs = spectra(2000, b0, 20, 200 + k as u64, false);
        let m2 = ensemble_moment(&specs, 2).unwrap();
        let target = 1.0 + b0 / 4.0;
        let z = (m2.mean - target) / m2.stderr;
        ok &= z.abs() <= 3.0;
        parts.push(format!("b0={b0}: {:.5}±{:.5} vs {target:.5} (z={z:+.2})", m2.mean, m2.stderr));
    }
    verdict(ok, parts.join("; "))
}

/// Fitted triangle half-width for each `b0`, plus the `b0 = 0.005` ensemble
/// that the fourth-moment criterion reuses.
struct TriangleRuns {
    a_main: (f64, f64),
    points: Vec<(f64, f64)>,
    main: Vec<SpectrumResult>,
}

fn triangle_runs() -> TriangleRuns {
    let n = 4000;
    let mut points = Vec::new();
    let mut main = Vec::new();
    let mut a_main = (f64::NAN, f64::NAN);
    for (k, (b0, reps)) in [(0.002, 5), (0.005, 20), (0.01, 5), (0.02, 5)].into_iter().enumerate() {
        let specs = spectra(n, b0, reps, 300 + k as u64, false);
        let hist = eigenvalue_histogram(&specs, &BinningPolicy::default()).unwrap();
        let fit = fit_triangular(&hist).unwrap();
        points.push((b0, fit.a));
        if b0 == 0.005 {
            a_main = (fit.a, fit.a_stderr);
            main = specs;
        }
    }
    TriangleRuns { a_main, points, main }
}

fn triangular_fit(runs: &TriangleRuns) -> Verdict {
    let predicted = (1.5f64 * 0.005).sqrt();
    let (a, da) = runs.a_main;
    let rel = (a / predicted - 1.0).abs();
    // a ∝ √b0: least-squares slope through the origin.
    let num: f64 = runs.points.iter().map(|(b, a)| a * b.sqrt()).sum();
    let den: f64 = runs.points.iter().map(|(b, _)| b).sum();
    let slope = num / den;
    let ok = rel <= 0.15 && (1.15..=1.29).contains(&slope);
    let pts: Vec<String> = runs.points.iter().map(|(b, a)| format!("{b}:{a:.4}")).collect();
    verdict(
        ok,
        format!(
            "a(0.005) = {a:.4}±{da:.4} vs {predicted:.4} ({:.1}% off); slope = {slope:.4}; a by b0 [{}]",
            100.0 * rel,
            pts.join(", ")
        ),
    )
}

fn fourth_moment(runs: &TriangleRuns) -> Verdict {
    let centered: Vec<SpectrumResult> = runs.main.iter().map(|s| s.to_centered().unwrap()).collect();
    let m4 = q_fourth_moment(&centered).unwrap();
    let target = PI / (27.0 * 3f64.sqrt());
    let gaussian = 1.0 / 15.0;
    let rel = (m4.mean / target - 1.0).abs();
    let above = m4.mean - 2.0 * m4.stderr > gaussian;

    // Diagnostics only. The pair term (4/(9 b0² N)) N(N-1)<S_ij^4> is what
    // separates finite N from the limit; its mean comes from rare close pairs.
    let (n, b0) = (runs.main[0].n as f64, runs.main[0].b0);
    let modes = n / b0;
    let pair = 4.0 / (9.0 * b0 * b0) * (n - 1.0) * entry_moment_asymptotic_coefficient(4).unwrap() / modes.powf(1.5);
    let mut per: Vec<f64> = centered.iter().map(|s| spectral_moment(s, 4)).collect();
    per.sort_by(f64::total_cmp);
    let median = 0.5 * (per[per.len() / 2 - 1] + per[per.len() / 2]);
    verdict(
        rel <= 0.05 && above,
        format!(
            "(1/N)<Tr Q^4> = {:.5}±{:.5} over {} realizations; π/(27√3) = {target:.5} ({:.1}% off); 1/15 = {gaussian:.5}, 2σ above: {above}; \
             diagnostics: median {median:.5}, max {:.4}, expected pair term {pair:.4}",
            m4.mean,
            m4.stderr,
            m4.count,
            100.0 * rel,
            per[per.len() - 1],
        ),
    )
}

fn bulk_nnsd() -> Verdict {
    let specs = spectra(4000, 1.0, 20, 500, false);
    let pooled = ensemble_window_spacings(
        &specs,
        &WindowSelector::AroundValue { center: 1.0, len: 1000 },
        UnfoldingMethod::default(),
    )
    .unwrap();
    let fit = fit_surmise(&pooled.spacings, &FitOptions::default());
    let exp = small_spacing_exponent(&pooled.spacings, &default_cutoffs()).unwrap();
    let ml = fit_surmise(
        &pooled.spacings,
        &FitOptions { objective: FitObjective::MaximumLikelihood, ..FitOptions::default() },
    )
    .map(|f| format!("q = {:.3}±{:.3}, r = {:.3}±{:.3}", f.q(), f.q_err, f.r(), f.r_err))
    .unwrap_or_else(|e| format!("failed: {e}"));
    match fit {
        Ok(f) => {
            let ok = (0.85..=1.15).contains(&f.q())
                && (1.8..=2.2).contains(&f.r())
                && (exp.q - 1.0).abs() <= 0.15;
            verdict(
                ok,
                format!(
                    "{} spacings in λ∈[{:.3},{:.3}]: q = {:.3}±{:.3}, r = {:.3}±{:.3}, KS = {:.4}; small-s exponent q = {:.3}±{:.3}; maximum-likelihood fit (not graded): {ml}",
                    pooled.spacings.len(),
                    pooled.window.0,
                    pooled.window.1,
                    f.q(),
                    f.q_err,
                    f.r(),
                    f.r_err,
                    f.goodness,
                    exp.q,
                    exp.stderr
                ),
            )
        }
        Err(e) => verdict(false, format!("fit failed: {e}")),
    }
}

fn synthetic_recovery() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (q, r)) in [(0.0, 1.0), (1.0, 2.0)].into_iter().enumerate() {
        let p = SurmiseParams::new(q, r).unwrap();
        let draws = p.sample(&mut erm_core::cloud::rng_from_seed(600 + k as u64), 100_000);
        let f = fit_surmise(&draws, &FitOptions::default()).unwrap();
        ok &= (f.q() - q).abs() <= 0.05 && (f.r() - r).abs() <= 0.1;
        parts.push(format!("({q},{r}) -> ({:.4}, {:.4})", f.q(), f.r()));
    }
    verdict(ok, parts.join("; "))
}

struct SizeRun {
    n: usize,
    m2: f64,
    m3: f64,
    m4: f64,
    m5: f64,
    anchor: f64,
    bulk: Vec<f64>,
    min_pr: Vec<f64>,
    ks: Vec<f64>,
}

fn eigenvector_suite() -> Verdict {
    let sizes = [500, 1000, 2000, 4000];
    let reps = 4;
    let mut runs = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        let mut run = SizeRun { n, m2: 0.0, m3: 0.0, m4: 0.0, m5: 0.0, anchor: 0.0, bulk: vec![], min_pr: vec![], ks: vec![] };
        for seed in realization_seeds(700 + k as u64, reps) {
            let spec = &spectra(n, 1.0, 1, seed, true)[0];
            let profile = pr_profile(spec).unwrap();
            let maxima = pr_maxima(&profile).unwrap();
            let sup = window_indices(spec, VectorWindow::Around(maxima.superradiant.1), 100).unwrap();
            let sub = window_indices(spec, VectorWindow::Around(maxima.subradiant.1), 100).unwrap();
            let sup_v = window_vectors(spec, &sup).unwrap();
            run.m2 += eigenvector_moment(&sup_v, 2).unwrap() / reps as f64;
            run.m3 += eigenvector_moment(&sup_v, 3).unwrap() / reps as f64;
            run.m4 += eigenvector_moment(&sup_v, 4).unwrap() / reps as f64;
            run.m5 += eigenvector_moment(&sup_v, 5).unwrap() / reps as f64;
            run.anchor += maxima.superradiant.1 / reps as f64;
            run.bulk.push(bulk_pr_fraction(spec).unwrap());
            run.min_pr.push(participation_ratio(spec.vector(0).unwrap()).unwrap());
            run.ks.push(porter_thomas_test(&sup_v).unwrap().ks);
            run.ks.push(porter_thomas_test(&window_vectors(spec, &sub).unwrap()).unwrap().ks);
        }
        runs.push(run);
    }
    let largest = runs.last().unwrap();
    let bulk = largest.bulk.iter().sum::<f64>() / largest.bulk.len() as f64;
    let mut min_pr = largest.min_pr.clone();
    min_pr.sort_by(f64::total_cmp);
    let min_pr_median = 0.5 * (min_pr[reps / 2 - 1] + min_pr[reps / 2]);
    let tau2 = moment_scaling(2, &sizes, &runs.iter().map(|r| r.m2).collect::<Vec<_>>()).unwrap();
    let tau3 = moment_scaling(3, &sizes, &runs.iter().map(|r| r.m3).collect::<Vec<_>>()).unwrap();
    let tau4 = moment_scaling(4, &sizes, &runs.iter().map(|r| r.m4).collect::<Vec<_>>()).unwrap();
    let tau5 = moment_scaling(5, &sizes, &runs.iter().map(|r| r.m5).collect::<Vec<_>>()).unwrap();

    // Porter–Thomas at both PR maxima for the other b0 <= 3.
    let mut ks_all: Vec<(f64, f64)> = largest.ks.iter().map(|&k| (1.0, k)).collect();
    for (k, b0) in [0.1, 3.0].into_iter().enumerate() {
        let spec = &spectra(2000, b0, 1, 790 + k as u64, true)[0];
        let m = pr_maxima(&pr_profile(spec).unwrap()).unwrap();
        for anchor in [m.subradiant.1, m.superradiant.1] {
            let idx = window_indices(spec, VectorWindow::Around(anchor), 100).unwrap();
            ks_all.push((b0, porter_thomas_test(&window_vectors(spec, &idx).unwrap()).unwrap().ks));
        }
    }
    let ks_max = ks_all.iter().map(|p| p.1).fold(0.0, f64::max);

    let checks = [
        ((bulk * 3.0 - 1.0).abs() <= 0.1, format!("bulk Π/N(N=4000) = {bulk:.4}")),
        ((1.8..=2.5).contains(&min_pr_median), format!("median lowest-mode Π = {min_pr_median:.3} {min_pr:.3?}")),
        ((tau2.tau - 1.0).abs() <= 0.05, format!("τ(2) = {:.4}±{:.4}", tau2.tau, tau2.tau_stderr)),
        ((tau5.tau - 3.81).abs() <= 0.15, format!("τ(5) = {:.4}±{:.4}", tau5.tau, tau5.tau_stderr)),
        (ks_max < 0.05, format!("max PT KS at PR maxima (b0 ≤ 3) = {ks_max:.4}")),
    ];
    let ok = checks.iter().all(|c| c.0);
    let detail = checks
        .iter()
        .map(|(pass, text)| format!("{text} [{}]", if *pass { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    let scale: Vec<String> =
        runs.iter().map(|r| format!("N={}: N·M2={:.3}, anchor λ={:.3}", r.n, r.n as f64 * r.m2, r.anchor)).collect();
    verdict(
        ok,
        format!(
            "{detail}; τ(3) = {:.3}±{:.3}, τ(4) = {:.3}±{:.3}; {}",
            tau3.tau,
            tau3.tau_stderr,
            tau4.tau,
            tau4.tau_stderr,
            scale.join(", ")
        ),
    )
}

fn entry_moment_oracles() -> Verdict {
    let mut ok = true;
    let mut worst_z = 0.0f64;
    for (i, modes) in [0.5, 5.0, 50.0].into_iter().enumerate() {
        for m in 1..=3u32 {
            let seed = derive_seed(800 + i as u64, m as u64);
            let mc = monte_carlo_entry_moment(EntryProduct::Single { m }, modes, 1_000_000, seed).unwrap();
            let z = (mc.mean - entry_moment_exact(m, modes).unwrap()) / mc.stderr;
            worst_z = worst_z.max(z.abs());
            ok &= z.abs() <= 3.0;
        }
    }
    // a_m as the large-M limit of M^{3/2} <S^m>: (1/√(4π)) ∫ r² sinc(r)^m dr,
    // integrated period by period on [0, L] plus the non-oscillating tail,
    // which is (3/8)/L for m = 4 and zero for m = 5.
    let mut worst_a = 0.0f64;
    for m in [4u32, 5] {
        let periods = 2000;
        let l = periods as f64 * PI;
        let body: f64 = (0..periods)
            .map(|p| {
                let a = p as f64 * PI;
                integrate(|r| r * r * sinc(r).powi(m as i32), a, a + PI, 1e-14)
            })
            .sum();
        let tail = if m == 4 { 3.0 / (8.0 * l) } else { 0.0 };
        let quad = (body + tail) / (4.0 * PI).sqrt();
        let a = entry_moment_asymptotic_coefficient(m).unwrap();
        worst_a = worst_a.max((a - quad).abs());
        ok &= (a - quad).abs() <= 1e-6;
    }
    verdict(ok, format!("max |z| over m=1..3, M∈{{0.5,5,50}} = {worst_z:.2}; max |a_m - quadrature| (m=4,5) = {worst_a:.1e}"))
}

fn limits() -> Verdict {
    let n = 12;
    let cloud = sample_cloud(n, 900).unwrap();
    let dicke = build_decay_matrix(&cloud, 1e14).unwrap();
    let ev = eigendecompose(&dicke, false).unwrap();
    let e = ev.eigenvalues();
    let zeros = e[..n - 1].iter().map(|x| x.abs()).fold(0.0, f64::max);
    let top = (e[n - 1] - n as f64).abs();
    let sym = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let rate = (decay_rate(&sym, &dicke).unwrap() - n as f64).abs();

    let indep = build_decay_matrix(&cloud, 1e-14).unwrap();
    let ones = eigendecompose(&indep, false).unwrap();
    let id_err = ones.eigenvalues().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    let rate_err = (0..n)
        .map(|j| {
            let mut b = vec![Complex64::new(0.0, 0.0); n];
            b[j] = Complex64::new(0.0, 1.0);
            (decay_rate(&b, &indep).unwrap() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let off = offdiag_max(&indep);
    let ok = zeros <= 1e-6 && top <= 1e-6 && rate <= 1e-6 && id_err <= 1e-6 && rate_err <= 1e-6;
    verdict(
        ok,
        format!(
            "Dicke: max|λ_<N| = {zeros:.1e}, |λ_max-N| = {top:.1e}, |rate_sym-N| = {rate:.1e}; independent: max|λ-1| = {id_err:.1e}, max|rate-1| = {rate_err:.1e} (max |S_ij| = {off:.1e})"
        ),
    )
}

fn offdiag_max(s: &DecayMatrix) -> f64 {
    let n = s.dim();
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| s.get(i, j).abs()).fold(0.0, f64::max)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // Tolerate libtest flags passed through by `cargo test`.
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, v: Verdict, t: Instant| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("{tag} criterion {id} {name} ({:.0}s): {}", t.elapsed().as_secs_f64(), v.detail);
    };

    let t = Instant::now();
    report(1, "trace/positivity", trace_and_positivity(), t);
    let t = Instant::now();
    report(2, "second-moment law", second_moment_law(), t);
    let t = Instant::now();
    let tri = triangle_runs();
    report(3, "triangular fit", triangular_fit(&tri), t);
    let t = Instant::now();
    report(4, "Q fourth moment", fourth_moment(&tri), t);
    drop(tri);
    let t = Instant::now();
    report(5, "bulk NNSD", bulk_nnsd(), t);
    let t = Instant::now();
    report(6, "synthetic surmise recovery", synthetic_recovery(), t);
    let t = Instant::now();
    report(7, "eigenvector suite", eigenvector_suite(), t);
    let t = Instant::now();
    report(8, "entry-moment oracles", entry_moment_oracles(), t);
    let t = Instant::now();
    report(9, "Dicke/identity limits", limits(), t);

    println!("acceptance: {} of 9 criteria passed in {:.0}s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 && std::env::var("ERM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
