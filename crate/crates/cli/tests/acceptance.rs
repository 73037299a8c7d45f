//! Acceptance criteria, one PASS/FAIL line each. Every tolerance is pinned
//! here; the test fails if any criterion fails.

use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use roughbridge::bridge::{
    bridge_consistency_test, kernel_conditioned_ensemble, sample_model_paths, BrownianModel, ConsistencyParams,
    GaussianTransition, OrnsteinUhlenbeck,
};
use roughbridge::gaussian::{sample_fbm, twod_rho_variation, CovarianceModel, FbmSampler};
use roughbridge::ldp::{rate_endpoint, varadhan_sweep, BetaSpec, ImportanceMode, RateProblem, VaradhanParams};
use roughbridge::lift::{cauchy_rate_estimate, lift_dyadic, lift_ensemble, young_translation};
use roughbridge::path_spaces::{homogeneous_norm, GridPath, NormMode};
use roughbridge::rng::stream;
use roughbridge::solvers::{solve_rde, solve_skeleton, FieldSpec, TrigFields, VectorFieldSystem};
use roughbridge::tensor_algebra::{chen_defect, relative_shuffle_residual};
use roughbridge::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

// 1. Chen defect and shuffle residuals on lifted fBm.
fn algebraic_certificates() -> Result<Outcome> {
    const PATHS: usize = 200;
    const TRIPLES: usize = 1000;
    const LEVEL: u32 = 10;
    let mut worst_chen = 0.0f64;
    let mut worst_shuffle = 0.0f64;
    for (k, (h, alpha)) in [(0.3, 0.27), (0.4, 0.35), (0.5, 0.45)].into_iter().enumerate() {
        let mode = NormMode::Holder { alpha };
        let model = CovarianceModel::uniform(2, h, 1.0)?;
        let sampler = FbmSampler::new(&model, LEVEL)?;
        let per_path = TRIPLES.div_ceil(PATHS);
        let (chen, shuffle) = (0..PATHS as u64)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let x = lift_dyadic(&sampler.sample(17 + k as u64, i), LEVEL, mode.degree()?)?;
                let scale = 1.0 + homogeneous_norm(&x, mode)?.powi(3);
                let mut g = stream(99, i);
                let n = x.n_intervals();
                let (mut c, mut s) = (0.0f64, 0.0f64);
                for _ in 0..per_path {
                    let mut v = [g.random_range(0..=n), g.random_range(0..=n), g.random_range(0..=n)];
                    v.sort();
                    c = c.max(chen_defect(&x, v[0], v[1], v[2])? / scale);
                    s = s.max(relative_shuffle_residual(&x.increment(v[0], v[2])?));
                }
                Ok((c, s))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        worst_chen = worst_chen.max(chen);
        worst_shuffle = worst_shuffle.max(shuffle);
    }
    outcome(
        worst_chen <= 1e-10 && worst_shuffle <= 1e-10,
        format!("max chen/(1+|||X|||^3) = {worst_chen:.2e}, max shuffle = {worst_shuffle:.2e}, tol 1e-10"),
    )
}

// 2. Geometric L^2-Cauchy rate of the dyadic lifts.
fn lift_convergence() -> Result<Outcome> {
    let model = CovarianceModel::uniform(2, 0.4, 1.0)?;
    let paths = sample_fbm(&model, 10, 500, 23)?;
    let records = lift_ensemble(&paths, NormMode::Holder { alpha: 0.35 }, 1e-12)?;
    let (fit, means) = cauchy_rate_estimate(&records, 2.0)?;
    let means: Vec<String> = means.iter().map(|(l, d)| format!("{l}:{d:.3}")).collect();
    outcome(
        fit.r_squared >= 0.95 && fit.kappa > 0.0 && fit.kappa < 1.0,
        format!(
            "kappa = {:.4}, R^2 = {:.3} (need kappa in (0,1), R^2 >= 0.95); d_l = [{}]",
            fit.kappa,
            fit.r_squared,
            means.join(", ")
        ),
    )
}

// 3. Linear bound for H > 1/2 and stable Hölder-control constant for H < 1/2.
fn twod_variation() -> Result<Outcome> {
    const LEVEL: u32 = 8;
    let n = 1usize << LEVEL;
    let h = 0.75;
    let model = CovarianceModel::uniform(1, h, 1.0)?;
    let c = 2.0 * h;
    let t = |i: usize| i as f64 / n as f64;
    let worst = (0..=n)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut w = f64::NEG_INFINITY;
            for e in s..=n {
                for u in s..=e {
                    for v in u..=e {
                        let r = model.rect_increment(0, t(s), t(e), t(u), t(v))?;
                        w = w.max(r.abs() - c * (t(v) - t(u)));
                    }
                }
            }
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let linear_ok = worst <= 1e-12;

    let h = 0.4;
    let rho = 1.0 / (2.0 * h);
    let model = CovarianceModel::uniform(1, h, 1.0)?;
    let mut consts = Vec::new();
    for k in 0..4u32 {
        let width = 1.0 / (1u32 << k) as f64;
        for pos in [0, (1usize << k) - 1] {
            let s = pos as f64 * width;
            let v = twod_rho_variation(&model, 0, s, s + width, rho, LEVEL - k)?;
            consts.push(v / width.powf(2.0 * h));
        }
    }
    let lo = consts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = consts.iter().copied().fold(0.0f64, f64::max);
    let spread = (hi - lo) / lo;
    outcome(
        linear_ok && spread < 0.25,
        format!(
            "H=0.75: max(|R| - 2H(v-u)) = {worst:.2e} (tol 1e-12); H=0.4: C in [{lo:.4}, {hi:.4}], spread {:.1}% (< 25%)",
            100.0 * spread
        ),
    )
}

// 4. Translation of piecewise-linear signatures and round trip on fBm.
fn translation_identity() -> Result<Outcome> {
    const LEVEL: u32 = 6;
    let mut g = stream(5, 0);
    let walk = |g: &mut dyn rand::RngCore| -> Result<GridPath<f64>> {
        let n = 1usize << LEVEL;
        let mut vals = vec![0.0; 2];
        for i in 0..n {
            let step = [g.random_range(-0.3..0.3), g.random_range(-0.3..0.3)];
            vals.push(vals[2 * i] + step[0]);
            vals.push(vals[2 * i + 1] + step[1]);
        }
        GridPath::new(2, 1.0, LEVEL, vals)
    };
    let mut worst_exact = 0.0f64;
    for _ in 0..50 {
        let x = walk(&mut g)?;
        let k = walk(&mut g)?;
        let shifted = young_translation(&lift_dyadic(&x, LEVEL, 3)?, &k)?;
        let direct = lift_dyadic(&x.add(&k)?, LEVEL, 3)?;
        for (a, b) in shifted.cells().iter().zip(direct.cells()) {
            worst_exact = worst_exact.max(a.max_abs_diff(b) / (1.0 + b.magnitude().powi(3)));
        }
        let (a, b) = (shifted.increment(0, shifted.n_intervals())?, direct.increment(0, direct.n_intervals())?);
        worst_exact = worst_exact.max(a.max_abs_diff(&b) / (1.0 + b.magnitude().powi(3)));
    }

    let model = CovarianceModel::uniform(2, 0.4, 1.0)?;
    let sampler = FbmSampler::new(&model, 9)?;
    let k = GridPath::<f64>::from_fn(2, 1.0, 9, |t| vec![(2.0 * t).sin(), t * t - 0.5 * t])?;
    let mut worst_trip = 0.0f64;
    for i in 0..10 {
        let x = lift_dyadic(&sampler.sample(31, i), 9, 2)?;
        let back = young_translation(&young_translation(&x, &k)?, &k.scaled(-1.0))?;
        for (a, b) in x.cells().iter().zip(back.cells()) {
            worst_trip = worst_trip.max(a.max_abs_diff(b));
        }
    }
    outcome(
        worst_exact <= 1e-12 && worst_trip <= 1e-8,
        format!("T_k S(x) vs S(x+k): {worst_exact:.2e} (tol 1e-12); round trip: {worst_trip:.2e} (tol 1e-8)"),
    )
}

// 5. RDE on the lift of a smooth path against the skeleton ODE.
fn solver_consistency() -> Result<Outcome> {
    let sys = VectorFieldSystem::<f64>::from_fields(TrigFields::test_fields(2)?)?;
    let (a, beta) = ([0.1, 0.2], 0.7);
    let path = |l: u32| GridPath::<f64>::from_fn(2, 1.0, l, |t| vec![2.0 * (3.0 * t).sin(), t * t - t]);
    let reference = solve_skeleton(&sys, &path(12)?, &a, beta)?;
    let mut errs = Vec::new();
    let mut consistency = 0.0;
    for l in 8..=12u32 {
        let h = path(l)?;
        let y = solve_rde(&sys, &lift_dyadic(&h, l, 3)?, &a, beta)?;
        if l == 12 {
            consistency = y.path.sup_distance(&solve_skeleton(&sys, &h, &a, beta)?.path)?;
        } else {
            errs.push((l, y.path.sup_distance(&reference.path.subsample(l)?)?));
        }
    }
    let x: Vec<f64> = errs.iter().map(|(l, _)| *l as f64).collect();
    let y: Vec<f64> = errs.iter().map(|(_, e)| e.log2()).collect();
    let order = -roughbridge::stats::linear_fit(&x, &y)?.slope;
    let errs: Vec<String> = errs.iter().map(|(l, e)| format!("{l}:{e:.2e}")).collect();
    outcome(
        consistency <= 1e-6 && order >= 1.0,
        format!(
            "sup |RDE - skeleton| at L=12: {consistency:.2e} (tol 1e-6); order {order:.2} (>= 1) from [{}]",
            errs.join(", ")
        ),
    )
}

// 6. Kernel-conditioned BM and OU marginals against the exact bridge.
fn bridge_consistency() -> Result<Outcome> {
    const SIGMA: f64 = 0.05;
    let models: [(&str, Box<dyn GaussianTransition>); 2] = [
        ("bm", Box::new(BrownianModel::standard(1))),
        ("ou", Box::new(OrnsteinUhlenbeck { theta: 1.0, scale: 1.0 })),
    ];
    let (a, b) = ([0.0], [0.5]);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (name, model)) in models.iter().enumerate() {
        let paths = sample_model_paths(model.as_ref(), &a, 1.0, 2, 100_000, 41 + k as u64)?;
        let params = ConsistencyParams {
            sigma: SIGMA,
            n_boot: 200,
            n_exact: 20_000,
            seed: 7,
        };
        let rep = bridge_consistency_test(model.as_ref(), &paths, &[0.25, 0.5, 0.75], &a, &b, params)?;
        let mut worst = f64::NEG_INFINITY;
        for c in rep.comparisons.iter().filter(|c| c.time < 1.0) {
            let m = (c.weighted_mean - c.exact_mean).abs() - (SIGMA + 3.0 * c.mean_se);
            let v = (c.weighted_variance - c.exact_variance).abs() - (SIGMA + 3.0 * c.variance_se);
            worst = worst.max(m).max(v);
        }
        pass &= worst <= 0.0;
        parts.push(format!("{name}: max(err - sigma - 3SE) = {worst:.4}, ess {:.0}", rep.ess));
    }
    outcome(pass, parts.join("; "))
}

fn identity_problem(hurst: f64) -> Result<RateProblem> {
    let sys = FieldSpec::Identity { dim: 1, drift: None }.build::<f64>()?;
    let model = CovarianceModel::uniform(1, hurst, 1.0)?;
    RateProblem::new(sys, vec![0.0], vec![2.0], 0.0, model)
}

// 7. Endpoint rate for identity fields against b^2 / (2 T^{2H}).
fn rate_function() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for h in [0.5, 0.7] {
        let v = rate_endpoint(&identity_problem(h)?)?.value;
        pass &= (v - 2.0).abs() <= 1e-3;
        parts.push(format!("H={h}: {v:.6}"));
    }
    outcome(pass, format!("{} (want 2 +- 1e-3)", parts.join(", ")))
}

// 8. Small-noise asymptotics of the kernel density at b.
fn varadhan() -> Result<Outcome> {
    let p = identity_problem(0.5)?;
    let mc = VaradhanParams {
        n_paths: 100_000,
        level: 5,
        bandwidth_factor: 0.01,
        seed: 13,
        importance: ImportanceMode::Always,
        beta: BetaSpec::Constant { value: 0.0 },
        alpha: None,
    };
    let rep = varadhan_sweep(&p, &[0.5, 0.35, 0.25, 0.18], &mc)?;
    let mut within = true;
    let mut gaps = Vec::new();
    let mut parts = Vec::new();
    for r in &rep.rows {
        let eps2 = r.epsilon * r.epsilon;
        let prefactor = eps2 * (2.0 * std::f64::consts::PI * eps2).sqrt().recip().ln();
        let gap = (r.eps2_log_p + 2.0 - prefactor).abs();
        let bound = 3.0 * eps2 * r.relative_se;
        within &= gap <= bound;
        gaps.push(gap);
        parts.push(format!("eps={}: {gap:.2e}<={bound:.2e}", r.epsilon));
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    outcome(
        within && decreasing,
        format!("{}; decreasing: {decreasing}", parts.join(", ")),
    )
}

// 9. Conditional mean of a + w given the endpoint, general H.
fn conditional_mean() -> Result<Outcome> {
    const SIGMA: f64 = 0.1;
    let (a, b) = (0.3, 1.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, h) in [0.35, 0.7].into_iter().enumerate() {
        let model = CovarianceModel::uniform(1, h, 1.0)?;
        let paths: Vec<GridPath<f64>> = sample_fbm(&model, 6, 100_000, 61 + k as u64)?
            .into_iter()
            .map(|w| GridPath::new(1, 1.0, 6, w.values().iter().map(|v| v + a).collect()))
            .collect::<Result<_>>()?;
        let coarse = kernel_conditioned_ensemble(&paths, &[b], SIGMA)?;
        let fine = coarse.reweight(SIGMA / 2.0)?;
        let mut worst = f64::NEG_INFINITY;
        for i in [16, 32, 48] {
            let t = i as f64 / 64.0;
            let (m1, v1) = coarse.moments_at(i, 0);
            let (m2, v2) = fine.moments_at(i, 0);
            let extrapolated = (4.0 * m2 - m1) / 3.0;
            let se = (16.0 * v2 / fine.ess + v1 / coarse.ess).sqrt() / 3.0;
            let exact = a + (b - a) * model.covariance(0, t, 1.0)? / model.covariance(0, 1.0, 1.0)?;
            worst = worst.max((extrapolated - exact).abs() / se);
        }
        pass &= worst <= 3.0;
        parts.push(format!("H={h}: max |err|/SE = {worst:.2}"));
    }
    outcome(pass, format!("{} (<= 3)", parts.join(", ")))
}

// 10. Byte-identical selftest tables.
fn determinism() -> Result<Outcome> {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_roughbridge"))
            .args(["selftest", "--seed", "2024"])
            .output()
            .expect("binary runs")
    };
    let (first, second) = (run(), run());
    let ok = first.status.success() && second.status.success() && !first.stdout.is_empty();
    outcome(
        ok && first.stdout == second.stdout,
        format!("{} bytes, identical: {}", first.stdout.len(), first.stdout == second.stdout),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("algebraic certificates", algebraic_certificates),
        ("lift convergence", lift_convergence),
        ("2d variation", twod_variation),
        ("translation identity", translation_identity),
        ("solver consistency", solver_consistency),
        ("bridge consistency", bridge_consistency),
        ("rate function", rate_function),
        ("varadhan sweep", varadhan),
        ("conditional mean", conditional_mean),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} {:>2} {:<24} [{:.1}s] {}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            start.elapsed().as_secs_f64(),
            detail
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
