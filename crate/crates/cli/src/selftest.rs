//! Built-in oracle suite behind `roughbridge selftest`.

use rand::Rng;
use roughbridge::bridge::{brownian_bridge_fdd, density_estimate, BrownianModel};
use roughbridge::gaussian::{cm_norm_sq, CameronMartinElement, CovarianceModel, FbmSampler};
use roughbridge::ldp::{rate_endpoint, RateProblem};
use roughbridge::lift::{lift_dyadic, young_translation};
use roughbridge::path_spaces::GridPath;
use roughbridge::rng::stream;
use roughbridge::solvers::{solve_rde, solve_skeleton, FieldSpec, TrigFields, VectorFieldSystem};
use roughbridge::tensor_algebra::{chen_defect, relative_shuffle_residual, segment_signature, tensor_mul};
use roughbridge::Result;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, reference: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        reference,
        tolerance,
        pass: (value - reference).abs() <= tolerance,
    }
}

fn shuffle(seed: u64) -> Result<Check> {
    let mut g = stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut x = segment_signature(&[g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)], 3)?;
        for _ in 0..5 {
            let s = segment_signature(&[g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)], 3)?;
            x = tensor_mul(&x, &s)?;
        }
        worst = worst.max(relative_shuffle_residual(&x));
    }
    Ok(check("shuffle residual", worst, 0.0, 1e-12))
}

fn chen(seed: u64) -> Result<Check> {
    let model = CovarianceModel::uniform(2, 0.4, 1.0)?;
    let w = FbmSampler::new(&model, 8)?.sample(seed, 1);
    let x = lift_dyadic(&w, 8, 2)?;
    let mut g = stream(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut v = [g.random_range(0..=256), g.random_range(0..=256), g.random_range(0..=256)];
        v.sort();
        worst = worst.max(chen_defect(&x, v[0], v[1], v[2])?);
    }
    Ok(check("chen defect", worst, 0.0, 1e-10))
}

fn fbm_variance(seed: u64) -> Result<Check> {
    let model = CovarianceModel::uniform(1, 0.3, 2.0)?;
    let paths = FbmSampler::new(&model, 6)?.sample_many(seed, 4000);
    let v: Vec<f64> = paths.iter().map(|p| p.end()[0].powi(2)).collect();
    let (m, se) = roughbridge::stats::mean_se(&v);
    let exact = 2f64.powf(0.6);
    Ok(check("fbm terminal variance", m, exact, 4.0 * se))
}

fn cm_single() -> Result<Check> {
    let model = CovarianceModel::uniform(1, 0.7, 2.0)?;
    let h = CameronMartinElement::new(&model, vec![2.0], vec![vec![1.0]])?;
    Ok(check("cm norm single constraint", cm_norm_sq(&h), 2f64.powf(-1.4), 1e-12))
}

fn rate() -> Result<Check> {
    let sys = FieldSpec::Identity { dim: 1, drift: None }.build::<f64>()?;
    let model = CovarianceModel::uniform(1, 0.5, 1.0)?;
    let p = RateProblem::new(sys, vec![0.0], vec![2.0], 0.0, model)?;
    Ok(check("endpoint rate identity", rate_endpoint(&p)?.value, 2.0, 1e-6))
}

fn bridge_variance() -> Result<Check> {
    let m = BrownianModel::standard(1);
    let f = brownian_bridge_fdd(&m, &[0.3, 1.0], &[0.0], &[1.0])?;
    let (_, cov) = &f.marginals(&m)?[0];
    Ok(check("bm bridge variance", cov[(0, 0)], 0.21, 1e-12))
}

fn kde(seed: u64) -> Result<Check> {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = stream(seed, 3);
    let y: Vec<Vec<f64>> = (0..20_000).map(|_| vec![StandardNormal.sample(&mut g)]).collect();
    let sigma = 0.2;
    let est = density_estimate(&y, &[0.0], sigma)?;
    let exact = 1.0 / (2.0 * std::f64::consts::PI * (1.0 + sigma * sigma)).sqrt();
    Ok(check("kernel density", est.estimate, exact, 4.0 * est.std_error))
}

fn skeleton() -> Result<Check> {
    let sys = VectorFieldSystem::<f64>::from_fields(TrigFields::test_fields(2)?)?;
    let h = GridPath::<f64>::from_fn(2, 1.0, 10, |t| vec![2.0 * (3.0 * t).sin(), t * t - t])?;
    let y = solve_rde(&sys, &lift_dyadic(&h, 10, 3)?, &[0.1, 0.2], 0.7)?;
    let z = solve_skeleton(&sys, &h, &[0.1, 0.2], 0.7)?;
    Ok(check("rde vs skeleton", y.path.sup_distance(&z.path)?, 0.0, 1e-6))
}

fn translation(seed: u64) -> Result<Check> {
    let model = CovarianceModel::uniform(2, 0.45, 1.0)?;
    let w = FbmSampler::new(&model, 7)?.sample(seed, 4);
    let x = lift_dyadic(&w, 7, 2)?;
    let k = GridPath::<f64>::from_fn(2, 1.0, 7, |t| vec![t.sin(), 0.5 * t * t])?;
    let back = young_translation(&young_translation(&x, &k)?, &k.scaled(-1.0))?;
    let diff = x
        .cells()
        .iter()
        .zip(back.cells())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0f64, f64::max);
    Ok(check("translation round trip", diff, 0.0, 1e-8))
}

/// Run every check. The result depends only on `seed`.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        shuffle(seed)?,
        chen(seed)?,
        fbm_variance(seed)?,
        cm_single()?,
        rate()?,
        bridge_variance()?,
        kde(seed)?,
        skeleton()?,
        translation(seed)?,
    ])
}

/// Fixed-width table of the checks.
pub fn table(checks: &[Check]) -> String {
    let mut out = format!(
        "{:<28} {:>14} {:>14} {:>10}  result\n",
        "check", "value", "reference", "tolerance"
    );
    for c in checks {
        out.push_str(&format!(
            "{:<28} {:>14.6e} {:>14.6e} {:>10.2e}  {}\n",
            c.name,
            c.value,
            c.reference,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}
