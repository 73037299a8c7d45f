use roughbridge::gaussian::CovarianceModel;
use roughbridge::ldp::{
    bridge_rate_j, rate_endpoint, varadhan_sweep, BetaSpec, ImportanceMode, RateProblem, VaradhanParams,
};
use roughbridge::path_spaces::GridPath;
use roughbridge::solvers::FieldSpec;

fn problem(fields: FieldSpec, hurst: f64, b: Vec<f64>) -> RateProblem {
    let sys = fields.build::<f64>().unwrap();
    let model = CovarianceModel::uniform(sys.driver_dim(), hurst, 1.0).unwrap();
    RateProblem::new(sys, vec![0.0; b.len()], b, 0.0, model).unwrap()
}

#[test]
fn rate_is_invariant_under_orthogonal_mixing() {
    let (c, s) = (0.6f64, 0.8f64);
    let b = vec![1.0, -0.5];
    let plain = rate_endpoint(&problem(FieldSpec::Identity { dim: 2, drift: None }, 0.6, b.clone())).unwrap();
    let mixed = FieldSpec::Constant {
        drift: vec![0.0, 0.0],
        columns: vec![vec![c, s], vec![-s, c]],
    };
    let rotated = rate_endpoint(&problem(mixed, 0.6, b)).unwrap();
    assert!((plain.value - rotated.value).abs() < 1e-6, "{} vs {}", plain.value, rotated.value);
}

#[test]
fn refining_the_control_grid_does_not_raise_the_rate() {
    let mut values = Vec::new();
    for level in 2..=5 {
        let mut p = problem(FieldSpec::TrigTest { dim: 2 }, 0.5, vec![0.6, -0.4]);
        p.control_level = level;
        p.solve_level = 7;
        values.push(rate_endpoint(&p).unwrap().value);
    }
    for w in values.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{values:?}");
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).collect();
    assert!(diffs.last().unwrap() <= &(diffs[0] + 1e-6), "{values:?}");
}

#[test]
fn bridge_rate_is_non_negative() {
    let p = problem(FieldSpec::Identity { dim: 1, drift: None }, 0.5, vec![1.0]);
    for k in 1..6 {
        let xi = GridPath::<f64>::from_fn(1, 1.0, 8, |t| {
            vec![t + 0.2 * k as f64 * (std::f64::consts::PI * k as f64 * t).sin()]
        })
        .unwrap();
        let j = bridge_rate_j(&xi, &p).unwrap();
        assert!(j.value >= -1e-8, "k = {k}: {}", j.value);
    }
    let line = GridPath::<f64>::linear(&[0.0], &[1.0], 1.0, 8).unwrap();
    assert!(bridge_rate_j(&line, &p).unwrap().value.abs() < 1e-6);
}

#[test]
fn varadhan_gap_shrinks_within_error_bands() {
    let p = problem(FieldSpec::Identity { dim: 1, drift: None }, 0.5, vec![2.0]);
    let mc = VaradhanParams {
        n_paths: 40_000,
        level: 4,
        bandwidth_factor: 0.01,
        seed: 5,
        importance: ImportanceMode::Always,
        beta: BetaSpec::Constant { value: 0.0 },
        alpha: None,
    };
    let rep = varadhan_sweep(&p, &[0.5, 0.35, 0.25, 0.18], &mc).unwrap();
    // gap net of the Gaussian prefactor, with its error band
    let gaps: Vec<(f64, f64)> = rep
        .rows
        .iter()
        .map(|r| {
            let e2 = r.epsilon * r.epsilon;
            let pre = -0.5 * e2 * (2.0 * std::f64::consts::PI * e2).ln();
            ((r.eps2_log_p + rep.rate - pre).abs(), 3.0 * e2 * r.relative_se)
        })
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1].0 <= w[0].0 + w[0].1 + w[1].1, "{gaps:?}");
    }
}
