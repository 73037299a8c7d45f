use proptest::prelude::*;
use roughbridge::gaussian::{cm_norm_sq, CameronMartinElement, CovarianceModel, FbmSampler};
use roughbridge::stats::mean_se;

#[test]
fn gram_factorises_on_random_subsets_of_fine_grids() {
    use rand::seq::index::sample;
    let mut g = roughbridge::rng::stream(3, 0);
    let n = 1usize << 10;
    for h in [0.05, 0.3, 0.5, 0.75, 0.95] {
        let model = CovarianceModel::uniform(1, h, 1.0).unwrap();
        assert!(FbmSampler::new(&model, 10).is_ok(), "H = {h}");
        let mut idx = sample(&mut g, n, 64).into_vec();
        idx.sort();
        let times: Vec<f64> = idx.iter().map(|i| (i + 1) as f64 / n as f64).collect();
        let gram = model.gram(0, &times).unwrap();
        assert!((gram.clone() - gram.transpose()).amax() == 0.0);
        assert!(nalgebra::Cholesky::new(gram).is_some(), "H = {h}");
    }
}

#[test]
fn increments_are_stationary() {
    let h = 0.3;
    let model = CovarianceModel::uniform(1, h, 1.0).unwrap();
    let paths = FbmSampler::new(&model, 6).unwrap().sample_many(8, 4000);
    let lag = 4;
    let exact = (lag as f64 / 64.0).powf(2.0 * h);
    for start in [0, 20, 40, 60] {
        let sq: Vec<f64> = paths.iter().map(|p| p.increment(start, start + lag)[0].powi(2)).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - exact).abs() <= 4.0 * se, "start {start}: {m} vs {exact} +- {se}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nested_rectangles_obey_linear_bound(h in 0.55f64..0.95, pts in proptest::collection::vec(0.0f64..1.0, 4)) {
        let mut p = pts.clone();
        p.sort_by(f64::total_cmp);
        let model = CovarianceModel::uniform(1, h, 1.0).unwrap();
        let (s, u, v, t) = (p[0], p[1], p[2], p[3]);
        let r = model.rect_increment(0, s, t, u, v).unwrap();
        prop_assert!(r.abs() <= 2.0 * h * (v - u) + 1e-12);
    }

    #[test]
    fn rect_increment_is_the_covariance_difference(h in 0.05f64..0.95, pts in proptest::collection::vec(0.0f64..2.0, 4)) {
        let model = CovarianceModel::uniform(1, h, 2.0).unwrap();
        let (mut st, mut uv) = ([pts[0], pts[1]], [pts[2], pts[3]]);
        st.sort_by(f64::total_cmp);
        uv.sort_by(f64::total_cmp);
        let r = |a, b| model.covariance(0, a, b).unwrap();
        let direct = r(st[1], uv[1]) - r(st[0], uv[1]) - r(st[1], uv[0]) + r(st[0], uv[0]);
        prop_assert!((model.rect_increment(0, st[0], st[1], uv[0], uv[1]).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn cm_norm_grows_with_constraints(
        h in 0.2f64..0.9,
        vals in proptest::collection::vec(-2.0f64..2.0, 5),
        extra in -2.0f64..2.0,
    ) {
        let model = CovarianceModel::uniform(1, h, 1.0).unwrap();
        let times = vec![0.125, 0.25, 0.5, 0.75, 1.0];
        let base = CameronMartinElement::new(&model, times.clone(), vec![vals.clone()]).unwrap();
        let mut t2 = times.clone();
        t2.insert(3, 0.625);
        let mut v2 = vals.clone();
        v2.insert(3, extra);
        let more = CameronMartinElement::new(&model, t2, vec![v2]).unwrap();
        prop_assert!(cm_norm_sq(&more) >= cm_norm_sq(&base) * (1.0 - 1e-10) - 1e-12);
    }
}

#[test]
fn cm_norm_at_half_is_dirichlet_energy() {
    let model = CovarianceModel::uniform(1, 0.5, 1.0).unwrap();
    let n = 32;
    let times: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    let vals: Vec<f64> = times.iter().map(|t| (5.0 * t).sin() + t).collect();
    let mut energy = 0.0;
    let mut prev = 0.0;
    for v in &vals {
        energy += (v - prev).powi(2) * n as f64;
        prev = *v;
    }
    let h = CameronMartinElement::new(&model, times, vec![vals]).unwrap();
    assert!((cm_norm_sq(&h) - energy).abs() < 1e-8 * energy);
}
