use roughbridge::gaussian::{CovarianceModel, FbmSampler};
use roughbridge::lift::lift_dyadic;
use roughbridge::path_spaces::RoughPathGrid;
use roughbridge::solvers::{solve_rde, solve_rde_scaled, TrigFields, VectorFieldSystem};

fn system() -> VectorFieldSystem<f64> {
    VectorFieldSystem::from_fields(TrigFields::test_fields(2).unwrap()).unwrap()
}

#[test]
fn restarting_at_the_midpoint_reproduces_the_solve() {
    let sys = system();
    let model = CovarianceModel::uniform(2, 0.4, 1.0).unwrap();
    let x = lift_dyadic(&FbmSampler::new(&model, 9).unwrap().sample(5, 0), 9, 3).unwrap();
    let whole = solve_rde(&sys, &x, &[0.1, 0.2], 0.7).unwrap().path;
    let half = x.n_intervals() / 2;
    let first = RoughPathGrid::from_increments(0.5, 8, x.cells()[..half].to_vec()).unwrap();
    let second = RoughPathGrid::from_increments(0.5, 8, x.cells()[half..].to_vec()).unwrap();
    let y1 = solve_rde(&sys, &first, &[0.1, 0.2], 0.7).unwrap().path;
    let y2 = solve_rde(&sys, &second, y1.end(), 0.7).unwrap().path;
    for i in 0..=half {
        for k in 0..2 {
            assert!((y1.value(i)[k] - whole.value(i)[k]).abs() < 1e-12);
            assert!((y2.value(i)[k] - whole.value(half + i)[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn scaled_equation_is_the_dilated_driver() {
    let sys = system();
    let model = CovarianceModel::uniform(2, 0.35, 1.0).unwrap();
    let x = lift_dyadic(&FbmSampler::new(&model, 8).unwrap().sample(9, 1), 8, 3).unwrap();
    for eps in [1.0, 0.5, 0.1] {
        let a = solve_rde_scaled(&sys, &x, eps, &[0.0, 0.0], 0.3).unwrap().path;
        let b = solve_rde(&sys, &x.dilate(eps), &[0.0, 0.0], 0.3).unwrap().path;
        assert_eq!(a, b);
    }
}

#[test]
fn bounded_fields_keep_solutions_bounded() {
    let sys = system();
    let model = CovarianceModel::uniform(2, 0.3, 1.0).unwrap();
    let sampler = FbmSampler::new(&model, 9).unwrap();
    for i in 0..20 {
        let x = lift_dyadic(&sampler.sample(21, i), 9, 3).unwrap();
        let y = solve_rde(&sys, &x, &[0.5, -0.5], 1.0).unwrap().path;
        assert!(y.values().iter().all(|v| v.is_finite() && v.abs() < 1e3));
    }
}

#[test]
fn single_and_double_precision_agree() {
    let sys64 = system();
    let sys32 = VectorFieldSystem::<f32>::from_fields(TrigFields::test_fields(2).unwrap()).unwrap();
    let model = CovarianceModel::uniform(2, 0.45, 1.0).unwrap();
    let w = FbmSampler::new(&model, 7).unwrap().sample(3, 0);
    let y64 = solve_rde(&sys64, &lift_dyadic(&w, 7, 2).unwrap(), &[0.1, 0.2], 0.7).unwrap().path;
    let y32 = solve_rde(&sys32, &lift_dyadic(&w.cast::<f32>(), 7, 2).unwrap(), &[0.1, 0.2], 0.7).unwrap().path;
    assert!(y64.sup_distance(&y32.cast()).unwrap() < 1e-4);
}
