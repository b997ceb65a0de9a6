use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::branching::{offspring_family, OffspringLaw};
use crate::stats::erf;

type K = AdditiveFunctional<f64>;

/// Classical RK4 for `dv/ds = g(v)` run backward from `v(t) = c` to `r`.
fn rk4_backward(g: impl Fn(f64) -> f64, c: f64, span: f64, steps: usize) -> f64 {
    let h = -span / steps as f64;
    let mut v = c;
    for _ in 0..steps {
        let k1 = g(v);
        let k2 = g(v + 0.5 * h * k1);
        let k3 = g(v + 0.5 * h * k2);
        let k4 = g(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    v
}

fn zero_fn() -> SpatialFn<f64> {
    Arc::new(|_, _: &[f64]| 0.0)
}

fn homogeneous(nt: usize) -> SpaceTimeGrid<f64> {
    SpaceTimeGrid::homogeneous(0.0, 1.0, nt).unwrap()
}

fn frozen() -> MotionModel {
    MotionModel::Frozen { dim: 1 }
}

fn bm() -> MotionModel {
    MotionModel::BrownianMotion { dim: 1 }
}

#[test]
fn zero_mechanism_leaves_constant_data() {
    let v = solve_v(&|_| 2.0, &BranchingMechanism::quadratic(0.0), &K::lebesgue(), &bm(), &homogeneous(4), &SolverOptions::new(1e-8))
        .unwrap();
    assert!(v.values.iter().flatten().all(|&x| (x - 2.0).abs() < 1e-15));
}

#[test]
fn riccati_homogeneous() {
    let oracle = rk4_backward(|v| v * v, 1.0, 1.0, 10_000);
    assert!((oracle - 0.5).abs() < 1e-12);
    for opts in [SolverOptions::new(1e-5), SolverOptions::new(1e-7).strang()] {
        let v = solve_v(&|_| 1.0, &BranchingMechanism::quadratic(1.0), &K::lebesgue(), &bm(), &homogeneous(8), &opts).unwrap();
        let err = 2.0 * opts.tol;
        assert!((v.at_r()[0] - oracle).abs() < err, "{:?} {}", opts.splitting, v.at_r()[0]);
        // Intermediate levels follow c/(1 + c(t − s)).
        let mid = v.level(4)[0];
        assert!((mid - 1.0 / 1.5).abs() < err);
    }
}

#[test]
fn stable_homogeneous() {
    let oracle = rk4_backward(|v| v.powf(1.5), 1.0, 1.0, 10_000);
    assert!((oracle - 4.0 / 9.0).abs() < 1e-12);
    let v = solve_v(&|_| 1.0, &BranchingMechanism::stable(0.5, 1.0), &K::lebesgue(), &frozen(), &homogeneous(8), &SolverOptions::new(1e-7).strang())
        .unwrap();
    assert!((v.at_r()[0] - oracle).abs() < 1e-6);
}

#[test]
fn binary_u_equation() {
    let c = 0.8f64;
    let g = 1.0 - (-c).exp();
    let exact = 1.0 - g / (1.0 + g / 2.0);
    let oracle = 1.0 - rk4_backward(|w| w * w / 2.0, g, 1.0, 10_000);
    assert!((oracle - exact).abs() < 1e-12);
    let fam = RescaledFamily::new(1.0, OffspringLaw::critical_binary(), 1.0).unwrap();
    let u = solve_u(&|_| c, &fam, &K::lebesgue(), &bm(), &homogeneous(8), &SolverOptions::new(1e-8).strang()).unwrap();
    assert!((u.at_r()[0] - exact).abs() < 1e-6);
}

#[test]
fn u_is_one_for_zero_data_and_semigroup_without_clock() {
    let fam = RescaledFamily::new(0.5, OffspringLaw::critical_binary(), 1.0).unwrap();
    let grid = SpaceTimeGrid::uniform(-8.0, 8.0, 161, 0.0, 1.0, 20, Boundary::Free).unwrap();
    let u = solve_u(&|_| 0.0, &fam, &K::lebesgue(), &bm(), &grid, &SolverOptions::new(1e-6)).unwrap();
    assert!(u.values.iter().flatten().all(|&x| (x - 1.0).abs() < 1e-12));
    let f = |x: &[f64]| x[0] * x[0];
    let u = solve_u(&f, &fam, &K::zero(), &bm(), &grid, &SolverOptions::new(1e-5)).unwrap();
    let w = solve_moment(&|x: &[f64]| (-x[0] * x[0]).exp(), &zero_fn(), &K::lebesgue(), &bm(), &grid, &SolverOptions::new(1e-5))
        .unwrap();
    for i in 0..grid.nx() {
        assert!((u.at_r()[i] - w.at_r()[i]).abs() < 1e-10);
    }
}

#[test]
fn vbeta_binary_family() {
    let beta = 0.1f64;
    let fam = offspring_family(&BranchingMechanism::quadratic(1.0), beta).unwrap();
    let terminal = (1.0 - (-beta).exp()) / beta;
    let oracle = rk4_backward(|v| v * v, terminal, 1.0, 10_000);
    let v = solve_vbeta(&|_| 1.0, &fam, &K::lebesgue(), &bm(), &homogeneous(8), &SolverOptions::new(1e-8).strang()).unwrap();
    assert!((v.at_r()[0] - oracle).abs() < 1e-6, "{} {oracle}", v.at_r()[0]);
}

#[test]
fn vbeta_terminal_data() {
    let fam = offspring_family(&BranchingMechanism::quadratic(1.0), 1.0).unwrap();
    let v = solve_vbeta(&|_| 2.0, &fam, &K::zero(), &bm(), &homogeneous(2), &SolverOptions::new(1e-8)).unwrap();
    assert!((v.at_r()[0] - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    // |(1 − e^{−βf})/β − f| ≤ βf²/2.
    for beta in [1e-3, 1e-6] {
        let fam = offspring_family(&BranchingMechanism::quadratic(1.0), beta).unwrap();
        let v = solve_vbeta(&|_| 2.0, &fam, &K::zero(), &bm(), &homogeneous(2), &SolverOptions::new(1e-8)).unwrap();
        assert!((v.at_r()[0] - 2.0).abs() <= beta * 4.0 / 2.0);
    }
    let fam = offspring_family(&BranchingMechanism::quadratic(1.0), 1e-6).unwrap();
    let v = solve_vbeta(&|_| 2.0, &fam, &K::zero(), &bm(), &homogeneous(2), &SolverOptions::new(1e-8)).unwrap();
    assert!((v.at_r()[0] - 2.0).abs() <= 1e-6 * 4.0);
}

#[test]
fn linear_moment_equation() {
    let one: SpatialFn<f64> = Arc::new(|_, _: &[f64]| 1.0);
    let w = solve_moment(&|_| 1.0, &one, &K::lebesgue(), &bm(), &homogeneous(4), &SolverOptions::new(1e-10)).unwrap();
    assert!((w.at_r()[0] - (-1.0f64).exp()).abs() < 1e-14);
}

#[test]
fn killed_survival_probability() {
    let zero = zero_fn();
    let grid = SpaceTimeGrid::uniform(0.0, 10.0, 1001, 0.0, 1.0, 50, Boundary::AbsorbingAtZero).unwrap();
    let w = solve_moment(&|_| 1.0, &zero, &K::lebesgue(), &MotionModel::KilledBrownianMotion1d, &grid, &SolverOptions::new(1e-5).strang())
        .unwrap();
    for x in [0.1, 0.5, 1.0, 2.0, 4.0] {
        let exact = erf(x / 2f64.sqrt());
        assert!((w.interpolate(0, x).unwrap() - exact).abs() < 2e-4, "x = {x}");
    }
    assert_eq!(w.at_r()[0], 0.0);
}

#[test]
fn heat_semigroup_of_gaussian() {
    let zero = zero_fn();
    let grid = SpaceTimeGrid::uniform(-10.0, 10.0, 801, 0.0, 1.0, 20, Boundary::Free).unwrap();
    let opts = SolverOptions::new(1e-6).strang();
    let w = solve_moment(&|x: &[f64]| (-x[0] * x[0]).exp(), &zero, &K::lebesgue(), &bm(), &grid, &opts).unwrap();
    for x in [0.0, 0.7, 2.0] {
        let exact = (-x * x / 3.0f64).exp() / 3f64.sqrt();
        assert!((w.interpolate(0, x).unwrap() - exact).abs() < 1e-4);
    }
    let stable2 = MotionModel::AlphaStable { alpha: 2.0, dim: 1 };
    let w = solve_moment(&|x: &[f64]| (-x[0] * x[0]).exp(), &zero, &K::lebesgue(), &stable2, &grid, &opts).unwrap();
    assert!((w.interpolate(0, 0.0).unwrap() - 1.0 / 5f64.sqrt()).abs() < 1e-4);
}

#[test]
fn bessel_second_moment() {
    let zero = zero_fn();
    let grid = SpaceTimeGrid::uniform(0.0, 20.0, 801, 0.0, 1.0, 20, Boundary::Free).unwrap();
    let w = solve_moment(&|x: &[f64]| x[0] * x[0], &zero, &K::lebesgue(), &MotionModel::Bessel3, &grid, &SolverOptions::new(1e-4).strang())
        .unwrap();
    for x in [0.0, 1.0, 3.0] {
        assert!((w.interpolate(0, x).unwrap() - (x * x + 3.0)).abs() < 5e-3, "x = {x}");
    }
}

#[test]
fn u_and_vbeta_agree() {
    let beta = 0.3;
    let fam = offspring_family(&BranchingMechanism::quadratic(1.0), beta).unwrap();
    let grid = SpaceTimeGrid::uniform(0.0, 8.0, 161, 0.0, 1.0, 20, Boundary::AbsorbingAtZero).unwrap();
    let f = |x: &[f64]| x[0].min(1.0);
    let opts = SolverOptions::new(1e-6).strang();
    let m = MotionModel::KilledBrownianMotion1d;
    // The particle equation sees the rescaled test function βf.
    let u = solve_u(&|x: &[f64]| beta * f(x), &fam, &K::lebesgue(), &m, &grid, &opts).unwrap();
    let v = solve_vbeta(&f, &fam, &K::lebesgue(), &m, &grid, &opts).unwrap();
    let gap = u.at_r().iter().zip(v.at_r()).fold(0.0f64, |g, (a, b)| g.max((a - (1.0 - beta * b)).abs()));
    assert!(gap < 4.0 * opts.tol, "{gap}");
}

#[test]
fn singular_clock_solution_is_finite() {
    let grid = SpaceTimeGrid::uniform(0.0, 10.0, 401, 0.0, 1.0, 20, Boundary::AbsorbingAtZero).unwrap();
    let k = K::power_law(1.5, None);
    let v = solve_v(&|x: &[f64]| x[0].min(1.0), &BranchingMechanism::quadratic(1.0), &k, &MotionModel::KilledBrownianMotion1d, &grid, &SolverOptions::new(1e-5).strang())
        .unwrap();
    assert!(v.values.iter().flatten().all(|x| x.is_finite() && *x >= 0.0));
    let zero = zero_fn();
    let w = solve_moment(&|x: &[f64]| x[0].min(1.0), &zero, &k, &MotionModel::KilledBrownianMotion1d, &grid, &SolverOptions::new(1e-5).strang())
        .unwrap();
    assert!(v.at_r().iter().zip(w.at_r()).all(|(a, b)| *a <= b + 4e-5));
}

#[test]
fn incompatible_inputs_are_rejected() {
    let free = SpaceTimeGrid::uniform(-1.0, 1.0, 11, 0.0, 1.0, 4, Boundary::Free).unwrap();
    let mech = BranchingMechanism::quadratic(1.0);
    let opts = SolverOptions::new(1e-4);
    assert!(matches!(solve_v(&|_| 1.0, &mech, &K::lebesgue(), &MotionModel::KilledBrownianMotion1d, &free, &opts), Err(Error::Mismatch(_))));
    assert!(matches!(
        solve_v(&|_| 1.0, &mech, &K::lebesgue(), &MotionModel::AlphaStable { alpha: 1.5, dim: 1 }, &free, &opts),
        Err(Error::Unsupported(_))
    ));
    assert!(matches!(solve_v(&|_| -1.0, &mech, &K::lebesgue(), &bm(), &free, &opts), Err(Error::Domain(_))));
    assert!(SpaceTimeGrid::uniform(1.0, 2.0, 11, 0.0, 1.0, 4, Boundary::AbsorbingAtZero).is_err());
    assert!(SpaceTimeGrid::<f64>::homogeneous(1.0, 1.0, 4).is_err());
}

#[test]
fn grid_output_and_interpolation() {
    let zero = zero_fn();
    let grid = SpaceTimeGrid::uniform(-1.0, 1.0, 5, 0.0, 1.0, 2, Boundary::Free).unwrap();
    let w = solve_moment(&|_| 1.0, &zero, &K::lebesgue(), &frozen(), &grid, &SolverOptions::new(1e-8)).unwrap();
    assert_eq!(w.values.len(), 3);
    assert!((w.eval(0.3, 0.1).unwrap() - 1.0).abs() < 1e-15);
    assert!(w.interpolate(0, 2.0).is_err());
    let mut buf = Vec::new();
    w.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 5);
    assert!(text.starts_with("r,x,v"));
}

#[test]
fn generic_over_f32() {
    let v = solve_v(
        &|_| 1.0f32,
        &BranchingMechanism::quadratic(1.0f32),
        &AdditiveFunctional::<f32>::lebesgue(),
        &bm(),
        &SpaceTimeGrid::homogeneous(0.0f32, 1.0, 8).unwrap(),
        &SolverOptions::new(1e-4f32).strang(),
    )
    .unwrap();
    assert!((v.at_r()[0] - 0.5).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparison_and_linear_bound(
        base in proptest::collection::vec(0.0f64..2.0, 21),
        bump in proptest::collection::vec(0.0f64..1.0, 21),
        b in 0.1f64..2.0,
    ) {
        let grid = SpaceTimeGrid::uniform(-2.0, 2.0, 21, 0.0, 0.5, 10, Boundary::Free).unwrap();
        let table = |vals: Vec<f64>| {
            let g = grid.clone();
            move |x: &[f64]| {
                let i = ((x[0] - g.node(0)) / g.h().unwrap()).round() as usize;
                vals[i.min(20)]
            }
        };
        let f1 = table(base.clone());
        let f2 = table(base.iter().zip(&bump).map(|(a, d)| a + d).collect());
        let mech = BranchingMechanism::quadratic(b);
        let opts = SolverOptions::new(1e-2);
        let v1 = solve_v(&f1, &mech, &K::lebesgue(), &bm(), &grid, &opts).unwrap();
        let v2 = solve_v(&f2, &mech, &K::lebesgue(), &bm(), &grid, &opts).unwrap();
        let zero = zero_fn();
        let w1 = solve_moment(&f1, &zero, &K::lebesgue(), &bm(), &grid, &opts).unwrap();
        for j in 0..=grid.nt {
            for i in 0..grid.nx() {
                prop_assert!(v1.values[j][i] <= v2.values[j][i] + 1e-10);
                prop_assert!(v1.values[j][i] <= w1.values[j][i] + 4.0 * opts.tol);
            }
        }
    }
}
