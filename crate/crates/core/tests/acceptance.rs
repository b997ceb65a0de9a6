//! End-to-end acceptance suite. Each test prints one PASS/FAIL line.

use std::time::{Duration, Instant};

use superproc::branching::offspring_family;
use superproc::harness::{
    run_admissibility, run_convergence, run_experiment, run_extinction_check, run_grid_convergence, run_lemma_suite,
    run_solve, AdmissibilityProbe, Config, Experiment, HMethodKind, RunContext, Scenario, ScenarioConfig, ScenarioName,
    TableFormat, TestFunction,
};
use superproc::loglaplace::{solve_v, SolverOptions};
use superproc::{AdditiveFunctional, BranchingMechanism, MotionModel, SpaceTimeGrid};

const REPS: usize = 10_000;
const WORKERS: usize = 8;

fn report(id: u32, ok: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn homogeneous_oracle(mech: BranchingMechanism<f64>, expected: f64) -> (f64, f64, Duration) {
    let start = Instant::now();
    let grid = SpaceTimeGrid::homogeneous(0.0, 1.0, 16).unwrap();
    let opts = SolverOptions::new(1e-7).strang();
    let v = solve_v(
        &|_: &[f64]| 1.0,
        &mech,
        &AdditiveFunctional::lebesgue(),
        &MotionModel::BrownianMotion { dim: 1 },
        &grid,
        &opts,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let value = v.at_r()[0];
    (value, (value - expected).abs() / expected, elapsed)
}

#[test]
fn criterion_01_riccati_oracle() {
    let (v, rel, elapsed) = homogeneous_oracle(BranchingMechanism::quadratic(1.0), 0.5);
    report(1, rel < 1e-4 && elapsed < Duration::from_secs(1), format!("v = {v:.8}, rel err {rel:.2e}, {elapsed:?}"));
}

#[test]
fn criterion_02_stable_oracle() {
    let (v, rel, elapsed) = homogeneous_oracle(BranchingMechanism::stable(0.5, 1.0), 4.0 / 9.0);
    report(2, rel < 1e-4 && elapsed < Duration::from_secs(1), format!("v = {v:.8}, rel err {rel:.2e}, {elapsed:?}"));
}

#[test]
fn criterion_03_dawson_watanabe_convergence() {
    let start = Instant::now();
    let sc = Scenario::dawson_watanabe();
    let grid = SpaceTimeGrid::homogeneous(0.0, 1.0, 16).unwrap();
    let opts = SolverOptions::new(1e-6).strang();
    let ctx = RunContext::new(20240601, WORKERS);
    let betas = [1.0, 0.3, 0.1, 0.03];
    let res = run_convergence(&sc, TestFunction::Constant { c: 1.0 }, 0.0, 1.0, &betas, REPS, &grid, &opts, &ctx).unwrap();
    let limit = res.table("convergence").unwrap().column("limit").unwrap()[0];
    let zs: Vec<String> = res
        .checks
        .iter()
        .filter_map(|c| c.z.map(|z| format!("{}: z={z:.2}", c.name)))
        .collect();
    let tau = res.check("trend").unwrap().estimate;
    let elapsed = start.elapsed();
    let ok = res.passed() && (limit - 0.5).abs() < 1e-4 && elapsed < Duration::from_secs(300);
    report(3, ok, format!("limit {limit:.6}; {}; tau {tau:.2}; {elapsed:?}", zs.join(", ")));
}

#[test]
fn criterion_04_hyperbolic_mean_mass() {
    let start = Instant::now();
    let reference = libm::erf(1.0 / 2f64.sqrt());
    let mut lines = vec![];
    let mut ok = true;
    for (i, &beta) in [1.0, 0.5].iter().enumerate() {
        for (j, &sigma) in [1.0, 1.5, 2.0].iter().enumerate() {
            let sc = Scenario::hyperbolic(beta, sigma).unwrap();
            let ctx = RunContext::new(4000 + (3 * i + j) as u64, WORKERS);
            let res = run_extinction_check(&sc, 1.0, 0.0, &[1.0], REPS, &ctx).unwrap();
            let c = &res.checks[0];
            assert!((c.reference - reference).abs() < 1e-15);
            ok &= c.passed;
            lines.push(format!("(β={beta}, σ={sigma}) {:.4}±{:.4} z={:.2}", c.estimate, c.stderr, c.z.unwrap()));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    report(4, ok, format!("vs {reference:.4}: {}; {elapsed:?}", lines.join("; ")));
}

#[test]
fn criterion_05_transform_identity() {
    let sc = Scenario::hyperbolic(1.0, 1.5).unwrap();
    let grid = sc.default_grid(0.0, 1.0).unwrap();
    let opts = SolverOptions::new(1e-4).strang();
    let res = run_solve(&sc, sc.default_f, &grid, &opts, Some((HMethodKind::ClosedForm, 0)), &RunContext::new(0, WORKERS))
        .unwrap();
    let c = res.check("identity").unwrap();
    report(5, c.passed, format!("relative discrepancy {:.2e} (bound {:.1e})", c.estimate, c.reference));
}

#[test]
fn criterion_06_offspring_exactness() {
    let mut worst: f64 = 0.0;
    let mut laws_ok = true;
    for &beta in &[1.0, 0.5, 0.1, 0.01] {
        let mechs = [
            BranchingMechanism::Quadratic { a: 0.0, b: 1.0 },
            BranchingMechanism::Quadratic { a: 0.7, b: 0.3 },
            BranchingMechanism::stable(beta, 1.0),
            BranchingMechanism::stable(beta, 2.5),
        ];
        for mech in mechs {
            let fam = offspring_family(&mech, beta).unwrap();
            for i in 0..=200 {
                let z = i as f64 / 200.0 / beta;
                let exact = mech.psi(0.0, &[0.0], z).unwrap();
                worst = worst.max((fam.psi_beta(z).unwrap() - exact).abs());
            }
            let law = &fam.law;
            laws_ok &= law.coeffs().iter().all(|&q| q >= 0.0) && law.mean() <= 1.0 + 1e-12;
            laws_ok &= (0..=100).all(|i| law.pgf(i as f64 / 100.0) >= 0.0);
        }
    }
    report(6, worst <= 1e-8 && laws_ok, format!("max |ψ_β − ψ| = {worst:.2e}; pgf coefficients nonnegative and mean ≤ 1: {laws_ok}"));
}

#[test]
fn criterion_07_lemma_suite() {
    let scenarios = vec![
        Scenario::dawson_watanabe(),
        Scenario::hyperbolic(1.0, 1.5).unwrap(),
        Scenario::iscoe(2.0, 2.0, 1.0).unwrap(),
        Scenario::iscoe(1.5, 2.0, 1.0).unwrap(),
        Scenario::no_branching(),
        Scenario::frozen(),
    ];
    let res = run_lemma_suite(&scenarios, None, 0.0, 1.0, REPS, &RunContext::new(77, WORKERS)).unwrap();
    let worst = res.checks.iter().filter_map(|c| c.z).fold(f64::NEG_INFINITY, f64::max);
    let lines: Vec<String> = res.checks.iter().map(|c| format!("{} z={:.2}", c.name, c.z.unwrap())).collect();
    report(7, res.passed(), format!("max z {worst:.2}; {}", lines.join("; ")));
}

#[test]
fn criterion_08_admissibility() {
    let sc = Scenario::hyperbolic(1.0, 2.0).unwrap();
    let res = run_admissibility(&sc, &AdmissibilityProbe::default(), &RunContext::new(8, WORKERS)).unwrap();
    let raw = res.check("raw").unwrap();
    let weighted = res.check("weighted").unwrap();
    let transformed = res.check("transformed").unwrap();
    let ok = !raw.passed && weighted.passed && transformed.passed;
    report(
        8,
        ok,
        format!(
            "raw {} (modulus {:.3}), weighted {} ({:.3}), transformed {} ({:.3})",
            if raw.passed { "admissible" } else { "violated" },
            raw.estimate,
            if weighted.passed { "admissible" } else { "not admissible" },
            weighted.estimate,
            if transformed.passed { "admissible" } else { "not admissible" },
            transformed.estimate
        ),
    );
}

#[test]
fn criterion_09_determinism() {
    let mut dw = Config::new(ScenarioConfig::named(ScenarioName::DawsonWatanabe));
    dw.run.reps = 2000;
    dw.run.seed = 99;
    dw.run.betas = Some(vec![1.0, 0.3, 0.1]);
    dw.grid = Some(superproc::harness::GridConfig::Homogeneous { nt: 16 });
    let mut hyp = Config::new(ScenarioConfig::hyperbolic(0.5, 1.5));
    hyp.run.reps = 2000;
    hyp.run.seed = 5;
    hyp.run.times = Some(vec![0.5, 1.0]);
    let cases = [(Experiment::Convergence, dw.clone()), (Experiment::Extinction, hyp), (Experiment::Tightness, dw)];
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut sizes = vec![];
    for (k, (exp, cfg)) in cases.iter().enumerate() {
        let mut bytes = vec![];
        for workers in [1, 4, 8] {
            let out = dir.path().join(format!("{k}_{workers}"));
            run_experiment(*exp, cfg, workers).unwrap().write(&out, TableFormat::Csv).unwrap();
            bytes.push(std::fs::read(out.join("result.json")).unwrap());
        }
        ok &= bytes.windows(2).all(|w| w[0] == w[1]);
        sizes.push(format!("{}: {} bytes", exp.as_str(), bytes[0].len()));
    }
    report(9, ok, format!("result.json identical across 1/4/8 workers ({})", sizes.join(", ")));
}

#[test]
fn criterion_10_grid_convergence() {
    let tol = 1e-4;
    let opts = SolverOptions::new(tol).strang();
    let mut lines = vec![];
    let mut ok = true;
    for sc in Scenario::shipped() {
        let grid = sc.default_grid(0.0, 1.0).unwrap();
        let res = run_grid_convergence(&sc, sc.default_f, &grid, &opts).unwrap();
        let c = res.check("halving").unwrap();
        ok &= c.passed;
        lines.push(format!("{} {:.2e}", sc.label, c.estimate));
    }
    report(10, ok, format!("sup change on halving (bound {:.0e}): {}", 4.0 * tol, lines.join(", ")));
}
