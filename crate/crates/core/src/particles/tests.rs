use std::sync::Arc;

use super::*;
use crate::branching::{offspring_family, BranchingMechanism, OffspringLaw};
use crate::loglaplace::{solve_moment, solve_vbeta, SolverOptions, SpaceTimeGrid};
use crate::motion::{hitting_probability, sample_path, HalfLine};
use crate::stats::{combined_stderr, erf};

fn bm() -> MotionModel {
    MotionModel::BrownianMotion { dim: 1 }
}

fn critical_binary(k: AdditiveFunctional<f64>, motion: MotionModel) -> ParticleSystem {
    let fam = RescaledFamily::new(1.0, OffspringLaw::critical_binary(), 1.0).unwrap();
    ParticleSystem::new(motion, k, fam, 0.01).unwrap()
}

fn opts(reps: usize, seed: u64) -> ReplicaOptions {
    ReplicaOptions { reps, seed, workers: 4 }
}

fn dirac(x: f64, m: f64) -> AtomicMeasure<f64> {
    AtomicMeasure::dirac(&[x], m).unwrap()
}

#[test]
fn poisson_counts() {
    let mu = dirac(0.0, 3.0);
    let counts: Vec<f64> = (0..20_000)
        .map(|i| init_poisson(&mu, 1.0, 0.0, 100, &mut stream(1, 2, i)).unwrap().len() as f64)
        .collect();
    let e = summarize(&counts);
    assert!((e.mean - 3.0).abs() < 4.0 * e.stderr);

    let mu = dirac(0.0, 1.0);
    let mut m = Moments::default();
    for i in 0..5_000 {
        let pop = init_poisson(&mu, 0.01, 0.0, 1_000, &mut stream(2, 2, i)).unwrap();
        m.push(pop.len() as f64);
        assert!((pop.measure().total_mass() - 0.01 * pop.len() as f64).abs() < 1e-12);
    }
    assert!((m.mean - 100.0).abs() < 4.0 * (100.0f64 / 5_000.0).sqrt());
    assert!((m.variance() - 100.0).abs() < 8.0, "{}", m.variance());
}

#[test]
fn poisson_counts_at_two_atoms_are_uncorrelated() {
    let mut mu = dirac(-1.0, 2.0);
    mu.push(smallvec::smallvec![1.0], 2.0).unwrap();
    let n = 20_000;
    let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let pop = init_poisson(&mu, 1.0, 0.0, 100, &mut stream(3, 2, i)).unwrap();
        let a = pop.live.iter().filter(|p| p.state.position[0] < 0.0).count() as f64;
        let b = pop.len() as f64 - a;
        sa += a;
        sb += b;
        sab += a * b;
    }
    let nf = n as f64;
    let cov = sab / nf - (sa / nf) * (sb / nf);
    let corr = cov / 2.0;
    assert!(corr.abs() < 4.0 / nf.sqrt(), "{corr}");
}

#[test]
fn poisson_cap_is_enforced() {
    let err = init_poisson(&dirac(0.0, 1.0), 1e-4, 0.0, 1_000, &mut stream(0, 0, 0)).unwrap_err();
    assert!(matches!(err, Error::Resource(ref m) if m.contains("1000")));
}

#[test]
fn no_branching_transports_the_population() {
    let fam = RescaledFamily::no_branching(1.0).unwrap();
    let sys = ParticleSystem::new(bm(), AdditiveFunctional::zero(), fam, 0.01).unwrap();
    let pop = Population::deterministic(&[vec![0.0], vec![1.0], vec![2.0]], 1.0, 0.0).unwrap();
    let traj = sys.simulate(pop, 1.0, &[0.0, 0.5, 1.0], &mut stream(4, 0, 0)).unwrap();
    assert_eq!(traj.measures.iter().map(|m| m.len()).collect::<Vec<_>>(), vec![3, 3, 3]);
    assert_eq!(traj.stats.branchings, 0);
    assert_eq!(traj.measures[0].atoms()[0].position[0], 0.0);
    assert!(traj.measures[2].atoms().iter().all(|a| a.weight == 1.0));

    // Single lineage: E exp(−f(ξ_t)) with f = x², ξ_1 ~ N(0, 1).
    let vals: Vec<f64> = run_replicas(20_000, 5, 4, |_, rng| {
        let pop = Population::deterministic(&[vec![0.0]], 1.0, 0.0)?;
        let m = sys.simulate(pop, 1.0, &[1.0], rng)?.measures.remove(0);
        Ok((-m.pair(|x| x[0] * x[0])).exp())
    })
    .unwrap();
    let e = summarize(&vals);
    assert!((e.mean - 1.0 / 3f64.sqrt()).abs() < 4.0 * e.stderr);

    // Poisson(1) lineages: exp(−(1 − E e^{−f})).
    let l = laplace_mc(&sys, &dirac(0.0, 1.0), &|x| x[0] * x[0], 0.0, 1.0, opts(20_000, 6)).unwrap();
    let exact = (-(1.0 - 1.0 / 3f64.sqrt())).exp();
    assert!((l.mean - exact).abs() < 4.0 * l.stderr, "{l:?} vs {exact}");
}

#[test]
fn zero_test_function_gives_exactly_one() {
    let sys = critical_binary(AdditiveFunctional::lebesgue(), bm());
    let l = laplace_mc(&sys, &dirac(0.0, 1.0), &|_| 0.0, 0.0, 1.0, opts(50, 7)).unwrap();
    assert_eq!(l.mean, 1.0);
    assert_eq!(l.stderr, 0.0);
}

#[test]
fn critical_mean_mass_matches_moment_solver() {
    let sys = critical_binary(AdditiveFunctional::lebesgue(), bm());
    let grid = SpaceTimeGrid::homogeneous(0.0, 1.0, 8).unwrap();
    let zero: SpatialFn<f64> = Arc::new(|_, _: &[f64]| 0.0);
    let w = solve_moment(&|_| 1.0, &zero, &AdditiveFunctional::lebesgue(), &bm(), &grid, &SolverOptions::new(1e-8))
        .unwrap()
        .at_r()[0];
    let e = mean_pairing(&sys, &dirac(0.0, 1.0), &|_| 1.0, 0.0, 1.0, opts(10_000, 8)).unwrap();
    assert!((e.mean - w).abs() < 4.0 * e.stderr, "{e:?} vs {w}");
}

#[test]
fn subcritical_mean_decays_exponentially() {
    // ψ(z) = z + z²/2: mean offspring below one, first moment e^{−(t−r)}.
    let mech = BranchingMechanism::Quadratic { a: 1.0, b: 0.5 };
    let fam = offspring_family(&mech, 1.0).unwrap();
    let sys = ParticleSystem::new(MotionModel::Frozen { dim: 1 }, AdditiveFunctional::lebesgue(), fam, 0.01).unwrap();
    let e = mean_pairing(&sys, &dirac(0.0, 2.0), &|_| 1.0, 0.0, 1.0, opts(10_000, 9)).unwrap();
    let exact = 2.0 * (-1.0f64).exp();
    assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{e:?} vs {exact}");
}

#[test]
fn hyperbolic_mean_mass_is_killed_survival() {
    let x0 = 1.0;
    let killed = MotionModel::KilledBrownianMotion1d;
    // Independent oracle: survival frequency of single killed paths.
    let mut rng = stream(10, 1, 0);
    let surv: Vec<f64> = (0..20_000)
        .map(|_| {
            let p = sample_path(&killed, 0.0, &[x0], 1.0, 0.01, &mut rng).unwrap();
            if p.kill_time.is_none() { 1.0 } else { 0.0 }
        })
        .collect();
    let oracle = summarize(&surv);
    let exact = erf(x0 / 2f64.sqrt());
    assert!((oracle.mean - exact).abs() < 4.0 * oracle.stderr);
    for beta in [1.0, 0.5] {
        let fam = offspring_family(&BranchingMechanism::stable(beta, 1.0), beta).unwrap();
        let sys = ParticleSystem::new(killed.clone(), AdditiveFunctional::power_law(1.5, None), fam, 0.01).unwrap();
        let e = mean_pairing(&sys, &dirac(x0, 1.0), &|_| 1.0, 0.0, 1.0, opts(4_000, 11)).unwrap();
        let se = combined_stderr(e.stderr, oracle.stderr);
        assert!((e.mean - oracle.mean).abs() < 4.0 * se, "β={beta}: {e:?} vs {oracle:?}");
    }
}

#[test]
fn finite_beta_laplace_matches_vbeta() {
    let mech = BranchingMechanism::quadratic(1.0);
    let beta = 0.1;
    let fam = offspring_family(&mech, beta).unwrap();
    let sys = ParticleSystem::new(bm(), AdditiveFunctional::lebesgue(), fam.clone(), 0.01).unwrap();
    let grid = SpaceTimeGrid::homogeneous(0.0, 1.0, 8).unwrap();
    let v = solve_vbeta(&|_| 1.0, &fam, &AdditiveFunctional::lebesgue(), &bm(), &grid, &SolverOptions::new(1e-8).strang())
        .unwrap()
        .at_r()[0];
    let l = laplace_mc(&sys, &dirac(0.0, 1.0), &|_| 1.0, 0.0, 1.0, opts(10_000, 12)).unwrap();
    let exact = (-v).exp();
    assert!((l.mean - exact).abs() < 4.0 * l.stderr, "{l:?} vs {exact}");
}

#[test]
fn replicas_do_not_depend_on_worker_count() {
    let sys = critical_binary(AdditiveFunctional::power_law(1.0, None), MotionModel::KilledBrownianMotion1d);
    let run = |workers| {
        run_replicas(64, 13, workers, |_, rng| {
            let pop = init_poisson(&dirac(1.0, 2.0), 1.0, 0.0, 1_000, rng)?;
            sys.simulate(pop, 1.0, &[0.25, 0.5, 1.0], rng)
        })
        .unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&run(8)).unwrap());
}

#[test]
fn population_cap_truncates() {
    let sys = critical_binary(AdditiveFunctional::constant(50.0), bm())
        .with_caps(Caps { population: 20, generations: DEFAULT_GENERATION_CAP });
    let mut truncated = false;
    for i in 0..50 {
        let pop = Population::deterministic(&vec![vec![0.0]; 5], 1.0, 0.0).unwrap();
        let traj = sys.simulate(pop, 1.0, &[1.0], &mut stream(14, 0, i)).unwrap();
        if traj.truncated {
            truncated = true;
            assert!(matches!(traj.ensure_complete(), Err(Error::Resource(_))));
        }
    }
    assert!(truncated);
}

#[test]
fn generation_cap_errors() {
    let sys = critical_binary(AdditiveFunctional::constant(200.0), MotionModel::Frozen { dim: 1 })
        .with_caps(Caps { population: 1_000_000, generations: 2 });
    let errs = (0..50)
        .filter(|&i| {
            let pop = Population::deterministic(&vec![vec![0.0]; 4], 1.0, 0.0).unwrap();
            sys.simulate(pop, 1.0, &[1.0], &mut stream(15, 0, i)).is_err()
        })
        .count();
    assert!(errs > 0);
}

#[test]
fn events_are_consistent() {
    let sys = critical_binary(AdditiveFunctional::constant(3.0), bm()).with_event_log();
    let pop = Population::deterministic(&vec![vec![0.0]; 3], 1.0, 0.0).unwrap();
    let out: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
    let traj = sys.simulate(pop, 1.0, &out, &mut stream(16, 0, 0)).unwrap();
    let log = traj.event_log.as_ref().unwrap();
    let mut ids: Vec<u64> = log.tracks.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), log.tracks.len());
    for (i, &t) in out.iter().enumerate() {
        let alive = log.tracks.iter().filter(|k| k.position_at(t).is_some()).count();
        assert_eq!(alive, traj.measures[i].len(), "t={t}");
    }
    for k in &log.tracks {
        assert!(k.birth <= k.end);
        if let Some(p) = k.parent_id {
            let parent = log.tracks.iter().find(|q| q.id == p).unwrap();
            assert_eq!(parent.end, k.birth);
            assert_eq!(parent.positions.last().unwrap(), &k.positions[0]);
        }
    }
}

#[test]
fn max_occupation_edge_cases() {
    let sys = critical_binary(AdditiveFunctional::lebesgue(), bm());
    let pop = Population::deterministic(&[vec![0.0]], 1.0, 0.0).unwrap();
    let traj = sys.simulate(pop.clone(), 1.0, &[1.0], &mut stream(17, 0, 0)).unwrap();
    assert!(matches!(max_occupation(&traj, &|_, _| true, 1.0), Err(Error::Unsupported(_))));
    let logged = sys.clone().with_event_log().simulate(pop, 1.0, &[1.0], &mut stream(17, 0, 0)).unwrap();
    assert!(!max_occupation(&logged, &|_, _| false, 1.0).unwrap());
    assert!(max_occupation(&logged, &|_, _| true, 1.0).unwrap());
}

#[test]
fn mean_domination_by_motion() {
    // P[⟨f, X_t⟩] ≤ Π[f(ξ_t)] for subcritical branching.
    let mech = BranchingMechanism::Quadratic { a: 0.5, b: 0.5 };
    let fam = offspring_family(&mech, 1.0).unwrap();
    let sys = ParticleSystem::new(bm(), AdditiveFunctional::lebesgue(), fam, 0.01).unwrap();
    let f = |x: &[f64]| (-x[0] * x[0]).exp();
    let e = mean_pairing(&sys, &dirac(0.0, 1.0), &f, 0.0, 1.0, opts(10_000, 18)).unwrap();
    let exact = 1.0 / 3f64.sqrt();
    assert!(e.mean <= exact + 4.0 * e.stderr, "{e:?} vs {exact}");
}

#[test]
fn maximal_inequality() {
    let sys = critical_binary(AdditiveFunctional::lebesgue(), bm());
    let level = 1.5;
    let c = 2.0;
    let u = move |_: f64, x: &[f64]| x[0] >= level;
    let freq = occupation_frequency(&sys, &dirac(0.0, 1.0), &u, c, 0.0, 1.0, opts(10_000, 19)).unwrap();
    let set = HalfLine { level, below: false };
    let hit = hitting_probability(&bm(), &set, 0.0, &[0.0], 1.0, 40_000, 1e-3, &mut stream(19, 1, 0)).unwrap();
    let bound = hit.mean / c;
    let se = combined_stderr(freq.stderr, hit.stderr / c);
    assert!(freq.mean <= bound + 4.0 * se, "{freq:?} vs {bound}");
    assert!(freq.mean > 0.0);
}
