use serde::{Deserialize, Serialize};

use crate::additive_functional::{check_admissibility, AdmissibilityOptions, AdmissibilityReport, Verdict};
use crate::branching::SpatialFn;
use crate::error::{Error, Result};
use crate::loglaplace::{Boundary, solve_moment, solve_v, solve_vbeta, SolverOptions, SpaceNodes, SpaceTimeGrid};
use crate::measure::AtomicMeasure;
use crate::motion::{hitting_probability, MotionModel, semigroup_mc, HalfLine, McOptions};
use crate::particles::{init_poisson, mean_pairing, occupation_frequency, run_replicas, laplace_mc, Caps, ParticleSystem, ReplicaOptions};
use crate::rng::{derive_seed, purpose, stream};
use crate::stats::{combined_stderr, kendall_tau, Estimate, Moments};
use crate::transform::{build_h, transformed_system, verify_identity, HMethod};

use super::config::{Config, HMethodKind};
use super::scenario::{Scenario, TestFunction};
use super::{Check, RunResult, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Solve,
    Convergence,
    Moments,
    Extinction,
    Admissibility,
    Tightness,
    Lemmas,
    GridConvergence,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Solve => "solve",
            Experiment::Convergence => "convergence",
            Experiment::Moments => "moments",
            Experiment::Extinction => "extinction",
            Experiment::Admissibility => "admissibility",
            Experiment::Tightness => "tightness",
            Experiment::Lemmas => "lemmas",
            Experiment::GridConvergence => "grid_convergence",
        }
    }
}

/// Settings shared by every Monte Carlo experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunContext {
    pub seed: u64,
    pub workers: usize,
    /// Base motion step of the particle simulator.
    pub dt: f64,
    pub caps: Caps,
}

impl RunContext {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self { seed, workers, dt: 0.01, caps: Caps::default() }
    }

    fn replicas(&self, reps: usize, tag: u64) -> ReplicaOptions {
        ReplicaOptions { reps, seed: derive_seed(self.seed, tag), workers: self.workers }
    }

    fn system(&self, sc: &Scenario, beta: f64) -> Result<ParticleSystem> {
        Ok(sc.particle_system(beta, self.dt)?.with_caps(self.caps))
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Runs the experiment described by `cfg`; `workers` only changes the
/// schedule, never the result.
pub fn run_experiment(exp: Experiment, cfg: &Config, workers: usize) -> Result<RunResult> {
    let mut sc = cfg.scenario.resolve()?;
    if let Some(w) = cfg.weight {
        sc.weight = Some(w);
    }
    let run = &cfg.run;
    let ctx = RunContext { seed: run.seed, workers, dt: run.dt, caps: run.caps };
    let f = run.test_function.unwrap_or(sc.default_f);
    f.validate()?;
    let grid = || match &cfg.grid {
        Some(g) => g.build(run.r, run.t),
        None => sc.default_grid(run.r, run.t),
    };
    let opts = cfg.solver.options(vec![]);
    let beta = sc.rescaling(run.beta);
    let mut res = match exp {
        Experiment::Simulate => {
            let outputs = run.output_times.clone().unwrap_or_else(|| vec![run.t]);
            run_simulate(&sc, beta, run.r, run.t, &outputs, &ctx)?
        }
        Experiment::Solve => {
            let method = cfg.transform.as_ref().map(|tc| (tc.method, tc.reps));
            run_solve(&sc, f, &grid()?, &opts, method, &ctx)?
        }
        Experiment::Convergence => {
            let betas = run.betas.clone().unwrap_or_else(|| match sc.natural_beta {
                Some(b) => vec![b],
                None => vec![1.0, 0.3, 0.1, 0.03],
            });
            run_convergence(&sc, f, run.r, run.t, &betas, run.reps, &grid()?, &opts, &ctx)?
        }
        Experiment::Moments => run_moment_check(&sc, f, run.r, run.t, beta, run.reps, &grid()?, &opts, &ctx)?,
        Experiment::Extinction => {
            let times = run.times.clone().unwrap_or_else(|| vec![run.t]);
            run_extinction_check(&sc, run.x0.unwrap_or(1.0), run.r, &times, run.reps, &ctx)?
        }
        Experiment::Admissibility => {
            let mut probe = AdmissibilityProbe::default();
            if let Some(w) = &run.widths {
                probe.widths.clone_from(w);
            }
            if let Some(x) = &run.x_grid {
                probe.xs.clone_from(x);
            }
            if let Some(th) = run.threshold {
                probe.threshold = th;
            }
            probe.reps = run.reps;
            run_admissibility(&sc, &probe, &ctx)?
        }
        Experiment::Tightness => {
            let betas = run.betas.clone().unwrap_or_else(|| vec![beta]);
            let lags = run.lags.clone().unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05]);
            let levels = run.levels.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
            run_tightness_diagnostic(&sc, f, &betas, (run.r, run.t), &lags, &levels, run.reps, &ctx)?.into_result(&sc, ctx.seed)
        }
        Experiment::Lemmas => run_lemma_suite(std::slice::from_ref(&sc), run.test_function, run.r, run.t, run.reps, &ctx)?,
        Experiment::GridConvergence => run_grid_convergence(&sc, f, &grid()?, &opts)?,
    };
    res.config_hash = cfg.hash()?;
    res.seed = run.seed;
    Ok(res)
}

fn blank(exp: Experiment, sc: &Scenario, seed: u64) -> RunResult {
    let mut res = RunResult::new(exp.as_str(), &sc.label, String::new(), seed);
    res.notes.push(sc.notes.clone());
    res
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// One trajectory with `βX` recorded at the output times.
pub fn run_simulate(sc: &Scenario, beta: f64, r: f64, t: f64, output_times: &[f64], ctx: &RunContext) -> Result<RunResult> {
    let sys = ctx.system(sc, beta)?;
    let mut rng = stream(ctx.seed, purpose::REPLICA, 0);
    let pop = init_poisson(&sc.initial, beta, r, ctx.caps.population, &mut rng)?;
    let traj = sys.simulate(pop, t, output_times, &mut rng)?;
    let mut res = blank(Experiment::Simulate, sc, ctx.seed);
    let dim = sc.motion.dim();
    let mut mass = Table::new("mass", &["time", "total_mass", "atoms"]);
    let mut cols: Vec<String> = vec!["time".into()];
    cols.extend((0..dim).map(|d| format!("x{d}")));
    cols.push("weight".into());
    let mut atoms = Table { name: "atoms".into(), columns: cols, rows: vec![] };
    for (s, m) in traj.output_times.iter().zip(&traj.measures) {
        mass.push(vec![*s, m.total_mass(), m.len() as f64]);
        for a in m.atoms() {
            let mut row = vec![*s];
            row.extend(a.position.iter().copied());
            row.push(a.weight);
            atoms.push(row);
        }
    }
    res.tables.push(mass);
    res.tables.push(atoms);
    let st = traj.stats;
    res.notes.push(format!(
        "beta = {beta}; particles = {}, branchings = {}, motion kills = {}, floor hits = {}, max generation = {}",
        st.particles, st.branchings, st.motion_kills, st.floor_hits, st.max_generation
    ));
    if traj.truncated {
        res.partial = true;
        res.notes.push("population cap reached; trajectory is partial".into());
    }
    Ok(res.finish())
}

/// Solves the limit equation on `grid`; with `transform`, also checks
/// `v = h·v_h` against the transformed system.
pub fn run_solve(
    sc: &Scenario,
    f: TestFunction,
    grid: &SpaceTimeGrid<f64>,
    opts: &SolverOptions<f64>,
    transform: Option<(HMethodKind, usize)>,
    ctx: &RunContext,
) -> Result<RunResult> {
    let (mech, k) = sc.solver_parts(grid);
    let v = ctx.install(|| solve_v(&|x: &[f64]| f.eval(x), mech, k, &sc.motion, grid, opts))??;
    let mut res = blank(Experiment::Solve, sc, ctx.seed);
    let pairing = v.pair_at_r(&sc.initial)?;
    let mut summary = Table::new("summary", &["pairing", "laplace", "tol", "refinements", "final_nt", "refinement_change"]);
    summary.push(vec![
        pairing,
        (-pairing).exp(),
        opts.tol,
        v.diagnostics.refinements as f64,
        v.diagnostics.final_nt as f64,
        v.diagnostics.refinement_change,
    ]);
    res.tables.push(summary);
    let mut table = Table::new("v", &["s", "x", "v"]);
    let nodes = grid.nodes();
    for (j, row) in v.values.iter().enumerate() {
        let s = grid.time(j);
        for (i, &val) in row.iter().enumerate() {
            table.push(vec![s, if grid.is_homogeneous() { 0.0 } else { nodes[i] }, val]);
        }
    }
    res.tables.push(table);
    res.notes.push(format!("<v(r), mu> = {}", fmt_num(pairing)));
    if let Some((method, reps)) = transform {
        let rho = sc
            .weight
            .ok_or_else(|| Error::Config("the transform section needs a scenario with a weight function".into()))?;
        let h_method = match method {
            HMethodKind::ClosedForm => HMethod::ClosedForm,
            HMethodKind::Grid => HMethod::Grid { grid: grid.clone(), opts: opts.clone() },
            HMethodKind::Mc => {
                let xs = if grid.is_homogeneous() { vec![0.0] } else { grid.nodes() };
                HMethod::Mc { xs, times: vec![grid.r, grid.t], reps, seed: derive_seed(ctx.seed, purpose::WEIGHT) }
            }
        };
        let report = ctx.install(|| -> Result<_> {
            let h = build_h(rho, &sc.motion, grid.t, &h_method)?;
            let fv = |x: &[f64]| f.eval(x);
            let mut h_grid = grid.clone();
            if transformed_system(&sc.system_spec(), &h)?.motion == MotionModel::Bessel3 {
                h_grid.boundary = Boundary::Free;
            }
            verify_identity(&sc.system_spec(), &h, &fv, grid, &h_grid, opts)
        })??;
        res.checks.push(Check::qualitative(
            "identity",
            report.relative_discrepancy,
            5.0 * opts.tol,
            report.relative_discrepancy < 5.0 * opts.tol,
        ));
        res.notes.push(format!(
            "identity compared on [{}, {}]",
            fmt_num(report.compared_on.0),
            fmt_num(report.compared_on.1)
        ));
    }
    Ok(res.finish())
}

/// Laplace functional of the rescaled particle systems against the
/// finite-β and limit solvers, one row per β.
#[allow(clippy::too_many_arguments)]
pub fn run_convergence(
    sc: &Scenario,
    f: TestFunction,
    r: f64,
    t: f64,
    betas: &[f64],
    reps: usize,
    grid: &SpaceTimeGrid<f64>,
    opts: &SolverOptions<f64>,
    ctx: &RunContext,
) -> Result<RunResult> {
    if betas.is_empty() || betas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("β schedule must be nonempty and strictly decreasing".into()));
    }
    check_grid_window(grid, r, t)?;
    let families = betas.iter().map(|&b| sc.family(b)).collect::<Result<Vec<_>>>()?;
    let fv = |x: &[f64]| f.eval(x);
    let mu = &sc.initial;
    let (mech, k) = sc.solver_parts(grid);
    let limit = ctx.install(|| solve_v(&fv, mech, k, &sc.motion, grid, opts))??.pair_at_r(mu)?;
    let mut res = blank(Experiment::Convergence, sc, ctx.seed);
    let mut table = Table::new(
        "convergence",
        &["beta", "laplace", "laplace_se", "neg_log", "neg_log_se", "v_beta", "z", "limit", "limit_error"],
    );
    let (mut used, mut errors) = (vec![], vec![]);
    for (i, (&beta, family)) in betas.iter().zip(families).enumerate() {
        let v_beta = ctx
            .install(|| solve_vbeta(&fv, &family, &sc.particle_clock, &sc.motion, grid, opts))??
            .pair_at_r(mu)?;
        let sys = ParticleSystem::new(sc.motion.clone(), sc.particle_clock.clone(), family, ctx.dt)?.with_caps(ctx.caps);
        let est = match laplace_mc(&sys, mu, &fv, r, t, ctx.replicas(reps, i as u64)) {
            Ok(e) => e,
            Err(Error::Resource(msg)) => {
                res.partial = true;
                res.notes.push(format!("aborted at beta = {beta}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !(est.mean > 0.0) {
            return Err(Error::Domain(format!("Laplace estimate vanished at beta = {beta}")));
        }
        let neg_log = -est.mean.ln();
        let neg_log_se = est.stderr / est.mean;
        let check = Check::two_sided(format!("beta={beta}"), neg_log, neg_log_se, v_beta, 0.0);
        let err = (neg_log - limit).abs();
        table.push(vec![beta, est.mean, est.stderr, neg_log, neg_log_se, v_beta, check.z.unwrap_or(0.0), limit, err]);
        res.checks.push(check);
        used.push(beta);
        errors.push(err);
    }
    let tau = kendall_tau(&used, &errors);
    res.checks.push(Check::qualitative("trend", tau, 0.0, tau >= 0.0));
    res.notes.push(format!("limit <v, mu> = {}; Kendall tau of |error| against beta = {}", fmt_num(limit), fmt_num(tau)));
    res.tables.push(table);
    Ok(res.finish())
}

fn check_grid_window(grid: &SpaceTimeGrid<f64>, r: f64, t: f64) -> Result<()> {
    if (grid.r - r).abs() > 1e-12 || (grid.t - t).abs() > 1e-12 {
        return Err(Error::Config(format!("grid spans [{}, {}] but the run spans [{r}, {t}]", grid.r, grid.t)));
    }
    Ok(())
}

/// Replica mean of `⟨f, βX_t⟩` against the first-moment solver.
#[allow(clippy::too_many_arguments)]
pub fn run_moment_check(
    sc: &Scenario,
    f: TestFunction,
    r: f64,
    t: f64,
    beta: f64,
    reps: usize,
    grid: &SpaceTimeGrid<f64>,
    opts: &SolverOptions<f64>,
    ctx: &RunContext,
) -> Result<RunResult> {
    check_grid_window(grid, r, t)?;
    let fv = |x: &[f64]| f.eval(x);
    let (mech, k) = sc.solver_parts(grid);
    let m = mech.clone();
    let a: SpatialFn<f64> = std::sync::Arc::new(move |s, x: &[f64]| m.linear_part(s, x));
    let w = ctx.install(|| solve_moment(&fv, &a, k, &sc.motion, grid, opts))??.pair_at_r(&sc.initial)?;
    let sys = ctx.system(sc, beta)?;
    let est = mean_pairing(&sys, &sc.initial, &fv, r, t, ctx.replicas(reps, 0))?;
    let mut res = blank(Experiment::Moments, sc, ctx.seed);
    let check = Check::two_sided("mean", est.mean, est.stderr, w, 0.0);
    let mut table = Table::new("moments", &["beta", "mean", "mean_se", "w_f", "z"]);
    table.push(vec![beta, est.mean, est.stderr, w, check.z.unwrap_or(0.0)]);
    res.checks.push(check);
    res.tables.push(table);
    Ok(res.finish())
}

/// Mean total mass of the hyperbolic system started at `x0` against the
/// survival probability `m·erf(x0/√(2(t − r)))` of killed Brownian motion.
pub fn run_extinction_check(sc: &Scenario, x0: f64, r: f64, times: &[f64], reps: usize, ctx: &RunContext) -> Result<RunResult> {
    if sc.name != super::ScenarioName::Hyperbolic {
        return Err(Error::Config(format!("extinction check needs a hyperbolic scenario, got {}", sc.label)));
    }
    if !(x0 > 0.0) {
        return Err(Error::Config(format!("x0 must be positive, got {x0}")));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] <= r {
        return Err(Error::Config("extinction times must be increasing and after r".into()));
    }
    let m = sc.initial.total_mass();
    let mu = AtomicMeasure::dirac(&[x0], m)?;
    let beta = sc.rescaling(None);
    let sys = ctx.system(sc, beta)?;
    let one = |_: &[f64]| 1.0;
    let mut res = blank(Experiment::Extinction, sc, ctx.seed);
    let mut table = Table::new("extinction", &["t", "mean_mass", "mean_mass_se", "reference", "z"]);
    let mut ests: Vec<Estimate> = vec![];
    for (i, &t) in times.iter().enumerate() {
        let est = mean_pairing(&sys, &mu, &one, r, t, ctx.replicas(reps, i as u64))?;
        let reference = m * libm::erf(x0 / (2.0 * (t - r)).sqrt());
        let check = Check::two_sided(format!("t={t}"), est.mean, est.stderr, reference, 0.0);
        table.push(vec![t, est.mean, est.stderr, reference, check.z.unwrap_or(0.0)]);
        res.checks.push(check);
        ests.push(est);
    }
    let monotone = ests
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + 4.0 * combined_stderr(w[0].stderr, w[1].stderr));
    res.checks.push(Check::qualitative("monotone_decay", ests.last().map_or(0.0, |e| e.mean), m, monotone));
    res.tables.push(table);
    Ok(res.finish())
}

/// Probe grid of the small-window admissibility diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityProbe {
    pub widths: Vec<f64>,
    pub xs: Vec<f64>,
    pub threshold: f64,
    pub reps: usize,
    pub dt: f64,
}

impl Default for AdmissibilityProbe {
    fn default() -> Self {
        Self {
            widths: vec![0.1, 0.01, 0.001],
            xs: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0],
            threshold: 0.2,
            reps: 2000,
            dt: 1e-3,
        }
    }
}

pub fn is_admissible(v: Verdict) -> bool {
    matches!(v, Verdict::AdmissibleEvidence | Verdict::RhoAdmissibleEvidence)
}

fn verdict_str(v: Verdict) -> String {
    serde_json::to_value(v).ok().and_then(|s| s.as_str().map(str::to_string)).unwrap_or_default()
}

/// Small-window diagnostic for three versions of the scenario's clock:
/// the effective particle clock `ψ·K` without weight, the stated clock
/// `K` with the weight `ϱ`, and the h-transformed clock `K/h` under the
/// transformed motion.
pub fn run_admissibility(sc: &Scenario, probe: &AdmissibilityProbe, ctx: &RunContext) -> Result<RunResult> {
    let windows: Vec<(f64, f64)> = probe.widths.iter().map(|&w| (0.0, w)).collect();
    let xs: Vec<Vec<f64>> = probe.xs.iter().map(|&x| vec![x]).collect();
    let opts = |tag: u64| AdmissibilityOptions {
        dt: probe.dt,
        threshold: probe.threshold,
        seed: derive_seed(ctx.seed, tag),
        ..AdmissibilityOptions::default()
    };
    let mut res = blank(Experiment::Admissibility, sc, ctx.seed);
    let raw = ctx.install(|| check_admissibility(&sc.particle_clock, &sc.motion, None, &windows, &xs, probe.reps, opts(0)))??;
    push_modulus(&mut res, "raw", &raw);
    res.checks.push({
        let c = Check::qualitative("raw", raw.k_modulus.last().map_or(0.0, |m| m.plain.mean), probe.threshold, is_admissible(raw.plain_verdict));
        if sc.weight.is_some() {
            c.informational()
        } else {
            c
        }
    });
    res.notes.push(format!("raw clock {}: {}", sc.particle_clock.label(), verdict_str(raw.plain_verdict)));
    if let Some(rho) = sc.weight {
        let rf = move |x: &[f64]| rho.eval(x);
        let weighted = ctx.install(|| check_admissibility(&sc.clock, &sc.motion, Some(&rf), &windows, &xs, probe.reps, opts(1)))??;
        push_modulus(&mut res, "weighted", &weighted);
        let wv = weighted.weighted_verdict.unwrap_or(Verdict::Inconclusive);
        let wm = weighted.k_modulus.last().and_then(|m| m.weighted).map_or(0.0, |e| e.mean);
        res.checks.push(Check::qualitative("weighted", wm, probe.threshold, is_admissible(wv)));
        res.notes.push(format!("weighted clock {} with weight {}: {}", sc.clock.label(), rho.label(), verdict_str(wv)));
        let horizon = probe.widths.iter().fold(0.0_f64, |a, &b| a.max(b));
        match build_h(rho, &sc.motion, horizon, &HMethod::ClosedForm) {
            Ok(h) if !h.is_identity() => {
                let tr = transformed_system(&sc.system_spec(), &h)?;
                let rep = ctx.install(|| check_admissibility(&tr.clock, &tr.motion, None, &windows, &xs, probe.reps, opts(2)))??;
                push_modulus(&mut res, "transformed", &rep);
                let tm = rep.k_modulus.last().map_or(0.0, |m| m.plain.mean);
                res.checks.push(Check::qualitative("transformed", tm, probe.threshold, is_admissible(rep.plain_verdict)));
                res.notes.push(format!("transformed clock {} under {:?}: {}", tr.clock.label(), tr.motion, verdict_str(rep.plain_verdict)));
            }
            Ok(_) => res.notes.push("h ≡ 1: transformed clock equals the stated clock".into()),
            Err(Error::Unsupported(msg)) => res.notes.push(format!("transformed version skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    Ok(res.finish())
}

fn push_modulus(res: &mut RunResult, version: &str, rep: &AdmissibilityReport) {
    let mut table = Table::new(format!("modulus_{version}"), &["width", "plain", "plain_se", "weighted", "weighted_se"]);
    for m in &rep.k_modulus {
        let w = m.weighted.unwrap_or(Estimate::exact(0.0));
        table.push(vec![m.width, m.plain.mean, m.plain.stderr, w.mean, w.stderr]);
    }
    res.tables.push(table);
    if rep.floor_hits > 0 || rep.truncated_paths > 0 {
        res.notes.push(format!("{version}: {} floor hits, {} truncated paths", rep.floor_hits, rep.truncated_paths));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub beta: f64,
    /// Frequency of `sup_i |Z_{s_i}| > L` per level.
    pub exceedance: Vec<(f64, Estimate)>,
    /// `γ̂(δ)`: mean over replicas of the time-averaged `(Z_{s+δ} − Z_s)²`.
    pub increments: Vec<(f64, Estimate)>,
    /// `γ̂` nonincreasing as `δ` decreases, up to two standard errors.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub window: (f64, f64),
    /// Spacing of the output grid on which `Z` is observed.
    pub step: f64,
    pub rows: Vec<TightnessRow>,
}

impl TightnessReport {
    pub fn monotone(&self) -> bool {
        self.rows.iter().all(|r| r.monotone)
    }

    pub fn into_result(self, sc: &Scenario, seed: u64) -> RunResult {
        let mut res = blank(Experiment::Tightness, sc, seed);
        let mut ex = Table::new("exceedance", &["beta", "level", "frequency", "frequency_se"]);
        let mut inc = Table::new("increments", &["beta", "lag", "gamma", "gamma_se"]);
        for row in &self.rows {
            for (l, e) in &row.exceedance {
                ex.push(vec![row.beta, *l, e.mean, e.stderr]);
            }
            for (d, e) in &row.increments {
                inc.push(vec![row.beta, *d, e.mean, e.stderr]);
            }
            let largest = row.increments.first().map_or(0.0, |(_, e)| e.mean);
            res.checks.push(Check::qualitative(format!("monotone(beta={})", row.beta), largest, 0.0, row.monotone));
        }
        res.tables.push(ex);
        res.tables.push(inc);
        res.notes.push(format!(
            "Z = <f, beta X> observed every {} on [{}, {}]; suprema are taken over that grid",
            fmt_num(self.step),
            fmt_num(self.window.0),
            fmt_num(self.window.1)
        ));
        res.finish()
    }
}

/// Empirical mass-exceedance and squared-increment statistics of
/// `Z_s = ⟨f, βX_s⟩` on a regular output grid with spacing `min(lags)`.
#[allow(clippy::too_many_arguments)]
pub fn run_tightness_diagnostic(
    sc: &Scenario,
    f: TestFunction,
    betas: &[f64],
    window: (f64, f64),
    lags: &[f64],
    levels: &[f64],
    reps: usize,
    ctx: &RunContext,
) -> Result<TightnessReport> {
    let (r, t) = window;
    if !(t > r) || lags.is_empty() || betas.is_empty() || reps < 2 {
        return Err(Error::Config("tightness needs r < t, lags, betas and at least two replicas".into()));
    }
    let step = lags.iter().copied().fold(f64::INFINITY, f64::min);
    let n = ((t - r) / step).round() as usize;
    if !(step > 0.0) || n == 0 || ((n as f64) * step - (t - r)).abs() > 1e-9 * (t - r) {
        return Err(Error::Config(format!("smallest lag {step} must divide the window length {}", t - r)));
    }
    let mut lag_steps = vec![];
    for &d in lags {
        let m = (d / step).round() as usize;
        if ((m as f64) * step - d).abs() > 1e-9 * d || m > n {
            return Err(Error::Config(format!("lag {d} is not a multiple of {step} within the window")));
        }
        lag_steps.push((d, m));
    }
    lag_steps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let outputs: Vec<f64> = (0..=n).map(|i| if i == n { t } else { r + i as f64 * step }).collect();
    let mut rows = vec![];
    for (bi, &beta) in betas.iter().enumerate() {
        let sys = ctx.system(sc, beta)?;
        let rep = ctx.replicas(reps, bi as u64);
        let samples = run_replicas(rep.reps, rep.seed, rep.workers, |_, rng| {
            let pop = init_poisson(&sc.initial, beta, r, sys.caps.population, rng)?;
            let traj = sys.simulate(pop, t, &outputs, rng)?;
            traj.ensure_complete()?;
            let z: Vec<f64> = traj.measures.iter().map(|m| m.pair(|x| f.eval(x))).collect();
            let sup = z.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let exceed: Vec<f64> = levels.iter().map(|&l| if sup > l { 1.0 } else { 0.0 }).collect();
            let incs: Vec<f64> = lag_steps
                .iter()
                .map(|&(_, m)| {
                    let k = n + 1 - m;
                    (0..k).map(|i| (z[i + m] - z[i]).powi(2)).sum::<f64>() / k as f64
                })
                .collect();
            Ok((exceed, incs))
        })?;
        let column = |get: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| {
            let mut m = Moments::default();
            for s in &samples {
                m.push(get(s));
            }
            m.estimate()
        };
        let exceedance: Vec<(f64, Estimate)> =
            levels.iter().enumerate().map(|(j, &l)| (l, column(&|s| s.0[j]))).collect();
        let increments: Vec<(f64, Estimate)> =
            lag_steps.iter().enumerate().map(|(j, &(d, _))| (d, column(&|s| s.1[j]))).collect();
        let monotone = increments
            .windows(2)
            .all(|w| w[1].1.mean <= w[0].1.mean + 2.0 * combined_stderr(w[0].1.stderr, w[1].1.stderr));
        rows.push(TightnessRow { beta, exceedance, increments, monotone });
    }
    Ok(TightnessReport { window, step, rows })
}

/// Monte Carlo estimate of `Π_{r,μ}[g]` summed over the atoms of `μ`.
fn motion_pairing(
    mu: &AtomicMeasure<f64>,
    seed: u64,
    per_atom: impl Fn(&[f64], &mut crate::rng::StreamRng) -> Result<Estimate>,
) -> Result<Estimate> {
    let (mut mean, mut var) = (0.0, 0.0);
    let mut n = u64::MAX;
    for (i, a) in mu.atoms().iter().enumerate() {
        let mut rng = stream(seed, purpose::MOTION, i as u64);
        let e = per_atom(&a.position, &mut rng)?;
        mean += a.weight * e.mean;
        var += (a.weight * e.stderr).powi(2);
        n = n.min(e.n);
    }
    Ok(Estimate { mean, stderr: var.sqrt(), n })
}

/// Mean-mass domination `P¹[⟨f, X_t⟩] ≤ Π_{r,μ}[f(ξ_t)]` and the maximal
/// inequality `P¹[sup_s X_s(U) ≥ c] ≤ Π_{r,μ}[τ_U ≤ t]/c` for each
/// scenario, with `U = {x ≥ x̄ + 1.5}` (x̄ the initial centre of mass) and
/// `c = 2`.
pub fn run_lemma_suite(
    scenarios: &[Scenario],
    f: Option<TestFunction>,
    r: f64,
    t: f64,
    reps: usize,
    ctx: &RunContext,
) -> Result<RunResult> {
    const C: f64 = 2.0;
    const OFFSET: f64 = 1.5;
    let label = scenarios.iter().map(|s| s.label.as_str()).collect::<Vec<_>>().join(", ");
    let mut res = RunResult::new(Experiment::Lemmas.as_str(), &label, String::new(), ctx.seed);
    let mut table = Table::new(
        "lemmas",
        &["scenario", "mean", "mean_se", "semigroup", "semigroup_se", "frequency", "frequency_se", "bound", "bound_se"],
    );
    for (k, sc) in scenarios.iter().enumerate() {
        let f = f.unwrap_or(sc.default_f);
        let fv = |x: &[f64]| f.eval(x);
        let sys = ctx.system(sc, 1.0)?;
        let mu = &sc.initial;
        let tag = 4 * k as u64;
        let mean = mean_pairing(&sys, mu, &fv, r, t, ctx.replicas(reps, tag))?;
        let motion = &sc.motion;
        let semigroup = ctx.install(|| {
            motion_pairing(mu, derive_seed(ctx.seed, tag + 1), |x, rng| {
                semigroup_mc(motion, &fv, r, x, t, reps, McOptions::default(), rng)
            })
        })??;
        let centre = mu.pair(|x| x[0]) / mu.total_mass();
        let level = centre + OFFSET;
        let u = move |_: f64, x: &[f64]| x[0] >= level;
        let freq = occupation_frequency(&sys, mu, &u, C, r, t, ctx.replicas(reps, tag + 2))?;
        let set = HalfLine { level, below: false };
        let hit = ctx.install(|| {
            motion_pairing(mu, derive_seed(ctx.seed, tag + 3), |x, rng| {
                hitting_probability(motion, &set, r, x, t, reps, 1e-3, rng)
            })
        })??;
        let bound = Estimate { mean: hit.mean / C, stderr: hit.stderr / C, n: hit.n };
        res.checks.push(Check::upper(format!("domination[{}]", sc.label), mean.mean, mean.stderr, semigroup.mean, semigroup.stderr));
        res.checks.push(Check::upper(format!("maximal[{}]", sc.label), freq.mean, freq.stderr, bound.mean, bound.stderr));
        table.push(vec![
            k as f64,
            mean.mean,
            mean.stderr,
            semigroup.mean,
            semigroup.stderr,
            freq.mean,
            freq.stderr,
            bound.mean,
            bound.stderr,
        ]);
        res.notes.push(format!("scenario {k}: {}; U = {{x >= {}}}, c = {C}", sc.label, fmt_num(level)));
    }
    res.tables.push(table);
    Ok(res.finish())
}

/// Sup-norm change of `v(r, ·)` when both grid steps are halved, compared
/// at the coarse nodes against `4·tol`.
pub fn run_grid_convergence(
    sc: &Scenario,
    f: TestFunction,
    grid: &SpaceTimeGrid<f64>,
    opts: &SolverOptions<f64>,
) -> Result<RunResult> {
    let fine = grid.refined();
    let fv = |x: &[f64]| f.eval(x);
    let (mech, k) = sc.solver_parts(grid);
    let (coarse_v, fine_v) = rayon::join(
        || solve_v(&fv, mech, k, &sc.motion, grid, opts),
        || solve_v(&fv, mech, k, &sc.motion, &fine, opts),
    );
    let (coarse_v, fine_v) = (coarse_v?, fine_v?);
    let stride = match (&grid.space, &fine.space) {
        (SpaceNodes::Uniform { .. }, SpaceNodes::Uniform { .. }) => 2,
        _ => 0,
    };
    let mut res = blank(Experiment::GridConvergence, sc, 0);
    let mut table = Table::new("grid_convergence", &["x", "coarse", "fine", "difference"]);
    let nodes = grid.nodes();
    let mut diff = 0.0_f64;
    for (i, &c) in coarse_v.at_r().iter().enumerate() {
        let fval = fine_v.at_r()[i * stride];
        let d = (c - fval).abs();
        diff = diff.max(d);
        table.push(vec![if stride == 0 { 0.0 } else { nodes[i] }, c, fval, d]);
    }
    res.checks.push(Check::qualitative("halving", diff, 4.0 * opts.tol, diff < 4.0 * opts.tol));
    res.tables.push(table);
    Ok(res.finish())
}
