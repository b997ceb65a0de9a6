//! Weight functions, the space-time harmonic function `h(r, x) = Π_{r,x}[ϱ(ξ_T)]`
//! and the h-transformed system `(ξ^h, ψ_h, K^h)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive_functional::{phi_p, AdditiveFunctional};
use crate::branching::{BranchingMechanism, SpatialFn};
use crate::error::{Error, Result};
use crate::loglaplace::{solve_moment, solve_v, Boundary, GridFunction, SolverOptions, SpaceTimeGrid};
use crate::measure::AtomicMeasure;
use crate::motion::{semigroup_mc, McOptions, MotionModel};
use crate::rng::{purpose, stream};
use crate::scalar::Real;
use crate::stats::Estimate;

/// Relative threshold below which `h` counts as zero.
pub const H_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFunction {
    One,
    AbsX,
    /// `(1 + |x|²)^{−p/2}`.
    PhiP { p: f64 },
}

impl WeightFunction {
    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match *self {
            WeightFunction::One => T::one(),
            WeightFunction::AbsX => x.iter().map(|&c| c * c).sum::<T>().sqrt(),
            WeightFunction::PhiP { p } => phi_p(T::lit(p), x),
        }
    }

    pub fn as_spatial<T: Real>(&self) -> SpatialFn<T> {
        let w = *self;
        Arc::new(move |_, x: &[T]| w.eval(x))
    }

    /// Points where `ϱ` vanishes.
    pub fn zero_set<T: Real>(&self, dim: usize) -> Vec<Vec<T>> {
        match self {
            WeightFunction::AbsX => vec![vec![T::zero(); dim]],
            _ => vec![],
        }
    }

    pub fn label(&self) -> String {
        match self {
            WeightFunction::One => "one".into(),
            WeightFunction::AbsX => "abs_x".into(),
            WeightFunction::PhiP { p } => format!("phi_p(p={p})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioPoint {
    pub x: f64,
    pub elapsed: f64,
    pub ratio: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightConstant {
    /// `max(sup ratio, sup 1/ratio)` over the table.
    pub c_t: f64,
    /// Same with every ratio moved 3 standard errors outward.
    pub c_t_upper: f64,
    pub table: Vec<RatioPoint>,
}

/// Estimates `Π_{r,x}[ϱ(ξ_t)]/ϱ(x)` at every `(x, t − r)` of the grids.
pub fn estimate_weight_constant(
    rho: WeightFunction,
    motion: &MotionModel,
    x_grid: &[f64],
    elapsed: &[f64],
    reps: usize,
    seed: u64,
) -> Result<WeightConstant> {
    if x_grid.iter().any(|&x| rho.eval(&[x]) <= 0.0) {
        return Err(Error::Domain("x grid meets the zero set of the weight".into()));
    }
    let cells: Vec<(usize, f64, f64)> = elapsed
        .iter()
        .flat_map(|&t| x_grid.iter().map(move |&x| (x, t)))
        .enumerate()
        .map(|(i, (x, t))| (i, x, t))
        .collect();
    let table = cells
        .par_iter()
        .map(|&(i, x, t)| {
            let mut rng = stream(seed, purpose::WEIGHT, i as u64);
            let e = semigroup_mc(motion, &|y| rho.eval(y), 0.0, &[x], t, reps, McOptions::default(), &mut rng)?;
            let w = rho.eval(&[x]);
            Ok(RatioPoint { x, elapsed: t, ratio: Estimate { mean: e.mean / w, stderr: e.stderr / w, n: e.n } })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut c_t: f64 = 1.0;
    let mut c_t_upper: f64 = 1.0;
    for p in &table {
        let (m, s) = (p.ratio.mean, p.ratio.stderr);
        c_t = c_t.max(m).max(1.0 / m);
        let low = m - 3.0 * s;
        c_t_upper = c_t_upper.max(m + 3.0 * s).max(if low > 0.0 { 1.0 / low } else { f64::INFINITY });
    }
    Ok(WeightConstant { c_t, c_t_upper, table })
}

/// `h` tabulated on a tensor grid of times and one-dimensional positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HTable<T> {
    pub times: Vec<T>,
    pub xs: Vec<T>,
    /// `values[j][i] = h(times[j], xs[i])`.
    pub values: Vec<Vec<T>>,
}

impl<T: Real> HTable<T> {
    fn eval(&self, s: T, x: T) -> T {
        let (j0, j1, wt) = bracket(&self.times, s);
        let (i0, i1, wx) = bracket(&self.xs, x);
        let row = |j: usize| self.values[j][i0] * (T::one() - wx) + self.values[j][i1] * wx;
        row(j0) * (T::one() - wt) + row(j1) * wt
    }
}

/// Indices and weight for linear interpolation, clamped to the ends.
fn bracket<T: Real>(nodes: &[T], x: T) -> (usize, usize, T) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0, T::zero());
    }
    if x >= nodes[n - 1] {
        return (n - 1, n - 1, T::zero());
    }
    let i = nodes.partition_point(|&v| v <= x) - 1;
    (i, i + 1, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

#[derive(Debug, Clone)]
pub enum HRepr<T: Real> {
    /// `h ≡ c`.
    Constant(T),
    /// `h(r, x) = |x|`.
    AbsX,
    Grid(GridFunction<T>),
    Table(HTable<T>),
}

#[derive(Debug, Clone)]
pub struct HFunction<T: Real> {
    pub repr: HRepr<T>,
    pub horizon: T,
    pub rho: WeightFunction,
}

impl<T: Real> HFunction<T> {
    /// `h(s, x)`; grid and table forms clamp `x` to their range.
    pub fn eval(&self, s: T, x: &[T]) -> T {
        match &self.repr {
            HRepr::Constant(c) => *c,
            HRepr::AbsX => WeightFunction::AbsX.eval(x),
            HRepr::Grid(g) => {
                let nodes = g.grid.nodes();
                let xc = if g.grid.is_homogeneous() {
                    T::zero()
                } else {
                    x[0].max(nodes[0]).min(nodes[nodes.len() - 1])
                };
                let sc = s.max(g.grid.r).min(g.grid.t);
                g.eval(sc, xc).unwrap_or(T::nan())
            }
            HRepr::Table(t) => t.eval(s, x[0]),
        }
    }

    pub fn as_spatial(&self) -> SpatialFn<T> {
        let h = self.clone();
        Arc::new(move |s, x: &[T]| h.eval(s, x))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.repr, HRepr::Constant(c) if c == T::one())
    }

    /// Whether the h-transformed motion is the motion itself.
    pub fn is_constant(&self) -> bool {
        matches!(self.repr, HRepr::Constant(_))
    }

    fn check_positive_nodes(&self) -> Result<()> {
        let vals: Vec<T> = match &self.repr {
            HRepr::Grid(g) => g.values.iter().flatten().copied().collect(),
            HRepr::Table(t) => t.values.iter().flatten().copied().collect(),
            HRepr::Constant(c) => vec![*c],
            HRepr::AbsX => return Ok(()),
        };
        let max = vals.iter().fold(T::zero(), |m, &v| m.max(v));
        if vals.iter().any(|&v| !(v > T::lit(H_EPSILON) * max)) {
            return Err(Error::Degenerate(format!("h vanishes at a grid node (max h = {max})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum HMethod<T: Real> {
    ClosedForm,
    /// Solves the first-moment equation with terminal data `ϱ` on `grid`,
    /// whose end time is the horizon.
    Grid { grid: SpaceTimeGrid<T>, opts: SolverOptions<T> },
    /// Tabulates `semigroup_mc` and interpolates linearly.
    Mc { xs: Vec<f64>, times: Vec<f64>, reps: usize, seed: u64 },
}

pub fn build_h<T: Real>(rho: WeightFunction, motion: &MotionModel, horizon: T, method: &HMethod<T>) -> Result<HFunction<T>> {
    motion.validate()?;
    let repr = match method {
        HMethod::ClosedForm => match (rho, motion) {
            (WeightFunction::One, m) if m.is_conservative() => HRepr::Constant(T::one()),
            (WeightFunction::AbsX, MotionModel::KilledBrownianMotion1d) => HRepr::AbsX,
            _ => {
                return Err(Error::Unsupported(format!(
                    "no closed form for h with weight {} and motion {motion:?}",
                    rho.label()
                )))
            }
        },
        HMethod::Grid { grid, opts } => {
            if grid.t != horizon {
                return Err(Error::Config(format!("h grid ends at {} but the horizon is {horizon}", grid.t)));
            }
            let zero: SpatialFn<T> = Arc::new(|_, _: &[T]| T::zero());
            let g = solve_moment(&|x: &[T]| rho.eval(x), &zero, &AdditiveFunctional::zero(), motion, grid, opts)?;
            HRepr::Grid(g)
        }
        HMethod::Mc { xs, times, reps, seed } => {
            if times.iter().any(|&s| s > horizon.as_f64()) || xs.is_empty() || times.is_empty() {
                return Err(Error::Config("mc table needs nonempty grids with times ≤ horizon".into()));
            }
            let rows = times
                .par_iter()
                .enumerate()
                .map(|(j, &s)| {
                    xs.iter()
                        .enumerate()
                        .map(|(i, &x)| {
                            let mut rng = stream(*seed, purpose::WEIGHT, (j * xs.len() + i) as u64);
                            let e = semigroup_mc(motion, &|y| rho.eval(y), s, &[x], horizon.as_f64(), *reps, McOptions::default(), &mut rng)?;
                            Ok(T::lit(e.mean))
                        })
                        .collect::<Result<Vec<T>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            HRepr::Table(HTable {
                times: times.iter().map(|&s| T::lit(s)).collect(),
                xs: xs.iter().map(|&x| T::lit(x)).collect(),
                values: rows,
            })
        }
    };
    Ok(HFunction { repr, horizon, rho })
}

/// Finite measure with `⟨ϱ, μ⟩ < ∞` and no mass on `{ϱ = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperedMeasure<T: Real> {
    pub measure: AtomicMeasure<T>,
    pub rho: WeightFunction,
}

impl<T: Real> TemperedMeasure<T> {
    pub fn new(measure: AtomicMeasure<T>, rho: WeightFunction) -> Result<Self> {
        let total = measure.pair(|x| rho.eval(x));
        if !total.is_finite() {
            return Err(Error::Domain("⟨ϱ, μ⟩ is not finite".into()));
        }
        if measure.atoms().iter().any(|a| rho.eval::<T>(&a.position) == T::zero()) {
            return Err(Error::Degenerate("measure charges the zero set of ϱ".into()));
        }
        Ok(Self { measure, rho })
    }

    pub fn weighted_mass(&self) -> T {
        self.measure.pair(|x| self.rho.eval(x))
    }
}

/// How the h-transformed motion is realized by the particle simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HSampling {
    /// The transformed motion is sampled directly.
    Exact,
    /// The raw motion is sampled and every atom at time `t` carries the
    /// lineage weight `h(t, x)/h(r, x_root)`; valid for first moments.
    ImportanceWeighted,
}

/// Motion, mechanism, clock and weight of a (possibly singular) system.
#[derive(Debug, Clone)]
pub struct SystemSpec<T: Real> {
    pub motion: MotionModel,
    pub mechanism: BranchingMechanism<T>,
    pub clock: AdditiveFunctional<T>,
    pub rho: WeightFunction,
}

#[derive(Debug, Clone)]
pub struct TransformedSystem<T: Real> {
    pub motion: MotionModel,
    pub mechanism: BranchingMechanism<T>,
    pub clock: AdditiveFunctional<T>,
    pub h: HFunction<T>,
    pub sampling: HSampling,
    pub note: String,
}

impl<T: Real> TransformedSystem<T> {
    /// Lineage weight for the particle simulator, if one is needed.
    pub fn lineage_weight(&self) -> Option<SpatialFn<T>> {
        (self.sampling == HSampling::ImportanceWeighted).then(|| self.h.as_spatial())
    }
}

/// `(ξ^h, ψ_h, K^h)` with `ψ_h(s, x, z) = ψ(s, x, h z)` and `K^h = K/h`.
pub fn transformed_system<T: Real>(sys: &SystemSpec<T>, h: &HFunction<T>) -> Result<TransformedSystem<T>> {
    h.check_positive_nodes()?;
    if h.is_identity() {
        return Ok(TransformedSystem {
            motion: sys.motion.clone(),
            mechanism: sys.mechanism.clone(),
            clock: sys.clock.clone(),
            h: h.clone(),
            sampling: HSampling::Exact,
            note: "h ≡ 1: identity transform".into(),
        });
    }
    let hs = h.as_spatial();
    let mechanism = BranchingMechanism::HTransformed { base: Box::new(sys.mechanism.clone()), h: hs.clone() };
    let clock = sys.clock.divided_by(hs, h.rho.zero_set(sys.motion.dim()), "h");
    let (motion, sampling, note) = match (&h.repr, &sys.motion) {
        (HRepr::Constant(_), m) => (m.clone(), HSampling::Exact, "constant h: motion unchanged".to_string()),
        (HRepr::AbsX, MotionModel::KilledBrownianMotion1d) => (
            MotionModel::Bessel3,
            HSampling::Exact,
            "killed Brownian motion transformed by |x| is the Bessel-3 process".to_string(),
        ),
        (_, m) => (
            m.clone(),
            HSampling::ImportanceWeighted,
            "raw motion sampled; atoms carry lineage weights h(t, x)/h(r, x_root), valid for first moments".to_string(),
        ),
    };
    Ok(TransformedSystem { motion, mechanism, clock, h: h.clone(), sampling, note })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    /// `μ(dx) ↦ h(t, x)⁻¹ μ(dx)`.
    Divide,
    /// `μ(dx) ↦ h(t, x) μ(dx)`.
    Multiply,
}

pub fn map_measure<T: Real>(mu: &AtomicMeasure<T>, h: &HFunction<T>, t: T, direction: MapDirection) -> Result<AtomicMeasure<T>> {
    let hv: Vec<T> = mu.atoms().iter().map(|a| h.eval(t, &a.position)).collect();
    let max = hv.iter().fold(T::zero(), |m, &v| m.max(v));
    let mut out = AtomicMeasure::empty();
    for (a, &v) in mu.atoms().iter().zip(&hv) {
        match direction {
            MapDirection::Divide => {
                if !(v > T::lit(H_EPSILON) * max) {
                    return Err(Error::Degenerate(format!("h(t, x) = {v} at atom {:?}", a.position.as_slice())));
                }
                out.push(a.position.clone(), a.weight / v)?;
            }
            MapDirection::Multiply => {
                if v > T::zero() {
                    out.push(a.position.clone(), a.weight * v)?;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IdentityReport<T: Real> {
    /// `‖v − h·v_h‖∞ / ‖v‖∞` at time `r` over the raw grid nodes.
    pub relative_discrepancy: T,
    /// Spatial window of the comparison.
    pub compared_on: (T, T),
    pub v: GridFunction<T>,
    pub v_h: GridFunction<T>,
}

/// Solves the raw log-Laplace equation and its transformed version with
/// terminal data `f/h(t, ·)` and compares `v` with `h·v_h`. Where `h`
/// vanishes the terminal ratio is taken as its limit from nearby points.
///
/// Truncation ends of the raw grid impose different boundary conditions
/// on the two problems, so nodes within `6√(t − r)` of a truncated end
/// are left out of the comparison. An absorbing or entrance end at the
/// origin is exact and kept.
#[allow(clippy::too_many_arguments)]
pub fn verify_identity<T: Real>(
    sys: &SystemSpec<T>,
    h: &HFunction<T>,
    f: &(dyn Fn(&[T]) -> T + Sync),
    raw_grid: &SpaceTimeGrid<T>,
    h_grid: &SpaceTimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<IdentityReport<T>> {
    let tr = transformed_system(sys, h)?;
    let t = h_grid.t;
    let ratio = |x: &[T]| {
        let hv = h.eval(t, x);
        if hv > T::zero() {
            return f(x) / hv;
        }
        let delta = T::epsilon().sqrt();
        let shifted: Vec<T> = x.iter().map(|&c| c + delta * c.abs().max(T::one())).collect();
        f(&shifted) / h.eval(t, &shifted)
    };
    let (v, v_h) = rayon::join(
        || solve_v(&|x: &[T]| f(x), &sys.mechanism, &sys.clock, &sys.motion, raw_grid, opts),
        || solve_v(&ratio, &tr.mechanism, &tr.clock, &tr.motion, h_grid, opts),
    );
    let (v, v_h) = (v?, v_h?);
    let r = raw_grid.r;
    let same_nodes = raw_grid.space == h_grid.space;
    let (lo, hi) = comparison_window(raw_grid, &sys.motion);
    let mut diff = T::zero();
    let mut norm = T::zero();
    for (i, &x) in raw_grid.nodes().iter().enumerate() {
        if !raw_grid.is_homogeneous() && (x < lo || x > hi) {
            continue;
        }
        let raw = v.at_r()[i];
        let hx = if raw_grid.is_homogeneous() { T::zero() } else { x };
        let vh = if same_nodes { v_h.at_r()[i] } else { v_h.interpolate(0, hx)? };
        let other = h.eval(r, &[hx]) * vh;
        diff = diff.max((raw - other).abs());
        norm = norm.max(raw.abs());
    }
    let relative_discrepancy = if norm > T::zero() { diff / norm } else { diff };
    Ok(IdentityReport { relative_discrepancy, compared_on: (lo, hi), v, v_h })
}

fn comparison_window<T: Real>(grid: &SpaceTimeGrid<T>, motion: &MotionModel) -> (T, T) {
    if grid.is_homogeneous() {
        return (T::neg_infinity(), T::infinity());
    }
    let nodes = grid.nodes();
    let (a, b) = (nodes[0], nodes[nodes.len() - 1]);
    let margin = T::lit(6.0) * (grid.t - grid.r).sqrt();
    let exact_left = a == T::zero()
        && (grid.boundary == Boundary::AbsorbingAtZero || matches!(motion, MotionModel::Bessel3));
    let lo = if exact_left { a } else { a + margin };
    (lo, b - margin)
}
