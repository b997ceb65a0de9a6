//! Backward log-Laplace and first-moment equations on a space-time grid,
//! solved by splitting into a motion step and a pointwise reaction step.

mod grid;
mod semigroup;

use std::num::NonZeroUsize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive_functional::AdditiveFunctional;
use crate::branching::{BranchingMechanism, RescaledFamily, SpatialFn};
use crate::error::{Error, Result};
use crate::motion::MotionModel;
use crate::scalar::Real;

pub use grid::{Boundary, GridFunction, SolveDiagnostics, SpaceNodes, SpaceTimeGrid};
use semigroup::Generator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// Implicit Euler motion step followed by an implicit Euler reaction.
    #[default]
    Lie,
    /// Half reaction, Crank–Nicolson motion step, half reaction.
    Strang,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<T> {
    /// Target sup-norm change between successive time refinements.
    pub tol: T,
    pub splitting: Splitting,
    pub max_refinements: usize,
    /// Extra points where `k·ψ` is singular; nearby nodes use cell averages.
    pub singular_points: Vec<T>,
}

impl<T: Real> SolverOptions<T> {
    pub fn new(tol: T) -> Self {
        Self { tol, splitting: Splitting::Lie, max_refinements: 14, singular_points: vec![] }
    }

    pub fn strang(mut self) -> Self {
        self.splitting = Splitting::Strang;
        self
    }

    pub fn with_singular_points(mut self, points: Vec<T>) -> Self {
        self.singular_points = points;
        self
    }
}

const QUADRATURE_DEGREE: usize = 16;

/// Per-node quadrature of the reaction coefficients: a single point for
/// ordinary nodes, a Gauss–Legendre cell average next to singular points.
struct NodeQuadrature<T> {
    points: Vec<Vec<(T, T)>>,
}

impl<T: Real> NodeQuadrature<T> {
    fn new(grid: &SpaceTimeGrid<T>, singular: &[T]) -> Self {
        let nodes = grid.nodes();
        let Some(h) = grid.h() else {
            return Self { points: vec![vec![(T::zero(), T::one())]] };
        };
        let rule = gauss_quad::legendre::GaussLegendre::new(NonZeroUsize::new(QUADRATURE_DEGREE).expect("nonzero"));
        let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
        let half = T::lit(0.5) * h;
        let points = nodes
            .iter()
            .map(|&x| {
                let near = singular.iter().any(|&p| (x - p).abs() < T::lit(1.5) * h);
                if !near {
                    return vec![(x, T::one())];
                }
                let (a, b) = ((x - half).max(lo), (x + half).min(hi));
                rule.as_node_weight_pairs()
                    .iter()
                    .map(|&(z, w)| {
                        let xq = T::lit(0.5) * ((b - a) * T::lit(z) + (b + a));
                        (xq, T::lit(0.5 * w))
                    })
                    .collect()
            })
            .collect();
        Self { points }
    }
}

type Rate<'a, T> = Box<dyn Fn(T, usize, T) -> (T, T) + Sync + 'a>;

enum Reaction<'a, T> {
    /// `y' = −R(y)` in backward time, `R ≥ 0`, solution in `[0, ∞)`.
    Absorb(Rate<'a, T>),
    /// `y' = +R(y)` in backward time, `R ≥ 0`, solution in `[0, 1]`.
    Feed(Rate<'a, T>),
    /// `y' = −c y`.
    Linear(Box<dyn Fn(T, usize) -> T + Sync + 'a>),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scheme {
    ImplicitEuler,
    Trapezoid,
}

impl<T: Real> Reaction<'_, T> {
    fn step(&self, i: usize, s: T, tau: T, b: T, scheme: Scheme) -> std::result::Result<T, &'static str> {
        match self {
            Reaction::Linear(c) => Ok(b * (-tau * c(s, i)).exp()),
            Reaction::Absorb(rate) => {
                let b = b.max(T::zero());
                if b == T::zero() {
                    return Ok(T::zero());
                }
                let f = |y: T| {
                    let (r, dr) = rate(s, i, y);
                    (-r, -dr)
                };
                if scheme == Scheme::Trapezoid {
                    let half = T::lit(0.5) * tau;
                    let rhs = b + half * f(b).0;
                    if rhs > T::zero() {
                        return implicit_root(f, half, rhs, T::zero(), rhs);
                    }
                }
                implicit_root(f, tau, b, T::zero(), b)
            }
            Reaction::Feed(rate) => {
                let b = b.min(T::one()).max(T::zero());
                let f = |y: T| rate(s, i, y);
                if scheme == Scheme::Trapezoid {
                    let half = T::lit(0.5) * tau;
                    let rhs = b + half * f(b).0;
                    if rhs < T::one() {
                        return implicit_root(f, half, rhs, rhs, T::one());
                    }
                }
                implicit_root(f, tau, b, b, T::one())
            }
        }
    }
}

/// Root of `y − τF(y) = rhs` in `[lo, hi]` by Newton steps safeguarded
/// with bisection; requires the left side to be increasing there.
fn implicit_root<T: Real>(
    f: impl Fn(T) -> (T, T),
    tau: T,
    rhs: T,
    lo: T,
    hi: T,
) -> std::result::Result<T, &'static str> {
    let g = |y: T| {
        let (v, d) = f(y);
        (y - tau * v - rhs, T::one() - tau * d)
    };
    let (mut lo, mut hi) = (lo, hi);
    let (glo, ghi) = (g(lo).0, g(hi).0);
    if !glo.is_finite() || !ghi.is_finite() {
        return Err("reaction term is not finite on the bracket");
    }
    if glo >= T::zero() {
        return Ok(lo);
    }
    if ghi <= T::zero() {
        return Ok(hi);
    }
    let scale = T::one().max(hi.abs());
    let eps = T::lit(4.0) * T::epsilon() * scale;
    let mut y = T::lit(0.5) * (lo + hi);
    for _ in 0..200 {
        let (gv, gd) = g(y);
        if !gv.is_finite() {
            return Err("reaction term is not finite");
        }
        if gv == T::zero() {
            return Ok(y);
        }
        if gv < T::zero() {
            lo = y;
        } else {
            hi = y;
        }
        if hi - lo <= eps {
            return Ok(T::lit(0.5) * (lo + hi));
        }
        let newton = y - gv / gd;
        let next = if gd > T::zero() && newton > lo && newton < hi { newton } else { T::lit(0.5) * (lo + hi) };
        if (next - y).abs() <= eps {
            return Ok(next);
        }
        y = next;
    }
    Err("implicit reaction step did not converge")
}

struct Problem<'a, T> {
    grid: &'a SpaceTimeGrid<T>,
    generator: Option<Generator<T>>,
    terminal: Vec<T>,
    reaction: Reaction<'a, T>,
    cemetery: T,
    opts: &'a SolverOptions<T>,
}

impl<T: Real> Problem<'_, T> {
    /// Backward sweep with `nt` steps; returns the declared levels.
    fn sweep(&self, nt: usize) -> Result<(Vec<Vec<T>>, T)> {
        let g = self.grid;
        let declared = g.nt;
        let factor = nt / declared;
        let fine = g.with_nt(nt);
        let tau = fine.tau();
        let steppers = self.generator.as_ref().map(|gen| match self.opts.splitting {
            Splitting::Lie => (gen.theta_step(T::one(), tau), None),
            Splitting::Strang => {
                (gen.theta_step(T::lit(0.5), tau), Some(gen.theta_step(T::one(), T::lit(0.5) * tau)))
            }
        });
        let mut u = self.terminal.clone();
        let mut out = vec![Vec::new(); declared + 1];
        out[declared] = u.clone();
        let mut scratch = Vec::with_capacity(u.len());
        let mut boundary_mag = T::zero();
        for step in (0..nt).rev() {
            let s_hi = fine.time(step + 1);
            let s_lo = fine.time(step);
            if self.opts.splitting == Splitting::Strang {
                self.react(&mut u, s_hi, T::lit(0.5) * tau, Scheme::Trapezoid)?;
            }
            if let Some((main, start)) = &steppers {
                match start {
                    Some(half) if step + 1 == nt => {
                        half.apply(&mut u, &mut scratch, self.cemetery);
                        half.apply(&mut u, &mut scratch, self.cemetery);
                    }
                    _ => main.apply(&mut u, &mut scratch, self.cemetery),
                }
                self.check_undershoot(&u, s_lo)?;
            }
            match self.opts.splitting {
                Splitting::Lie => self.react(&mut u, s_lo, tau, Scheme::ImplicitEuler)?,
                Splitting::Strang => self.react(&mut u, s_lo, T::lit(0.5) * tau, Scheme::Trapezoid)?,
            }
            if !g.is_homogeneous() && g.boundary != Boundary::AbsorbingAtZero {
                boundary_mag = boundary_mag.max(u[0].abs()).max(u[u.len() - 1].abs());
            }
            if step % factor == 0 {
                out[step / factor] = u.clone();
            }
        }
        Ok((out, boundary_mag))
    }

    fn check_undershoot(&self, u: &[T], s: T) -> Result<()> {
        let ceiling = match self.reaction {
            Reaction::Feed(_) => T::one() + self.opts.tol,
            _ => T::infinity(),
        };
        for (i, &v) in u.iter().enumerate() {
            if !v.is_finite() || v < -self.opts.tol || v > ceiling {
                return Err(Error::Solver {
                    time: s.as_f64(),
                    position: self.grid.node(i).as_f64(),
                    reason: format!("motion step produced {v}"),
                });
            }
        }
        Ok(())
    }

    fn react(&self, u: &mut [T], s: T, tau: T, scheme: Scheme) -> Result<()> {
        let gen = self.generator.as_ref();
        let work = |(i, v): (usize, &mut T)| -> Result<()> {
            if gen.is_some_and(|g| g.is_dirichlet(i)) {
                return Ok(());
            }
            *v = self.reaction.step(i, s, tau, *v, scheme).map_err(|reason| Error::Solver {
                time: s.as_f64(),
                position: self.grid.node(i).as_f64(),
                reason: reason.into(),
            })?;
            Ok(())
        };
        if u.len() >= 512 {
            u.par_iter_mut().enumerate().try_for_each(work)
        } else {
            u.iter_mut().enumerate().try_for_each(work)
        }
    }

    /// Doubles the number of time steps until successive solutions agree.
    fn solve(self) -> Result<GridFunction<T>> {
        let g = self.grid;
        let (mut prev, _) = self.sweep(g.nt)?;
        for level in 1..=self.opts.max_refinements {
            let nt = g.nt << level;
            let (next, boundary_magnitude) = self.sweep(nt)?;
            let change = prev
                .iter()
                .flatten()
                .zip(next.iter().flatten())
                .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
            if change < self.opts.tol {
                let mut values = next;
                if matches!(self.reaction, Reaction::Absorb(_) | Reaction::Linear(_)) {
                    values.iter_mut().flatten().for_each(|v| *v = v.max(T::zero()));
                } else {
                    values.iter_mut().flatten().for_each(|v| *v = v.max(T::zero()).min(T::one()));
                }
                return Ok(GridFunction {
                    grid: g.clone(),
                    values,
                    diagnostics: SolveDiagnostics {
                        refinements: level,
                        final_nt: nt,
                        refinement_change: change,
                        boundary_magnitude,
                    },
                });
            }
            prev = next;
        }
        Err(Error::Solver {
            time: g.r.as_f64(),
            position: f64::NAN,
            reason: format!("time refinement did not reach tolerance {} in {} doublings", self.opts.tol, self.opts.max_refinements),
        })
    }
}

fn terminal_values<T: Real>(
    grid: &SpaceTimeGrid<T>,
    generator: Option<&Generator<T>>,
    f: &dyn Fn(&[T]) -> T,
    map: impl Fn(T) -> T,
    cemetery: T,
) -> Result<Vec<T>> {
    (0..grid.nx())
        .map(|i| {
            if generator.is_some_and(|g| g.is_dirichlet(i)) {
                return Ok(cemetery);
            }
            let x = grid.node(i);
            let v = f(&[x]);
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("terminal data must be finite and nonnegative, got f({x}) = {v}")));
            }
            Ok(map(v))
        })
        .collect()
}

fn quadrature<T: Real>(grid: &SpaceTimeGrid<T>, k: &AdditiveFunctional<T>, opts: &SolverOptions<T>) -> NodeQuadrature<T> {
    let mut singular: Vec<T> = k.singularities().iter().filter_map(|p| p.first().copied()).collect();
    singular.extend(opts.singular_points.iter().copied());
    NodeQuadrature::new(grid, &singular)
}

/// Solves `v(r,x) = Π_{r,x}[f(ξ_t) − ∫_r^t ψ^s(ξ_s, v(s, ξ_s)) K(ds)]`;
/// for killed motions the cemetery contributes 0.
pub fn solve_v<T: Real>(
    f: &dyn Fn(&[T]) -> T,
    mech: &BranchingMechanism<T>,
    k: &AdditiveFunctional<T>,
    motion: &MotionModel,
    grid: &SpaceTimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<GridFunction<T>> {
    mech.validate()?;
    check_opts(opts)?;
    let generator = Generator::build(motion, grid)?;
    let terminal = terminal_values(grid, generator.as_ref(), f, |v| v, T::zero())?;
    let quad = quadrature(grid, k, opts);
    let rate: Rate<'_, T> = Box::new(move |s, i, y| {
        quad.points[i].iter().fold((T::zero(), T::zero()), |(r, d), &(x, w)| {
            let kv = k.density(s, &[x]);
            (r + w * kv * mech.psi_unchecked(s, &[x], y), d + w * kv * mech.dpsi(s, &[x], y))
        })
    });
    Problem { grid, generator, terminal, reaction: Reaction::Absorb(rate), cemetery: T::zero(), opts }.solve()
}

/// Solves `u(r,x) = Π_{r,x}[e^{−f(ξ_t)} + ∫_r^t (λ/β)(φ(u) − u)(s, ξ_s) K(ds)]`;
/// for killed motions the cemetery contributes 1.
pub fn solve_u<T: Real>(
    f: &dyn Fn(&[T]) -> T,
    family: &RescaledFamily<T>,
    k: &AdditiveFunctional<T>,
    motion: &MotionModel,
    grid: &SpaceTimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<GridFunction<T>> {
    check_opts(opts)?;
    let generator = Generator::build(motion, grid)?;
    let terminal = terminal_values(grid, generator.as_ref(), f, |v| (-v).exp(), T::one())?;
    let quad = quadrature(grid, k, opts);
    let c = family.clock_rate();
    let law = &family.law;
    let rate: Rate<'_, T> = Box::new(move |s, i, y| {
        let kbar = quad.points[i].iter().fold(T::zero(), |acc, &(x, w)| acc + w * k.density(s, &[x]));
        let ck = c * kbar;
        (ck * (law.pgf(y) - y).max(T::zero()), ck * (law.pgf_derivative(y) - T::one()))
    });
    Problem { grid, generator, terminal, reaction: Reaction::Feed(rate), cemetery: T::one(), opts }.solve()
}

/// Solves the rescaled equation with terminal data `(1 − e^{−βf})/β` and
/// reaction `ψ_β`.
pub fn solve_vbeta<T: Real>(
    f: &dyn Fn(&[T]) -> T,
    family: &RescaledFamily<T>,
    k: &AdditiveFunctional<T>,
    motion: &MotionModel,
    grid: &SpaceTimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<GridFunction<T>> {
    check_opts(opts)?;
    let beta = family.beta;
    let generator = Generator::build(motion, grid)?;
    let terminal = terminal_values(grid, generator.as_ref(), f, |v| -(-beta * v).exp_m1() / beta, T::zero())?;
    let quad = quadrature(grid, k, opts);
    let cap = T::one() / beta;
    let rate: Rate<'_, T> = Box::new(move |s, i, y| {
        let kbar = quad.points[i].iter().fold(T::zero(), |acc, &(x, w)| acc + w * k.density(s, &[x]));
        let y = y.min(cap);
        (kbar * family.psi_beta_unchecked(y), kbar * family.dpsi_beta(y))
    });
    Problem { grid, generator, terminal, reaction: Reaction::Absorb(rate), cemetery: T::zero(), opts }.solve()
}

/// Solves the linear equation `w(r,x) = Π_{r,x}[f(ξ_t) − ∫_r^t a w (s, ξ_s) K(ds)]`.
pub fn solve_moment<T: Real>(
    f: &dyn Fn(&[T]) -> T,
    a: &SpatialFn<T>,
    k: &AdditiveFunctional<T>,
    motion: &MotionModel,
    grid: &SpaceTimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<GridFunction<T>> {
    check_opts(opts)?;
    let generator = Generator::build(motion, grid)?;
    let terminal = terminal_values(grid, generator.as_ref(), f, |v| v, T::zero())?;
    let quad = quadrature(grid, k, opts);
    let coef = Box::new(move |s: T, i: usize| {
        quad.points[i].iter().fold(T::zero(), |acc, &(x, w)| acc + w * a(s, &[x]) * k.density(s, &[x]))
    });
    Problem { grid, generator, terminal, reaction: Reaction::Linear(coef), cemetery: T::zero(), opts }.solve()
}

fn check_opts<T: Real>(opts: &SolverOptions<T>) -> Result<()> {
    if !(opts.tol > T::zero()) {
        return Err(Error::Config("solver tolerance must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
