//! Branching clocks `K(ds) = k(s, ξ_s) ds` integrated along paths, death
//! time sampling and admissibility diagnostics.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::SpatialFn;
use crate::error::{Error, Result};
use crate::motion::{MotionModel, Path, Position, StepOutcome};
use crate::rng::{purpose, stream};
use crate::scalar::Real;
use crate::stats::{Estimate, Moments};

/// Largest clock increment allowed per step near a flagged singularity.
pub const MAX_CLOCK_INCREMENT: f64 = 0.1;
/// Paths closer than this to a flagged singularity are treated as absorbed.
pub const SINGULAR_FLOOR: f64 = 1e-6;

/// Absolutely continuous additive functional with rate density `k(s, x)`.
#[derive(Clone)]
pub struct AdditiveFunctional<T: Real> {
    density: SpatialFn<T>,
    constant: Option<T>,
    singularities: Vec<Vec<T>>,
    label: String,
}

impl<T: Real> fmt::Debug for AdditiveFunctional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdditiveFunctional")
            .field("label", &self.label)
            .field("constant", &self.constant)
            .field("singularities", &self.singularities)
            .finish()
    }
}

impl<T: Real> AdditiveFunctional<T> {
    pub fn custom(label: impl Into<String>, density: SpatialFn<T>, singularities: Vec<Vec<T>>) -> Self {
        Self { density, constant: None, singularities, label: label.into() }
    }

    pub fn constant(rate: T) -> Self {
        Self {
            density: Arc::new(move |_, _| rate),
            constant: Some(rate),
            singularities: vec![],
            label: format!("constant({rate})"),
        }
    }

    /// `K(ds) = ds`.
    pub fn lebesgue() -> Self {
        let mut k = Self::constant(T::one());
        k.label = "lebesgue".into();
        k
    }

    pub fn zero() -> Self {
        let mut k = Self::constant(T::zero());
        k.label = "zero".into();
        k
    }

    /// `k(x) = |x|^{−σ}`, optionally capped at `cap`; uncapped densities
    /// are flagged singular at the origin.
    pub fn power_law(sigma: T, cap: Option<T>) -> Self {
        let density: SpatialFn<T> = match cap {
            Some(c) => Arc::new(move |_, x: &[T]| norm(x).powf(-sigma).min(c)),
            None => Arc::new(move |_, x: &[T]| norm(x).powf(-sigma)),
        };
        let singular = if cap.is_none() && sigma > T::zero() { vec![vec![T::zero()]] } else { vec![] };
        Self { density, constant: None, singularities: singular, label: format!("power_law(σ={sigma})") }
    }

    /// `k(x) = 1 ∨ |x|^{1+β−σ}`.
    pub fn hyperbolic(beta: T, sigma: T) -> Self {
        let e = T::one() + beta - sigma;
        Self {
            density: Arc::new(move |_, x: &[T]| T::one().max(norm(x).powf(e))),
            constant: None,
            singularities: vec![],
            label: format!("hyperbolic(β={beta}, σ={sigma})"),
        }
    }

    /// `k(x) = φ_p(x)^{1+β}` with `φ_p(x) = (1 + |x|²)^{−p/2}`.
    pub fn phi_p_power(p: T, beta: T) -> Self {
        Self {
            density: Arc::new(move |_, x: &[T]| phi_p(p, x).powf(T::one() + beta)),
            constant: None,
            singularities: vec![],
            label: format!("phi_p_power(p={p}, β={beta})"),
        }
    }

    /// Density `k / g` (e.g. the h-transformed clock `K^h`). Zeros of `g`
    /// become flagged singularities.
    pub fn divided_by(&self, g: SpatialFn<T>, zeros: Vec<Vec<T>>, label: &str) -> Self {
        let k = self.density.clone();
        let mut singularities = self.singularities.clone();
        for z in zeros {
            if !singularities.contains(&z) {
                singularities.push(z);
            }
        }
        Self {
            density: Arc::new(move |s, x: &[T]| k(s, x) / g(s, x)),
            constant: None,
            singularities,
            label: format!("{}/{label}", self.label),
        }
    }

    /// Density `k · g`.
    pub fn multiplied_by(&self, g: SpatialFn<T>, label: &str) -> Self {
        let k = self.density.clone();
        Self {
            density: Arc::new(move |s, x: &[T]| k(s, x) * g(s, x)),
            constant: None,
            singularities: self.singularities.clone(),
            label: format!("{}*{label}", self.label),
        }
    }

    pub fn density(&self, s: T, x: &[T]) -> T {
        self.density.as_ref()(s, x)
    }

    pub fn density_fn(&self) -> SpatialFn<T> {
        self.density.clone()
    }

    pub fn constant_rate(&self) -> Option<T> {
        self.constant
    }

    pub fn singularities(&self) -> &[Vec<T>] {
        &self.singularities
    }

    pub fn is_singular(&self) -> bool {
        !self.singularities.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Distance from `x` to the nearest flagged singularity.
    pub fn singular_distance(&self, x: &[T]) -> Option<T> {
        self.singularities
            .iter()
            .map(|p| p.iter().zip(x).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>().sqrt())
            .reduce(T::min)
    }
}

pub(crate) fn norm<T: Real>(x: &[T]) -> T {
    if x.len() == 1 {
        x[0].abs()
    } else {
        x.iter().map(|&c| c * c).sum::<T>().sqrt()
    }
}

pub(crate) fn phi_p<T: Real>(p: T, x: &[T]) -> T {
    let r2: T = x.iter().map(|&c| c * c).sum();
    (T::one() + r2).powf(-p / T::lit(2.0))
}

impl AdditiveFunctional<f64> {
    /// Adaptive step size at `(s, x)` given a rate multiplier on the clock.
    pub fn adaptive_step(&self, s: f64, x: &[f64], base: f64, rate: f64) -> f64 {
        if self.constant.is_some() {
            return base;
        }
        let k = rate * self.density(s, x);
        let mut h = base;
        if k > 0.0 {
            h = h.min(MAX_CLOCK_INCREMENT / k);
        }
        if let Some(d) = self.singular_distance(x) {
            h = h.min(MAX_CLOCK_INCREMENT * d * d);
        }
        h
    }

    /// Trapezoidal `K[r, t]` along `path`; nothing accrues after the kill time.
    pub fn integrate_k(&self, path: &Path, r: f64, t: f64) -> Result<f64> {
        if r < path.birth() - 1e-12 {
            return Err(Error::Domain("path starts after the integration window".into()));
        }
        let end = t.min(path.kill_time.unwrap_or(f64::INFINITY)).min(path.end());
        if end <= r {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for w in 0..path.times.len().saturating_sub(1) {
            let (t0, t1) = (path.times[w], path.times[w + 1]);
            let (a, b) = (t0.max(r), t1.min(end));
            if b <= a {
                continue;
            }
            let xa = lerp(&path.states[w], &path.states[w + 1], (a - t0) / (t1 - t0));
            let xb = lerp(&path.states[w], &path.states[w + 1], (b - t0) / (t1 - t0));
            let (ka, kb) = (self.density(a, &xa), self.density(b, &xb));
            let inc = 0.5 * (b - a) * (ka + kb);
            if self.is_singular() && inc > MAX_CLOCK_INCREMENT {
                let d = self
                    .singular_distance(&xa)
                    .unwrap_or(f64::INFINITY)
                    .min(self.singular_distance(&xb).unwrap_or(f64::INFINITY));
                return Err(Error::Refinement { time: a, distance: d });
            }
            if !inc.is_finite() {
                return Err(Error::Refinement { time: a, distance: 0.0 });
            }
            total += inc;
        }
        Ok(total)
    }

    /// First time `s ≥ r` with `rate · K[r, s] ≥ E`, `E ~ Exp(1)`, or `None`
    /// if the path ends first.
    pub fn sample_death_time<R: Rng + ?Sized>(&self, rate: f64, path: &Path, r: f64, rng: &mut R) -> Option<f64> {
        let threshold: f64 = Exp1.sample(rng);
        let end = path.kill_time.unwrap_or(f64::INFINITY).min(path.end());
        let mut acc = 0.0;
        for w in 0..path.times.len().saturating_sub(1) {
            let (t0, t1) = (path.times[w], path.times[w + 1]);
            let (a, b) = (t0.max(r), t1.min(end));
            if b <= a {
                continue;
            }
            let x0 = &path.states[w];
            let x1 = &path.states[w + 1];
            let xa = lerp(x0, x1, (a - t0) / (t1 - t0));
            let ka = rate * self.density(a, &xa);
            let seg = |s: f64| {
                let xs = lerp(x0, x1, (s - t0) / (t1 - t0));
                0.5 * (s - a) * (ka + rate * self.density(s, &xs))
            };
            let inc = seg(b);
            if acc + inc >= threshold {
                return Some(bisect_crossing(seg, a, b, threshold - acc));
            }
            acc += inc;
        }
        None
    }
}

/// Smallest `s ∈ [a, b]` (to bisection precision) with `F(s) ≥ need`,
/// given `F(a) = 0 < need ≤ F(b)`.
pub(crate) fn bisect_crossing(f: impl Fn(f64) -> f64, a: f64, b: f64, need: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= need {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Position {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

/// Outcome of integrating the clock along one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockSample {
    pub value: f64,
    pub floor_hit: bool,
    pub truncated: bool,
}

/// Simulates `motion` from `(r, x)` to `t` with adaptive steps and returns
/// `K[r, t]` along the path.
pub fn integrate_along_motion<R: Rng + ?Sized>(
    k: &AdditiveFunctional<f64>,
    motion: &MotionModel,
    r: f64,
    x: &[f64],
    t: f64,
    dt: f64,
    max_steps: usize,
    rng: &mut R,
) -> ClockSample {
    let mut pos: Position = x.iter().copied().collect();
    let mut s = r;
    let mut kv = k.density(s, &pos);
    let mut total = 0.0;
    let mut steps = 0usize;
    while s < t {
        if k.singular_distance(&pos).is_some_and(|d| d < SINGULAR_FLOOR) {
            return ClockSample { value: total, floor_hit: true, truncated: false };
        }
        if steps >= max_steps {
            return ClockSample { value: total, floor_hit: false, truncated: true };
        }
        let h = k.adaptive_step(s, &pos, dt, 1.0).min(t - s);
        if s + h <= s {
            return ClockSample { value: total, floor_hit: true, truncated: false };
        }
        match motion.advance(s, &mut pos, h, rng) {
            StepOutcome::Alive => {
                let next = k.density(s + h, &pos);
                total += 0.5 * h * (kv + next);
                kv = next;
                s += h;
            }
            StepOutcome::Killed { time } => {
                total += (time - s) * kv;
                break;
            }
        }
        steps += 1;
    }
    ClockSample { value: total, floor_hit: false, truncated: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    AdmissibleEvidence,
    RhoAdmissibleEvidence,
    Inconclusive,
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityOptions {
    pub dt: f64,
    /// Declared bound on the small-window modulus.
    pub threshold: f64,
    /// Width of the confidence bands, in standard errors.
    pub sigmas: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        Self { dt: 1e-3, threshold: 0.2, sigmas: 3.0, max_steps: 2_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowModulus {
    pub width: f64,
    pub plain: Estimate,
    pub weighted: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub windows: Vec<(f64, f64)>,
    pub x_grid: Vec<Vec<f64>>,
    /// `plain[w][i]` estimates `Π_{r,x}[K[r,t]]` for window `w`, point `i`.
    pub plain: Vec<Vec<Estimate>>,
    /// `Π_{r,x}[K[r,t]] / ϱ(x)` when a weight is supplied.
    pub weighted: Option<Vec<Vec<Estimate>>>,
    /// Sup over the grid per window width, sorted by decreasing width.
    pub k_modulus: Vec<WindowModulus>,
    pub plain_verdict: Verdict,
    pub weighted_verdict: Option<Verdict>,
    pub verdict: Verdict,
    pub floor_hits: u64,
    pub truncated_paths: u64,
    pub note: String,
}

/// Monte Carlo admissibility diagnostic over a finite grid of windows and
/// starting points.
pub fn check_admissibility(
    k: &AdditiveFunctional<f64>,
    motion: &MotionModel,
    rho: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
    windows: &[(f64, f64)],
    x_grid: &[Vec<f64>],
    reps: usize,
    opts: AdmissibilityOptions,
) -> Result<AdmissibilityReport> {
    if x_grid.is_empty() || windows.is_empty() {
        return Err(Error::Domain("admissibility check needs a nonempty grid and window list".into()));
    }
    if reps < 2 {
        return Err(Error::Domain("admissibility check needs at least two replicas".into()));
    }
    let cells: Vec<(usize, usize)> =
        (0..windows.len()).flat_map(|w| (0..x_grid.len()).map(move |i| (w, i))).collect();
    let results: Vec<(Moments, u64, u64)> = cells
        .par_iter()
        .map(|&(w, i)| {
            let (r, t) = windows[w];
            let mut rng = stream(opts.seed, purpose::CLOCK, (w * x_grid.len() + i) as u64);
            let mut m = Moments::default();
            let (mut floors, mut truncs) = (0u64, 0u64);
            for _ in 0..reps {
                let c = integrate_along_motion(k, motion, r, &x_grid[i], t, opts.dt, opts.max_steps, &mut rng);
                floors += u64::from(c.floor_hit);
                truncs += u64::from(c.truncated);
                m.push(c.value);
            }
            (m, floors, truncs)
        })
        .collect();

    let mut plain = vec![vec![Estimate::exact(0.0); x_grid.len()]; windows.len()];
    let mut weighted = rho.map(|_| vec![vec![Estimate::exact(0.0); x_grid.len()]; windows.len()]);
    let (mut floor_hits, mut truncated_paths) = (0, 0);
    for (&(w, i), (m, f, tr)) in cells.iter().zip(&results) {
        let e = m.estimate();
        plain[w][i] = e;
        if let (Some(rho), Some(wt)) = (rho, weighted.as_mut()) {
            let rv = rho(&x_grid[i]);
            wt[w][i] = if rv > 0.0 {
                Estimate { mean: e.mean / rv, stderr: e.stderr / rv, n: e.n }
            } else {
                Estimate { mean: f64::INFINITY, stderr: 0.0, n: e.n }
            };
        }
        floor_hits += f;
        truncated_paths += tr;
    }

    let mut widths: Vec<f64> = windows.iter().map(|(r, t)| t - r).collect();
    widths.sort_by(|a, b| b.partial_cmp(a).expect("finite widths"));
    widths.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let sup_for = |table: &Vec<Vec<Estimate>>, width: f64| -> Estimate {
        windows
            .iter()
            .enumerate()
            .filter(|(_, (r, t))| ((t - r) - width).abs() <= 1e-12 * width.max(1.0))
            .flat_map(|(w, _)| table[w].iter().copied())
            .max_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap_or(std::cmp::Ordering::Less))
            .expect("nonempty")
    };
    let k_modulus: Vec<WindowModulus> = widths
        .iter()
        .map(|&width| WindowModulus {
            width,
            plain: sup_for(&plain, width),
            weighted: weighted.as_ref().map(|wt| sup_for(wt, width)),
        })
        .collect();

    let plain_verdict = judge(k_modulus.iter().map(|m| m.plain), &opts);
    let weighted_verdict = weighted
        .as_ref()
        .map(|_| judge(k_modulus.iter().map(|m| m.weighted.expect("weighted present")), &opts));
    let verdict = match (plain_verdict, weighted_verdict) {
        (Verdict::AdmissibleEvidence, _) => Verdict::AdmissibleEvidence,
        (_, Some(Verdict::AdmissibleEvidence)) => Verdict::RhoAdmissibleEvidence,
        (Verdict::Violated, _) => Verdict::Violated,
        _ => Verdict::Inconclusive,
    };
    Ok(AdmissibilityReport {
        windows: windows.to_vec(),
        x_grid: x_grid.to_vec(),
        plain,
        weighted,
        k_modulus,
        plain_verdict,
        weighted_verdict,
        verdict,
        floor_hits,
        truncated_paths,
        note: "Monte Carlo diagnostic: sup over a finite grid of starting points and windows; evidence, not proof"
            .into(),
    })
}

/// Judges a modulus sequence ordered by decreasing window width.
fn judge(moduli: impl Iterator<Item = Estimate>, opts: &AdmissibilityOptions) -> Verdict {
    let seq: Vec<Estimate> = moduli.collect();
    let smallest = *seq.last().expect("nonempty");
    if !smallest.mean.is_finite() || smallest.lower(opts.sigmas) > opts.threshold {
        return Verdict::Violated;
    }
    let decreasing = seq
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + opts.sigmas * crate::stats::combined_stderr(w[0].stderr, w[1].stderr));
    if decreasing && smallest.upper(opts.sigmas) < opts.threshold {
        Verdict::AdmissibleEvidence
    } else {
        Verdict::Inconclusive
    }
}
