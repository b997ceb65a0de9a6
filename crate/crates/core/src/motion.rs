//! One-particle motions: free and killed Brownian motion, symmetric
//! α-stable motion, the Bessel(3) process, and a frozen motion used for
//! degenerate controls.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use smallvec::smallvec;

use crate::error::{Error, Result};
use crate::measure::Coords;
use crate::stats::{Estimate, Moments};

pub type Position = Coords<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    BrownianMotion { dim: usize },
    /// One-dimensional Brownian motion killed on hitting the origin.
    KilledBrownianMotion1d,
    /// Rotationally symmetric α-stable motion with characteristic
    /// exponent `|θ|^α`.
    AlphaStable { alpha: f64, dim: usize },
    /// Brownian motion killed at 0, h-transformed by `h(x) = |x|`.
    Bessel3,
    /// Stays at its starting point forever.
    Frozen { dim: usize },
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MotionModel::BrownianMotion { dim } | MotionModel::Frozen { dim } if dim == 0 => {
                Err(Error::Config("motion dimension must be at least 1".into()))
            }
            MotionModel::AlphaStable { alpha, dim } => {
                if dim == 0 {
                    Err(Error::Config("motion dimension must be at least 1".into()))
                } else if !(alpha > 0.0 && alpha <= 2.0) {
                    Err(Error::Config(format!("stable index must lie in (0, 2], got {alpha}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            MotionModel::BrownianMotion { dim }
            | MotionModel::AlphaStable { dim, .. }
            | MotionModel::Frozen { dim } => dim,
            MotionModel::KilledBrownianMotion1d | MotionModel::Bessel3 => 1,
        }
    }

    /// Whether the transition kernel is a probability (no killing).
    pub fn is_conservative(&self) -> bool {
        !matches!(self, MotionModel::KilledBrownianMotion1d)
    }

    /// Motions with analytic expectations used by the closed-form checks.
    pub fn has_closed_form_semigroup(&self) -> bool {
        matches!(
            self,
            MotionModel::BrownianMotion { .. }
                | MotionModel::KilledBrownianMotion1d
                | MotionModel::Bessel3
                | MotionModel::Frozen { .. }
        )
    }

    /// Continuous paths with Gaussian local behaviour; bridge
    /// interpolation is meaningful for these.
    pub fn is_diffusive(&self) -> bool {
        matches!(
            self,
            MotionModel::BrownianMotion { .. } | MotionModel::KilledBrownianMotion1d | MotionModel::Bessel3
        )
    }

    /// Advances `pos` from time `s` by `dt` in place.
    pub fn advance<R: Rng + ?Sized>(&self, s: f64, pos: &mut Position, dt: f64, rng: &mut R) -> StepOutcome {
        match *self {
            MotionModel::BrownianMotion { .. } => {
                let sd = dt.sqrt();
                for c in pos.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += sd * z;
                }
                StepOutcome::Alive
            }
            MotionModel::KilledBrownianMotion1d => {
                let x = pos[0];
                let z: f64 = StandardNormal.sample(rng);
                let y = x + dt.sqrt() * z;
                let crossed = x * y <= 0.0
                    || rng.random::<f64>() >= bridge_survival_unchecked(x.abs(), y.abs(), dt);
                if crossed {
                    pos[0] = 0.0;
                    StepOutcome::Killed { time: s + rng.random::<f64>() * dt }
                } else {
                    pos[0] = y;
                    StepOutcome::Alive
                }
            }
            MotionModel::Bessel3 => {
                let sd = dt.sqrt();
                let sign = if pos[0] < 0.0 { -1.0 } else { 1.0 };
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                let c: f64 = StandardNormal.sample(rng);
                let r0 = pos[0].abs() + sd * a;
                pos[0] = sign * (r0 * r0 + sd * sd * (b * b + c * c)).sqrt();
                StepOutcome::Alive
            }
            MotionModel::AlphaStable { alpha, dim } => {
                let scale = dt.powf(1.0 / alpha);
                if dim == 1 {
                    pos[0] += scale * sample_symmetric_stable(alpha, rng);
                } else {
                    // Sub-Gaussian representation: sqrt(2A)·G with A positive (α/2)-stable.
                    let a = sample_positive_stable(alpha / 2.0, rng);
                    let m = (2.0 * a).sqrt() * scale;
                    for c in pos.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *c += m * z;
                    }
                }
                StepOutcome::Alive
            }
            MotionModel::Frozen { .. } => StepOutcome::Alive,
        }
    }

    /// Samples the position at fraction `frac` of a step from `x0` to
    /// `x1` of length `dt`, given both endpoints.
    pub fn interpolate<R: Rng + ?Sized>(&self, x0: &[f64], x1: &[f64], frac: f64, dt: f64, rng: &mut R) -> Position {
        if !self.is_diffusive() {
            return x0.iter().copied().collect();
        }
        let sd = (frac * (1.0 - frac) * dt).max(0.0).sqrt();
        let mut out: Position = x0
            .iter()
            .zip(x1)
            .map(|(&a, &b)| {
                let z: f64 = StandardNormal.sample(rng);
                a + frac * (b - a) + sd * z
            })
            .collect();
        if matches!(self, MotionModel::Bessel3) && out[0] * x0[0] <= 0.0 {
            // keep the bridge point on the side of the start
            out[0] = x0[0].signum() * out[0].abs().max(f64::MIN_POSITIVE);
        }
        out
    }

    /// Like `advance`, but without the killing test, which can then be
    /// applied to any initial part of the step with `survives_segment`.
    pub(crate) fn advance_free<R: Rng + ?Sized>(&self, s: f64, pos: &mut Position, dt: f64, rng: &mut R) -> StepOutcome {
        match self {
            MotionModel::KilledBrownianMotion1d => MotionModel::BrownianMotion { dim: 1 }.advance(s, pos, dt, rng),
            _ => self.advance(s, pos, dt, rng),
        }
    }

    /// Killing test for a free segment from `x0` to `x1` of length `dt`.
    pub(crate) fn survives_segment<R: Rng + ?Sized>(&self, x0: &[f64], x1: &[f64], dt: f64, rng: &mut R) -> bool {
        match self {
            MotionModel::KilledBrownianMotion1d => {
                x0[0] * x1[0] > 0.0 && rng.random::<f64>() < bridge_survival_unchecked(x0[0].abs(), x1[0].abs(), dt)
            }
            _ => true,
        }
    }

    /// Returns the state at time `s + dt`.
    pub fn step<R: Rng + ?Sized>(&self, s: f64, x: &ParticleState, dt: f64, rng: &mut R) -> Result<ParticleState> {
        if !x.alive {
            return Err(Error::InvalidState("cannot step a killed particle".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("step size must be positive, got {dt}")));
        }
        check_position(self, &x.position)?;
        let mut pos = x.position.clone();
        let out = match self.advance(s, &mut pos, dt, rng) {
            StepOutcome::Alive => ParticleState { position: pos, alive: true, kill_time: None },
            StepOutcome::Killed { time } => ParticleState { position: pos, alive: false, kill_time: Some(time) },
        };
        if out.position.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidState("motion produced a non-finite position".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Alive,
    Killed { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub position: Position,
    pub alive: bool,
    pub kill_time: Option<f64>,
}

impl ParticleState {
    pub fn at(position: &[f64]) -> Self {
        Self { position: position.iter().copied().collect(), alive: true, kill_time: None }
    }
}

fn check_position(motion: &MotionModel, pos: &[f64]) -> Result<()> {
    if pos.len() != motion.dim() {
        return Err(Error::InvalidState(format!(
            "position has dimension {}, motion expects {}",
            pos.len(),
            motion.dim()
        )));
    }
    if pos.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidState("non-finite position".into()));
    }
    if matches!(motion, MotionModel::KilledBrownianMotion1d) && pos[0] == 0.0 {
        return Err(Error::InvalidState("killed motion started on its killing set".into()));
    }
    Ok(())
}

/// Sampled path on a time grid starting at the birth time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Position>,
    pub kill_time: Option<f64>,
}

impl Path {
    pub fn new(times: Vec<f64>, states: Vec<Position>, kill_time: Option<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidState("path needs equally many (≥1) times and states".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidState("path times must be strictly increasing".into()));
        }
        if let Some(k) = kill_time {
            if *times.last().expect("nonempty") > k {
                return Err(Error::InvalidState("path extends beyond its kill time".into()));
            }
        }
        Ok(Self { times, states, kill_time })
    }

    /// Straight-line path through `points` at equally spaced times.
    pub fn linear(r: f64, t: f64, from: f64, to: f64, segments: usize) -> Self {
        let n = segments.max(1);
        let times = (0..=n).map(|i| r + (t - r) * i as f64 / n as f64).collect();
        let states = (0..=n).map(|i| smallvec![from + (to - from) * i as f64 / n as f64]).collect();
        Self { times, states, kill_time: None }
    }

    pub fn birth(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Position at time `s` under the càdlàg (left-point) convention.
    pub fn position_at(&self, s: f64) -> &[f64] {
        let idx = match self.times.binary_search_by(|t| t.partial_cmp(&s).expect("finite")) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        &self.states[idx]
    }
}

/// Samples a path of `motion` on `[r, t]` with steps of at most `dt`.
/// A killed path ends with the killing location at its kill time.
pub fn sample_path<R: Rng + ?Sized>(motion: &MotionModel, r: f64, x: &[f64], t: f64, dt: f64, rng: &mut R) -> Result<Path> {
    if !(dt > 0.0) || t < r {
        return Err(Error::Domain("need dt > 0 and r ≤ t".into()));
    }
    check_position(motion, x)?;
    let mut times = vec![r];
    let mut states: Vec<Position> = vec![x.iter().copied().collect()];
    let mut pos: Position = x.iter().copied().collect();
    let mut s = r;
    while s < t {
        let h = dt.min(t - s);
        match motion.advance(s, &mut pos, h, rng) {
            StepOutcome::Alive => {
                s = if t - (s + h) < 1e-12 * dt { t } else { s + h };
                times.push(s);
                states.push(pos.clone());
            }
            StepOutcome::Killed { time } => {
                let time = time.max(s + f64::EPSILON * s.abs().max(1.0));
                times.push(time);
                states.push(pos.clone());
                return Path::new(times, states, Some(time));
            }
        }
    }
    Path::new(times, states, None)
}

/// Probability that a Brownian bridge from `x1 > 0` to `x2 > 0` over time
/// `dt` stays positive.
pub fn bridge_survival(x1: f64, x2: f64, dt: f64) -> Result<f64> {
    if !(x1 > 0.0 && x2 > 0.0 && dt > 0.0) {
        return Err(Error::Domain(format!("bridge survival needs positive inputs, got ({x1}, {x2}, {dt})")));
    }
    Ok(bridge_survival_unchecked(x1, x2, dt))
}

#[inline]
fn bridge_survival_unchecked(x1: f64, x2: f64, dt: f64) -> f64 {
    -(-2.0 * x1 * x2 / dt).exp_m1()
}

/// Chambers–Mallows–Stuck sampler for the standard symmetric α-stable law
/// with characteristic function `exp(-|θ|^α)`.
pub fn sample_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = std::f64::consts::PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Kanter's sampler for the positive stable law with Laplace transform
/// `exp(-λ^a)`, `0 < a < 1`.
pub fn sample_positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u = std::f64::consts::PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    let part1 = (a * u).sin() / u.sin().powf(1.0 / a);
    let part2 = (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a);
    part1 * part2
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McOptions {
    /// Step size; `None` uses a single exact transition.
    pub step: Option<f64>,
    /// Value assigned to killed paths; `None` means they contribute 0.
    pub cemetery: Option<f64>,
}

/// Monte Carlo estimate of `Π_{r,x}[f(ξ_t)]`.
pub fn semigroup_mc<R: Rng + ?Sized>(
    motion: &MotionModel,
    f: &dyn Fn(&[f64]) -> f64,
    r: f64,
    x: &[f64],
    t: f64,
    reps: usize,
    opts: McOptions,
    rng: &mut R,
) -> Result<Estimate> {
    if t < r || reps == 0 {
        return Err(Error::Domain("semigroup estimate needs r ≤ t and reps ≥ 1".into()));
    }
    check_position(motion, x)?;
    let mut acc = Moments::default();
    let dt = opts.step.unwrap_or(t - r);
    for _ in 0..reps {
        let mut pos: Position = x.iter().copied().collect();
        let mut s = r;
        let mut alive = true;
        while s < t && alive {
            let h = dt.min(t - s);
            if let StepOutcome::Killed { .. } = motion.advance(s, &mut pos, h, rng) {
                alive = false;
            }
            s += h;
            if t - s < 1e-12 * dt {
                s = t;
            }
        }
        acc.push(if alive { f(&pos) } else { opts.cemetery.unwrap_or(0.0) });
    }
    Ok(acc.estimate())
}

/// Closed space-time set whose first hitting time is monitored.
pub trait HittingSet: Sync {
    fn contains(&self, t: f64, x: &[f64]) -> bool;

    /// Probability that a Brownian bridge between two points outside the
    /// set enters it during the step. Zero means endpoint monitoring only.
    fn bridge_entry_probability(&self, _x0: &[f64], _x1: &[f64], _dt: f64) -> f64 {
        0.0
    }
}

/// `{(t, y) : y₁ ≤ level}` or `{(t, y) : y₁ ≥ level}`.
#[derive(Debug, Clone, Copy)]
pub struct HalfLine {
    pub level: f64,
    pub below: bool,
}

impl HittingSet for HalfLine {
    fn contains(&self, _t: f64, x: &[f64]) -> bool {
        if self.below {
            x[0] <= self.level
        } else {
            x[0] >= self.level
        }
    }

    fn bridge_entry_probability(&self, x0: &[f64], x1: &[f64], dt: f64) -> f64 {
        let (d0, d1) = ((x0[0] - self.level).abs(), (x1[0] - self.level).abs());
        (-2.0 * d0 * d1 / dt).exp()
    }
}

/// Arbitrary predicate, monitored at step endpoints.
pub struct Predicate<F>(pub F);

impl<F: Fn(f64, &[f64]) -> bool + Sync> HittingSet for Predicate<F> {
    fn contains(&self, t: f64, x: &[f64]) -> bool {
        (self.0)(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingOptions {
    pub dt: f64,
    /// Truncation horizon `H`; paths that have not hit by `H` contribute 0.
    pub horizon: f64,
    /// Warn when the truncation tail bound exceeds this.
    pub tolerance: f64,
}

impl Default for HittingOptions {
    fn default() -> Self {
        Self { dt: 1e-3, horizon: 10.0, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingEstimate {
    pub estimate: Estimate,
    /// Upper bound `exp(k(r − H))` on the truncated contribution.
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// Estimates `Π_{r,x}[exp(k(r − τ))]` with `τ` the first hitting time of
/// the space-time set `set` after `r`.
pub fn hitting_exp_functional<R: Rng + ?Sized>(
    motion: &MotionModel,
    set: &dyn HittingSet,
    k: u32,
    r: f64,
    x: &[f64],
    reps: usize,
    opts: HittingOptions,
    rng: &mut R,
) -> Result<HittingEstimate> {
    if k == 0 || reps == 0 {
        return Err(Error::Domain("hitting functional needs k ≥ 1 and reps ≥ 1".into()));
    }
    if x.len() != motion.dim() || x.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidState("bad starting position".into()));
    }
    let kf = f64::from(k);
    let horizon = r + opts.horizon;
    let tail_bound = (kf * (r - horizon)).exp();
    let warning = (tail_bound > opts.tolerance)
        .then(|| format!("truncation tail bound {tail_bound:.3e} exceeds tolerance {:.3e}", opts.tolerance));
    if set.contains(r, x) {
        return Ok(HittingEstimate { estimate: Estimate::exact(1.0), tail_bound, warning });
    }
    let mut acc = Moments::default();
    for _ in 0..reps {
        let value = match first_hitting_time(motion, set, r, x, horizon, opts.dt, rng) {
            Some(tau) => (kf * (r - tau)).exp(),
            None => 0.0,
        };
        acc.push(value);
    }
    Ok(HittingEstimate { estimate: acc.estimate(), tail_bound, warning })
}

/// First hitting time of `set` by one path started at `(r, x)`, monitored
/// up to `horizon` with steps of at most `dt` (bridge-corrected for
/// diffusive motions). The hitting time inside a step is drawn uniformly.
pub fn first_hitting_time<R: Rng + ?Sized>(
    motion: &MotionModel,
    set: &dyn HittingSet,
    r: f64,
    x: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Option<f64> {
    if set.contains(r, x) {
        return Some(r);
    }
    let bridge = motion.is_diffusive();
    let mut pos: Position = x.iter().copied().collect();
    let mut prev = pos.clone();
    let mut s = r;
    while s < horizon {
        let h = dt.min(horizon - s);
        prev.clone_from(&pos);
        if let StepOutcome::Killed { .. } = motion.advance(s, &mut pos, h, rng) {
            return None;
        }
        let hit = set.contains(s + h, &pos)
            || (bridge && rng.random::<f64>() < set.bridge_entry_probability(&prev, &pos, h));
        if hit {
            return Some(s + rng.random::<f64>() * h);
        }
        s += h;
    }
    None
}

/// Monte Carlo estimate of `Π_{r,x}[τ ≤ t]` for the first hitting time
/// `τ` of `set`.
pub fn hitting_probability<R: Rng + ?Sized>(
    motion: &MotionModel,
    set: &dyn HittingSet,
    r: f64,
    x: &[f64],
    t: f64,
    reps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Estimate> {
    if reps == 0 || !(dt > 0.0) || t < r {
        return Err(Error::Domain("need reps ≥ 1, dt > 0 and r ≤ t".into()));
    }
    if x.len() != motion.dim() || x.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidState("bad starting position".into()));
    }
    let mut acc = Moments::default();
    for _ in 0..reps {
        acc.push(if first_hitting_time(motion, set, r, x, t, dt, rng).is_some() { 1.0 } else { 0.0 });
    }
    Ok(acc.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats::erf;

    fn rng(i: u64) -> crate::rng::StreamRng {
        stream(42, 9, i)
    }

    #[test]
    fn brownian_increment_moments() {
        let m = MotionModel::BrownianMotion { dim: 1 };
        let mut r = rng(0);
        let dt = 0.7;
        let mut acc = Moments::default();
        let mut sq = Moments::default();
        for _ in 0..100_000 {
            let s = m.step(0.0, &ParticleState::at(&[0.0]), dt, &mut r).unwrap();
            acc.push(s.position[0]);
            sq.push(s.position[0] * s.position[0]);
        }
        let mean = acc.estimate();
        let var = sq.estimate();
        assert!(mean.mean.abs() < 4.0 * mean.stderr, "{mean:?}");
        assert!((var.mean - dt).abs() < 4.0 * var.stderr, "{var:?}");
    }

    #[test]
    fn killed_survival_tends_to_one_for_small_steps() {
        let m = MotionModel::KilledBrownianMotion1d;
        let mut r = rng(1);
        let alive = (0..10_000)
            .filter(|_| m.step(0.0, &ParticleState::at(&[1.0]), 1e-4, &mut r).unwrap().alive)
            .count();
        assert_eq!(alive, 10_000);
    }

    #[test]
    fn killed_step_records_kill_time_inside_step() {
        let m = MotionModel::KilledBrownianMotion1d;
        let mut r = rng(2);
        let mut seen = 0;
        for _ in 0..2_000 {
            let s = m.step(3.0, &ParticleState::at(&[0.05]), 1.0, &mut r).unwrap();
            if !s.alive {
                let kt = s.kill_time.unwrap();
                assert!((3.0..=4.0).contains(&kt));
                assert_eq!(s.position[0], 0.0);
                seen += 1;
            }
        }
        assert!(seen > 1_000);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let m = MotionModel::BrownianMotion { dim: 1 };
        let mut r = rng(3);
        assert!(m.step(0.0, &ParticleState::at(&[f64::NAN]), 0.1, &mut r).is_err());
        assert!(m.step(0.0, &ParticleState::at(&[0.0]), 0.0, &mut r).is_err());
        let dead = ParticleState { position: smallvec![0.0], alive: false, kill_time: Some(0.0) };
        assert!(m.step(0.0, &dead, 0.1, &mut r).is_err());
        assert!(MotionModel::AlphaStable { alpha: 2.5, dim: 1 }.validate().is_err());
        assert!(MotionModel::BrownianMotion { dim: 0 }.validate().is_err());
    }

    /// E[X_1²] = x² + 3 for Bessel(3) from x = 1. The oracle is the
    /// h-transform of fine-step killed BM: E_x[B_t³; t < τ] / x.
    #[test]
    fn bessel3_second_moment_matches_h_transformed_killed_bm() {
        let mut r = rng(4);
        let bes = MotionModel::Bessel3;
        let direct = semigroup_mc(&bes, &|y| y[0] * y[0], 0.0, &[1.0], 1.0, 100_000, McOptions::default(), &mut r)
            .unwrap();
        let killed = MotionModel::KilledBrownianMotion1d;
        let oracle = semigroup_mc(
            &killed,
            &|y| y[0].abs().powi(3),
            0.0,
            &[1.0],
            1.0,
            100_000,
            McOptions { step: Some(1e-2), cemetery: None },
            &mut r,
        )
        .unwrap();
        assert!((direct.mean - 4.0).abs() < 4.0 * direct.stderr, "{direct:?}");
        assert!(direct.z_against(oracle.mean, oracle.stderr).abs() < 4.0, "{direct:?} vs {oracle:?}");
    }

    #[test]
    fn bridge_survival_values() {
        assert!((bridge_survival(1.0, 1.0, 1.0).unwrap() - (1.0 - (-2f64).exp())).abs() < 1e-15);
        assert!(bridge_survival(100.0, 100.0, 1e-3).unwrap() == 1.0);
        assert!(bridge_survival(1.0, 1e-12, 1.0).unwrap() < 1e-11);
        assert!(bridge_survival(0.0, 1.0, 1.0).is_err());
        assert!(bridge_survival(1.0, -1.0, 1.0).is_err());
        assert!(bridge_survival(1.0, 1.0, 0.0).is_err());
    }

    /// Fine-step pinned bridges from 1 to 1 over unit time: the fraction
    /// staying positive is 1 − e⁻² ≈ 0.8647.
    #[test]
    fn bridge_survival_matches_fine_step_bridges() {
        let mut r = rng(5);
        let n_steps = 10_000;
        let reps = 10_000;
        let dt = 1.0 / n_steps as f64;
        let mut w = vec![0.0; n_steps + 1];
        let mut survived = 0usize;
        for _ in 0..reps {
            for i in 1..=n_steps {
                let z: f64 = StandardNormal.sample(&mut r);
                w[i] = w[i - 1] + dt.sqrt() * z;
            }
            let end = w[n_steps];
            let positive = (0..=n_steps).all(|i| 1.0 + w[i] - (i as f64 * dt) * end > 0.0);
            survived += usize::from(positive);
        }
        let p = survived as f64 / reps as f64;
        let sd = (p * (1.0 - p) / reps as f64).sqrt();
        let exact = bridge_survival(1.0, 1.0, 1.0).unwrap();
        assert!((p - exact).abs() < 3.0 * sd + 4e-3, "p={p}, exact={exact}, sd={sd}");
    }

    #[test]
    fn semigroup_of_constant() {
        let mut r = rng(6);
        let bm = MotionModel::BrownianMotion { dim: 2 };
        let e = semigroup_mc(&bm, &|_| 1.0, 0.0, &[0.0, 0.0], 2.0, 100, McOptions::default(), &mut r).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn killed_survival_matches_reflection_principle() {
        let mut r = rng(7);
        let m = MotionModel::KilledBrownianMotion1d;
        for &(x, t) in &[(0.5, 1.0), (1.0, 1.0), (1.0, 4.0)] {
            let exact = erf(x / (2.0f64 * t).sqrt());
            let e = semigroup_mc(&m, &|_| 1.0, 0.0, &[x], t, 40_000, McOptions::default(), &mut r).unwrap();
            let fine =
                semigroup_mc(&m, &|_| 1.0, 0.0, &[x], t, 40_000, McOptions { step: Some(0.01), cemetery: None }, &mut r)
                    .unwrap();
            assert!((e.mean - exact).abs() < 4.0 * e.stderr, "x={x} t={t} {e:?} exact={exact}");
            assert!((fine.mean - exact).abs() < 4.0 * fine.stderr, "x={x} t={t} {fine:?} exact={exact}");
        }
    }

    #[test]
    fn cemetery_value_is_used_for_killed_paths() {
        let mut r = rng(8);
        let m = MotionModel::KilledBrownianMotion1d;
        let opts = McOptions { step: None, cemetery: Some(1.0) };
        let e = semigroup_mc(&m, &|_| 1.0, 0.0, &[0.3], 1.0, 1_000, opts, &mut r).unwrap();
        assert_eq!(e.mean, 1.0);
    }

    /// |x| is harmonic for killed BM: the weight martingale has constant mean.
    #[test]
    fn abs_x_is_a_martingale_weight() {
        let mut r = rng(9);
        let m = MotionModel::KilledBrownianMotion1d;
        for &x in &[0.2, 1.0, 3.0] {
            for &t in &[0.5, 2.0, 10.0] {
                let e = semigroup_mc(&m, &|y| y[0].abs(), 0.0, &[x], t, 40_000, McOptions::default(), &mut r).unwrap();
                assert!((e.mean - x).abs() < 4.0 * e.stderr, "x={x} t={t} {e:?}");
            }
        }
    }

    #[test]
    fn halving_step_is_consistent() {
        let m = MotionModel::KilledBrownianMotion1d;
        let f = |y: &[f64]| (-y[0] * y[0]).exp();
        let a = semigroup_mc(&m, &f, 0.0, &[0.7], 1.0, 40_000, McOptions { step: Some(0.1), cemetery: None }, &mut rng(10))
            .unwrap();
        let b =
            semigroup_mc(&m, &f, 0.0, &[0.7], 1.0, 40_000, McOptions { step: Some(0.05), cemetery: None }, &mut rng(11))
                .unwrap();
        assert!(a.z_against(b.mean, b.stderr).abs() < 4.0, "{a:?} {b:?}");
    }

    #[test]
    fn stable_samplers_are_sane() {
        let mut r = rng(12);
        // Symmetric: median near zero. P(|X| > 1) for α=1 (Cauchy) is 1/2.
        let n = 50_000;
        let big = (0..n).filter(|_| sample_symmetric_stable(1.0, &mut r).abs() > 1.0).count();
        let p = big as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.01, "{p}");
        // E exp(-A) = exp(-1) for the positive stable law.
        let mut acc = Moments::default();
        for _ in 0..n {
            acc.push((-sample_positive_stable(0.6, &mut r)).exp());
        }
        let e = acc.estimate();
        assert!((e.mean - (-1f64).exp()).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn path_sampling_respects_killing() {
        let mut r = rng(13);
        for _ in 0..200 {
            let p = sample_path(&MotionModel::KilledBrownianMotion1d, 0.0, &[0.3], 2.0, 0.05, &mut r).unwrap();
            if let Some(k) = p.kill_time {
                assert!(p.end() <= k);
                assert_eq!(p.states.last().unwrap()[0], 0.0);
            } else {
                assert!((p.end() - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hitting_inside_set_is_one() {
        let mut r = rng(14);
        let bm = MotionModel::BrownianMotion { dim: 1 };
        let set = HalfLine { level: 0.0, below: true };
        let e = hitting_exp_functional(&bm, &set, 3, 0.0, &[-0.5], 10, HittingOptions::default(), &mut r).unwrap();
        assert_eq!(e.estimate.mean, 1.0);
    }

    #[test]
    fn hitting_unreachable_is_bounded_by_tail() {
        let mut r = rng(15);
        let frozen = MotionModel::Frozen { dim: 1 };
        let set = HalfLine { level: 0.0, below: true };
        let opts = HittingOptions { dt: 0.1, horizon: 2.0, tolerance: 1e-12 };
        let e = hitting_exp_functional(&frozen, &set, 5, 0.0, &[1.0], 10, opts, &mut r).unwrap();
        assert!(e.estimate.mean <= e.tail_bound);
        assert!(e.warning.is_some());
    }

    #[test]
    fn hitting_laplace_transform_of_brownian_first_passage() {
        let mut r = rng(16);
        let bm = MotionModel::BrownianMotion { dim: 1 };
        let set = HalfLine { level: 0.0, below: true };
        let opts = HittingOptions { dt: 1e-3, horizon: 10.0, tolerance: 1e-3 };
        for &(x, k) in &[(1.0, 1u32), (0.5, 2u32)] {
            let e = hitting_exp_functional(&bm, &set, k, 0.0, &[x], 20_000, opts, &mut r).unwrap();
            let exact = (-x * (2.0 * f64::from(k)).sqrt()).exp();
            assert!((e.estimate.mean - exact).abs() < 4.0 * e.estimate.stderr + e.tail_bound, "{e:?} vs {exact}");
        }
    }

    #[test]
    fn first_passage_probability_matches_reflection() {
        let mut r = rng(17);
        let bm = MotionModel::BrownianMotion { dim: 1 };
        let set = HalfLine { level: 1.0, below: false };
        let e = hitting_probability(&bm, &set, 0.0, &[0.0], 1.0, 20_000, 1e-2, &mut r).unwrap();
        let exact = 2.0 * (1.0 - crate::stats::normal_cdf(1.0));
        assert!((e.mean - exact).abs() < 4.0 * e.stderr, "{e:?} vs {exact}");
    }
}
