//! Rescaled branching particle systems: Poissonized initial populations,
//! independent motion with clock-driven deaths and offspring, and the
//! measure-valued observables `βX_t`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive_functional::{AdditiveFunctional, SINGULAR_FLOOR};
use crate::branching::{RescaledFamily, SpatialFn};
use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::motion::{MotionModel, ParticleState, Position, StepOutcome};
use crate::rng::{purpose, stream, StreamRng};
use crate::stats::{Estimate, Moments};

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;
pub const DEFAULT_GENERATION_CAP: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth_time: f64,
    pub state: ParticleState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    /// Clock fired; the particle left this many offspring at its death.
    Branched { offspring: u64 },
    /// Killed by the motion.
    Killed,
    /// Came within the singular floor of a clock singularity.
    Absorbed,
    /// Alive at the horizon.
    Survived,
}

/// Space-time track of one particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth: f64,
    pub end: f64,
    pub fate: Fate,
    pub times: Vec<f64>,
    pub positions: Vec<Position>,
}

impl Track {
    /// Position at `s` (left-point convention), or `None` if the particle
    /// is not alive at `s`.
    pub fn position_at(&self, s: f64) -> Option<&[f64]> {
        let alive = s >= self.birth && (s < self.end || (self.fate == Fate::Survived && s <= self.end));
        if !alive {
            return None;
        }
        let idx = self.times.partition_point(|&t| t <= s).saturating_sub(1);
        Some(&self.positions[idx])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub tracks: Vec<Track>,
}

impl EventLog {
    /// Birth and death times, sorted and deduplicated.
    pub fn event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.tracks.iter().flat_map(|k| [k.birth, k.end]).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub live: Vec<Particle>,
    pub clock_time: f64,
    pub beta: f64,
    pub event_log: Option<EventLog>,
}

impl Population {
    /// One particle per atom, ignoring the atom weights.
    pub fn deterministic(positions: &[Vec<f64>], beta: f64, time: f64) -> Result<Self> {
        check_beta(beta)?;
        let live = positions
            .iter()
            .enumerate()
            .map(|(i, x)| Particle { id: i as u64, parent_id: None, birth_time: time, state: ParticleState::at(x) })
            .collect();
        Ok(Self { live, clock_time: time, beta, event_log: None })
    }

    /// `βX` as an atomic measure.
    pub fn measure(&self) -> AtomicMeasure<f64> {
        let mut m = AtomicMeasure::empty();
        for p in self.live.iter().filter(|p| p.state.alive) {
            m.push_unchecked(p.state.position.clone(), self.beta);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("β must lie in (0, 1], got {beta}")))
    }
}

/// Poisson random measure with intensity `mu/β`, all particles born at `time`.
pub fn init_poisson<R: Rng + ?Sized>(mu: &AtomicMeasure<f64>, beta: f64, time: f64, cap: u64, rng: &mut R) -> Result<Population> {
    check_beta(beta)?;
    let mass = mu.total_mass();
    if !(mass > 0.0) {
        return Err(Error::Domain("initial measure has no mass".into()));
    }
    let expected = mass / beta;
    if expected > cap as f64 {
        return Err(Error::Resource(format!(
            "expected initial population {expected:.3e} exceeds the cap of {cap} particles"
        )));
    }
    let mut live = Vec::new();
    for atom in mu.atoms() {
        let n = Poisson::new(atom.weight / beta)
            .map_err(|e| Error::Domain(format!("Poisson intensity: {e}")))?
            .sample(rng) as u64;
        for _ in 0..n {
            let id = live.len() as u64;
            live.push(Particle {
                id,
                parent_id: None,
                birth_time: time,
                state: ParticleState { position: atom.position.clone(), alive: true, kill_time: None },
            });
        }
    }
    Ok(Population { live, clock_time: time, beta, event_log: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub population: u64,
    pub generations: u32,
}

impl Default for Caps {
    fn default() -> Self {
        Self { population: DEFAULT_POPULATION_CAP, generations: DEFAULT_GENERATION_CAP }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub particles: u64,
    pub branchings: u64,
    pub motion_kills: u64,
    pub floor_hits: u64,
    pub max_generation: u32,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub output_times: Vec<f64>,
    pub measures: Vec<AtomicMeasure<f64>>,
    pub rng_seed: Option<u64>,
    pub truncated: bool,
    pub stats: SimStats,
    pub event_log: Option<EventLog>,
}

impl Trajectory {
    pub fn ensure_complete(&self) -> Result<()> {
        if self.truncated {
            Err(Error::Resource(format!(
                "population cap reached after {} particles; trajectory is partial",
                self.stats.particles
            )))
        } else {
            Ok(())
        }
    }

    /// `βX_s` for the last output time `≤ s`.
    pub fn at(&self, s: f64) -> Option<&AtomicMeasure<f64>> {
        let idx = self.output_times.partition_point(|&t| t <= s);
        (idx > 0).then(|| &self.measures[idx - 1])
    }
}

/// Everything needed to evolve a population: motion, clock, offspring
/// family and numerical settings.
#[derive(Clone)]
pub struct ParticleSystem {
    pub motion: MotionModel,
    pub clock: AdditiveFunctional<f64>,
    pub family: RescaledFamily<f64>,
    pub dt: f64,
    pub caps: Caps,
    pub record_events: bool,
    /// Space-time function `h`; when set, each atom at time `t` carries
    /// weight `β·h(t, x)/h(r, x_root)` (importance weighting of an
    /// h-transformed motion along each lineage).
    pub lineage_weight: Option<SpatialFn<f64>>,
}

impl std::fmt::Debug for ParticleSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParticleSystem")
            .field("motion", &self.motion)
            .field("clock", &self.clock)
            .field("family", &self.family)
            .field("dt", &self.dt)
            .field("caps", &self.caps)
            .field("record_events", &self.record_events)
            .field("weighted", &self.lineage_weight.is_some())
            .finish()
    }
}

struct Pending {
    id: u64,
    parent: Option<u64>,
    birth: f64,
    pos: Position,
    generation: u32,
    root_h: f64,
}

struct Run<'a, R: ?Sized> {
    sys: &'a ParticleSystem,
    beta: f64,
    outputs: &'a [f64],
    horizon: f64,
    measures: Vec<AtomicMeasure<f64>>,
    stats: SimStats,
    log: Option<EventLog>,
    stack: Vec<Pending>,
    next_id: u64,
    truncated: bool,
    rng: &'a mut R,
}

impl ParticleSystem {
    pub fn new(motion: MotionModel, clock: AdditiveFunctional<f64>, family: RescaledFamily<f64>, dt: f64) -> Result<Self> {
        motion.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("base step must be positive, got {dt}")));
        }
        Ok(Self { motion, clock, family, dt, caps: Caps::default(), record_events: false, lineage_weight: None })
    }

    pub fn with_caps(mut self, caps: Caps) -> Self {
        self.caps = caps;
        self
    }

    pub fn with_event_log(mut self) -> Self {
        self.record_events = true;
        self
    }

    pub fn with_lineage_weight(mut self, h: SpatialFn<f64>) -> Self {
        self.lineage_weight = Some(h);
        self
    }

    /// Evolves `pop` from its clock time to `horizon`, recording `βX` at
    /// every output time.
    pub fn simulate<R: Rng + ?Sized>(&self, pop: Population, horizon: f64, output_times: &[f64], rng: &mut R) -> Result<Trajectory> {
        let r = pop.clock_time;
        if horizon < r || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon {horizon} precedes start time {r}")));
        }
        if output_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("output times must be strictly increasing".into()));
        }
        if output_times.iter().any(|&t| t < r || t > horizon) {
            return Err(Error::Domain("output times must lie in [r, horizon]".into()));
        }
        if (pop.beta - self.family.beta).abs() > 1e-12 * self.family.beta {
            return Err(Error::Mismatch(format!(
                "population has β = {} but the family has β = {}",
                pop.beta, self.family.beta
            )));
        }
        let next_id = pop.live.iter().map(|p| p.id + 1).max().unwrap_or(0);
        let mut stack = Vec::with_capacity(pop.live.len());
        for p in pop.live.into_iter().rev().filter(|p| p.state.alive) {
            let root_h = match &self.lineage_weight {
                Some(h) => {
                    let v = h(p.birth_time, &p.state.position);
                    if !(v > 0.0) {
                        return Err(Error::Degenerate(format!("h ≤ 0 at initial atom {:?}", p.state.position)));
                    }
                    v
                }
                None => 1.0,
            };
            stack.push(Pending {
                id: p.id,
                parent: p.parent_id,
                birth: p.birth_time.max(r),
                pos: p.state.position,
                generation: 0,
                root_h,
            });
        }
        let mut run = Run {
            sys: self,
            beta: pop.beta,
            outputs: output_times,
            horizon,
            measures: vec![AtomicMeasure::empty(); output_times.len()],
            stats: SimStats::default(),
            log: (self.record_events || pop.event_log.is_some()).then(|| pop.event_log.unwrap_or_default()),
            stack,
            next_id,
            truncated: false,
            rng,
        };
        let truncated = run.drain()?;
        Ok(Trajectory {
            output_times: output_times.to_vec(),
            measures: run.measures,
            rng_seed: None,
            truncated,
            stats: run.stats,
            event_log: run.log,
        })
    }
}

impl<R: Rng + ?Sized> Run<'_, R> {
    /// Simulates every pending particle depth first; returns whether the
    /// population cap truncated the run.
    fn drain(&mut self) -> Result<bool> {
        while let Some(p) = self.stack.pop() {
            self.stats.particles += 1;
            if self.stats.particles > self.sys.caps.population {
                return Ok(true);
            }
            self.stats.max_generation = self.stats.max_generation.max(p.generation);
            self.particle(p)?;
            if self.truncated {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn record(&mut self, i: usize, t: f64, pos: &Position, root_h: f64) {
        let w = match &self.sys.lineage_weight {
            Some(h) => self.beta * h(t, pos) / root_h,
            None => self.beta,
        };
        if w > 0.0 {
            self.measures[i].push_unchecked(pos.clone(), w);
        }
    }

    fn particle(&mut self, p: Pending) -> Result<()> {
        let sys = self.sys;
        let k = &sys.clock;
        let rate = sys.family.clock_rate();
        let constant = k.constant_rate().map(|c| c * rate);
        let log = self.log.is_some();
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut s = p.birth;
        let mut pos = p.pos;
        if log {
            times.push(s);
            positions.push(pos.clone());
        }
        let mut out = self.outputs.partition_point(|&t| t < s);
        // constant clocks: exact exponential death time; otherwise an
        // Exp(1) threshold for the integrated clock
        let death_at = match constant {
            Some(c) if c > 0.0 => s + <Exp1 as Distribution<f64>>::sample(&Exp1, self.rng) / c,
            _ => f64::INFINITY,
        };
        let threshold: f64 = if constant.is_none() { <Exp1 as Distribution<f64>>::sample(&Exp1, self.rng) } else { f64::INFINITY };
        let mut acc = 0.0;
        let mut kv = if constant.is_none() { rate * k.density(s, &pos) } else { 0.0 };
        let fate;
        loop {
            while out < self.outputs.len() && self.outputs[out] <= s && self.outputs[out] < death_at {
                if self.outputs[out] == s {
                    self.record(out, s, &pos, p.root_h);
                }
                out += 1;
            }
            if s >= death_at {
                fate = Fate::Branched { offspring: 0 };
                break;
            }
            if s >= self.horizon {
                fate = Fate::Survived;
                break;
            }
            if constant.is_none() && k.singular_distance(&pos).is_some_and(|d| d < SINGULAR_FLOOR) {
                fate = Fate::Absorbed;
                break;
            }
            let target = self.outputs.get(out).copied().unwrap_or(f64::INFINITY).min(death_at).min(self.horizon);
            let mut h = target - s;
            if constant.is_none() {
                h = h.min(k.adaptive_step(s, &pos, sys.dt, rate));
            } else if log {
                h = h.min(sys.dt);
            }
            let next = if h == target - s { target } else { s + h };
            if next <= s {
                fate = Fate::Absorbed;
                break;
            }
            let x0 = pos.clone();
            self.stats.steps += 1;
            // with a variable clock the killing test waits until the death
            // time inside the step is known
            let outcome = if constant.is_none() {
                sys.motion.advance_free(s, &mut pos, next - s, self.rng)
            } else {
                sys.motion.advance(s, &mut pos, next - s, self.rng)
            };
            if constant.is_none() {
                // left-point hazard: the death decision must not see the
                // path beyond the death time
                let inc = kv * (next - s);
                if acc + inc >= threshold {
                    let td = (s + (threshold - acc) / kv).min(next);
                    let frac = ((td - s) / (next - s)).clamp(0.0, 1.0);
                    pos = sys.motion.interpolate(&x0, &pos, frac, next - s, self.rng);
                    if !sys.motion.survives_segment(&x0, &pos, td - s, self.rng) {
                        s += self.rng.random::<f64>() * (td - s);
                        pos[0] = 0.0;
                        fate = Fate::Killed;
                        break;
                    }
                    s = td;
                    fate = Fate::Branched { offspring: 0 };
                    break;
                }
                acc += inc;
                if !sys.motion.survives_segment(&x0, &pos, next - s, self.rng) {
                    s += self.rng.random::<f64>() * (next - s);
                    pos[0] = 0.0;
                    fate = Fate::Killed;
                    break;
                }
                kv = rate * k.density(next, &pos);
            }
            if let StepOutcome::Killed { time } = outcome {
                s = time.min(next).max(s);
                fate = Fate::Killed;
                break;
            }
            s = next;
            if log {
                times.push(s);
                positions.push(pos.clone());
            }
        }
        let fate = match fate {
            Fate::Branched { .. } => {
                let s_death = s.min(death_at);
                let n = sys.family.law.sample(self.rng);
                if n == u64::MAX {
                    return Err(Error::Resource("offspring draw saturated".into()));
                }
                if n > 0 {
                    if p.generation >= sys.caps.generations {
                        return Err(Error::Resource(format!("generation cap {} exceeded", sys.caps.generations)));
                    }
                    if self.stats.particles + self.stack.len() as u64 + n > sys.caps.population {
                        self.truncated = true;
                        self.stack.clear();
                    } else {
                        for _ in 0..n {
                            self.stack.push(Pending {
                                id: self.next_id,
                                parent: Some(p.id),
                                birth: s_death,
                                pos: pos.clone(),
                                generation: p.generation + 1,
                                root_h: p.root_h,
                            });
                            self.next_id += 1;
                        }
                    }
                }
                self.stats.branchings += 1;
                s = s_death;
                Fate::Branched { offspring: n }
            }
            Fate::Killed => {
                self.stats.motion_kills += 1;
                Fate::Killed
            }
            Fate::Absorbed => {
                self.stats.floor_hits += 1;
                Fate::Absorbed
            }
            Fate::Survived => Fate::Survived,
        };
        if let Some(log) = self.log.as_mut() {
            if times.last() != Some(&s) {
                times.push(s);
                positions.push(pos);
            }
            log.tracks.push(Track { id: p.id, parent_id: p.parent, birth: p.birth, end: s, fate, times, positions });
        }
        Ok(())
    }
}

/// Runs `reps` independent replicas on a pool of `workers` threads; replica
/// `i` draws from stream `(seed, REPLICA, i)` and results come back in
/// index order, so the output does not depend on `workers`.
pub fn run_replicas<T, F>(reps: usize, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, purpose::REPLICA, i as u64);
                f(i, &mut rng)
            })
            .collect()
    })
}

/// Replica settings shared by the Monte Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOptions {
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
}

fn one_replica(sys: &ParticleSystem, mu: &AtomicMeasure<f64>, r: f64, t: f64, rng: &mut StreamRng) -> Result<AtomicMeasure<f64>> {
    let pop = init_poisson(mu, sys.family.beta, r, sys.caps.population, rng)?;
    let traj = sys.simulate(pop, t, &[t], rng)?;
    traj.ensure_complete()?;
    Ok(traj.measures.into_iter().next().expect("one output"))
}

/// Mean and standard error of `exp(−⟨f, βX_t⟩)` over replicas started
/// from a Poisson population with intensity `mu/β` at time `r`.
pub fn laplace_mc(
    sys: &ParticleSystem,
    mu: &AtomicMeasure<f64>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    r: f64,
    t: f64,
    opts: ReplicaOptions,
) -> Result<Estimate> {
    if opts.reps < 2 {
        return Err(Error::Domain("laplace_mc needs at least two replicas".into()));
    }
    let values = run_replicas(opts.reps, opts.seed, opts.workers, |_, rng| {
        let m = one_replica(sys, mu, r, t, rng)?;
        let pairing = m.pair(|x| f(x));
        if pairing < 0.0 {
            return Err(Error::Domain("test function must be nonnegative".into()));
        }
        Ok((-pairing).exp())
    })?;
    Ok(summarize(&values))
}

/// Mean and standard error of `⟨f, βX_t⟩` over replicas.
pub fn mean_pairing(
    sys: &ParticleSystem,
    mu: &AtomicMeasure<f64>,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    r: f64,
    t: f64,
    opts: ReplicaOptions,
) -> Result<Estimate> {
    let values = run_replicas(opts.reps, opts.seed, opts.workers, |_, rng| {
        Ok(one_replica(sys, mu, r, t, rng)?.pair(|x| f(x)))
    })?;
    Ok(summarize(&values))
}

pub(crate) fn summarize(values: &[f64]) -> Estimate {
    let mut m = Moments::default();
    for &v in values {
        m.push(v);
    }
    m.estimate()
}

/// Whether `sup_s X_s(U_s) ≥ c`, checking the number of particles in the
/// space-time set `U` at every event and output time of the log.
pub fn max_occupation(traj: &Trajectory, u: &dyn Fn(f64, &[f64]) -> bool, c: f64) -> Result<bool> {
    let log = traj
        .event_log
        .as_ref()
        .ok_or_else(|| Error::Unsupported("max_occupation needs a recorded event log".into()))?;
    let mut times = log.event_times();
    times.extend(log.tracks.iter().flat_map(|k| k.times.iter().copied()));
    times.extend(traj.output_times.iter().copied());
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times.iter().any(|&s| {
        let count = log
            .tracks
            .iter()
            .filter(|k| k.position_at(s).is_some_and(|x| u(s, x)))
            .count();
        count as f64 >= c
    }))
}

/// Frequency over replicas of `sup_s X_s(U_s) ≥ c`.
pub fn occupation_frequency(
    sys: &ParticleSystem,
    mu: &AtomicMeasure<f64>,
    u: &(dyn Fn(f64, &[f64]) -> bool + Sync),
    c: f64,
    r: f64,
    t: f64,
    opts: ReplicaOptions,
) -> Result<Estimate> {
    let sys = sys.clone().with_event_log();
    let hits = run_replicas(opts.reps, opts.seed, opts.workers, |_, rng| {
        let pop = init_poisson(mu, sys.family.beta, r, sys.caps.population, rng)?;
        let traj = sys.simulate(pop, t, &[t], rng)?;
        traj.ensure_complete()?;
        Ok(if max_occupation(&traj, u, c)? { 1.0 } else { 0.0 })
    })?;
    Ok(summarize(&hits))
}

#[cfg(test)]
mod tests;
