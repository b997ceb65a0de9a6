use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::additive_functional::AdditiveFunctional;
use crate::branching::{offspring_family, BranchingMechanism, RescaledFamily, SpatialFn};
use crate::error::{Error, Result};
use crate::loglaplace::{Boundary, SpaceTimeGrid};
use crate::measure::{Atom, AtomicMeasure};
use crate::motion::MotionModel;
use crate::particles::ParticleSystem;
use crate::transform::{SystemSpec, WeightFunction};

pub const DEFAULT_INTERVAL_ATOMS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    DawsonWatanabe,
    Hyperbolic,
    Iscoe,
    NoBranching,
    Frozen,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::DawsonWatanabe,
        ScenarioName::Hyperbolic,
        ScenarioName::Iscoe,
        ScenarioName::NoBranching,
        ScenarioName::Frozen,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::DawsonWatanabe => "dawson_watanabe",
            ScenarioName::Hyperbolic => "hyperbolic",
            ScenarioName::Iscoe => "iscoe",
            ScenarioName::NoBranching => "no_branching",
            ScenarioName::Frozen => "frozen",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            ScenarioName::DawsonWatanabe => "free Brownian motion, ψ = z², K = ds",
            ScenarioName::Hyperbolic => {
                "Brownian motion killed at 0, ϱ = |x|, K = 1∨|x|^{1+β−σ}, ψ = (z/(|x|^{σ/(1+β)}∨|x|))^{1+β}"
            }
            ScenarioName::Iscoe => "α-stable motion, ϱ = φ_p, K = φ_p^{1+β}, ψ = (z/φ_p)^{1+β}",
            ScenarioName::NoBranching => "free Brownian motion without branching",
            ScenarioName::Frozen => "motionless particles without branching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub position: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMeasure {
    Atoms { atoms: Vec<AtomConfig> },
    /// Lebesgue density on `[a, b]`, discretized into equal atoms at cell centres.
    Interval {
        a: f64,
        b: f64,
        #[serde(default = "one")]
        density: f64,
        #[serde(default = "default_atoms")]
        n_atoms: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn default_atoms() -> usize {
    DEFAULT_INTERVAL_ATOMS
}

impl InitialMeasure {
    pub fn dirac(x: f64, mass: f64) -> Self {
        InitialMeasure::Atoms { atoms: vec![AtomConfig { position: vec![x], weight: mass }] }
    }

    pub fn build(&self) -> Result<AtomicMeasure<f64>> {
        match self {
            InitialMeasure::Atoms { atoms } => AtomicMeasure::new(
                atoms.iter().map(|a| Atom { position: a.position.iter().copied().collect(), weight: a.weight }).collect(),
            ),
            InitialMeasure::Interval { a, b, density, n_atoms } => {
                AtomicMeasure::lebesgue_on_interval(*a, *b, *n_atoms, *density)
            }
        }
    }
}

/// Nonnegative test function `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Constant { c: f64 },
    /// `|x| ∧ cap`.
    AbsMin { cap: f64 },
    /// `c·exp(−|x|²/(2s²))`.
    Gaussian { c: f64, scale: f64 },
    /// `1` on `[a, b]` (first coordinate).
    Indicator { a: f64, b: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::Constant { c } => c,
            TestFunction::AbsMin { cap } => x.iter().map(|c| c * c).sum::<f64>().sqrt().min(cap),
            TestFunction::Gaussian { c, scale } => c * (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * scale * scale)).exp(),
            TestFunction::Indicator { a, b } => {
                if x[0] >= a && x[0] <= b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFunction::Constant { c } => c >= 0.0 && c.is_finite(),
            TestFunction::AbsMin { cap } => cap > 0.0 && cap.is_finite(),
            TestFunction::Gaussian { c, scale } => c >= 0.0 && c.is_finite() && scale > 0.0,
            TestFunction::Indicator { a, b } => a <= b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid test function {self:?}")))
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            TestFunction::Constant { c } => c,
            TestFunction::AbsMin { cap } => cap,
            TestFunction::Gaussian { c, .. } => c,
            TestFunction::Indicator { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    Homogeneous {
        nt: usize,
    },
    Uniform {
        x_min: f64,
        x_max: f64,
        nx: usize,
        nt: usize,
        boundary: Boundary,
    },
}

impl GridConfig {
    pub fn build(&self, r: f64, t: f64) -> Result<SpaceTimeGrid<f64>> {
        match *self {
            GridConfig::Homogeneous { nt } => SpaceTimeGrid::homogeneous(r, t, nt),
            GridConfig::Uniform { x_min, x_max, nx, nt, boundary } => {
                SpaceTimeGrid::uniform(x_min, x_max, nx, r, t, nt, boundary)
            }
        }
    }
}

/// Scenario selection as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    /// Branching index of the stable mechanism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialMeasure>,
}

impl ScenarioConfig {
    pub fn named(name: ScenarioName) -> Self {
        Self { name, beta: None, sigma: None, alpha: None, p: None, motion: None, initial: None }
    }

    pub fn hyperbolic(beta: f64, sigma: f64) -> Self {
        Self { beta: Some(beta), sigma: Some(sigma), ..Self::named(ScenarioName::Hyperbolic) }
    }

    pub fn iscoe(alpha: f64, p: f64, beta: f64) -> Self {
        Self { alpha: Some(alpha), p: Some(p), beta: Some(beta), ..Self::named(ScenarioName::Iscoe) }
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let mut sc = match self.name {
            ScenarioName::DawsonWatanabe => Scenario::dawson_watanabe(),
            ScenarioName::Hyperbolic => Scenario::hyperbolic(self.beta.unwrap_or(1.0), self.sigma.unwrap_or(1.5))?,
            ScenarioName::Iscoe => {
                Scenario::iscoe(self.alpha.unwrap_or(2.0), self.p.unwrap_or(2.0), self.beta.unwrap_or(1.0))?
            }
            ScenarioName::NoBranching => Scenario::no_branching(),
            ScenarioName::Frozen => Scenario::frozen(),
        };
        let unused: Vec<&str> = match self.name {
            ScenarioName::Hyperbolic => vec![("alpha", self.alpha), ("p", self.p)],
            ScenarioName::Iscoe => vec![("sigma", self.sigma)],
            _ => vec![("beta", self.beta), ("sigma", self.sigma), ("alpha", self.alpha), ("p", self.p)],
        }
        .into_iter()
        .filter_map(|(k, v)| v.map(|_| k))
        .collect();
        if !unused.is_empty() {
            return Err(Error::Config(format!("scenario {} takes no parameter(s) {}", self.name.as_str(), unused.join(", "))));
        }
        if let Some(m) = &self.motion {
            m.validate()?;
            if m.dim() != 1 && sc.default_grid.is_some() {
                sc.default_grid = None;
            }
            sc.motion = m.clone();
        }
        if let Some(init) = &self.initial {
            sc.initial = init.build()?;
        }
        if sc.initial.dim().is_some_and(|d| d != sc.motion.dim()) {
            return Err(Error::Config("initial measure dimension differs from the motion dimension".into()));
        }
        Ok(sc)
    }
}

/// A fully resolved scenario. The solver pair `(mechanism, clock)` is the
/// one stated in the model; the particle pair is an equivalent
/// decomposition with a homogeneous mechanism (same product `ψ·K`), which
/// is what offspring families are built from.
#[derive(Clone)]
pub struct Scenario {
    pub name: ScenarioName,
    pub label: String,
    pub motion: MotionModel,
    pub mechanism: BranchingMechanism<f64>,
    pub clock: AdditiveFunctional<f64>,
    pub particle_mechanism: BranchingMechanism<f64>,
    pub particle_clock: AdditiveFunctional<f64>,
    pub weight: Option<WeightFunction>,
    pub initial: AtomicMeasure<f64>,
    pub default_f: TestFunction,
    /// `None` when the grid solver cannot represent the motion.
    pub default_grid: Option<GridConfig>,
    /// Rescaling forced by the mechanism (stable index), if any.
    pub natural_beta: Option<f64>,
    pub notes: String,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("label", &self.label)
            .field("motion", &self.motion)
            .field("mechanism", &self.mechanism)
            .field("clock", &self.clock)
            .field("weight", &self.weight)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn dawson_watanabe() -> Self {
        let mech = BranchingMechanism::quadratic(1.0);
        Self {
            name: ScenarioName::DawsonWatanabe,
            label: "dawson_watanabe".into(),
            motion: MotionModel::BrownianMotion { dim: 1 },
            mechanism: mech.clone(),
            clock: AdditiveFunctional::lebesgue(),
            particle_mechanism: mech,
            particle_clock: AdditiveFunctional::lebesgue(),
            weight: None,
            initial: dirac(0.0),
            default_f: TestFunction::Constant { c: 1.0 },
            default_grid: Some(GridConfig::Homogeneous { nt: 16 }),
            natural_beta: None,
            notes: ScenarioName::DawsonWatanabe.summary().into(),
        }
    }

    pub fn hyperbolic(beta: f64, sigma: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("hyperbolic β must lie in (0, 1], got {beta}")));
        }
        if !(sigma > 0.0 && sigma <= 2.0) {
            return Err(Error::Config(format!("hyperbolic σ must lie in (0, 2], got {sigma}")));
        }
        let coeff: SpatialFn<f64> = Arc::new(move |_, x: &[f64]| {
            let a = x[0].abs();
            a.powf(sigma / (1.0 + beta)).max(a).powf(-(1.0 + beta))
        });
        let mut notes = ScenarioName::Hyperbolic.summary().to_string();
        if !(1.0..=1.0 + beta).contains(&sigma) {
            notes.push_str(&format!("; σ = {sigma} lies outside [1, 1 + β]"));
        }
        Ok(Self {
            name: ScenarioName::Hyperbolic,
            label: format!("hyperbolic(beta={beta}, sigma={sigma})"),
            motion: MotionModel::KilledBrownianMotion1d,
            mechanism: BranchingMechanism::SpatialStable { beta, coeff },
            clock: AdditiveFunctional::hyperbolic(beta, sigma),
            particle_mechanism: BranchingMechanism::stable(beta, 1.0),
            particle_clock: AdditiveFunctional::power_law(sigma, None),
            weight: Some(WeightFunction::AbsX),
            initial: dirac(1.0),
            default_f: TestFunction::AbsMin { cap: 1.0 },
            default_grid: Some(GridConfig::Uniform {
                x_min: 0.0,
                x_max: 10.0,
                nx: 401,
                nt: 20,
                boundary: Boundary::AbsorbingAtZero,
            }),
            natural_beta: Some(beta),
            notes,
        })
    }

    pub fn iscoe(alpha: f64, p: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("iscoe β must lie in (0, 1], got {beta}")));
        }
        if !(p > 0.0) {
            return Err(Error::Config(format!("iscoe p must be positive, got {p}")));
        }
        let motion = MotionModel::AlphaStable { alpha, dim: 1 };
        motion.validate()?;
        let w = WeightFunction::PhiP { p };
        let coeff: SpatialFn<f64> = Arc::new(move |_, x: &[f64]| w.eval(x).powf(-(1.0 + beta)));
        let mut notes = ScenarioName::Iscoe.summary().to_string();
        if !(p < 1.0 + alpha) {
            notes.push_str(&format!("; p = {p} ≥ d + α"));
        }
        let default_grid = (alpha == 2.0).then_some(GridConfig::Uniform {
            x_min: -12.0,
            x_max: 12.0,
            nx: 241,
            nt: 20,
            boundary: Boundary::Free,
        });
        Ok(Self {
            name: ScenarioName::Iscoe,
            label: format!("iscoe(alpha={alpha}, p={p}, beta={beta})"),
            motion,
            mechanism: BranchingMechanism::SpatialStable { beta, coeff },
            clock: AdditiveFunctional::phi_p_power(p, beta),
            particle_mechanism: BranchingMechanism::stable(beta, 1.0),
            particle_clock: AdditiveFunctional::lebesgue(),
            weight: Some(w),
            initial: dirac(0.0),
            default_f: TestFunction::Gaussian { c: 1.0, scale: 1.0 },
            default_grid,
            natural_beta: Some(beta),
            notes,
        })
    }

    pub fn no_branching() -> Self {
        let mech = BranchingMechanism::quadratic(0.0);
        Self {
            name: ScenarioName::NoBranching,
            label: "no_branching".into(),
            motion: MotionModel::BrownianMotion { dim: 1 },
            mechanism: mech.clone(),
            clock: AdditiveFunctional::zero(),
            particle_mechanism: mech,
            particle_clock: AdditiveFunctional::zero(),
            weight: None,
            initial: dirac(0.0),
            default_f: TestFunction::Gaussian { c: 1.0, scale: 1.0 },
            default_grid: Some(GridConfig::Uniform { x_min: -10.0, x_max: 10.0, nx: 201, nt: 20, boundary: Boundary::Free }),
            natural_beta: None,
            notes: ScenarioName::NoBranching.summary().into(),
        }
    }

    pub fn frozen() -> Self {
        let mech = BranchingMechanism::quadratic(0.0);
        Self {
            name: ScenarioName::Frozen,
            label: "frozen".into(),
            motion: MotionModel::Frozen { dim: 1 },
            mechanism: mech.clone(),
            clock: AdditiveFunctional::zero(),
            particle_mechanism: mech,
            particle_clock: AdditiveFunctional::zero(),
            weight: None,
            initial: dirac(0.0),
            default_f: TestFunction::Constant { c: 1.0 },
            default_grid: Some(GridConfig::Uniform { x_min: -2.0, x_max: 2.0, nx: 41, nt: 8, boundary: Boundary::Free }),
            natural_beta: None,
            notes: ScenarioName::Frozen.summary().into(),
        }
    }

    /// Shipped defaults, one per scenario family.
    pub fn shipped() -> Vec<Scenario> {
        vec![
            Scenario::dawson_watanabe(),
            Scenario::hyperbolic(1.0, 1.5).expect("valid"),
            Scenario::iscoe(2.0, 2.0, 1.0).expect("valid"),
            Scenario::no_branching(),
            Scenario::frozen(),
        ]
    }

    /// Mechanism and clock for a solver grid: the spatial form on uniform
    /// grids, the homogeneous particle form on homogeneous ones.
    pub fn solver_parts(&self, grid: &SpaceTimeGrid<f64>) -> (&BranchingMechanism<f64>, &AdditiveFunctional<f64>) {
        if grid.is_homogeneous() {
            (&self.particle_mechanism, &self.particle_clock)
        } else {
            (&self.mechanism, &self.clock)
        }
    }

    pub fn system_spec(&self) -> SystemSpec<f64> {
        SystemSpec {
            motion: self.motion.clone(),
            mechanism: self.mechanism.clone(),
            clock: self.clock.clone(),
            rho: self.weight.unwrap_or(WeightFunction::One),
        }
    }

    /// Resolves the rescaling to use: stable mechanisms fix it to their
    /// index, everything else defaults to 1.
    pub fn rescaling(&self, requested: Option<f64>) -> f64 {
        requested.or(self.natural_beta).unwrap_or(1.0)
    }

    pub fn family(&self, beta: f64) -> Result<RescaledFamily<f64>> {
        offspring_family(&self.particle_mechanism, beta)
    }

    pub fn particle_system(&self, beta: f64, dt: f64) -> Result<ParticleSystem> {
        ParticleSystem::new(self.motion.clone(), self.particle_clock.clone(), self.family(beta)?, dt)
    }

    pub fn default_grid(&self, r: f64, t: f64) -> Result<SpaceTimeGrid<f64>> {
        self.default_grid
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} has no grid representation", self.label)))?
            .build(r, t)
    }
}

fn dirac(x: f64) -> AtomicMeasure<f64> {
    AtomicMeasure::dirac(&[x], 1.0).expect("valid atom")
}
