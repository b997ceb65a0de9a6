//! Simulation and numerical verification of measure-valued branching
//! processes: branching particle systems, their rescaling limits and the
//! log-Laplace equations describing them.

pub mod additive_functional;
pub mod branching;
pub mod error;
pub mod harness;
pub mod loglaplace;
pub mod measure;
pub mod motion;
pub mod particles;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod transform;

pub use additive_functional::{AdditiveFunctional, AdmissibilityReport, Verdict};
pub use branching::{BranchingMechanism, OffspringLaw, RescaledFamily};
pub use error::{Error, Result};
pub use loglaplace::{GridFunction, SpaceTimeGrid};
pub use measure::AtomicMeasure;
pub use motion::{MotionModel, Path};
pub use scalar::Real;

pub type BranchingMechanism64 = BranchingMechanism<f64>;
pub type BranchingMechanism32 = BranchingMechanism<f32>;
pub type AtomicMeasure64 = AtomicMeasure<f64>;
pub type AtomicMeasure32 = AtomicMeasure<f32>;
pub type AdditiveFunctional64 = AdditiveFunctional<f64>;
pub type GridFunction64 = GridFunction<f64>;
pub type GridFunction32 = GridFunction<f32>;
pub type SpaceTimeGrid64 = SpaceTimeGrid<f64>;
