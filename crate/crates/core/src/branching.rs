//! Branching mechanisms `ψ`, offspring laws and the rescaled particle
//! families whose `ψ_β` reproduces a target mechanism.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Space-time coefficient `(s, x) ↦ c(s, x)`.
pub type SpatialFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;

/// Finite atomic approximation of the Lévy kernel `ℓ(du)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectralMeasure<T> {
    atoms: Vec<(T, T)>,
}

impl<T: Real> SpectralMeasure<T> {
    pub fn new(atoms: Vec<(T, T)>) -> Result<Self> {
        for &(u, m) in &atoms {
            if !(u > T::zero()) || !u.is_finite() || m < T::zero() || !m.is_finite() {
                return Err(Error::Domain(format!("spectral atom needs u > 0 and mass ≥ 0, got ({u}, {m})")));
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(T, T)] {
        &self.atoms
    }

    /// `∫ u ∧ u² ℓ(du)`.
    pub fn moment_bound(&self) -> T {
        self.atoms.iter().map(|&(u, m)| m * u.min(u * u)).sum()
    }

    fn integral(&self, z: T) -> T {
        self.atoms.iter().map(|&(u, m)| m * levy_integrand(z * u)).sum()
    }

    fn integral_derivative(&self, z: T) -> T {
        self.atoms.iter().map(|&(u, m)| m * u * -(-z * u).exp_m1()).sum()
    }
}

/// `e^{-y} − 1 + y`, accurate for small `y`.
fn levy_integrand<T: Real>(y: T) -> T {
    if y < T::lit(1e-3) {
        let y2 = y * y;
        y2 * (T::lit(0.5) - y / T::lit(6.0) + y2 / T::lit(24.0))
    } else {
        (-y).exp_m1() + y
    }
}

/// Local branching mechanism `ψ^s(x, z)`.
#[derive(Clone)]
pub enum BranchingMechanism<T: Real> {
    /// `a z + b z²`.
    Quadratic { a: T, b: T },
    /// `c z^{1+β}`.
    Stable { beta: T, scale: T },
    /// `a^s(x) z + b^s(x) z² + Σ mᵢ (e^{−z uᵢ} − 1 + z uᵢ)`.
    General { a: SpatialFn<T>, b: SpatialFn<T>, ell: SpectralMeasure<T> },
    /// `c^s(x) z^{1+β}` with a space-time coefficient.
    SpatialStable { beta: T, coeff: SpatialFn<T> },
    /// `ψ^s(x, h^s(x) z)` for a base mechanism and weight `h`.
    HTransformed { base: Box<BranchingMechanism<T>>, h: SpatialFn<T> },
}

impl<T: Real> fmt::Debug for BranchingMechanism<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic { a, b } => f.debug_struct("Quadratic").field("a", a).field("b", b).finish(),
            Self::Stable { beta, scale } => f.debug_struct("Stable").field("beta", beta).field("scale", scale).finish(),
            Self::General { ell, .. } => f.debug_struct("General").field("ell", ell).finish_non_exhaustive(),
            Self::SpatialStable { beta, .. } => f.debug_struct("SpatialStable").field("beta", beta).finish_non_exhaustive(),
            Self::HTransformed { base, .. } => f.debug_struct("HTransformed").field("base", base).finish_non_exhaustive(),
        }
    }
}

impl<T: Real> BranchingMechanism<T> {
    pub fn quadratic(b: T) -> Self {
        Self::Quadratic { a: T::zero(), b }
    }

    pub fn stable(beta: T, scale: T) -> Self {
        Self::Stable { beta, scale }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { a, b } => {
                if *a < T::zero() || *b < T::zero() || !a.is_finite() || !b.is_finite() {
                    return Err(Error::Config("quadratic mechanism needs a, b ≥ 0".into()));
                }
            }
            Self::Stable { beta, scale } => {
                check_stable_index(*beta)?;
                if *scale < T::zero() || !scale.is_finite() {
                    return Err(Error::Config("stable mechanism needs a nonnegative scale".into()));
                }
            }
            Self::SpatialStable { beta, .. } => check_stable_index(*beta)?,
            Self::General { .. } => {}
            Self::HTransformed { base, .. } => base.validate()?,
        }
        Ok(())
    }

    /// Evaluates `ψ^s(x, z)` for `z ≥ 0`.
    pub fn psi(&self, s: T, x: &[T], z: T) -> Result<T> {
        if !(z >= T::zero()) {
            return Err(Error::Domain(format!("branching mechanism evaluated at negative z = {z}")));
        }
        Ok(self.psi_unchecked(s, x, z))
    }

    pub(crate) fn psi_unchecked(&self, s: T, x: &[T], z: T) -> T {
        match self {
            Self::Quadratic { a, b } => *a * z + *b * z * z,
            Self::Stable { beta, scale } => *scale * z.powf(T::one() + *beta),
            Self::General { a, b, ell } => a(s, x) * z + b(s, x) * z * z + ell.integral(z),
            Self::SpatialStable { beta, coeff } => coeff(s, x) * z.powf(T::one() + *beta),
            Self::HTransformed { base, h } => base.psi_unchecked(s, x, h(s, x) * z),
        }
    }

    /// `∂ψ/∂z`.
    pub fn dpsi(&self, s: T, x: &[T], z: T) -> T {
        match self {
            Self::Quadratic { a, b } => *a + T::lit(2.0) * *b * z,
            Self::Stable { beta, scale } => *scale * (T::one() + *beta) * z.powf(*beta),
            Self::General { a, b, ell } => a(s, x) + T::lit(2.0) * b(s, x) * z + ell.integral_derivative(z),
            Self::SpatialStable { beta, coeff } => coeff(s, x) * (T::one() + *beta) * z.powf(*beta),
            Self::HTransformed { base, h } => {
                let hv = h(s, x);
                hv * base.dpsi(s, x, hv * z)
            }
        }
    }

    /// Linear coefficient `a^s(x)` of the representation.
    pub fn linear_part(&self, s: T, x: &[T]) -> T {
        match self {
            Self::Quadratic { a, .. } => *a,
            Self::Stable { .. } | Self::SpatialStable { .. } => T::zero(),
            Self::General { a, .. } => a(s, x),
            Self::HTransformed { base, h } => h(s, x) * base.linear_part(s, x),
        }
    }
}

fn check_stable_index<T: Real>(beta: T) -> Result<()> {
    if beta > T::zero() && beta <= T::one() {
        Ok(())
    } else {
        Err(Error::Config(format!("stable branching index must lie in (0, 1], got {beta}")))
    }
}

/// Default number of explicitly tabulated generating-function coefficients.
pub const DEFAULT_HEAD_LEN: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum LawKind<T> {
    /// The law is exactly the tabulated coefficients.
    Finite,
    /// `φ(u) = u + (1 − u)^{1+β}/(1 + β)`; the table is a head with the
    /// remaining mass recorded as `tail_mass`.
    Stable { beta: T },
}

/// Offspring distribution `q(dn)` on `{0, 1, 2, …}` and its generating
/// function `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw<T> {
    coeffs: Vec<T>,
    tail_mass: T,
    mean: T,
    kind: LawKind<T>,
    cdf: Vec<T>,
}

impl<T: Real> OffspringLaw<T> {
    /// Law with finitely many atoms given by their probabilities.
    pub fn finite(coeffs: Vec<T>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|&c| !(c >= T::zero()) || !c.is_finite()) {
            return Err(Error::Domain("offspring probabilities must be finite and nonnegative".into()));
        }
        let total: T = coeffs.iter().copied().sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        if (total - T::one()).abs() > tol {
            return Err(Error::Domain(format!("offspring probabilities sum to {total}, not 1")));
        }
        let mean: T = coeffs.iter().enumerate().map(|(n, &c)| T::from_usize_lossy(n) * c).sum();
        if mean > T::one() + tol {
            return Err(Error::Domain(format!("offspring mean {mean} exceeds 1")));
        }
        let cdf = cumulative(&coeffs);
        Ok(Self { coeffs, tail_mass: T::zero(), mean, kind: LawKind::Finite, cdf })
    }

    /// Critical binary law `q(0) = q(2) = 1/2`.
    pub fn critical_binary() -> Self {
        Self::finite(vec![T::lit(0.5), T::zero(), T::lit(0.5)]).expect("valid law")
    }

    /// Degenerate law `q(1) = 1` (no branching).
    pub fn identity() -> Self {
        Self::finite(vec![T::zero(), T::one()]).expect("valid law")
    }

    /// Critical law with `φ(u) = u + (1 − u)^{1+β}/(1 + β)`, tabulated up
    /// to `head_len` coefficients.
    pub fn stable(beta: T, head_len: usize) -> Result<Self> {
        check_stable_index(beta)?;
        let head_len = head_len.max(3);
        // q_0 = 1/(1+β), q_1 = 0, q_m = s_{m−1}/m with s the Sibuya(β) pmf.
        let one = T::one();
        let mut coeffs = vec![T::zero(); head_len];
        coeffs[0] = one / (one + beta);
        let mut s = beta; // s_1
        for m in 2..head_len {
            let n = m - 1;
            coeffs[m] = s / T::from_usize_lossy(m);
            s = s * (T::from_usize_lossy(n) - beta) / T::from_usize_lossy(n + 1);
        }
        // s now holds s_{head_len-1}; remaining mass Σ_{m≥head_len} q_m = s_{head_len−1}/(1+β).
        let tail_mass = s / (one + beta);
        if tail_mass < T::zero() {
            return Err(Error::Internal("negative truncation residue".into()));
        }
        let cdf = cumulative(&coeffs);
        Ok(Self { coeffs, tail_mass, mean: one, kind: LawKind::Stable { beta }, cdf })
    }

    /// Tabulated coefficients `q(0), q(1), …`.
    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Probability mass beyond the tabulated coefficients.
    pub fn tail_mass(&self) -> T {
        self.tail_mass
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// `α = mean − 1 ≤ 0`.
    pub fn alpha(&self) -> T {
        self.mean - T::one()
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, LawKind::Finite) && self.coeffs.get(1).is_some_and(|&c| c == T::one())
    }

    /// Generating function `φ(u) = Σ q(n) uⁿ` on `[0, 1]`.
    pub fn pgf(&self, u: T) -> T {
        match self.kind {
            LawKind::Finite => self.coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * u + c),
            LawKind::Stable { beta } => {
                let one = T::one();
                u + (one - u).powf(one + beta) / (one + beta)
            }
        }
    }

    pub fn pgf_derivative(&self, u: T) -> T {
        match self.kind {
            LawKind::Finite => {
                let n = self.coeffs.len();
                (1..n).rev().fold(T::zero(), |acc, k| acc * u + T::from_usize_lossy(k) * self.coeffs[k])
            }
            LawKind::Stable { beta } => T::one() - (T::one() - u).powf(beta),
        }
    }

    /// `φ(1 − y) − 1 + y`, the centred generating function at `1 − y`.
    pub fn centred_pgf(&self, y: T) -> T {
        match self.kind {
            LawKind::Finite => self.pgf(T::one() - y) - T::one() + y,
            LawKind::Stable { beta } => y.powf(T::one() + beta) / (T::one() + beta),
        }
    }

    /// Draws an offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self.kind {
            LawKind::Finite => sample_from_cdf(&self.cdf, rng),
            LawKind::Stable { beta } => {
                let beta = beta.as_f64();
                let q0 = 1.0 / (1.0 + beta);
                if rng.random::<f64>() < q0 {
                    return 0;
                }
                // m ≥ 2 with probability ∝ s_{m−1}/m: Sibuya proposal thinned by 2/(n+1).
                loop {
                    let n = sample_sibuya(beta, rng);
                    if n == u64::MAX {
                        return u64::MAX;
                    }
                    if rng.random::<f64>() * (n as f64 + 1.0) < 2.0 {
                        return n + 1;
                    }
                }
            }
        }
    }
}

fn cumulative<T: Real>(coeffs: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    coeffs
        .iter()
        .map(|&c| {
            acc = acc + c;
            acc
        })
        .collect()
}

fn sample_from_cdf<T: Real, R: Rng + ?Sized>(cdf: &[T], rng: &mut R) -> u64 {
    let u = T::lit(rng.random::<f64>()) * *cdf.last().expect("nonempty");
    let idx = cdf.partition_point(|&c| c <= u);
    idx.min(cdf.len() - 1) as u64
}

/// Sibuya(β) draw on `{1, 2, …}`: geometric with a Beta(β, 1 − β)
/// success probability. Saturates at `u64::MAX`.
pub fn sample_sibuya<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> u64 {
    if beta >= 1.0 {
        return 1;
    }
    let p: f64 = Beta::new(beta, 1.0 - beta).expect("valid beta parameters").sample(rng);
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let g = (u.ln() / (-p).ln_1p()).floor();
    if !g.is_finite() || g >= 1.8e19 {
        u64::MAX
    } else {
        1 + g as u64
    }
}

/// Particle family for a fixed rescaling `β`: offspring law plus rate
/// multiplier `λ_β` applied to the branching clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledFamily<T> {
    pub beta: T,
    pub law: OffspringLaw<T>,
    pub rate_multiplier: T,
}

impl<T: Real> RescaledFamily<T> {
    pub fn new(beta: T, law: OffspringLaw<T>, rate_multiplier: T) -> Result<Self> {
        if !(beta > T::zero() && beta <= T::one()) {
            return Err(Error::Domain(format!("rescaling β must lie in (0, 1], got {beta}")));
        }
        if !(rate_multiplier > T::zero()) || !rate_multiplier.is_finite() {
            return Err(Error::Domain("rate multiplier must be positive".into()));
        }
        Ok(Self { beta, law, rate_multiplier })
    }

    pub fn no_branching(beta: T) -> Result<Self> {
        Self::new(beta, OffspringLaw::identity(), T::one())
    }

    /// Per-particle death rate multiplier `λ_β / β` applied to `K`.
    pub fn clock_rate(&self) -> T {
        self.rate_multiplier / self.beta
    }

    /// `ψ_β(z) = λ_β β⁻² (φ(1 − βz) − 1 + βz)` for `0 ≤ z ≤ 1/β`.
    pub fn psi_beta(&self, z: T) -> Result<T> {
        let cap = T::one() / self.beta;
        if !(z >= T::zero()) || z > cap * (T::one() + T::epsilon()) {
            return Err(Error::Domain(format!("ψ_β evaluated at z = {z} outside [0, 1/β]")));
        }
        Ok(self.psi_beta_unchecked(z.min(cap)))
    }

    pub(crate) fn psi_beta_unchecked(&self, z: T) -> T {
        let y = self.beta * z;
        self.rate_multiplier / (self.beta * self.beta) * self.law.centred_pgf(y)
    }

    pub(crate) fn dpsi_beta(&self, z: T) -> T {
        let y = self.beta * z;
        self.rate_multiplier / self.beta * (T::one() - self.law.pgf_derivative(T::one() - y))
    }
}

/// Builds the rescaled family whose `ψ_β` equals `mech` exactly.
pub fn offspring_family<T: Real>(mech: &BranchingMechanism<T>, beta: T) -> Result<RescaledFamily<T>> {
    offspring_family_with_head(mech, beta, DEFAULT_HEAD_LEN)
}

pub fn offspring_family_with_head<T: Real>(
    mech: &BranchingMechanism<T>,
    beta: T,
    head_len: usize,
) -> Result<RescaledFamily<T>> {
    mech.validate()?;
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::Domain(format!("rescaling β must lie in (0, 1], got {beta}")));
    }
    match mech {
        BranchingMechanism::Quadratic { a, b } => {
            let lambda = *a * beta + T::lit(2.0) * *b;
            if lambda == T::zero() {
                return RescaledFamily::no_branching(beta);
            }
            let q2 = *b / lambda;
            let law = OffspringLaw::finite(vec![T::one() - q2, T::zero(), q2])?;
            RescaledFamily::new(beta, law, lambda)
        }
        BranchingMechanism::Stable { beta: index, scale } => {
            if (*index - beta).abs() > T::epsilon() * T::lit(8.0) {
                return Err(Error::Mismatch(format!(
                    "stable mechanism has index {index} but family requested at β = {beta}"
                )));
            }
            if *scale == T::zero() {
                return RescaledFamily::no_branching(beta);
            }
            let law = if beta == T::one() {
                OffspringLaw::critical_binary()
            } else {
                OffspringLaw::stable(beta, head_len)?
            };
            let lambda = *scale * (T::one() + beta) * beta.powf(T::one() - beta);
            RescaledFamily::new(beta, law, lambda)
        }
        _ => Err(Error::Unsupported(
            "offspring families are only constructed for quadratic and stable mechanisms".into(),
        )),
    }
}
