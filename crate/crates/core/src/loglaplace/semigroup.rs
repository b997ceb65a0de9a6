//! Discrete transition operators for the motion on a uniform grid.

use crate::error::{Error, Result};
use crate::motion::MotionModel;
use crate::scalar::Real;

use super::grid::{Boundary, SpaceTimeGrid};

/// Tridiagonal generator matrix with optional Dirichlet rows.
#[derive(Debug, Clone)]
pub(crate) struct Generator<T> {
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
    dirichlet: Vec<bool>,
}

impl<T: Real> Generator<T> {
    /// `None` means the identity semigroup.
    pub(crate) fn build(motion: &MotionModel, grid: &SpaceTimeGrid<T>) -> Result<Option<Self>> {
        motion.validate()?;
        if grid.is_homogeneous() {
            if !motion.is_conservative() {
                return Err(Error::Mismatch("a killed motion has no spatially homogeneous reduction".into()));
            }
            return Ok(None);
        }
        if motion.dim() != 1 {
            return Err(Error::Unsupported("grid solvers are one-dimensional; use the homogeneous sentinel".into()));
        }
        let (diffusion, bessel) = match *motion {
            MotionModel::BrownianMotion { .. } => (T::lit(0.5), false),
            MotionModel::KilledBrownianMotion1d => {
                if grid.boundary != Boundary::AbsorbingAtZero {
                    return Err(Error::Mismatch("killed Brownian motion needs the absorbing boundary".into()));
                }
                (T::lit(0.5), false)
            }
            MotionModel::Bessel3 => {
                if grid.boundary == Boundary::AbsorbingAtZero || grid.node(0) != T::zero() {
                    return Err(Error::Mismatch("the Bessel-3 grid starts at an entrance node x = 0".into()));
                }
                (T::lit(0.5), true)
            }
            MotionModel::AlphaStable { alpha, .. } if alpha == 2.0 => (T::one(), false),
            MotionModel::AlphaStable { .. } => {
                return Err(Error::Unsupported("grid solver supports the α = 2 stable motion only".into()))
            }
            MotionModel::Frozen { .. } => (T::zero(), false),
        };
        let n = grid.nx();
        let h = grid.h().expect("uniform grid");
        let dh2 = diffusion / (h * h);
        let two = T::lit(2.0);
        let mut g = Self { lower: vec![T::zero(); n], diag: vec![T::zero(); n], upper: vec![T::zero(); n], dirichlet: vec![false; n] };
        for i in 1..n - 1 {
            let drift = if bessel { T::one() / grid.node(i) } else { T::zero() };
            g.lower[i] = dh2 - drift / (two * h);
            g.diag[i] = -two * dh2;
            g.upper[i] = dh2 + drift / (two * h);
        }
        match grid.boundary {
            Boundary::AbsorbingAtZero | Boundary::TruncatedWithDecay if !bessel => g.dirichlet[0] = true,
            _ if bessel => {
                // (1/2)u'' + u'/x → (3/2)u''(0) at the entrance point.
                let c = T::lit(3.0) / (h * h);
                g.diag[0] = -c;
                g.upper[0] = c;
            }
            _ => {
                g.diag[0] = -two * dh2;
                g.upper[0] = two * dh2;
            }
        }
        if grid.boundary == Boundary::TruncatedWithDecay {
            g.dirichlet[n - 1] = true;
        } else {
            g.lower[n - 1] = two * dh2;
            g.diag[n - 1] = -two * dh2;
        }
        Ok(Some(g))
    }

    pub(crate) fn is_dirichlet(&self, i: usize) -> bool {
        self.dirichlet[i]
    }

    /// Factors `(I − θτA) u' = (I + (1 − θ)τA) u`.
    pub(crate) fn theta_step(&self, theta: T, tau: T) -> ThetaStep<T> {
        let n = self.diag.len();
        let mut a = vec![T::zero(); n];
        let mut b = vec![T::one(); n];
        let mut c = vec![T::zero(); n];
        for i in 0..n {
            if !self.dirichlet[i] {
                a[i] = -theta * tau * self.lower[i];
                b[i] = T::one() - theta * tau * self.diag[i];
                c[i] = -theta * tau * self.upper[i];
            }
        }
        let mut c_prime = vec![T::zero(); n];
        let mut inv = vec![T::zero(); n];
        inv[0] = T::one() / b[0];
        c_prime[0] = c[0] * inv[0];
        for i in 1..n {
            let denom = b[i] - a[i] * c_prime[i - 1];
            inv[i] = T::one() / denom;
            c_prime[i] = c[i] * inv[i];
        }
        ThetaStep { gen: self.clone(), explicit: (T::one() - theta) * tau, a, c_prime, inv }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ThetaStep<T> {
    gen: Generator<T>,
    explicit: T,
    a: Vec<T>,
    c_prime: Vec<T>,
    inv: Vec<T>,
}

impl<T: Real> ThetaStep<T> {
    /// Advances `u` in place; Dirichlet nodes are set to `cemetery`.
    pub(crate) fn apply(&self, u: &mut [T], scratch: &mut Vec<T>, cemetery: T) {
        let n = u.len();
        let g = &self.gen;
        scratch.clear();
        scratch.extend_from_slice(u);
        for i in 0..n {
            if g.dirichlet[i] {
                u[i] = cemetery;
                continue;
            }
            if self.explicit != T::zero() {
                let mut au = g.diag[i] * scratch[i];
                if i > 0 {
                    au = au + g.lower[i] * scratch[i - 1];
                }
                if i + 1 < n {
                    au = au + g.upper[i] * scratch[i + 1];
                }
                u[i] = scratch[i] + self.explicit * au;
            }
        }
        u[0] = u[0] * self.inv[0];
        for i in 1..n {
            u[i] = (u[i] - self.a[i] * u[i - 1]) * self.inv[i];
        }
        for i in (0..n - 1).rev() {
            u[i] = u[i] - self.c_prime[i] * u[i + 1];
        }
    }
}
