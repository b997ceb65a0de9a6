//! Weighted point measures and the pairing `⟨f, μ⟩`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Spatial position; one or two coordinates are stored inline.
pub type Coords<T> = SmallVec<[T; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom<T> {
    pub position: Coords<T>,
    pub weight: T,
}

/// Finite sum of weighted Dirac masses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AtomicMeasure<T> {
    atoms: Vec<Atom<T>>,
}

impl<T: Real> AtomicMeasure<T> {
    pub fn empty() -> Self {
        Self { atoms: Vec::new() }
    }

    pub fn new(atoms: Vec<Atom<T>>) -> Result<Self> {
        let mut m = Self::empty();
        for a in atoms {
            m.push(a.position, a.weight)?;
        }
        Ok(m)
    }

    pub fn dirac(position: &[T], mass: T) -> Result<Self> {
        let mut m = Self::empty();
        m.push(position.iter().copied().collect(), mass)?;
        Ok(m)
    }

    /// Lebesgue measure (times `density`) on `[a, b]`, discretized into
    /// `n_atoms` equal-weight atoms at the cell centres.
    pub fn lebesgue_on_interval(a: T, b: T, n_atoms: usize, density: T) -> Result<Self> {
        if !(b > a) || n_atoms == 0 {
            return Err(Error::Domain("empty interval or zero atoms".into()));
        }
        let width = (b - a) / T::from_usize_lossy(n_atoms);
        let mut m = Self::empty();
        for i in 0..n_atoms {
            let centre = a + width * (T::from_usize_lossy(i) + T::lit(0.5));
            m.push(smallvec::smallvec![centre], width * density)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, position: Coords<T>, weight: T) -> Result<()> {
        if !(weight > T::zero()) || !weight.is_finite() {
            return Err(Error::Domain(format!("atom weight must be positive and finite, got {weight}")));
        }
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidState("non-finite atom position".into()));
        }
        self.atoms.push(Atom { position, weight });
        Ok(())
    }

    /// Appends without validation; used on the simulator hot path where
    /// weights are the fixed rescaling constant.
    pub(crate) fn push_unchecked(&mut self, position: Coords<T>, weight: T) {
        self.atoms.push(Atom { position, weight });
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn pair(&self, f: impl Fn(&[T]) -> T) -> T {
        self.atoms.iter().map(|a| a.weight * f(&a.position)).sum()
    }

    /// Reweights every atom by `g(position)`; atoms whose new weight is
    /// not positive are reported as an error.
    pub fn reweighted(&self, g: impl Fn(&[T]) -> T) -> Result<Self> {
        let mut out = Self::empty();
        for a in &self.atoms {
            out.push(a.position.clone(), a.weight * g(&a.position))?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> Option<usize> {
        self.atoms.first().map(|a| a.position.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_and_mass() {
        let mut m = AtomicMeasure::<f64>::dirac(&[1.0], 2.0).unwrap();
        m.push(smallvec::smallvec![3.0], 0.5).unwrap();
        assert_eq!(m.total_mass(), 2.5);
        assert_eq!(m.pair(|x| x[0]), 2.0 + 1.5);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(AtomicMeasure::<f64>::dirac(&[0.0], 0.0).is_err());
        assert!(AtomicMeasure::<f64>::dirac(&[0.0], f64::NAN).is_err());
        assert!(AtomicMeasure::<f32>::dirac(&[f32::INFINITY], 1.0).is_err());
    }

    #[test]
    fn lebesgue_discretization() {
        let m = AtomicMeasure::<f64>::lebesgue_on_interval(-1.0, 1.0, 100, 1.0).unwrap();
        assert_eq!(m.len(), 100);
        assert!((m.total_mass() - 2.0).abs() < 1e-12);
        assert!((m.atoms()[0].position[0] + 0.99).abs() < 1e-12);
    }
}
