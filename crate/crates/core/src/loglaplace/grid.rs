use std::io::Write;

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Dirichlet node at `x_min = 0` holding the cemetery value.
    AbsorbingAtZero,
    /// Reflecting (zero-Neumann) truncation at both ends.
    Free,
    /// Dirichlet cemetery value at both ends.
    TruncatedWithDecay,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceNodes<T> {
    Uniform { x_min: T, x_max: T, nx: usize },
    /// Single node for spatially constant problems.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid<T> {
    pub space: SpaceNodes<T>,
    pub r: T,
    pub t: T,
    pub nt: usize,
    pub boundary: Boundary,
}

impl<T: Real> SpaceTimeGrid<T> {
    pub fn uniform(x_min: T, x_max: T, nx: usize, r: T, t: T, nt: usize, boundary: Boundary) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Domain(format!("grid needs x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if nx < 3 {
            return Err(Error::Domain("grid needs at least three spatial nodes".into()));
        }
        if boundary == Boundary::AbsorbingAtZero && x_min != T::zero() {
            return Err(Error::Domain("absorbing boundary requires x_min = 0".into()));
        }
        Self::check_time(r, t, nt)?;
        Ok(Self { space: SpaceNodes::Uniform { x_min, x_max, nx }, r, t, nt, boundary })
    }

    pub fn homogeneous(r: T, t: T, nt: usize) -> Result<Self> {
        Self::check_time(r, t, nt)?;
        Ok(Self { space: SpaceNodes::Homogeneous, r, t, nt, boundary: Boundary::Free })
    }

    fn check_time(r: T, t: T, nt: usize) -> Result<()> {
        if !(t > r) || !r.is_finite() || !t.is_finite() {
            return Err(Error::Domain(format!("grid needs r < t, got [{r}, {t}]")));
        }
        if nt == 0 {
            return Err(Error::Domain("grid needs at least one time step".into()));
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.space, SpaceNodes::Homogeneous)
    }

    pub fn nx(&self) -> usize {
        match self.space {
            SpaceNodes::Uniform { nx, .. } => nx,
            SpaceNodes::Homogeneous => 1,
        }
    }

    pub fn h(&self) -> Option<T> {
        match self.space {
            SpaceNodes::Uniform { x_min, x_max, nx } => Some((x_max - x_min) / T::from_usize_lossy(nx - 1)),
            SpaceNodes::Homogeneous => None,
        }
    }

    pub fn tau(&self) -> T {
        (self.t - self.r) / T::from_usize_lossy(self.nt)
    }

    pub fn node(&self, i: usize) -> T {
        match self.space {
            SpaceNodes::Uniform { x_min, x_max, nx } => {
                if i + 1 == nx {
                    x_max
                } else {
                    x_min + (x_max - x_min) * T::from_usize_lossy(i) / T::from_usize_lossy(nx - 1)
                }
            }
            SpaceNodes::Homogeneous => T::zero(),
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.nx()).map(|i| self.node(i)).collect()
    }

    /// Time of level `j`, with level 0 at `r` and level `nt` at `t`.
    pub fn time(&self, j: usize) -> T {
        if j == self.nt {
            self.t
        } else {
            self.r + (self.t - self.r) * T::from_usize_lossy(j) / T::from_usize_lossy(self.nt)
        }
    }

    pub fn with_nt(&self, nt: usize) -> Self {
        Self { nt, ..self.clone() }
    }

    /// Halves both the spatial and the temporal step.
    pub fn refined(&self) -> Self {
        let space = match self.space {
            SpaceNodes::Uniform { x_min, x_max, nx } => SpaceNodes::Uniform { x_min, x_max, nx: 2 * (nx - 1) + 1 },
            SpaceNodes::Homogeneous => SpaceNodes::Homogeneous,
        };
        Self { space, nt: 2 * self.nt, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics<T> {
    /// Number of time-step doublings performed.
    pub refinements: usize,
    /// Time steps used by the returned solution.
    pub final_nt: usize,
    /// Sup-norm change at the last doubling.
    pub refinement_change: T,
    /// Largest magnitude seen at truncation boundary nodes.
    pub boundary_magnitude: T,
}

/// Values `v(s_j, x_i)` on a space-time grid; `values[j][i]` with level 0 at `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    pub grid: SpaceTimeGrid<T>,
    pub values: Vec<Vec<T>>,
    pub diagnostics: SolveDiagnostics<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn level(&self, j: usize) -> &[T] {
        &self.values[j]
    }

    /// Values at the initial time `r`.
    pub fn at_r(&self) -> &[T] {
        &self.values[0]
    }

    /// Linear interpolation in space at level `j`.
    pub fn interpolate(&self, j: usize, x: T) -> Result<T> {
        let row = &self.values[j];
        match self.grid.space {
            SpaceNodes::Homogeneous => Ok(row[0]),
            SpaceNodes::Uniform { x_min, x_max, nx } => {
                let slack = (x_max - x_min) * T::lit(1e-12);
                if x < x_min - slack || x > x_max + slack || !x.is_finite() {
                    return Err(Error::Domain(format!("x = {x} outside the grid [{x_min}, {x_max}]")));
                }
                let h = self.grid.h().expect("uniform");
                let pos = ((x - x_min) / h).max(T::zero());
                let i = pos.floor().to_usize().unwrap_or(0).min(nx - 2);
                let w = (pos - T::from_usize_lossy(i)).min(T::one()).max(T::zero());
                Ok(row[i] * (T::one() - w) + row[i + 1] * w)
            }
        }
    }

    /// Linear interpolation in space and time.
    pub fn eval(&self, s: T, x: T) -> Result<T> {
        let g = &self.grid;
        if s < g.r || s > g.t {
            return Err(Error::Domain(format!("s = {s} outside [{}, {}]", g.r, g.t)));
        }
        let pos = ((s - g.r) / g.tau()).max(T::zero());
        let j = pos.floor().to_usize().unwrap_or(0).min(g.nt - 1);
        let w = (pos - T::from_usize_lossy(j)).min(T::one());
        Ok(self.interpolate(j, x)? * (T::one() - w) + self.interpolate(j + 1, x)? * w)
    }

    /// `⟨v(r, ·), μ⟩` for a one-dimensional measure.
    pub fn pair_at_r(&self, mu: &AtomicMeasure<T>) -> Result<T> {
        let mut total = T::zero();
        for atom in mu.atoms() {
            let x = if self.grid.is_homogeneous() { T::zero() } else { atom.position[0] };
            total = total + atom.weight * self.interpolate(0, x)?;
        }
        Ok(total)
    }

    pub fn sup_abs(&self) -> T {
        self.values.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Writes `(r, x, v)` rows for every grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "x", "v"]).map_err(csv_err)?;
        for (j, row) in self.values.iter().enumerate() {
            let s = self.grid.time(j);
            for (i, v) in row.iter().enumerate() {
                w.write_record([s.to_string(), self.grid.node(i).to_string(), v.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
