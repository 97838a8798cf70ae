use serde::{Deserialize, Serialize};

use crate::error::{ConewaveError, Result};

/// Tolerance for deciding whether a frequency sits on the torus lattice.
pub const LATTICE_TOL: f64 = 1e-9;

fn default_grid_points() -> usize {
    256
}

/// Periodic spatial torus replacing R^n.  Frequencies of waves attached to
/// this domain live on the lattice of integer multiples of `1/period`.
/// Spatial grids exist only for quadrature; the frequency representation is
/// the source of truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusDomain {
    pub n: usize,
    pub period: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl TorusDomain {
    pub fn new(n: usize, period: f64, grid_points: usize) -> Result<Self> {
        if n < 2 {
            return Err(ConewaveError::InvalidParameter(format!(
                "spatial dimension must be >= 2, got {n}"
            )));
        }
        if !(period > 0.0) {
            return Err(ConewaveError::InvalidParameter(format!(
                "period must be positive, got {period}"
            )));
        }
        if grid_points < 16 || !grid_points.is_power_of_two() {
            return Err(ConewaveError::InvalidParameter(format!(
                "grid_points must be a power of two >= 16, got {grid_points}"
            )));
        }
        Ok(TorusDomain {
            n,
            period,
            grid_points,
        })
    }

    /// Lattice spacing in frequency space.
    pub fn lattice_step(&self) -> f64 {
        1.0 / self.period
    }

    /// Integer lattice index of a frequency vector, or an error if any
    /// component is off the lattice.
    pub fn lattice_index(&self, xi: &[f64]) -> Result<Vec<i64>> {
        let mut idx = Vec::with_capacity(xi.len());
        for &c in xi {
            let m = c * self.period;
            let r = m.round();
            if (m - r).abs() > LATTICE_TOL * self.period.max(1.0) {
                return Err(ConewaveError::OffLattice(format!(
                    "component {c} is not a multiple of 1/{}",
                    self.period
                )));
            }
            idx.push(r as i64);
        }
        Ok(idx)
    }

    /// Frequency vector of a lattice index.
    pub fn frequency_of(&self, idx: &[i64]) -> Vec<f64> {
        idx.iter().map(|&m| m as f64 / self.period).collect()
    }

    /// Wrap a spatial point into the fundamental cell [0, period)^n.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&c| c.rem_euclid(self.period)).collect()
    }

    pub fn compatible(&self, other: &TorusDomain) -> bool {
        self.n == other.n && (self.period - other.period).abs() < 1e-12
    }
}
