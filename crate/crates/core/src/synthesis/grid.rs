use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::domain::BoxDomain;
use crate::gp::bounds::cells_per_side;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 10_000_000;

/// Cell-centered axis-aligned `tau`-discretization of a box.
///
/// Dimension `j` is split into `counts[j]` equal cells of width at most
/// `2 tau / D`, so every point of the box is within `tau` in 1-norm of the
/// center of its cell. Points are enumerated in row-major order with the
/// last dimension fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub tau: f64,
    pub lower: Vec<f64>,
    pub steps: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Number of points of the `tau`-discretization of `domain`, or `None` on
/// overflow.
pub fn grid_size(domain: &BoxDomain, tau: f64) -> Option<usize> {
    domain
        .sides()
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(cells_per_side(*s, tau, domain.dim()) as usize))
}

pub fn discretize(domain: &BoxDomain, tau: f64, cap: usize) -> Result<Grid, SynthesisError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SynthesisError::InvalidConfig(format!("discretization gap must be positive, got {tau}")));
    }
    let count = grid_size(domain, tau).unwrap_or(usize::MAX);
    if count > cap {
        return Err(SynthesisError::GridTooLarge { tau, count, cap });
    }
    let dim = domain.dim();
    let sides = domain.sides();
    let counts: Vec<usize> = sides.iter().map(|s| cells_per_side(*s, tau, dim) as usize).collect();
    let steps = sides.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
    Ok(Grid { tau, lower: domain.lower.clone(), steps, counts })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Center of cell `index` in row-major order.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rem = index;
        let mut x = vec![0.0; self.dim()];
        for j in (0..self.dim()).rev() {
            let i = rem % self.counts[j];
            rem /= self.counts[j];
            x[j] = self.lower[j] + (i as f64 + 0.5) * self.steps[j];
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Index of the cell containing `x`, with points outside the box
    /// assigned to the nearest boundary cell.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut index = 0;
        for j in 0..self.dim() {
            let c = ((x[j] - self.lower[j]) / self.steps[j]).floor();
            let c = c.clamp(0.0, (self.counts[j] - 1) as f64) as usize;
            index = index * self.counts[j] + c;
        }
        index
    }

    /// Largest 1-norm distance from a point of a cell to its center.
    pub fn covering_radius(&self) -> f64 {
        self.steps.iter().sum::<f64>() / 2.0
    }
}
