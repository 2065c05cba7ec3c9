//! Small dense helpers shared by the learners and the plant simulator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative slack allowed on declared norm bounds, to absorb rounding in
/// quantities that are bounded exactly in real arithmetic.
pub const BOUND_SLACK: f64 = 1e-9;

#[inline]
pub(crate) fn exceeds(norm: f64, bound: f64) -> bool {
    norm > bound * (1.0 + BOUND_SLACK) + BOUND_SLACK
}

/// Euclidean projection onto the closed ball of the given radius around the origin.
pub fn project_ball(x: &Vector, radius: f64) -> Vector {
    let n = x.norm();
    if n > radius {
        x * (radius / n)
    } else {
        x.clone()
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// A nonempty closed convex set with an exact Euclidean projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Domain {
    Ball { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Domain {
    pub fn ball(radius: f64) -> Self {
        Domain::Ball { radius }
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Domain::Box { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            Domain::Ball { radius } => project_ball(x, *radius),
            Domain::Box { lower, upper } => {
                Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| v.clamp(lower[i], upper[i])))
            }
        }
    }

    pub fn contains(&self, x: &Vector) -> bool {
        match self {
            Domain::Ball { radius } => !exceeds(x.norm(), *radius),
            Domain::Box { lower, upper } => {
                x.iter().enumerate().all(|(i, v)| *v >= lower[i] - BOUND_SLACK && *v <= upper[i] + BOUND_SLACK)
            }
        }
    }

    /// Radius of the smallest origin-centred ball containing the set.
    pub fn enclosing_radius(&self) -> f64 {
        match self {
            Domain::Ball { radius } => *radius,
            Domain::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| l.abs().max(u.abs()).powi(2)).sum::<f64>().sqrt()
            }
        }
    }

    /// Dimension for boxes; `None` for balls, which are dimension-free.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Domain::Ball { .. } => None,
            Domain::Box { lower, .. } => Some(lower.len()),
        }
    }

    /// Regular grid over the set: `per_dim` points per axis of the bounding
    /// box, keeping those inside the set.
    pub fn grid(&self, dim: usize, per_dim: usize) -> Vec<Vector> {
        let (lo, hi): (Vec<f64>, Vec<f64>) = match self {
            Domain::Ball { radius } => (vec![-radius; dim], vec![*radius; dim]),
            Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
        };
        box_grid(&lo, &hi, per_dim).into_iter().filter(|p| self.contains(p)).collect()
    }
}

/// All points of a regular `per_dim`-point lattice over the box `[lo, hi]`.
pub fn box_grid(lo: &[f64], hi: &[f64], per_dim: usize) -> Vec<Vector> {
    let dim = lo.len();
    let axis = |i: usize, j: usize| {
        if per_dim == 1 {
            0.5 * (lo[i] + hi[i])
        } else {
            lo[i] + (hi[i] - lo[i]) * j as f64 / (per_dim - 1) as f64
        }
    };
    let total = per_dim.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            Vector::from_iterator(
                dim,
                (0..dim).map(|i| {
                    let j = idx % per_dim;
                    idx /= per_dim;
                    axis(i, j)
                }),
            )
        })
        .collect()
}

/// Subgradient of `x -> ||x - target||`, taking zero at the kink.
pub fn norm_subgradient(x: &Vector, target: &Vector) -> Vector {
    let diff = x - target;
    let n = diff.norm();
    if n > 0.0 {
        diff / n
    } else {
        Vector::zeros(x.len())
    }
}
