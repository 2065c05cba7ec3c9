//! Movement-aware OLO on a Euclidean ball by polar decomposition: the scalar
//! bettor learns the magnitude and projected gradient descent on the unit
//! ball learns the direction.
//!
//! The shifted variant recentres the learner at a fixed vector `v`; its first
//! prediction is `v` and the magnitude domain grows to `[0, R + ‖v‖]`.

use crate::betting::{BettingLearner, Hyper1d};
use crate::error::{Error, Result};
use crate::linalg::{exceeds, project_ball, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct BallHyper {
    pub lambda: f64,
    pub eps: f64,
    pub grad_bound: f64,
    pub radius: f64,
    pub shift: Vector,
}

impl BallHyper {
    pub fn new(lambda: f64, eps: f64, grad_bound: f64, radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidHyperparameter("ball radius must be finite and > 0".into()));
        }
        // validates the remaining fields
        Hyper1d::new(lambda, lambda, eps, grad_bound, radius)?;
        Ok(BallHyper { lambda, eps, grad_bound, radius, shift: Vector::zeros(dim) })
    }

    pub fn with_shift(mut self, shift: Vector) -> Result<Self> {
        if shift.len() != self.shift.len() {
            return Err(Error::Dimension { expected: self.shift.len(), got: shift.len() });
        }
        self.shift = shift;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Domain of the magnitude learner, `R + ‖v‖`.
    pub fn magnitude_radius(&self) -> f64 {
        self.radius + self.shift.norm()
    }

    pub fn magnitude_hyper(&self) -> Hyper1d {
        Hyper1d {
            lambda: self.lambda,
            gamma: self.lambda,
            eps: self.eps,
            grad_bound: self.grad_bound,
            radius: self.magnitude_radius(),
        }
    }

    /// `ε ≤ G·R'` with `R'` the magnitude radius.
    pub fn budget_fits_domain(&self) -> bool {
        self.magnitude_hyper().budget_fits_domain()
    }

    /// Explicit-constant form of the regret + movement guarantee against `u`
    /// with `‖u‖ = u_norm` after `horizon` rounds.
    pub fn regret_bound(&self, u_norm: f64, horizon: usize) -> f64 {
        if u_norm <= 0.0 {
            return self.eps;
        }
        let c = self.grad_bound + 2.0 * self.lambda;
        let t = horizon as f64;
        let log_arg = std::f64::consts::SQRT_2 * u_norm * c * t.powf(2.5) / self.eps;
        self.eps + u_norm * c * (2.0 * t).sqrt() * (1.5 + log_arg.ln()) + 1.5 * u_norm * self.grad_bound * t.sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct BallLearner {
    hyper: BallHyper,
    magnitude: BettingLearner,
    direction: Vector,
    t: usize,
}

impl BallLearner {
    pub fn new(hyper: BallHyper) -> Self {
        let magnitude = BettingLearner::new(hyper.magnitude_hyper());
        let direction = Vector::zeros(hyper.dim());
        BallLearner { hyper, magnitude, direction, t: 1 }
    }

    pub fn hyper(&self) -> &BallHyper {
        &self.hyper
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn magnitude(&self) -> &BettingLearner {
        &self.magnitude
    }

    pub fn direction(&self) -> &Vector {
        &self.direction
    }

    /// `v + y_t · z_t`.
    pub fn predict(&self) -> Vector {
        &self.hyper.shift + &self.direction * self.magnitude.prediction()
    }

    pub fn update(&mut self, g: &Vector) -> Result<()> {
        if g.len() != self.hyper.dim() {
            return Err(Error::Dimension { expected: self.hyper.dim(), got: g.len() });
        }
        let norm = g.norm();
        if !norm.is_finite() || exceeds(norm, self.hyper.grad_bound) {
            return Err(Error::GradientBound { norm, bound: self.hyper.grad_bound });
        }
        let scalar = g.dot(&self.direction);
        self.magnitude.update(scalar)?;
        let step = 1.0 / (self.hyper.grad_bound * (self.t as f64).sqrt());
        self.direction = project_ball(&(&self.direction - g * step), 1.0);
        self.t += 1;
        Ok(())
    }
}
