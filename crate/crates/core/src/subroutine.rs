//! Subroutines run on geometric-covering (GC) intervals.
//!
//! A [`GcSubroutine`] slows its base learner down: incoming gradients are
//! summed into an accumulator, and the base learner only sees (and only
//! moves on) the accumulated vector once its norm passes `max{λ, G}`. The
//! wrapper's output is therefore piecewise constant between flushes.

use crate::ball::{BallHyper, BallLearner};
use crate::betting::{BettingLearner, Hyper1d};
use crate::error::{Error, Result};
use crate::linalg::{exceeds, Vector};

/// Gradient types the accumulator can sum.
pub trait GradientValue: Clone + std::fmt::Debug {
    fn zero_like(&self) -> Self;
    fn norm(&self) -> f64;
    fn accumulate(&mut self, other: &Self);
}

impl GradientValue for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
}

impl GradientValue for Vector {
    fn zero_like(&self) -> Self {
        Vector::zeros(self.len())
    }
    fn norm(&self) -> f64 {
        Vector::norm(self)
    }
    fn accumulate(&mut self, other: &Self) {
        *self += other;
    }
}

/// An online linear learner that can sit under a [`GcSubroutine`].
pub trait BaseLearner {
    type Point: GradientValue;
    fn predict(&self) -> Self::Point;
    fn update(&mut self, g: &Self::Point) -> Result<()>;
}

impl BaseLearner for BettingLearner {
    type Point = f64;
    fn predict(&self) -> f64 {
        self.prediction()
    }
    fn update(&mut self, g: &f64) -> Result<()> {
        BettingLearner::update(self, *g)
    }
}

impl BaseLearner for BallLearner {
    type Point = Vector;
    fn predict(&self) -> Vector {
        BallLearner::predict(self)
    }
    fn update(&mut self, g: &Vector) -> Result<()> {
        BallLearner::update(self, g)
    }
}

#[derive(Clone, Debug)]
pub struct GcSubroutine<L: BaseLearner> {
    base: L,
    lambda: f64,
    grad_bound: f64,
    accumulator: L::Point,
    output: L::Point,
    flushes: usize,
    rounds: usize,
    grad_norm_sum: f64,
    last_flush_norm: Option<f64>,
}

/// Subroutine-1d: the scalar bettor on `[0, 1]`.
pub type Subroutine1d = GcSubroutine<BettingLearner>;
/// Subroutine-ball: the ball learner on `B(0, R)` (optionally shifted).
pub type SubroutineBall = GcSubroutine<BallLearner>;

impl<L: BaseLearner> GcSubroutine<L> {
    fn wrap(base: L, lambda: f64, grad_bound: f64) -> Self {
        let output = base.predict();
        let accumulator = output.zero_like();
        GcSubroutine {
            base,
            lambda,
            grad_bound,
            accumulator,
            output,
            flushes: 0,
            rounds: 0,
            grad_norm_sum: 0.0,
            last_flush_norm: None,
        }
    }

    /// Flush threshold `max{λ, G}`.
    pub fn threshold(&self) -> f64 {
        self.lambda.max(self.grad_bound)
    }

    /// Gradient bound handed to the base learner, `max{λ, G} + G`.
    pub fn base_grad_bound(&self) -> f64 {
        self.threshold() + self.grad_bound
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn output(&self) -> &L::Point {
        &self.output
    }

    pub fn accumulator(&self) -> &L::Point {
        &self.accumulator
    }

    pub fn base(&self) -> &L {
        &self.base
    }

    /// Index of the base learner's current loss (1 + number of flushes).
    pub fn base_index(&self) -> usize {
        self.flushes + 1
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Sum of `‖g_t‖` over all gradients fed so far.
    pub fn grad_norm_sum(&self) -> f64 {
        self.grad_norm_sum
    }

    /// Norm of the accumulator sent at the most recent flush.
    pub fn last_flush_norm(&self) -> Option<f64> {
        self.last_flush_norm
    }

    /// Adds `g` to the accumulator and flushes it into the base learner once
    /// its norm strictly exceeds the threshold. Returns whether a flush fired.
    pub fn feed(&mut self, g: &L::Point) -> Result<bool> {
        let n = g.norm();
        if !n.is_finite() || exceeds(n, self.grad_bound) {
            return Err(Error::GradientBound { norm: n, bound: self.grad_bound });
        }
        self.rounds += 1;
        self.grad_norm_sum += n;
        self.accumulator.accumulate(g);
        let z = self.accumulator.norm();
        if z > self.threshold() {
            self.base.update(&self.accumulator)?;
            self.flushes += 1;
            self.last_flush_norm = Some(z);
            self.accumulator = self.accumulator.zero_like();
            self.output = self.base.predict();
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

impl Subroutine1d {
    /// Hyperparameters `(λ, ε, G)`; the base bettor runs on `[0, 1]` with
    /// `(λ, 0, ε, max{λ,G} + G)`.
    pub fn one_d(lambda: f64, eps: f64, grad_bound: f64) -> Result<Self> {
        let base_g = lambda.max(grad_bound) + grad_bound;
        let base = BettingLearner::new(Hyper1d::new(lambda, 0.0, eps, base_g, 1.0)?);
        Ok(Self::wrap(base, lambda, grad_bound))
    }

    /// Whether `ε ≤ G`, the budget condition of the subroutine's guarantees.
    pub fn budget_fits_domain(&self) -> bool {
        self.base.hyper().eps <= self.grad_bound
    }
}

impl SubroutineBall {
    /// Hyperparameters `(λ, ε, G)` on `B(0, R)` shifted by `shift`; the base
    /// ball learner gets `(λ, ε, max{λ,G} + G)`.
    pub fn ball(lambda: f64, eps: f64, grad_bound: f64, radius: f64, shift: Vector) -> Result<Self> {
        let base_g = lambda.max(grad_bound) + grad_bound;
        let hyper = BallHyper::new(lambda, eps, base_g, radius, shift.len())?.with_shift(shift)?;
        Ok(Self::wrap(BallLearner::new(hyper), lambda, grad_bound))
    }

    /// Whether `ε ≤ G·R'`, with `R'` the (shift-enlarged) magnitude radius.
    pub fn budget_fits_domain(&self) -> bool {
        self.base.hyper().eps <= self.grad_bound * self.base.hyper().magnitude_radius()
    }
}

/// Geometric-covering interval `[2^k·i : 2^k·(i+1) − 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GcIndex {
    pub k: u32,
    pub i: usize,
}

impl GcIndex {
    pub fn start(&self) -> usize {
        self.i << self.k
    }

    pub fn end(&self) -> usize {
        ((self.i + 1) << self.k) - 1
    }

    pub fn len(&self) -> usize {
        1 << self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Every GC interval that begins at round `t` (`t ≥ 1`).
pub fn gc_levels_starting_at(t: usize) -> Vec<GcIndex> {
    debug_assert!(t >= 1);
    (0..=t.trailing_zeros()).map(|k| GcIndex { k, i: t >> k }).collect()
}

/// `K_t = ⌈log₂(t + 1)⌉ − 1`, the highest level active at round `t`.
pub fn k_max(t: usize) -> u32 {
    debug_assert!(t >= 1);
    usize::BITS - t.leading_zeros() - 1
}

/// All GC intervals lying entirely inside `[1 : horizon]`.
pub fn gc_intervals_within(horizon: usize) -> Vec<GcIndex> {
    let mut out = Vec::new();
    let mut k = 0u32;
    while (2usize << k) - 1 <= horizon {
        let mut i = 1;
        loop {
            let idx = GcIndex { k, i };
            if idx.end() > horizon {
                break;
            }
            out.push(idx);
            i += 1;
        }
        k += 1;
    }
    out
}
