//! One-dimensional comparator-adaptive OLO with movement cost.
//!
//! The learner is a coin bettor on `[0, r_bar]`: it bets the amount
//! `x̃_{t+1} = β_{t+1} · Wel_t` and its wealth is charged for the loss it
//! suffers, for a `γ/√t` regulariser and for `λ` times its own movement. The
//! movement charge makes the wealth update implicit (the new wealth appears
//! on both sides), and [`solve_wealth`] resolves it exactly.
//!
//! Predictions are projected onto `[0, r_bar]`; the bettor itself sees the
//! surrogate gradient from [`surrogate_grad_1d`], which zeroes out losses
//! that would reward the unprojected bet for leaving the domain.

use crate::error::{Error, Result};
use crate::linalg::exceeds;

/// Hyperparameters of the scalar bettor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper1d {
    /// Movement-cost weight.
    pub lambda: f64,
    /// Weight of the `γ/√t · |x_t|` regulariser.
    pub gamma: f64,
    /// Initial wealth.
    pub eps: f64,
    /// Bound on `|g_t|`.
    pub grad_bound: f64,
    /// Domain radius; `f64::INFINITY` disables projection.
    pub radius: f64,
}

impl Hyper1d {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(lambda: f64, gamma: f64, eps: f64, grad_bound: f64, radius: f64) -> Result<Self> {
        let bad = |what: &str| Err(Error::InvalidHyperparameter(what.to_owned()));
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return bad("eps must be finite and > 0");
        }
        if !(grad_bound > 0.0 && grad_bound.is_finite()) {
            return bad("gradient bound must be finite and > 0");
        }
        if !(radius > 0.0) {
            return bad("radius must be > 0");
        }
        Ok(Hyper1d { lambda, gamma, eps, grad_bound, radius })
    }

    /// `C = G + λ + γ`.
    #[inline]
    pub fn c(&self) -> f64 {
        self.grad_bound + self.lambda + self.gamma
    }

    pub fn is_bounded(&self) -> bool {
        self.radius.is_finite()
    }

    /// `ε ≤ G · r_bar`, the condition under which the wealth and movement
    /// ceilings hold. Always true in unconstrained mode.
    pub fn budget_fits_domain(&self) -> bool {
        !self.is_bounded() || self.eps <= self.grad_bound * self.radius
    }

    /// Upper end of the admissible betting fraction after round `t`:
    /// `β_{t+1} ∈ [0, 1/(C√(2t))]`.
    #[inline]
    pub fn fraction_cap(&self, t: usize) -> f64 {
        1.0 / (self.c() * (2.0 * t as f64).sqrt())
    }

    /// Closed-form right-hand side of the cumulative regret + movement +
    /// regulariser guarantee against the fixed comparator `u ∈ [0, r_bar]`
    /// after `horizon` rounds.
    pub fn regret_bound(&self, u: f64, horizon: usize) -> f64 {
        if u <= 0.0 {
            return self.eps;
        }
        let c = self.c();
        let t = horizon as f64;
        let log_arg = std::f64::consts::SQRT_2 * u * c * t.powf(2.5) / self.eps;
        self.eps + u * c * (2.0 * t).sqrt() * (1.5 + log_arg.ln())
    }
}

/// Surrogate gradient of the constraint reduction on `[0, r_bar]`: the true
/// gradient when `g·x̃ ≥ g·x`, zero otherwise.
#[inline]
pub fn surrogate_grad_1d(g: f64, x_tilde: f64, x: f64) -> f64 {
    if g * x_tilde >= g * x {
        g
    } else {
        0.0
    }
}

/// Solves the implicit wealth update
///
/// `W = (1 − g̃β_t − γβ_t/√t)·P − λ·|β_t P − β_{t+1} W|`,  `P = Wel_{t−1}`,
///
/// by resolving the absolute value on each side of the kink. The right-hand
/// side is a contraction in `W` (`λβ_{t+1} < 1`), so exactly one branch is
/// self-consistent; at the kink both branches give the same value.
pub fn solve_wealth(
    wealth_prev: f64,
    g_tilde: f64,
    beta_t: f64,
    beta_next: f64,
    t: usize,
    hyper: &Hyper1d,
) -> Result<f64> {
    if exceeds(g_tilde.abs(), hyper.grad_bound) {
        return Err(Error::GradientBound { norm: g_tilde.abs(), bound: hyper.grad_bound });
    }
    let fail = || Error::SolverFailure { round: t, wealth_prev };
    if !(wealth_prev > 0.0 && wealth_prev.is_finite()) {
        return Err(fail());
    }
    let lambda = hyper.lambda;
    let p = wealth_prev;
    let a = 1.0 - g_tilde * beta_t - hyper.gamma * beta_t / (t as f64).sqrt();
    let bet = beta_t * p;
    let tol = 1e-12 * bet.abs().max(1.0);

    // Branch A: β_t P ≥ β_{t+1} W.
    let w_a = (a - lambda * beta_t) * p / (1.0 - lambda * beta_next);
    let ok_a = bet - beta_next * w_a >= -tol;
    // Branch B: β_t P < β_{t+1} W.
    let w_b = (a + lambda * beta_t) * p / (1.0 + lambda * beta_next);
    let ok_b = bet - beta_next * w_b <= tol;

    let residual = |w: f64| (a * p - lambda * (bet - beta_next * w).abs() - w).abs();
    let wealth = match (ok_a, ok_b) {
        (true, false) => w_a,
        (false, true) => w_b,
        (true, true) => {
            if residual(w_a) <= residual(w_b) {
                w_a
            } else {
                w_b
            }
        }
        (false, false) => return Err(fail()),
    };
    if wealth > 0.0 && wealth.is_finite() {
        Ok(wealth)
    } else {
        Err(fail())
    }
}

/// State of the scalar bettor at the start of round `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BettingState {
    /// Current round, starting at 1.
    pub t: usize,
    /// `Wel_{t−1}`, the wealth entering round `t`.
    pub wealth: f64,
    /// `β_t`.
    pub beta: f64,
    /// Sum of surrogate gradients seen so far.
    pub surrogate_grad_sum: f64,
    /// Unprojected prediction `x̃_t = β_t · Wel_{t−1}`.
    pub x_tilde: f64,
    /// Projected prediction `x_t`.
    pub x: f64,
    /// Surrogate gradient of the last completed round (0 before any round).
    pub last_surrogate: f64,
}

impl BettingState {
    pub fn new(hyper: &Hyper1d) -> Self {
        BettingState {
            t: 1,
            wealth: hyper.eps,
            beta: 0.0,
            surrogate_grad_sum: 0.0,
            x_tilde: 0.0,
            x: 0.0,
            last_surrogate: 0.0,
        }
    }

    /// Consumes the gradient of round `t` and returns the state for `t + 1`.
    pub fn step(&self, g: f64, hyper: &Hyper1d) -> Result<BettingState> {
        if !g.is_finite() || exceeds(g.abs(), hyper.grad_bound) {
            return Err(Error::GradientBound { norm: g.abs(), bound: hyper.grad_bound });
        }
        let t = self.t;
        let c = hyper.c();
        let g_tilde = surrogate_grad_1d(g, self.x_tilde, self.x);
        let sum = self.surrogate_grad_sum + g_tilde;
        let beta_hat = -sum / (2.0 * c * c * t as f64);
        let beta_next = beta_hat.clamp(0.0, hyper.fraction_cap(t));
        let wealth = solve_wealth(self.wealth, g_tilde, self.beta, beta_next, t, hyper)?;
        let x_tilde = beta_next * wealth;
        let x = if hyper.is_bounded() { x_tilde.clamp(0.0, hyper.radius) } else { x_tilde };
        debug_assert!(x >= 0.0);
        Ok(BettingState {
            t: t + 1,
            wealth,
            beta: beta_next,
            surrogate_grad_sum: sum,
            x_tilde,
            x,
            last_surrogate: g_tilde,
        })
    }
}

/// The scalar bettor bundled with its hyperparameters.
#[derive(Clone, Debug)]
pub struct BettingLearner {
    hyper: Hyper1d,
    state: BettingState,
}

impl BettingLearner {
    pub fn new(hyper: Hyper1d) -> Self {
        let state = BettingState::new(&hyper);
        BettingLearner { hyper, state }
    }

    pub fn hyper(&self) -> &Hyper1d {
        &self.hyper
    }

    pub fn state(&self) -> &BettingState {
        &self.state
    }

    pub fn prediction(&self) -> f64 {
        self.state.x
    }

    pub fn update(&mut self, g: f64) -> Result<()> {
        self.state = self.state.step(g, &self.hyper)?;
        Ok(())
    }
}
