//! Strongly adaptive online convex optimization with memory.
//!
//! One pair of subroutines lives on each GC level `k`: a ball learner
//! `A^k_B` proposing a point and a scalar learner `A^k_1d` in `[0, 1]`
//! deciding how much of the coarser levels to keep. Each round the levels
//! are combined top-down,
//!
//! ```text
//! x̃^(K+1) = 0
//! x^(k+1) = Π_B(0,R)(x̃^(k+1))
//! x̃^(k)   = (1 − z^(k))·x^(k+1) + w^(k)
//! x_t     = Π_V(x̃^(0))
//! ```
//!
//! and the gradient travels bottom-up through the same projections, each
//! hop replacing it by the surrogate subgradient of the constraint
//! reduction so that every level sees an unconstrained problem.
//!
//! Level `k` is restarted at every round divisible by `2^k`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exceeds, project_ball, Domain, Vector, BOUND_SLACK};
use crate::subroutine::{gc_levels_starting_at, k_max, GcIndex, Subroutine1d, SubroutineBall};

/// Problem constants and knobs of the meta-algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcomConfig {
    pub horizon: usize,
    pub dim: usize,
    /// Budget `ε_0`; level `k` runs with `2^k · ε_0`.
    pub eps0: f64,
    /// Radius `R` of an origin ball containing the domain.
    pub radius: f64,
    /// Per-argument Lipschitz constant `L` of the memory loss.
    pub lipschitz: f64,
    /// Memory length `H`.
    pub memory: usize,
    /// Lipschitz constant `G̃` of the instantaneous loss.
    pub grad_bound: f64,
    pub domain: Domain,
    /// Restart ball subroutines at the previous instance's last output.
    #[serde(default)]
    pub shifted: bool,
    /// Skip the inner projections and predict the unprojected combination.
    #[serde(default)]
    pub abridged: bool,
}

impl OcomConfig {
    /// Configuration with `R` taken from the domain and `ε_0 = G̃R/(T+1)`.
    pub fn new(horizon: usize, dim: usize, domain: Domain, lipschitz: f64, memory: usize, grad_bound: f64) -> Self {
        let radius = domain.enclosing_radius();
        let mut cfg = OcomConfig {
            horizon,
            dim,
            eps0: 0.0,
            radius,
            lipschitz,
            memory,
            grad_bound,
            domain,
            shifted: false,
            abridged: false,
        };
        cfg.eps0 = cfg.theory_eps0();
        cfg
    }

    /// `λ = L·H·(H+1)`.
    pub fn lambda(&self) -> f64 {
        self.lipschitz * (self.memory * (self.memory + 1)) as f64
    }

    pub fn theory_eps0(&self) -> f64 {
        self.grad_bound * self.radius / (self.horizon as f64 + 1.0)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperparameter(m));
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.dim == 0 {
            return bad("dimension must be >= 1".into());
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return bad(format!("eps0 must be finite and > 0, got {}", self.eps0));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be finite and > 0, got {}", self.radius));
        }
        if !(self.lipschitz > 0.0) {
            return bad("memory Lipschitz constant must be > 0".into());
        }
        if !(self.grad_bound > 0.0
            && self.grad_bound <= self.lipschitz * (self.memory + 1) as f64 * (1.0 + BOUND_SLACK))
        {
            return bad(format!(
                "need 0 < G̃ <= L(H+1); got G̃ = {}, L(H+1) = {}",
                self.grad_bound,
                self.lipschitz * (self.memory + 1) as f64
            ));
        }
        if let Some(d) = self.domain.dim() {
            if d != self.dim {
                return Err(Error::Dimension { expected: self.dim, got: d });
            }
        }
        if !self.domain.contains(&Vector::zeros(self.dim)) {
            return bad("domain must contain the origin".into());
        }
        if exceeds(self.domain.enclosing_radius(), self.radius) {
            return bad("domain is not contained in B(0, R)".into());
        }
        if self.shifted && self.abridged {
            return bad("the shifted variant requires the inner projections".into());
        }
        Ok(())
    }

    /// Radius bound on the points the scalar learners multiply against.
    fn inner_radius(&self) -> f64 {
        if self.abridged {
            // without projections x̃^(k) is a sum of up to K+1 ball outputs
            self.radius * (k_max(self.horizon) + 1) as f64
        } else {
            self.radius
        }
    }
}

/// Subgradient, at `x_tilde`, of the surrogate loss of the constraint
/// reduction for the prediction `x_proj = Π_V(x_tilde)` and loss gradient `g`.
pub fn constrained_surrogate(g: &Vector, x_tilde: &Vector, x_proj: &Vector) -> Vector {
    if g.dot(x_tilde) >= g.dot(x_proj) {
        return g.clone();
    }
    let d = x_tilde - x_proj;
    let n2 = d.norm_squared();
    if n2 == 0.0 {
        return g.clone();
    }
    g + d * (g.dot(&(x_proj - x_tilde)) / n2)
}

#[derive(Clone, Debug)]
pub struct Level {
    pub index: GcIndex,
    pub ball: SubroutineBall,
    pub oned: Subroutine1d,
}

/// Everything computed during one round, for tracing and auditing.
#[derive(Clone, Debug, Default)]
pub struct CascadeSnapshot {
    pub t: usize,
    pub k_top: u32,
    /// `x̃^(k)` for `k = 0..=K+1`.
    pub x_tilde: Vec<Vector>,
    /// `x^(k)` for `k = 0..=K+1`; entry 0 is the final prediction `x_t`.
    pub x_proj: Vec<Vector>,
    /// `w^(k)` for `k = 0..=K`.
    pub w: Vec<Vector>,
    /// `z^(k)` for `k = 0..=K`.
    pub z: Vec<f64>,
    /// Gradient received this round.
    pub g: Vector,
    /// `g^(k)` for `k = 0..=K+1`.
    pub grads: Vec<Vector>,
    /// Levels restarted at the start of this round.
    pub restarted: Vec<GcIndex>,
    /// Number of accumulator flushes across all subroutines this round.
    pub flushes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Predict,
    Update,
}

#[derive(Clone, Debug)]
pub struct OcomMeta {
    config: OcomConfig,
    lambda: f64,
    levels: Vec<Option<Level>>,
    t: usize,
    phase: Phase,
    round: CascadeSnapshot,
    history: VecDeque<Vector>,
}

impl OcomMeta {
    pub fn new(config: OcomConfig) -> Result<Self> {
        config.validate()?;
        let lambda = config.lambda();
        let levels = Vec::with_capacity(k_max(config.horizon) as usize + 1);
        Ok(OcomMeta {
            lambda,
            levels,
            t: 1,
            phase: Phase::Predict,
            round: CascadeSnapshot::default(),
            history: VecDeque::with_capacity(config.memory + 1),
            config,
        })
    }

    pub fn config(&self) -> &OcomConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The round whose prediction is requested next (or whose update is pending).
    pub fn round(&self) -> usize {
        self.t
    }

    pub fn levels(&self) -> impl Iterator<Item = &Level> {
        self.levels.iter().flatten()
    }

    pub fn level(&self, k: u32) -> Option<&Level> {
        self.levels.get(k as usize).and_then(Option::as_ref)
    }

    /// Snapshot of the most recent round.
    pub fn snapshot(&self) -> &CascadeSnapshot {
        &self.round
    }

    /// The last `H` predictions, oldest first, zero-padded before round 1.
    pub fn recent_predictions(&self) -> Vec<Vector> {
        let h = self.config.memory;
        let mut out = vec![Vector::zeros(self.config.dim); h.saturating_sub(self.history.len())];
        out.extend(self.history.iter().cloned());
        out
    }

    fn restart(&mut self, idx: GcIndex) -> Result<()> {
        let cfg = &self.config;
        let k = idx.k as usize;
        if self.levels.len() <= k {
            self.levels.resize_with(k + 1, || None);
        }
        let shift = match (&self.levels[k], cfg.shifted && idx.i > 1) {
            (Some(prev), true) => prev.ball.output().clone(),
            _ => Vector::zeros(cfg.dim),
        };
        let eps = cfg.eps0 * (1u64 << idx.k) as f64;
        let r_inner = cfg.inner_radius();
        let ball = SubroutineBall::ball(self.lambda, eps, cfg.grad_bound, cfg.radius, shift)?;
        let oned = Subroutine1d::one_d(self.lambda * r_inner, eps, cfg.grad_bound * r_inner)?;
        self.levels[k] = Some(Level { index: idx, ball, oned });
        Ok(())
    }

    /// Runs the top-down combination for the current round and returns `x_t`.
    pub fn predict(&mut self) -> Result<Vector> {
        if self.phase != Phase::Predict {
            return Err(Error::Protocol("predict called twice without an update"));
        }
        let t = self.t;
        if t > self.config.horizon {
            return Err(Error::HorizonExceeded { round: t, horizon: self.config.horizon });
        }
        let restarted = gc_levels_starting_at(t);
        for idx in &restarted {
            self.restart(*idx)?;
        }
        let k_top = k_max(t);
        let n = k_top as usize + 2;
        let dim = self.config.dim;
        let mut x_tilde = vec![Vector::zeros(dim); n];
        let mut x_proj = vec![Vector::zeros(dim); n];
        let mut w = vec![Vector::zeros(dim); n - 1];
        let mut z = vec![0.0; n - 1];
        for k in (0..=k_top as usize).rev() {
            x_proj[k + 1] = if self.config.abridged {
                x_tilde[k + 1].clone()
            } else {
                project_ball(&x_tilde[k + 1], self.config.radius)
            };
            let level = self.levels[k].as_ref().expect("every level up to K_t has started");
            w[k] = level.ball.output().clone();
            z[k] = *level.oned.output();
            x_tilde[k] = &x_proj[k + 1] * (1.0 - z[k]) + &w[k];
        }
        x_proj[0] = if self.config.abridged { x_tilde[0].clone() } else { self.config.domain.project(&x_tilde[0]) };
        let prediction = x_proj[0].clone();
        self.round = CascadeSnapshot {
            t,
            k_top,
            x_tilde,
            x_proj,
            w,
            z,
            g: Vector::zeros(dim),
            grads: Vec::new(),
            restarted,
            flushes: 0,
        };
        self.phase = Phase::Update;
        Ok(prediction)
    }

    /// Feeds a subgradient of the instantaneous loss at `x_t` down the cascade.
    pub fn update(&mut self, g: &Vector) -> Result<()> {
        if self.phase != Phase::Update {
            return Err(Error::Protocol("update called before predict"));
        }
        if g.len() != self.config.dim {
            return Err(Error::Dimension { expected: self.config.dim, got: g.len() });
        }
        let norm = g.norm();
        if !norm.is_finite() || exceeds(norm, self.config.grad_bound) {
            return Err(Error::GradientBound { norm, bound: self.config.grad_bound });
        }
        let abridged = self.config.abridged;
        let snap = &mut self.round;
        let k_top = snap.k_top as usize;
        let mut grads = Vec::with_capacity(k_top + 2);
        grads.push(if abridged { g.clone() } else { constrained_surrogate(g, &snap.x_tilde[0], &snap.x_proj[0]) });
        let mut flushes = 0;
        for k in 0..=k_top {
            let gk = &grads[k];
            let level = self.levels[k].as_mut().expect("level started");
            flushes += level.ball.feed(gk)? as usize;
            flushes += level.oned.feed(&-gk.dot(&snap.x_proj[k + 1]))? as usize;
            let next = if abridged {
                gk.clone()
            } else {
                constrained_surrogate(gk, &snap.x_tilde[k + 1], &snap.x_proj[k + 1])
            };
            grads.push(next);
        }
        snap.g = g.clone();
        snap.grads = grads;
        snap.flushes = flushes;

        if self.config.memory > 0 {
            if self.history.len() == self.config.memory {
                self.history.pop_front();
            }
            self.history.push_back(snap.x_proj[0].clone());
        }
        self.t += 1;
        self.phase = Phase::Predict;
        Ok(())
    }
}
