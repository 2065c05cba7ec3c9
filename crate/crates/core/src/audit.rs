//! Runtime checks of the guarantees each component is supposed to satisfy.
//!
//! Checks that rest on a precondition (for instance a budget no larger than
//! `G·r̄`) are only evaluated when that precondition holds. Failing
//! assumptions of the plant are reported as warnings, and the state bounds are
//! then checked with constants measured from the plant itself.

use serde::{Deserialize, Serialize};

use crate::betting::{BettingState, Hyper1d};
use crate::control::{ControlConstants, ControlRound};
use crate::linalg::{spectral_norm, Domain, Vector};
use crate::meta::OcomMeta;
use crate::sim::Dynamics;

/// Relative and absolute slack on every audited inequality.
pub const AUDIT_TOL: f64 = 1e-9;

// NaN counts as over
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn over(value: f64, bound: f64) -> bool {
    !(value <= bound + AUDIT_TOL * (1.0 + bound.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub round: usize,
    pub check: String,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "round {}: {} ({})", self.round, self.check, self.detail)
    }
}

/// Collected violations and warnings. Only the first `cap` violations are
/// stored; all are counted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AuditLog {
    violations: Vec<Violation>,
    warnings: Vec<String>,
    count: usize,
    checks: u64,
    cap: usize,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog { cap: 1000, ..Default::default() }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Total number of violations, including those not stored.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of inequalities evaluated.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    pub fn is_clean(&self) -> bool {
        self.count == 0
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn require(&mut self, ok: bool, round: usize, check: &str, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.count += 1;
            if self.violations.len() < self.cap {
                self.violations.push(Violation { round, check: check.into(), detail: detail() });
            }
        }
    }

    /// Requires `value ≤ bound` up to [`AUDIT_TOL`].
    pub fn at_most(&mut self, round: usize, check: &str, value: f64, bound: f64) {
        self.require(!over(value, bound), round, check, || format!("{value:.6e} > {bound:.6e}"));
    }
}

/// Windows of length `2^j` starting at multiples of `2^{j−1}`, plus the
/// whole range, as inclusive `(a, b)` pairs inside `[1 : n]`.
pub fn dyadic_windows(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut len = 1;
    while len <= n {
        let stride = (len / 2).max(1);
        let mut a = 1;
        while a + len - 1 <= n {
            out.push((a, a + len - 1));
            a += stride;
        }
        len *= 2;
    }
    if n > 0 {
        out.push((1, n));
    }
    out
}

/// Per-round properties of one step of the scalar bettor, from the state at
/// round `t` to the state at round `t + 1`.
pub fn check_betting_step(log: &mut AuditLog, hyper: &Hyper1d, prev: &BettingState, next: &BettingState) {
    let t = prev.t;
    let c = hyper.c();
    log.require(next.wealth > 0.0, t, "wealth stays positive", || format!("wealth {}", next.wealth));
    log.at_most(t, "betting fraction drift", (next.beta - prev.beta).abs(), 2.0 / (c * t as f64));
    log.at_most(
        t,
        "per-step unconstrained movement",
        (next.x_tilde - prev.x_tilde).abs(),
        6.0 * prev.wealth / (c * t as f64),
    );
    log.require(next.x >= 0.0 && !over(next.x, hyper.radius), t + 1, "prediction inside [0, r]", || {
        format!("x = {}", next.x)
    });
    if hyper.is_bounded() && hyper.budget_fits_domain() {
        let r = hyper.radius;
        log.at_most(t, "wealth growth", next.wealth, 4.0 * r * c * (t as f64).sqrt());
        log.at_most(t + 1, "unconstrained prediction bound", next.x_tilde, 2.0 * std::f64::consts::SQRT_2 * r);
    }
}

/// Predictions and gradients of a scalar-bettor run, for the whole-run bounds.
#[derive(Clone, Debug, Default)]
pub struct BettingRecord {
    /// `x_1, …, x_{T+1}`.
    pub xs: Vec<f64>,
    /// `g_1, …, g_T`.
    pub grads: Vec<f64>,
}

impl BettingRecord {
    pub fn new(x1: f64) -> Self {
        BettingRecord { xs: vec![x1], grads: Vec::new() }
    }

    /// Records `g_t` and the next prediction `x_{t+1}`.
    pub fn push(&mut self, g: f64, x_next: f64) {
        self.grads.push(g);
        self.xs.push(x_next);
    }

    pub fn rounds(&self) -> usize {
        self.grads.len()
    }

    /// `Σ_{t≤T} g_t(x_t − u) + λ|x_t − x_{t+1}| + γ|x_t|/√t`.
    pub fn cost_plus_movement(&self, hyper: &Hyper1d, u: f64, horizon: usize) -> f64 {
        (0..horizon)
            .map(|i| {
                let x = self.xs[i];
                self.grads[i] * (x - u)
                    + hyper.lambda * (x - self.xs[i + 1]).abs()
                    + hyper.gamma * x.abs() / ((i + 1) as f64).sqrt()
            })
            .sum()
    }

    /// `Σ_{t=a}^{b} |x_t − x_{t+1}|`.
    pub fn movement(&self, a: usize, b: usize) -> f64 {
        (a..=b).map(|t| (self.xs[t - 1] - self.xs[t]).abs()).sum()
    }

    /// Cost-plus-movement bound at each horizon for every comparator in
    /// `u_grid`, and the windowed movement bound on `windows`.
    pub fn check(
        &self,
        log: &mut AuditLog,
        hyper: &Hyper1d,
        horizons: &[usize],
        u_grid: &[f64],
        windows: &[(usize, usize)],
    ) {
        if !(hyper.eps > 0.0 && hyper.budget_fits_domain()) {
            return;
        }
        for &h in horizons.iter().filter(|&&h| h >= 1 && h <= self.rounds()) {
            for &u in u_grid {
                let lhs = self.cost_plus_movement(hyper, u, h);
                log.at_most(h, "cost plus movement against a fixed comparator", lhs, hyper.regret_bound(u, h));
            }
        }
        if hyper.is_bounded() {
            for &(a, b) in windows.iter().filter(|w| w.0 >= 1 && w.1 <= self.rounds()) {
                let bound = 48.0 * hyper.radius * ((b - a + 1) as f64).sqrt();
                log.at_most(b, "windowed movement", self.movement(a, b), bound);
            }
        }
    }
}

/// Outputs and fed gradient norms of one subroutine instance.
#[derive(Clone, Debug)]
struct InstanceTrace {
    outputs: Vec<Vector>,
    grad_norms: Vec<f64>,
    threshold: f64,
    /// Movement constant, or `None` when the budget precondition fails.
    constant: Option<f64>,
    start: usize,
}

impl InstanceTrace {
    fn close(&self, log: &mut AuditLog, label: &str) {
        let Some(c) = self.constant else { return };
        let n = self.grad_norms.len();
        let mut moves = vec![0.0; n + 1];
        let mut mass = vec![0.0; n + 1];
        for t in 0..n {
            moves[t + 1] = moves[t] + (&self.outputs[t] - &self.outputs[t + 1]).norm();
            mass[t + 1] = mass[t] + self.grad_norms[t];
        }
        // window [a, b] of outputs covers steps a..b−1
        for (a, b) in dyadic_windows(n + 1) {
            let m = moves[b - 1] - moves[a - 1];
            let g = mass[b - 1] - mass[a - 1];
            let bound = c * (1.0 + (g / self.threshold).sqrt());
            log.at_most(self.start + b - 1, label, m, bound);
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LevelAudit {
    ball: Option<InstanceTrace>,
    oned: Option<InstanceTrace>,
    ball_flushes: usize,
    oned_flushes: usize,
}

/// Observes a meta-learner after every update.
#[derive(Clone, Debug)]
pub struct MetaAuditor {
    grid: Vec<Vector>,
    levels: Vec<LevelAudit>,
}

impl MetaAuditor {
    /// `per_dim` grid points per axis over the domain for the comparator checks.
    pub fn new(domain: &Domain, dim: usize, per_dim: usize) -> Self {
        MetaAuditor { grid: domain.grid(dim, per_dim), levels: Vec::new() }
    }

    pub fn observe(&mut self, log: &mut AuditLog, meta: &OcomMeta) {
        let cfg = meta.config();
        let s = meta.snapshot();
        let t = s.t;
        let complete = !cfg.abridged;
        let r = cfg.radius;

        log.at_most(t, "gradient bound", s.g.norm(), cfg.grad_bound);
        for (k, z) in s.z.iter().enumerate() {
            log.require((0.0..=1.0).contains(z), t, "confidence in [0, 1]", || format!("z^({k}) = {z}"));
        }
        if complete {
            log.require(cfg.domain.contains(&s.x_proj[0]), t, "prediction inside the domain", || {
                format!("x = {:?}", s.x_proj[0].as_slice())
            });
            for (k, x) in s.x_proj.iter().enumerate().skip(1) {
                log.at_most(t, &format!("level {k} input inside the ball"), x.norm(), r);
            }
            log.at_most(t, "surrogate does not grow the gradient", s.grads[0].norm(), s.g.norm());
            for k in 0..s.grads.len() - 1 {
                log.at_most(t, "gradient norms shrink up the cascade", s.grads[k + 1].norm(), s.grads[k].norm());
            }
            self.check_domination(log, meta);
        }

        let k_top = s.k_top as usize;
        if self.levels.len() <= k_top {
            self.levels.resize_with(k_top + 1, LevelAudit::default);
        }
        for idx in &s.restarted {
            let la = &mut self.levels[idx.k as usize];
            if let Some(tr) = la.ball.take() {
                tr.close(log, "ball subroutine windowed movement");
            }
            if let Some(tr) = la.oned.take() {
                tr.close(log, "scalar subroutine windowed movement");
            }
            let level = meta.level(idx.k).expect("restarted level exists");
            let ball = &level.ball;
            let rb = ball.base().hyper().magnitude_radius();
            la.ball = Some(InstanceTrace {
                outputs: vec![s.w[idx.k as usize].clone()],
                grad_norms: Vec::new(),
                threshold: ball.threshold(),
                constant: ball.budget_fits_domain().then_some(50.0 * rb),
                start: t,
            });
            la.oned = Some(InstanceTrace {
                outputs: vec![Vector::from_element(1, s.z[idx.k as usize])],
                grad_norms: Vec::new(),
                threshold: level.oned.threshold(),
                constant: level.oned.budget_fits_domain().then_some(48.0),
                start: t,
            });
            la.ball_flushes = 0;
            la.oned_flushes = 0;
        }

        for k in 0..=k_top {
            let level = meta.level(k as u32).expect("active level exists");
            let la = &mut self.levels[k];
            let gk = &s.grads[k];
            let scalar = gk.dot(&s.x_proj[k + 1]).abs();

            let ball = &level.ball;
            let out = ball.output();
            let shift = ball.base().hyper().shift.norm();
            log.at_most(t, "ball subroutine output radius", out.norm(), r + 2.0 * shift);
            log.at_most(t, "ball accumulator below threshold", ball.accumulator().norm(), ball.threshold());
            if ball.base_index() > la.ball_flushes + 1 {
                let z = ball.last_flush_norm().unwrap_or(0.0);
                log.require(z > ball.threshold(), t, "ball flush above threshold", || format!("{z}"));
                log.at_most(t, "ball flush within one gradient of threshold", z, ball.threshold() + ball.grad_bound());
                la.ball_flushes = ball.base_index() - 1;
            }
            log.at_most(t, "ball flush count", (ball.base_index() - 1) as f64 * ball.threshold(), ball.grad_norm_sum());

            let oned = &level.oned;
            log.at_most(t, "scalar accumulator below threshold", oned.accumulator().abs(), oned.threshold());
            if oned.base_index() > la.oned_flushes + 1 {
                let z = oned.last_flush_norm().unwrap_or(0.0);
                log.require(z > oned.threshold(), t, "scalar flush above threshold", || format!("{z}"));
                log.at_most(
                    t,
                    "scalar flush within one gradient of threshold",
                    z,
                    oned.threshold() + oned.grad_bound(),
                );
                la.oned_flushes = oned.base_index() - 1;
            }

            if let Some(tr) = la.ball.as_mut() {
                tr.outputs.push(out.clone());
                tr.grad_norms.push(gk.norm());
            }
            if let Some(tr) = la.oned.as_mut() {
                tr.outputs.push(Vector::from_element(1, *oned.output()));
                tr.grad_norms.push(scalar);
            }
        }
    }

    /// Closes the movement records of the instances still running.
    pub fn finish(&mut self, log: &mut AuditLog) {
        for la in &mut self.levels {
            if let Some(tr) = la.ball.take() {
                tr.close(log, "ball subroutine windowed movement");
            }
            if let Some(tr) = la.oned.take() {
                tr.close(log, "scalar subroutine windowed movement");
            }
        }
    }

    fn check_domination(&self, log: &mut AuditLog, meta: &OcomMeta) {
        let s = meta.snapshot();
        let t = s.t;
        let n = s.grads.len();
        // ⟨g, x_t − x⟩ ≤ ⟨g⁰, x̃⁰ − x⟩, then level by level
        let mut pairs: Vec<(&Vector, &Vector, &Vector, &Vector)> = Vec::with_capacity(n);
        pairs.push((&s.g, &s.x_proj[0], &s.grads[0], &s.x_tilde[0]));
        for k in 0..n - 1 {
            pairs.push((&s.grads[k], &s.x_proj[k + 1], &s.grads[k + 1], &s.x_tilde[k + 1]));
        }
        for (k, (g_lo, x_lo, g_hi, x_hi)) in pairs.into_iter().enumerate() {
            let base_lo = g_lo.dot(x_lo);
            let base_hi = g_hi.dot(x_hi);
            let scale = 1.0 + g_lo.norm() * (x_lo.norm() + x_hi.norm() + meta.config().radius);
            let worst = self
                .grid
                .iter()
                .map(|x| (base_lo - g_lo.dot(x)) - (base_hi - g_hi.dot(x)))
                .fold(f64::NEG_INFINITY, f64::max);
            log.require(worst <= AUDIT_TOL * scale, t, "cascade domination", || format!("hop {k}: excess {worst:.3e}"));
        }
    }
}

/// Constants the state bounds are checked against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConstants {
    pub kappa: f64,
    pub gamma: f64,
    pub disturbance: f64,
    pub max_a: f64,
    pub max_b: f64,
    pub max_w: f64,
    /// Whether the stated constants hold for the whole horizon.
    pub stated_hold: bool,
}

/// Observes a tracking controller after every round.
pub struct ControlAuditor {
    constants: ControlConstants,
    effective: Option<EffectiveConstants>,
    meta: MetaAuditor,
}

impl ControlAuditor {
    /// Measures `max ‖A_t‖, ‖B_t‖, ‖w_t‖` over the horizon up front and warns
    /// about any stated bound the plant breaks.
    pub fn new(log: &mut AuditLog, constants: &ControlConstants, system: &dyn Dynamics, per_dim: usize) -> Self {
        let mut max_a: f64 = 0.0;
        let mut max_b: f64 = 0.0;
        let mut max_w: f64 = 0.0;
        let mut first_a = None;
        for t in 0..=constants.horizon {
            let a = spectral_norm(&system.a(t));
            if over(a, 1.0 - constants.gamma) && first_a.is_none() {
                first_a = Some(t);
            }
            max_a = max_a.max(a);
            max_b = max_b.max(spectral_norm(&system.b(t)));
            max_w = max_w.max(system.w(t).norm());
        }
        let mut stated_hold = true;
        if let Some(t) = first_a {
            stated_hold = false;
            log.warn(format!(
                "‖A_t‖ ≤ 1 − γ = {:.4} fails from t = {t}; measured max ‖A_t‖ = {max_a:.6}",
                1.0 - constants.gamma
            ));
        }
        if over(max_b, constants.kappa) {
            stated_hold = false;
            log.warn(format!("‖B_t‖ ≤ κ = {} fails; measured max ‖B_t‖ = {max_b:.6}", constants.kappa));
        }
        if over(max_w, constants.disturbance_bound) {
            stated_hold = false;
            log.warn(format!("‖w_t‖ ≤ W = {} fails; measured max ‖w_t‖ = {max_w:.6}", constants.disturbance_bound));
        }
        let effective = if stated_hold {
            Some(EffectiveConstants {
                kappa: constants.kappa,
                gamma: constants.gamma,
                disturbance: constants.disturbance_bound,
                max_a,
                max_b,
                max_w,
                stated_hold,
            })
        } else if max_a < 1.0 {
            log.warn(format!("state bounds checked with measured constants: γ = {:.6}", 1.0 - max_a));
            Some(EffectiveConstants {
                kappa: constants.kappa.max(max_b),
                gamma: constants.gamma.min(1.0 - max_a),
                disturbance: constants.disturbance_bound.max(max_w),
                max_a,
                max_b,
                max_w,
                stated_hold,
            })
        } else {
            log.warn("plant is not contractive; state bounds are not checked");
            None
        };
        let domain = Domain::ball(constants.action_bound);
        ControlAuditor {
            constants: constants.clone(),
            effective,
            meta: MetaAuditor::new(&domain, system.input_dim(), per_dim),
        }
    }

    pub fn effective(&self) -> Option<&EffectiveConstants> {
        self.effective.as_ref()
    }

    pub fn observe(&mut self, log: &mut AuditLog, round: &ControlRound, system: &dyn Dynamics, meta: &OcomMeta) {
        let t = round.t;
        let c = &self.constants;
        log.at_most(t, "action bound", round.action.norm(), c.action_bound);
        let w_err = (&round.disturbance - system.w(t - 1)).norm();
        log.require(w_err <= 1e-10, t, "recovered disturbance matches the plant", || format!("error {w_err:.3e}"));
        log.at_most(t, "ideal-loss gradient bound", round.grad.norm(), c.ideal_grad_bound());
        if let Some(e) = &self.effective {
            let state_bound = (e.kappa * c.action_bound + e.disturbance) / e.gamma;
            let gap_bound = c.loss_lipschitz * state_bound * (1.0 - e.gamma).powi(c.memory() as i32);
            log.at_most(t, "state norm bound", round.state.norm(), state_bound);
            log.at_most(t, "ideal state norm bound", round.ideal_state.norm(), state_bound);
            log.at_most(t, "truncation gap", (round.ideal_loss - round.loss).abs(), gap_bound);
        }
        self.meta.observe(log, meta);
    }

    pub fn finish(&mut self, log: &mut AuditLog) {
        self.meta.finish(log);
    }
}
