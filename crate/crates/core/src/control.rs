//! Tracking control of a known time-varying linear system by reduction to
//! strongly adaptive OCOM.
//!
//! Each round the controller recovers the previous disturbance, rebuilds the
//! truncated "ideal" state `y_t = Σ_{i=t−H}^{t−1} Φ_i (B_i u_i + w_i)` with
//! `Φ_i = A_{t−1}⋯A_{i+1}`, and asks the OCOM learner for an action. Holding
//! the action fixed over the memory window makes the ideal state affine,
//! `ỹ_t(u) = M_t u + v_t`, which is what the learner is trained on.

use std::collections::VecDeque;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exceeds, norm_subgradient, Domain, Matrix, Vector};
use crate::meta::{OcomConfig, OcomMeta};
use crate::sim::{Dynamics, TargetSignal};

/// System and loss constants of the tracking problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConstants {
    /// `‖B_t‖ ≤ κ`.
    pub kappa: f64,
    /// `‖A_t‖ ≤ 1 − γ`.
    pub gamma: f64,
    /// `‖u_t‖ ≤ U`.
    pub action_bound: f64,
    /// `‖w_t‖ ≤ W`.
    pub disturbance_bound: f64,
    /// Lipschitz constant `L*` of the tracking loss in each argument.
    pub loss_lipschitz: f64,
    pub horizon: usize,
    /// Memory override; the formula value is used when absent.
    #[serde(default)]
    pub memory: Option<usize>,
}

impl ControlConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparameter(m.into()));
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return bad("kappa must be finite and >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return bad("action bound must be finite and > 0");
        }
        if !(self.disturbance_bound >= 0.0 && self.disturbance_bound.is_finite()) {
            return bad("disturbance bound must be finite and >= 0");
        }
        if !(self.loss_lipschitz > 0.0 && self.loss_lipschitz.is_finite()) {
            return bad("loss Lipschitz constant must be finite and > 0");
        }
        if self.horizon == 0 || self.memory == Some(0) {
            return bad("horizon and memory must be at least 1");
        }
        Ok(())
    }

    /// `max{⌈−log T / log(1−γ)⌉, ⌈2/γ⌉}`.
    pub fn theory_memory(&self) -> usize {
        let decay = -(self.horizon as f64).ln() / (1.0 - self.gamma).ln();
        // guard against 2/γ landing a hair above an integer
        let settle = (2.0 / self.gamma - 1e-9).ceil();
        decay.ceil().max(settle).max(1.0) as usize
    }

    pub fn memory(&self) -> usize {
        self.memory.unwrap_or_else(|| self.theory_memory())
    }

    /// `L = κL*`, the per-argument Lipschitz constant of the memory loss.
    pub fn ocom_lipschitz(&self) -> f64 {
        self.kappa * self.loss_lipschitz
    }

    /// `G̃ = 2κL*/γ`.
    pub fn ideal_grad_bound(&self) -> f64 {
        2.0 * self.kappa * self.loss_lipschitz / self.gamma
    }

    /// `(κU + W)/γ`, the bound on both the true and the ideal state.
    pub fn state_bound(&self) -> f64 {
        (self.kappa * self.action_bound + self.disturbance_bound) / self.gamma
    }

    /// `L*(κU + W)(1 − γ)^H / γ`, the truncation gap of the ideal loss.
    pub fn truncation_bound(&self) -> f64 {
        self.loss_lipschitz * self.state_bound() * (1.0 - self.gamma).powi(self.memory() as i32)
    }
}

/// `w_{t−1} = x_t − A_{t−1} x_{t−1} − B_{t−1} u_{t−1}`.
pub fn infer_disturbance(x_t: &Vector, x_prev: &Vector, u_prev: &Vector, a_prev: &Matrix, b_prev: &Matrix) -> Vector {
    x_t - a_prev * x_prev - b_prev * u_prev
}

#[derive(Clone, Debug)]
struct Entry {
    a: Matrix,
    b: Matrix,
    w: Vector,
    u: Vector,
}

/// The last `H` values of `(A_i, B_i, w_i, u_i)`, oldest first; entries for
/// `i ≤ 0` are zero.
#[derive(Clone, Debug)]
pub struct HistoryBuffers {
    entries: VecDeque<Entry>,
}

impl HistoryBuffers {
    pub fn new(memory: usize, state_dim: usize, input_dim: usize) -> Self {
        let zero = Entry {
            a: Matrix::zeros(state_dim, state_dim),
            b: Matrix::zeros(state_dim, input_dim),
            w: Vector::zeros(state_dim),
            u: Vector::zeros(input_dim),
        };
        HistoryBuffers { entries: std::iter::repeat_n(zero, memory).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends round `i = t − 1`, dropping round `t − H − 1`.
    pub fn push(&mut self, a: Matrix, b: Matrix, w: Vector, u: Vector) {
        self.entries.pop_front();
        self.entries.push_back(Entry { a, b, w, u });
    }

    /// `(A_i, B_i, w_i, u_i)` for `i = t − H + j`.
    pub fn get(&self, j: usize) -> (&Matrix, &Matrix, &Vector, &Vector) {
        let e = &self.entries[j];
        (&e.a, &e.b, &e.w, &e.u)
    }

    /// `M = Σ Φ_i B_i` and `v = Σ Φ_i w_i`, accumulating `Φ` newest first.
    pub fn ideal_affine(&self) -> (Matrix, Vector) {
        let first = &self.entries[0];
        let n = first.a.nrows();
        let mut m = Matrix::zeros(n, first.b.ncols());
        let mut v = Vector::zeros(n);
        let mut phi = Matrix::identity(n, n);
        for e in self.entries.iter().rev() {
            m += &phi * &e.b;
            v += &phi * &e.w;
            phi = &phi * &e.a;
        }
        (m, v)
    }

    /// `y_t` under the actions actually played.
    pub fn ideal_state(&self) -> Vector {
        let n = self.entries[0].a.nrows();
        let mut y = Vector::zeros(n);
        let mut phi = Matrix::identity(n, n);
        for e in self.entries.iter().rev() {
            y += &phi * (&e.b * &e.u + &e.w);
            phi = &phi * &e.a;
        }
        y
    }
}

/// Convex per-round loss `l*_t(x, u)` with subgradients in each argument.
pub trait LossOracle {
    fn value(&self, x: &Vector, u: &Vector, t: usize) -> f64;
    fn subgradients(&self, x: &Vector, u: &Vector, t: usize) -> (Vector, Vector);
}

/// `‖x − x*_t‖ + ρ‖u − u*_t‖`; the action term is absent when `ρ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormTrackingLoss {
    pub state_target: TargetSignal,
    #[serde(default)]
    pub action_target: Option<TargetSignal>,
    #[serde(default)]
    pub action_weight: f64,
}

impl NormTrackingLoss {
    pub fn state_only(target: TargetSignal) -> Self {
        NormTrackingLoss { state_target: target, action_target: None, action_weight: 0.0 }
    }

    pub fn lipschitz(&self) -> f64 {
        self.action_weight.max(1.0)
    }

    fn action_ref(&self, u: &Vector, t: usize) -> Vector {
        match &self.action_target {
            Some(s) => s.at(t),
            None => Vector::zeros(u.len()),
        }
    }
}

impl LossOracle for NormTrackingLoss {
    fn value(&self, x: &Vector, u: &Vector, t: usize) -> f64 {
        let mut v = (x - self.state_target.at(t)).norm();
        if self.action_weight > 0.0 {
            v += self.action_weight * (u - self.action_ref(u, t)).norm();
        }
        v
    }

    fn subgradients(&self, x: &Vector, u: &Vector, t: usize) -> (Vector, Vector) {
        let gx = norm_subgradient(x, &self.state_target.at(t));
        let gu = if self.action_weight > 0.0 {
            norm_subgradient(u, &self.action_ref(u, t)) * self.action_weight
        } else {
            Vector::zeros(u.len())
        };
        (gx, gu)
    }
}

/// `f̃_t(u) = l*_t(M u + v, u)` and its subgradient `Mᵀ g_x + g_u`.
pub fn ideal_loss_value_and_grad(
    u: &Vector,
    m: &Matrix,
    v: &Vector,
    loss: &dyn LossOracle,
    t: usize,
    action_bound: f64,
) -> Result<(f64, Vector)> {
    let n = u.norm();
    if !n.is_finite() || exceeds(n, action_bound) {
        return Err(Error::ActionBound { norm: n, bound: action_bound });
    }
    let y = m * u + v;
    let value = loss.value(&y, u, t);
    let (gx, gu) = loss.subgradients(&y, u, t);
    Ok((value, m.transpose() * gx + gu))
}

/// What the controller saw and did in one round.
#[derive(Clone, Debug)]
pub struct ControlRound {
    pub t: usize,
    pub state: Vector,
    pub action: Vector,
    /// Recovered `w_{t−1}`.
    pub disturbance: Vector,
    /// `y_t` under the played actions.
    pub ideal_state: Vector,
    /// `l*_t(x_t, u_t)`.
    pub loss: f64,
    /// `f_t(u_{t−H:t}) = l*_t(y_t, u_t)`.
    pub ideal_loss: f64,
    /// `f̃_t(u_t)`.
    pub ideal_fixed_loss: f64,
    /// Subgradient of `f̃_t` at `u_t`, fed to the learner.
    pub grad: Vector,
}

#[derive(Clone, Debug)]
struct Pending {
    state: Vector,
    action: Vector,
    disturbance: Vector,
    m: Matrix,
    v: Vector,
}

/// Closed-loop controller. Call [`begin_round`](Self::begin_round) with the
/// observed state to get `u_t`, then [`end_round`](Self::end_round) once the
/// loss of the round is known.
#[derive(Clone, Debug)]
pub struct TrackingController {
    constants: ControlConstants,
    ocom: OcomMeta,
    buffers: HistoryBuffers,
    prev_state: Vector,
    prev_action: Vector,
    t: usize,
    pending: Option<Pending>,
}

impl TrackingController {
    pub fn new(
        constants: ControlConstants,
        state_dim: usize,
        input_dim: usize,
        eps0: f64,
        shifted: bool,
    ) -> Result<Self> {
        constants.validate()?;
        let memory = constants.memory();
        if constants.memory.is_none() {
            info!("memory length H = {memory} from the horizon formula");
        }
        let mut cfg = OcomConfig::new(
            constants.horizon,
            input_dim,
            Domain::ball(constants.action_bound),
            constants.ocom_lipschitz(),
            memory,
            constants.ideal_grad_bound(),
        );
        cfg.eps0 = eps0;
        cfg.shifted = shifted;
        let ocom = OcomMeta::new(cfg)?;
        Ok(TrackingController {
            buffers: HistoryBuffers::new(memory, state_dim, input_dim),
            prev_state: Vector::zeros(state_dim),
            prev_action: Vector::zeros(input_dim),
            t: 1,
            pending: None,
            constants,
            ocom,
        })
    }

    pub fn constants(&self) -> &ControlConstants {
        &self.constants
    }

    pub fn ocom(&self) -> &OcomMeta {
        &self.ocom
    }

    pub fn buffers(&self) -> &HistoryBuffers {
        &self.buffers
    }

    pub fn round(&self) -> usize {
        self.t
    }

    /// Observes `x_t`, recovers `w_{t−1}` and commits `u_t`.
    pub fn begin_round(&mut self, x_t: &Vector, dynamics: &dyn Dynamics) -> Result<Vector> {
        if self.pending.is_some() {
            return Err(Error::Protocol("begin_round called twice without end_round"));
        }
        if x_t.len() != self.prev_state.len() {
            return Err(Error::Dimension { expected: self.prev_state.len(), got: x_t.len() });
        }
        let i = self.t - 1;
        let a = dynamics.a(i);
        // u_0 = 0 by convention, so B_0 plays no part in the ideal state
        let b = if i == 0 { Matrix::zeros(a.nrows(), self.prev_action.len()) } else { dynamics.b(i) };
        let w = infer_disturbance(x_t, &self.prev_state, &self.prev_action, &a, &dynamics.b(i));
        self.buffers.push(a, b, w.clone(), self.prev_action.clone());
        let (m, v) = self.buffers.ideal_affine();
        let action = self.ocom.predict()?;
        self.pending = Some(Pending { state: x_t.clone(), action: action.clone(), disturbance: w, m, v });
        Ok(action)
    }

    /// Feeds the ideal-loss subgradient at `u_t` to the learner.
    pub fn end_round(&mut self, loss: &dyn LossOracle) -> Result<ControlRound> {
        let p = self.pending.take().ok_or(Error::Protocol("end_round called before begin_round"))?;
        let t = self.t;
        let u = &p.action;
        let (fixed, grad) = ideal_loss_value_and_grad(u, &p.m, &p.v, loss, t, self.constants.action_bound)?;
        self.ocom.update(&grad)?;
        let y = self.buffers.ideal_state();
        let round = ControlRound {
            t,
            loss: loss.value(&p.state, u, t),
            ideal_loss: loss.value(&y, u, t),
            ideal_fixed_loss: fixed,
            ideal_state: y,
            grad,
            disturbance: p.disturbance,
            action: p.action.clone(),
            state: p.state.clone(),
        };
        self.prev_state = p.state;
        self.prev_action = p.action;
        self.t += 1;
        Ok(round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Plant, SystemSpec};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec())
    }

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn scalar_constants() -> ControlConstants {
        ControlConstants {
            kappa: 1.0,
            gamma: 0.4,
            action_bound: 5.0,
            disturbance_bound: 0.05,
            loss_lipschitz: 1.0,
            horizon: 20000,
            memory: None,
        }
    }

    /// Direct double sum with explicit products.
    fn naive_affine(buf: &HistoryBuffers) -> (Matrix, Vector) {
        let h = buf.len();
        let n = buf.get(0).0.nrows();
        let mut m = Matrix::zeros(n, buf.get(0).1.ncols());
        let mut vv = Vector::zeros(n);
        for i in 0..h {
            let mut phi = Matrix::identity(n, n);
            for j in (i + 1)..h {
                phi = buf.get(j).0 * phi;
            }
            m += &phi * buf.get(i).1;
            vv += &phi * buf.get(i).2;
        }
        (m, vv)
    }

    #[test]
    fn constants() {
        let c = scalar_constants();
        assert_eq!(c.ideal_grad_bound(), 5.0);
        assert_eq!(c.theory_memory(), 20);
        assert_eq!(c.memory(), 20);
        assert_eq!(ControlConstants { memory: Some(8), ..c.clone() }.memory(), 8);
        assert_eq!(ControlConstants { horizon: 1, ..c.clone() }.theory_memory(), 5);
        assert_eq!(c.ocom_lipschitz(), 1.0);
        assert!((c.state_bound() - 12.625).abs() < 1e-12);
        assert!(ControlConstants { gamma: 1.0, ..c.clone() }.validate().is_err());
        assert!(ControlConstants { kappa: 0.5, ..c }.validate().is_err());
    }

    #[test]
    fn disturbance_recovery_examples() {
        let w = infer_disturbance(&v(&[1.0]), &v(&[1.0]), &v(&[0.2]), &scalar(0.5), &scalar(1.0));
        assert!((w[0] - 0.3).abs() < 1e-15);
        let w = infer_disturbance(
            &v(&[1.5, 0.5]),
            &v(&[0.0, 0.0]),
            &v(&[1.0, 1.0]),
            &Matrix::zeros(2, 2),
            &Matrix::identity(2, 2),
        );
        assert_eq!(w, v(&[0.5, -0.5]));
    }

    #[test]
    fn affine_examples() {
        let mut buf = HistoryBuffers::new(2, 1, 1);
        for _ in 0..2 {
            buf.push(scalar(0.5), scalar(1.0), v(&[0.0]), v(&[0.0]));
        }
        let (m, vv) = buf.ideal_affine();
        assert_eq!((m[(0, 0)], vv[0]), (1.5, 0.0));

        let mut buf = HistoryBuffers::new(1, 1, 1);
        buf.push(scalar(0.3), scalar(0.9), v(&[0.2]), v(&[0.0]));
        let (m, vv) = buf.ideal_affine();
        assert_eq!((m[(0, 0)], vv[0]), (0.9, 0.2));

        let mut buf = HistoryBuffers::new(3, 1, 1);
        for _ in 0..3 {
            buf.push(scalar(0.5), scalar(1.0), v(&[0.1]), v(&[0.0]));
        }
        let (m, vv) = buf.ideal_affine();
        let (nm, nv) = naive_affine(&buf);
        assert!((m[(0, 0)] - 1.75).abs() < 1e-15 && (vv[0] - 0.175).abs() < 1e-15);
        assert!((m - nm).norm() < 1e-15 && (vv - nv).norm() < 1e-15);
    }

    #[test]
    fn affine_matches_naive_on_time_varying_planar_history() {
        let sys = SystemSpec::Planar { disturbance: true };
        let mut buf = HistoryBuffers::new(8, 2, 2);
        for i in 1..40 {
            let u = v(&[(i as f64).sin(), (i as f64 * 0.7).cos()]);
            buf.push(sys.a(i), sys.b(i), sys.w(i), u);
            let (m, vv) = buf.ideal_affine();
            let (nm, nv) = naive_affine(&buf);
            assert!((m - nm).norm() < 1e-12 && (vv - nv).norm() < 1e-12);
        }
    }

    #[test]
    fn ideal_loss_examples() {
        let loss = NormTrackingLoss::state_only(TargetSignal::Step { value: vec![0.0] });
        let (val, g) = ideal_loss_value_and_grad(&v(&[1.0]), &scalar(1.5), &v(&[0.0]), &loss, 1, 5.0).unwrap();
        assert_eq!((val, g[0]), (1.5, 1.5));

        let loss = NormTrackingLoss::state_only(TargetSignal::Step { value: vec![3.0] });
        let (_, g) = ideal_loss_value_and_grad(&v(&[2.0]), &scalar(1.5), &v(&[0.0]), &loss, 1, 5.0).unwrap();
        assert_eq!(g[0], 0.0);

        let loss = NormTrackingLoss::state_only(TargetSignal::Step { value: vec![3.0, 0.0] });
        let m = Matrix::identity(2, 2) * 1.5;
        let (val, g) = ideal_loss_value_and_grad(&v(&[0.0, 0.0]), &m, &v(&[0.0, 0.0]), &loss, 1, 5.0).unwrap();
        assert_eq!(val, 3.0);
        assert!((g - v(&[-1.5, 0.0])).norm() < 1e-15);

        assert!(matches!(
            ideal_loss_value_and_grad(&v(&[6.0]), &scalar(1.0), &v(&[0.0]), &loss, 1, 5.0),
            Err(Error::ActionBound { .. })
        ));
    }

    #[test]
    fn ideal_gradient_matches_finite_differences() {
        let loss = NormTrackingLoss {
            state_target: TargetSignal::Step { value: vec![0.7, -0.4] },
            action_target: Some(TargetSignal::Step { value: vec![0.1, 0.2] }),
            action_weight: 0.5,
        };
        let m = Matrix::from_row_slice(2, 2, &[1.2, 0.3, -0.1, 0.9]);
        let off = v(&[0.05, -0.02]);
        let u = v(&[0.8, -1.1]);
        let (_, g) = ideal_loss_value_and_grad(&u, &m, &off, &loss, 3, 5.0).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            let f = |x: &Vector| loss.value(&(&m * x + &off), x, 3);
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn controller_recovers_disturbances_and_respects_bounds() {
        let c = ControlConstants { memory: Some(8), horizon: 3000, ..scalar_constants() };
        let sys = SystemSpec::Scalar { disturbance: true };
        let loss = NormTrackingLoss::state_only(TargetSignal::Step { value: vec![1.0] });
        let mut ctl = TrackingController::new(c.clone(), 1, 1, 0.5, true).unwrap();
        let mut plant = Plant::new(&sys, c.action_bound);
        for t in 1..=3000 {
            let u = ctl.begin_round(plant.state(), &sys).unwrap();
            let r = ctl.end_round(&loss).unwrap();
            assert!((r.disturbance[0] - sys.w(t - 1)[0]).abs() <= 1e-10);
            assert!(u.norm() <= c.action_bound + 1e-9);
            assert!(r.state.norm() <= c.state_bound());
            assert!(r.ideal_state.norm() <= c.state_bound());
            assert!((r.ideal_loss - r.loss).abs() <= c.truncation_bound() * (1.0 + 1e-9));
            assert!(r.grad.norm() <= c.ideal_grad_bound());
            plant.step(&u).unwrap();
        }
    }

    #[test]
    fn controller_enforces_round_order() {
        let c = ControlConstants { memory: Some(4), horizon: 10, ..scalar_constants() };
        let sys = SystemSpec::Scalar { disturbance: false };
        let loss = NormTrackingLoss::state_only(TargetSignal::Step { value: vec![1.0] });
        let mut ctl = TrackingController::new(c, 1, 1, 0.5, false).unwrap();
        assert!(matches!(ctl.end_round(&loss), Err(Error::Protocol(_))));
        ctl.begin_round(&v(&[0.0]), &sys).unwrap();
        assert!(matches!(ctl.begin_round(&v(&[0.0]), &sys), Err(Error::Protocol(_))));
    }
}
