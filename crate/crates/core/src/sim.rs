//! Time-varying linear plants, reference signals and the named experiment
//! configurations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::control::ControlConstants;
use crate::error::{Error, Result};
use crate::linalg::{exceeds, Domain, Matrix, Vector};

/// Generator of `(A_t, B_t, w_t)` for `x_{t+1} = A_t x_t + B_t u_t + w_t`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn a(&self, t: usize) -> Matrix;
    fn b(&self, t: usize) -> Matrix;
    fn w(&self, t: usize) -> Vector;
}

/// Serializable description of a plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `A_t = 0.55 + 0.05 sin(πt/10000)`, `B_t = 0.95 + 0.05 sin(πt/5000)`,
    /// `w_t = 0.05 sin(πt/4000)`.
    Scalar { disturbance: bool },
    /// `A_t = [[0.55, 0.3], [0, 0.55]] + 0.05 cos(πt/10000) I`,
    /// `B_t = (0.95 + 0.05 cos(πt/5000)) I`, `w_t = 0.05 sin(πt/4000) (1, −1)`.
    Planar { disturbance: bool },
    /// Time-invariant system; matrices are row-major.
    Constant { state_dim: usize, input_dim: usize, a: Vec<f64>, b: Vec<f64>, w: Vec<f64> },
}

impl SystemSpec {
    fn check(&self) -> Result<()> {
        if let SystemSpec::Constant { state_dim, input_dim, a, b, w } = self {
            let (n, m) = (*state_dim, *input_dim);
            if a.len() != n * n || b.len() != n * m || w.len() != n || n == 0 || m == 0 {
                return Err(Error::InvalidHyperparameter(
                    "constant system matrices do not match the declared dimensions".into(),
                ));
            }
        }
        Ok(())
    }
}

impl Dynamics for SystemSpec {
    fn state_dim(&self) -> usize {
        match self {
            SystemSpec::Scalar { .. } => 1,
            SystemSpec::Planar { .. } => 2,
            SystemSpec::Constant { state_dim, .. } => *state_dim,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            SystemSpec::Scalar { .. } => 1,
            SystemSpec::Planar { .. } => 2,
            SystemSpec::Constant { input_dim, .. } => *input_dim,
        }
    }

    fn a(&self, t: usize) -> Matrix {
        let t = t as f64;
        match self {
            SystemSpec::Scalar { .. } => Matrix::from_element(1, 1, 0.55 + 0.05 * (PI * t / 10000.0).sin()),
            SystemSpec::Planar { .. } => {
                let d = 0.05 * (PI * t / 10000.0).cos();
                Matrix::from_row_slice(2, 2, &[0.55 + d, 0.3, 0.0, 0.55 + d])
            }
            SystemSpec::Constant { state_dim, a, .. } => Matrix::from_row_slice(*state_dim, *state_dim, a),
        }
    }

    fn b(&self, t: usize) -> Matrix {
        let t = t as f64;
        match self {
            SystemSpec::Scalar { .. } => Matrix::from_element(1, 1, 0.95 + 0.05 * (PI * t / 5000.0).sin()),
            SystemSpec::Planar { .. } => Matrix::identity(2, 2) * (0.95 + 0.05 * (PI * t / 5000.0).cos()),
            SystemSpec::Constant { state_dim, input_dim, b, .. } => Matrix::from_row_slice(*state_dim, *input_dim, b),
        }
    }

    fn w(&self, t: usize) -> Vector {
        let s = 0.05 * (PI * t as f64 / 4000.0).sin();
        match self {
            SystemSpec::Scalar { disturbance } => Vector::from_element(1, if *disturbance { s } else { 0.0 }),
            SystemSpec::Planar { disturbance } => {
                let s = if *disturbance { s } else { 0.0 };
                Vector::from_vec(vec![s, -s])
            }
            SystemSpec::Constant { w, .. } => Vector::from_vec(w.clone()),
        }
    }
}

/// A plant in closed loop. Holds `x_t` for the current round `t`; the
/// simulation starts from `x_0 = 0` with `u_0 = 0`, so round 1 observes `w_0`.
pub struct Plant<'a> {
    system: &'a dyn Dynamics,
    action_bound: f64,
    state: Vector,
    t: usize,
}

impl<'a> Plant<'a> {
    pub fn new(system: &'a dyn Dynamics, action_bound: f64) -> Self {
        let x0 = Vector::zeros(system.state_dim());
        let u0 = Vector::zeros(system.input_dim());
        let state = system.a(0) * &x0 + system.b(0) * &u0 + system.w(0);
        Plant { system, action_bound, state, t: 1 }
    }

    pub fn state(&self) -> &Vector {
        &self.state
    }

    pub fn round(&self) -> usize {
        self.t
    }

    /// Applies `u_t` and advances to `x_{t+1}`.
    pub fn step(&mut self, u: &Vector) -> Result<&Vector> {
        if u.len() != self.system.input_dim() {
            return Err(Error::Dimension { expected: self.system.input_dim(), got: u.len() });
        }
        let n = u.norm();
        if !n.is_finite() || exceeds(n, self.action_bound) {
            return Err(Error::ActionBound { norm: n, bound: self.action_bound });
        }
        let t = self.t;
        self.state = self.system.a(t) * &self.state + self.system.b(t) * u + self.system.w(t);
        self.t += 1;
        Ok(&self.state)
    }
}

/// Reference trajectory `x*_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSignal {
    /// Constant target (a step from the zero initial state).
    Step { value: Vec<f64> },
    /// `+1` on the first half of each period, `−1` on the second.
    Square { period: usize },
    /// `sin(2πt / period)`.
    Sine { period: usize },
    /// Sine on `t < T/2`, then `+1` until `3T/4`, then `−1`.
    Composite { period: usize, horizon: usize },
    /// Ramp from the origin to `(1, 0)` over `ramp` rounds, then half a turn
    /// of the unit circle over `turn` rounds, then hold.
    Circle { ramp: usize, turn: usize },
}

impl TargetSignal {
    pub fn dim(&self) -> usize {
        match self {
            TargetSignal::Step { value } => value.len(),
            TargetSignal::Circle { .. } => 2,
            _ => 1,
        }
    }

    pub fn at(&self, t: usize) -> Vector {
        let scalar = |x: f64| Vector::from_element(1, x);
        match self {
            TargetSignal::Step { value } => Vector::from_vec(value.clone()),
            TargetSignal::Square { period } => scalar(if 2 * (t % period) < *period { 1.0 } else { -1.0 }),
            TargetSignal::Sine { period } => scalar((2.0 * PI * t as f64 / *period as f64).sin()),
            TargetSignal::Composite { period, horizon } => {
                if 2 * t < *horizon {
                    scalar((2.0 * PI * t as f64 / *period as f64).sin())
                } else if 4 * t < 3 * horizon {
                    scalar(1.0)
                } else {
                    scalar(-1.0)
                }
            }
            TargetSignal::Circle { ramp, turn } => {
                if t <= *ramp {
                    Vector::from_vec(vec![t as f64 / *ramp as f64, 0.0])
                } else {
                    let s = (t - ramp).min(*turn) as f64;
                    let angle = PI * s / *turn as f64;
                    Vector::from_vec(vec![angle.cos(), angle.sin()])
                }
            }
        }
    }
}

/// Gradient sequence fed to the scalar bettor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientStream {
    /// Subgradients of `|x − x*|` at the learner's own predictions.
    Target,
    /// Independent uniform draws from `[−G, G]`.
    Random,
    /// Random signs with magnitude `G`.
    Sign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OloSetup {
    pub target: f64,
    pub radius: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub eps: f64,
    pub grad_bound: f64,
    pub stream: GradientStream,
    /// Radius of a companion run whose predictions are compared against.
    #[serde(default)]
    pub compare_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcomSetup {
    pub target: TargetSignal,
    pub domain: Domain,
    pub memory: usize,
    pub lipschitz: f64,
    pub grad_bound: f64,
    pub eps0: f64,
    #[serde(default)]
    pub shifted: bool,
    #[serde(default)]
    pub abridged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSetup {
    pub system: SystemSpec,
    pub target: TargetSignal,
    pub constants: ControlConstants,
    pub eps0: f64,
    #[serde(default)]
    pub shifted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setup {
    Olo(OloSetup),
    Ocom(OcomSetup),
    Control(ControlSetup),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub setup: Setup,
}

pub const EXPERIMENT_NAMES: [&str; 14] = [
    "olo-1d",
    "ocom-step",
    "ocom-square",
    "shifted-ocom-step",
    "shifted-ocom-square",
    "shifted-ocom-sine",
    "shifted-ocom-composite",
    "control-1d-step",
    "control-1d-square",
    "control-1d-sine",
    "control-1d-composite",
    "control-2d-circle",
    "control-1d-step-undisturbed",
    "olo-1d-random",
];

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self.setup {
            Setup::Olo(_) => "olo",
            Setup::Ocom(_) => "ocom",
            Setup::Control(_) => "control",
        }
    }

    /// Changes the horizon, keeping horizon-dependent signals and constants in step.
    pub fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon;
        let target = match &mut self.setup {
            Setup::Olo(_) => None,
            Setup::Ocom(s) => Some(&mut s.target),
            Setup::Control(s) => {
                s.constants.horizon = horizon;
                Some(&mut s.target)
            }
        };
        if let Some(TargetSignal::Composite { horizon: h, .. }) = target {
            *h = horizon;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidHyperparameter("horizon must be at least 1".into()));
        }
        match &self.setup {
            Setup::Olo(s) => {
                crate::betting::Hyper1d::new(s.lambda, s.gamma, s.eps, s.grad_bound, s.radius)?;
            }
            Setup::Ocom(s) => {
                if s.target.dim() != s.domain.dim().unwrap_or(s.target.dim()) {
                    return Err(Error::Dimension { expected: s.target.dim(), got: s.domain.dim().unwrap_or(0) });
                }
            }
            Setup::Control(s) => {
                s.system.check()?;
                s.constants.validate()?;
                if s.target.dim() != s.system.state_dim() {
                    return Err(Error::Dimension { expected: s.system.state_dim(), got: s.target.dim() });
                }
            }
        }
        Ok(())
    }
}

fn ocom(name: &str, target: TargetSignal, shifted: bool) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        horizon: 20000,
        seed: 0,
        setup: Setup::Ocom(OcomSetup {
            target,
            domain: Domain::cube(1, 5.0),
            memory: 5,
            lipschitz: 1.0,
            grad_bound: 6.0,
            eps0: 1.0,
            shifted,
            abridged: false,
        }),
    }
}

fn control(
    name: &str,
    system: SystemSpec,
    target: TargetSignal,
    disturbance_bound: f64,
    eps0: f64,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        horizon: 20000,
        seed: 0,
        setup: Setup::Control(ControlSetup {
            system,
            target,
            constants: ControlConstants {
                kappa: 1.0,
                gamma: 0.4,
                action_bound: 5.0,
                disturbance_bound,
                loss_lipschitz: 1.0,
                horizon: 20000,
                memory: Some(8),
            },
            eps0,
            shifted: true,
        }),
    }
}

fn olo(name: &str, stream: GradientStream, compare_radius: Option<f64>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        horizon: 10000,
        seed: 0,
        setup: Setup::Olo(OloSetup {
            target: 1.0,
            radius: 1.0,
            lambda: 0.0,
            gamma: 0.0,
            eps: 1.0,
            grad_bound: 1.0,
            stream,
            compare_radius,
        }),
    }
}

/// Full parameterization of a named experiment.
pub fn make_experiment(name: &str) -> Result<ExperimentConfig> {
    let step = || TargetSignal::Step { value: vec![1.0] };
    let scalar = SystemSpec::Scalar { disturbance: true };
    let cfg = match name {
        "olo-1d" => olo(name, GradientStream::Target, Some(10.0)),
        "olo-1d-random" => olo(name, GradientStream::Random, None),
        "ocom-step" => ocom(name, step(), false),
        "ocom-square" => ocom(name, TargetSignal::Square { period: 4000 }, false),
        "shifted-ocom-step" => ocom(name, step(), true),
        "shifted-ocom-square" => ocom(name, TargetSignal::Square { period: 4000 }, true),
        "shifted-ocom-sine" => ocom(name, TargetSignal::Sine { period: 4000 }, true),
        "shifted-ocom-composite" => ocom(name, TargetSignal::Composite { period: 4000, horizon: 20000 }, true),
        "control-1d-step" => control(name, scalar, step(), 0.05, 0.5),
        "control-1d-step-undisturbed" => control(name, SystemSpec::Scalar { disturbance: false }, step(), 0.0, 0.5),
        "control-1d-square" => control(name, scalar, TargetSignal::Square { period: 12000 }, 0.05, 0.5),
        "control-1d-sine" => control(name, scalar, TargetSignal::Sine { period: 10000 }, 0.05, 0.5),
        "control-1d-composite" => {
            control(name, scalar, TargetSignal::Composite { period: 10000, horizon: 20000 }, 0.05, 0.5)
        }
        "control-2d-circle" => control(
            name,
            SystemSpec::Planar { disturbance: true },
            TargetSignal::Circle { ramp: 4000, turn: 16000 },
            0.05 * std::f64::consts::SQRT_2,
            0.2,
        ),
        _ => return Err(Error::UnknownExperiment(name.into())),
    };
    Ok(cfg)
}
