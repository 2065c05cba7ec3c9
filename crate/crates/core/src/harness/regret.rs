//! Interval regret against brute-force comparators.
//!
//! The comparator term is minimized by grid search over the decision set
//! followed by one refinement pass on a finer grid around the best point.
//! For OCOM the comparator is a fixed point of the domain. For control it is
//! a fixed action held on `[a − H : b]`, with the algorithm's own actions
//! replayed before that and the true dynamics rolled forward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::Trace;
use crate::error::{Error, Result};
use crate::linalg::{box_grid, Domain, Vector};
use crate::sim::{Dynamics, ExperimentConfig, GradientStream, Setup};
use crate::subroutine::gc_intervals_within;

/// Shortest GC interval the sweep evaluates.
pub const MIN_SWEEP_LEN: usize = 32;
/// Points per axis of the refinement grid.
const REFINE_POINTS: usize = 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRegret {
    pub a: usize,
    pub b: usize,
    pub len: usize,
    pub algorithm_loss: f64,
    pub comparator_loss: f64,
    pub comparator: Vec<f64>,
    pub regret: f64,
    /// `regret / √|I|`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub intervals: Vec<IntervalRegret>,
    pub max_ratio: f64,
    /// Interval attaining `max_ratio`.
    pub argmax: Option<(usize, usize)>,
}

impl RegretReport {
    fn new(intervals: Vec<IntervalRegret>) -> Self {
        let best = intervals.iter().max_by(|x, y| x.ratio.total_cmp(&y.ratio));
        RegretReport {
            max_ratio: best.map_or(f64::NEG_INFINITY, |r| r.ratio),
            argmax: best.map(|r| (r.a, r.b)),
            intervals,
        }
    }
}

/// Minimizes `f` over `domain` on a `per_dim` grid, then on a finer grid of
/// one grid step around the best point (projected onto the domain).
pub fn grid_minimize<F>(domain: &Domain, dim: usize, per_dim: usize, f: F) -> (Vector, f64)
where
    F: Fn(&Vector) -> f64,
{
    let (lo, hi): (Vec<f64>, Vec<f64>) = match domain {
        Domain::Ball { radius } => (vec![-radius; dim], vec![*radius; dim]),
        Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
    };
    let pick = |points: Vec<Vector>, best: Option<(Vector, f64)>| {
        points.into_iter().fold(best, |acc, p| {
            let v = f(&p);
            match acc {
                Some((_, bv)) if bv <= v => acc,
                _ => Some((p, v)),
            }
        })
    };
    let coarse = pick(domain.grid(dim, per_dim), None).expect("grid contains the domain centre");
    let steps: Vec<f64> =
        lo.iter().zip(&hi).map(|(l, h)| if per_dim > 1 { (h - l) / (per_dim - 1) as f64 } else { h - l }).collect();
    let rlo: Vec<f64> = (0..dim).map(|i| coarse.0[i] - steps[i]).collect();
    let rhi: Vec<f64> = (0..dim).map(|i| coarse.0[i] + steps[i]).collect();
    let fine: Vec<Vector> = box_grid(&rlo, &rhi, REFINE_POINTS).iter().map(|p| domain.project(p)).collect();
    pick(fine, Some(coarse)).expect("nonempty")
}

fn check_interval(a: usize, b: usize, len: usize) -> Result<()> {
    if a < 1 || a > b || b > len {
        return Err(Error::IntervalOutOfRange { a, b, len });
    }
    Ok(())
}

fn finish(a: usize, b: usize, algorithm_loss: f64, best: (Vector, f64)) -> IntervalRegret {
    let len = b - a + 1;
    let regret = algorithm_loss - best.1;
    IntervalRegret {
        a,
        b,
        len,
        algorithm_loss,
        comparator_loss: best.1,
        comparator: best.0.iter().copied().collect(),
        regret,
        ratio: regret / (len as f64).sqrt(),
    }
}

/// Evaluates one experiment kind on a trace.
trait Evaluator: Sync {
    fn evaluate(&self, a: usize, b: usize, per_dim: usize) -> IntervalRegret;
}

struct OloEval {
    xs: Vec<f64>,
    grads: Vec<f64>,
    target: f64,
    radius: f64,
    linear: bool,
}

impl Evaluator for OloEval {
    fn evaluate(&self, a: usize, b: usize, per_dim: usize) -> IntervalRegret {
        let r = a - 1..b;
        let (alg, best) = if self.linear {
            let alg: f64 = r.clone().map(|i| self.grads[i] * self.xs[i]).sum();
            let gsum: f64 = self.grads[r].iter().sum();
            let u = if gsum < 0.0 { self.radius } else { 0.0 };
            (alg, (Vector::from_element(1, u), gsum * u))
        } else {
            let alg: f64 = self.xs[r].iter().map(|x| (x - self.target).abs()).sum();
            let n = (b - a + 1) as f64;
            let dom = Domain::Box { lower: vec![0.0], upper: vec![self.radius] };
            (alg, grid_minimize(&dom, 1, per_dim, |u| n * (u[0] - self.target).abs()))
        };
        finish(a, b, alg, best)
    }
}

struct OcomEval {
    xs: Vec<Vector>,
    targets: Vec<Vector>,
    memory: usize,
    domain: Domain,
}

impl Evaluator for OcomEval {
    fn evaluate(&self, a: usize, b: usize, per_dim: usize) -> IntervalRegret {
        let zero = Vector::zeros(self.xs[0].len());
        let x_at = |s: usize| if s == 0 { &zero } else { &self.xs[s - 1] };
        let alg: f64 = (a..=b)
            .map(|t| {
                let target = &self.targets[t - 1];
                (0..=self.memory.min(t)).map(|h| (x_at(t - h) - target).norm()).sum::<f64>()
                    + (self.memory.saturating_sub(t)) as f64 * target.norm()
            })
            .sum();
        let weight = (self.memory + 1) as f64;
        let targets = &self.targets[a - 1..b];
        let best = grid_minimize(&self.domain, zero.len(), per_dim, |x| {
            weight * targets.iter().map(|c| (x - c).norm()).sum::<f64>()
        });
        finish(a, b, alg, best)
    }
}

struct ControlEval<'a> {
    system: &'a dyn Dynamics,
    states: Vec<Vector>,
    targets: Vec<Vector>,
    memory: usize,
    action_bound: f64,
}

impl ControlEval<'_> {
    /// Tracking cost on `[a : b]` of holding `u` from `max(1, a − H)` on.
    fn rollout(&self, a: usize, b: usize, u: &Vector, plant: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> f64 {
        let n = self.states[0].len();
        let m = u.len();
        let start = a.saturating_sub(self.memory).max(1);
        let mut x: Vec<f64> = self.states[start - 1].iter().copied().collect();
        let mut next = vec![0.0; n];
        let mut cost = 0.0;
        for t in start..=b {
            if t >= a {
                let target = &self.targets[t - 1];
                cost += (0..n).map(|i| (x[i] - target[i]).powi(2)).sum::<f64>().sqrt();
            }
            if t == b {
                break;
            }
            let (am, bm, w) = &plant[t - start];
            for i in 0..n {
                let mut v = w[i];
                for j in 0..n {
                    v += am[i * n + j] * x[j];
                }
                for j in 0..m {
                    v += bm[i * m + j] * u[j];
                }
                next[i] = v;
            }
            std::mem::swap(&mut x, &mut next);
        }
        cost
    }
}

impl Evaluator for ControlEval<'_> {
    fn evaluate(&self, a: usize, b: usize, per_dim: usize) -> IntervalRegret {
        let start = a.saturating_sub(self.memory).max(1);
        let row_major = |mat: crate::linalg::Matrix| {
            let (r, c) = mat.shape();
            (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| mat[(i, j)]).collect::<Vec<f64>>()
        };
        let plant: Vec<_> = (start..b)
            .map(|t| {
                (
                    row_major(self.system.a(t)),
                    row_major(self.system.b(t)),
                    self.system.w(t).iter().copied().collect::<Vec<f64>>(),
                )
            })
            .collect();
        let alg: f64 = (a..=b).map(|t| (&self.states[t - 1] - &self.targets[t - 1]).norm()).sum();
        let dom = Domain::ball(self.action_bound);
        let best = grid_minimize(&dom, self.system.input_dim(), per_dim, |u| self.rollout(a, b, u, &plant));
        finish(a, b, alg, best)
    }
}

fn with_evaluator<R>(
    trace: &Trace,
    config: &ExperimentConfig,
    f: impl FnOnce(&dyn Evaluator) -> Result<R>,
) -> Result<R> {
    let horizon = trace.len();
    match &config.setup {
        Setup::Olo(s) => f(&OloEval {
            xs: trace.column("x")?,
            grads: trace.column("grad")?,
            target: s.target,
            radius: s.radius,
            linear: s.stream != GradientStream::Target,
        }),
        Setup::Ocom(s) => f(&OcomEval {
            xs: trace.vectors("x")?.into_iter().map(Vector::from_vec).collect(),
            targets: (1..=horizon).map(|t| s.target.at(t)).collect(),
            memory: s.memory,
            domain: s.domain.clone(),
        }),
        Setup::Control(s) => f(&ControlEval {
            system: &s.system,
            states: trace.vectors("x")?.into_iter().map(Vector::from_vec).collect(),
            targets: (1..=horizon).map(|t| s.target.at(t)).collect(),
            memory: s.constants.memory(),
            action_bound: s.constants.action_bound,
        }),
    }
}

/// Regret of the traced run on each interval `[a : b]`.
pub fn interval_regret(
    trace: &Trace,
    config: &ExperimentConfig,
    intervals: &[(usize, usize)],
    per_dim: usize,
) -> Result<RegretReport> {
    for &(a, b) in intervals {
        check_interval(a, b, trace.len())?;
    }
    with_evaluator(trace, config, |ev| {
        let rows = intervals.par_iter().map(|&(a, b)| ev.evaluate(a, b, per_dim)).collect();
        Ok(RegretReport::new(rows))
    })
}

/// Regret on every GC interval inside the trace with at least `min_len` rounds.
pub fn gc_sweep(trace: &Trace, config: &ExperimentConfig, min_len: usize, per_dim: usize) -> Result<RegretReport> {
    let intervals: Vec<(usize, usize)> = gc_intervals_within(trace.len())
        .into_iter()
        .filter(|g| g.len() >= min_len)
        .map(|g| (g.start(), g.end()))
        .collect();
    interval_regret(trace, config, &intervals, per_dim)
}

/// Parses `a:b,c:d,…`.
pub fn parse_intervals(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidHyperparameter(format!("interval `{part}` is not of the form a:b")))?;
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::InvalidHyperparameter(format!("interval `{part}`: {e}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run, RunOptions};
    use crate::sim::{make_experiment, SystemSpec, TargetSignal};

    fn ocom_trace(xs: &[f64], target: f64) -> (Trace, ExperimentConfig) {
        let mut cfg = make_experiment("ocom-step").unwrap();
        cfg.set_horizon(xs.len());
        if let Setup::Ocom(s) = &mut cfg.setup {
            s.target = TargetSignal::Step { value: vec![target] };
        }
        let mut tr = Trace::new(vec!["t".into(), "x0".into()]);
        for (i, x) in xs.iter().enumerate() {
            tr.push(vec![(i + 1) as f64, *x]);
        }
        (tr, cfg)
    }

    #[test]
    fn constant_target_comparator_is_the_target() {
        let (tr, cfg) = ocom_trace(&[0.0; 40], 1.0);
        let rep = interval_regret(&tr, &cfg, &[(10, 30)], 101).unwrap();
        let r = &rep.intervals[0];
        assert_eq!(r.comparator_loss, 0.0);
        assert_eq!(r.comparator, vec![1.0]);
        assert_eq!(r.algorithm_loss, 21.0 * 6.0);
    }

    #[test]
    fn zero_loss_stream_has_zero_regret() {
        let (tr, cfg) = ocom_trace(&[0.0; 64], 0.0);
        let rep = gc_sweep(&tr, &cfg, 1, 101).unwrap();
        assert!(rep.intervals.iter().all(|r| r.regret == 0.0));
        assert_eq!(rep.intervals.len(), 64 + 31 + 15 + 7 + 3 + 1);
    }

    #[test]
    fn memory_padding_counts_the_zero_history() {
        let (tr, cfg) = ocom_trace(&[1.0; 3], 1.0);
        let rep = interval_regret(&tr, &cfg, &[(1, 1)], 11).unwrap();
        // x_{-4..0} are zero, so five terms cost 1 each
        assert_eq!(rep.intervals[0].algorithm_loss, 5.0);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let (tr, cfg) = ocom_trace(&[0.0; 10], 1.0);
        for bad in [(0, 3), (5, 4), (3, 11)] {
            assert!(matches!(interval_regret(&tr, &cfg, &[bad], 11), Err(Error::IntervalOutOfRange { .. })));
        }
    }

    #[test]
    fn sweep_counts_at_1024() {
        let (tr, cfg) = ocom_trace(&vec![0.0; 1024], 0.0);
        let rep = gc_sweep(&tr, &cfg, MIN_SWEEP_LEN, 3).unwrap();
        assert_eq!(rep.intervals.len(), 57);
    }

    #[test]
    fn refinement_finds_off_grid_minimizers() {
        let dom = Domain::cube(1, 5.0);
        let (x, v) = grid_minimize(&dom, 1, 11, |x| (x[0] - 0.37).abs());
        assert!((x[0] - 0.4).abs() < 1e-12 && (v - 0.03).abs() < 1e-12);
        let ball = Domain::ball(1.0);
        let (x, _) = grid_minimize(&ball, 2, 21, |x| (x - Vector::from_vec(vec![2.0, 0.0])).norm());
        assert!(ball.contains(&x) && (x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn control_rollout_replays_the_plant() {
        // a comparator equal to the played constant action reproduces the run
        let sys = SystemSpec::Scalar { disturbance: true };
        let ev = {
            let mut states = Vec::new();
            let mut plant = crate::sim::Plant::new(&sys, 5.0);
            for _ in 0..50 {
                states.push(plant.state().clone());
                plant.step(&Vector::from_element(1, 0.7)).unwrap();
            }
            ControlEval {
                system: &sys,
                states,
                targets: vec![Vector::from_element(1, 1.0); 50],
                memory: 8,
                action_bound: 5.0,
            }
        };
        let start = 12;
        let plant: Vec<_> =
            (start..40).map(|t| (vec![sys.a(t)[(0, 0)]], vec![sys.b(t)[(0, 0)]], vec![sys.w(t)[0]])).collect();
        let cost = ev.rollout(20, 40, &Vector::from_element(1, 0.7), &plant);
        let direct: f64 = (20..=40).map(|t| (ev.states[t - 1][0] - 1.0).abs()).sum();
        assert!((cost - direct).abs() < 1e-12);
    }

    #[test]
    fn control_sweep_runs() {
        let mut cfg = make_experiment("control-1d-step").unwrap();
        cfg.set_horizon(256);
        let out = run(&cfg, &RunOptions::default()).unwrap();
        let rep = gc_sweep(&out.trace, &cfg, 32, 21).unwrap();
        assert_eq!(rep.intervals.len(), 7 + 3 + 1);
        assert!(rep.max_ratio.is_finite());
    }

    #[test]
    fn interval_specs_parse() {
        assert_eq!(parse_intervals("1:10, 20:30").unwrap(), vec![(1, 10), (20, 30)]);
        assert!(parse_intervals("1-10").is_err());
    }
}
