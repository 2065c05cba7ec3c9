//! Running named experiments: per-round traces, summaries, live audits and
//! interval-regret oracles.

pub mod regret;
pub mod trace;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    check_betting_step, dyadic_windows, AuditLog, BettingRecord, ControlAuditor, MetaAuditor, Violation,
};
use crate::betting::{BettingLearner, Hyper1d};
use crate::control::{NormTrackingLoss, TrackingController};
use crate::error::Result;
use crate::linalg::{norm_subgradient, Vector};
use crate::meta::{OcomConfig, OcomMeta};
use crate::sim::{ControlSetup, Dynamics, ExperimentConfig, GradientStream, OcomSetup, OloSetup, Plant, Setup};

pub use regret::{gc_sweep, interval_regret, IntervalRegret, RegretReport};
pub use trace::Trace;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub audit: bool,
    /// Comparator grid points per axis for the cascade checks; `None` picks
    /// 101 in one dimension and 21 otherwise.
    pub audit_grid: Option<usize>,
}

impl RunOptions {
    pub fn audited() -> Self {
        RunOptions { audit: true, audit_grid: None }
    }

    fn grid(&self, dim: usize) -> usize {
        self.audit_grid.unwrap_or(if dim == 1 { 101 } else { 21 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub checks: u64,
    pub violations: usize,
    pub first: Option<Violation>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub kind: String,
    pub horizon: usize,
    pub seed: u64,
    pub cumulative_loss: f64,
    pub mean_loss: f64,
    pub metrics: BTreeMap<String, f64>,
    pub audit: Option<AuditSummary>,
}

pub struct RunOutput {
    pub trace: Trace,
    pub summary: Summary,
    pub audit: Option<AuditLog>,
}

/// Runs one experiment to its horizon.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let mut log = opts.audit.then(AuditLog::new);
    let (trace, metrics) = match &config.setup {
        Setup::Olo(s) => run_olo(config, s, log.as_mut())?,
        Setup::Ocom(s) => run_ocom(config, s, opts, log.as_mut())?,
        Setup::Control(s) => run_control(config, s, opts, log.as_mut())?,
    };
    let losses = trace.column("loss")?;
    let cumulative_loss: f64 = losses.iter().sum();
    let summary = Summary {
        name: config.name.clone(),
        kind: config.kind().into(),
        horizon: config.horizon,
        seed: config.seed,
        cumulative_loss,
        mean_loss: cumulative_loss / losses.len().max(1) as f64,
        metrics,
        audit: log.as_ref().map(|l| AuditSummary {
            checks: l.checks(),
            violations: l.count(),
            first: l.first().cloned(),
            warnings: l.warnings().to_vec(),
        }),
    };
    Ok(RunOutput { trace, summary, audit: log })
}

/// Runs independent experiments on the rayon pool.
pub fn run_many(configs: &[ExperimentConfig], opts: &RunOptions) -> Vec<Result<RunOutput>> {
    configs.par_iter().map(|c| run(c, opts)).collect()
}

/// Writes `trace.csv`, `summary.json` and the effective `config.json` into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.trace.write_csv(&dir.join("trace.csv"))?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn tail_counter(log: &Option<&mut AuditLog>) -> usize {
    log.as_ref().map_or(0, |l| l.count())
}

/// Draws the OLO gradient for round `t` at prediction `x`.
fn olo_gradient(s: &OloSetup, x: f64, rng: &mut ChaCha8Rng) -> f64 {
    match s.stream {
        GradientStream::Target => {
            s.grad_bound * norm_subgradient(&Vector::from_element(1, x), &Vector::from_element(1, s.target))[0]
        }
        GradientStream::Random => rng.gen_range(-s.grad_bound..=s.grad_bound),
        GradientStream::Sign => {
            if rng.gen::<bool>() {
                s.grad_bound
            } else {
                -s.grad_bound
            }
        }
    }
}

fn run_olo(
    config: &ExperimentConfig,
    s: &OloSetup,
    mut log: Option<&mut AuditLog>,
) -> Result<(Trace, BTreeMap<String, f64>)> {
    let hyper = Hyper1d::new(s.lambda, s.gamma, s.eps, s.grad_bound, s.radius)?;
    let mut learner = BettingLearner::new(hyper);
    let mut companion = match s.compare_radius {
        Some(r) => Some(BettingLearner::new(Hyper1d::new(s.lambda, s.gamma, s.eps, s.grad_bound, r)?)),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng_companion = ChaCha8Rng::seed_from_u64(config.seed);
    let columns =
        ["t", "x", "x_tilde", "target", "grad", "loss", "cum_loss", "movement", "wealth", "beta", "violations"];
    let mut trace = Trace::new(columns.iter().map(|c| c.to_string()).collect());
    let mut record = BettingRecord::new(learner.prediction());
    let mut cum = 0.0;
    let mut prev_x = 0.0;
    let mut gap: f64 = 0.0;
    for t in 1..=config.horizon {
        let state = learner.state().clone();
        let x = state.x;
        let g = olo_gradient(s, x, &mut rng);
        let loss = match s.stream {
            GradientStream::Target => (x - s.target).abs(),
            _ => g * x,
        };
        cum += loss;
        let before = tail_counter(&log);
        learner.update(g)?;
        if let Some(log) = log.as_deref_mut() {
            check_betting_step(log, &hyper, &state, learner.state());
        }
        record.push(g, learner.prediction());
        if let Some(c) = companion.as_mut() {
            let xc = c.prediction();
            gap = gap.max((xc - x).abs());
            let gc = olo_gradient(s, xc, &mut rng_companion);
            c.update(gc)?;
        }
        let new = learner.state();
        trace.push(vec![
            t as f64,
            x,
            state.x_tilde,
            s.target,
            g,
            loss,
            cum,
            (x - prev_x).abs(),
            new.wealth,
            state.beta,
            (tail_counter(&log) - before) as f64,
        ]);
        prev_x = x;
    }
    if let Some(log) = log {
        let horizons: Vec<usize> = std::iter::successors(Some(10usize), |h| Some(h * 10))
            .take_while(|&h| h < config.horizon)
            .chain([config.horizon])
            .collect();
        let top = if hyper.is_bounded() { hyper.radius } else { 10.0 };
        let grid: Vec<f64> = (0..=100).map(|i| top * i as f64 / 100.0).collect();
        record.check(log, &hyper, &horizons, &grid, &dyadic_windows(config.horizon));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("final_x".into(), learner.prediction());
    metrics.insert("final_wealth".into(), learner.state().wealth);
    metrics.insert("total_movement".into(), record.movement(1, config.horizon));
    if companion.is_some() {
        metrics.insert("radius_gap_sup".into(), gap);
    }
    Ok((trace, metrics))
}

/// `Σ_{h=0}^{H} ‖x_{t−h} − x*_t‖` with `x_s = 0` for `s ≤ 0`.
pub fn memory_loss(recent: &[Vector], x: &Vector, target: &Vector) -> f64 {
    recent.iter().map(|p| (p - target).norm()).sum::<f64>() + (x - target).norm()
}

pub fn ocom_config(horizon: usize, s: &OcomSetup) -> OcomConfig {
    let dim = s.target.dim();
    let mut cfg = OcomConfig::new(horizon, dim, s.domain.clone(), s.lipschitz, s.memory, s.grad_bound);
    cfg.eps0 = s.eps0;
    cfg.shifted = s.shifted;
    cfg.abridged = s.abridged;
    cfg
}

fn run_ocom(
    config: &ExperimentConfig,
    s: &OcomSetup,
    opts: &RunOptions,
    mut log: Option<&mut AuditLog>,
) -> Result<(Trace, BTreeMap<String, f64>)> {
    let cfg = ocom_config(config.horizon, s);
    let dim = cfg.dim;
    let mut meta = OcomMeta::new(cfg.clone())?;
    let mut auditor = log.is_some().then(|| MetaAuditor::new(&cfg.domain, dim, opts.grid(dim)));
    let columns: Vec<String> = std::iter::once("t".to_string())
        .chain(names("x", dim))
        .chain(names("target", dim))
        .chain(["loss", "cum_loss", "movement", "flushes", "violations"].map(String::from))
        .collect();
    let mut trace = Trace::new(columns);
    let weight = (s.memory + 1) as f64;
    let mut cum = 0.0;
    let mut prev = Vector::zeros(dim);
    for t in 1..=config.horizon {
        let recent = meta.recent_predictions();
        let x = meta.predict()?;
        let target = s.target.at(t);
        let loss = memory_loss(&recent, &x, &target);
        cum += loss;
        let g = norm_subgradient(&x, &target) * weight;
        let before = tail_counter(&log);
        meta.update(&g)?;
        if let (Some(a), Some(l)) = (auditor.as_mut(), log.as_deref_mut()) {
            a.observe(l, &meta);
        }
        let mut row = vec![t as f64];
        row.extend(x.iter());
        row.extend(target.iter());
        row.extend([
            loss,
            cum,
            (&x - &prev).norm(),
            meta.snapshot().flushes as f64,
            (tail_counter(&log) - before) as f64,
        ]);
        trace.push(row);
        prev = x;
    }
    if let (Some(a), Some(l)) = (auditor.as_mut(), log) {
        a.finish(l);
    }
    let losses = trace.column("loss")?;
    let mut metrics = BTreeMap::new();
    let q = config.horizon - config.horizon / 4;
    metrics.insert("mean_loss_last_quarter".into(), mean(&losses[q..]));
    metrics.insert("total_movement".into(), trace.column("movement")?.iter().sum());
    Ok((trace, metrics))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Mean of `xs[t]` over rounds `[t/2 : t]` (rounds are 1-based).
pub fn windowed_mean(xs: &[f64], t: usize) -> f64 {
    let lo = (t / 2).max(1);
    mean(&xs[lo - 1..t])
}

fn run_control(
    config: &ExperimentConfig,
    s: &ControlSetup,
    opts: &RunOptions,
    mut log: Option<&mut AuditLog>,
) -> Result<(Trace, BTreeMap<String, f64>)> {
    let system = &s.system;
    let (dx, du) = (system.state_dim(), system.input_dim());
    let mut constants = s.constants.clone();
    constants.horizon = config.horizon;
    let mut ctl = TrackingController::new(constants.clone(), dx, du, s.eps0, s.shifted)?;
    let loss = NormTrackingLoss::state_only(s.target.clone());
    let mut plant = Plant::new(system, constants.action_bound);
    let mut auditor = log.as_deref_mut().map(|l| ControlAuditor::new(l, &constants, system, opts.grid(du)));
    let columns: Vec<String> = std::iter::once("t".to_string())
        .chain(names("x", dx))
        .chain(names("u", du))
        .chain(names("target", dx))
        .chain(["loss", "cum_loss", "movement", "ideal_gap", "flushes", "violations"].map(String::from))
        .collect();
    let mut trace = Trace::new(columns);
    let mut cum = 0.0;
    let mut prev_u = Vector::zeros(du);
    let mut max_state: f64 = 0.0;
    for t in 1..=config.horizon {
        let u = ctl.begin_round(plant.state(), system)?;
        let r = ctl.end_round(&loss)?;
        let before = tail_counter(&log);
        if let (Some(a), Some(l)) = (auditor.as_mut(), log.as_deref_mut()) {
            a.observe(l, &r, system, ctl.ocom());
        }
        plant.step(&u)?;
        cum += r.loss;
        max_state = max_state.max(r.state.norm());
        let mut row = vec![t as f64];
        row.extend(r.state.iter());
        row.extend(u.iter());
        row.extend(s.target.at(t).iter());
        row.extend([
            r.loss,
            cum,
            (&u - &prev_u).norm(),
            (r.ideal_loss - r.loss).abs(),
            ctl.ocom().snapshot().flushes as f64,
            (tail_counter(&log) - before) as f64,
        ]);
        trace.push(row);
        prev_u = u;
    }
    let mut metrics = BTreeMap::new();
    if let (Some(a), Some(l)) = (auditor.as_mut(), log) {
        a.finish(l);
        if let Some(e) = a.effective() {
            metrics.insert("max_a_norm".into(), e.max_a);
            metrics.insert("max_b_norm".into(), e.max_b);
            metrics.insert("max_w_norm".into(), e.max_w);
        }
    }
    let losses = trace.column("loss")?;
    let t = config.horizon;
    for point in [t / 4, t / 2, t] {
        if point >= 1 {
            metrics.insert(format!("window_mean_{point}"), windowed_mean(&losses, point));
        }
    }
    metrics.insert("max_state_norm".into(), max_state);
    metrics.insert("memory".into(), constants.memory() as f64);
    Ok((trace, metrics))
}
