//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is printed even when every
//! criterion passes. The process exits nonzero when a criterion fails that is
//! not listed in `KNOWN_FAILURES`.

use std::time::{Duration, Instant};

use adatrack::audit::{check_betting_step, AuditLog, BettingRecord, AUDIT_TOL};
use adatrack::betting::{solve_wealth, surrogate_grad_1d, BettingLearner, Hyper1d};
use adatrack::control::{ideal_loss_value_and_grad, NormTrackingLoss};
use adatrack::harness::{gc_sweep, memory_loss, run, RunOptions, Trace};
use adatrack::linalg::norm_subgradient;
use adatrack::meta::constrained_surrogate;
use adatrack::sim::{make_experiment, Setup, TargetSignal, EXPERIMENT_NAMES};
use adatrack::{Domain, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

/// Criteria that fail against the faithful implementation; see the README.
const KNOWN_FAILURES: [u32; 1] = [7];

/// Max regret/√|I| over GC intervals (|I| ≥ 32) of the first audited
/// ocom-step run at T = 20000.
const GOLDEN_OCOM_STEP_RATIO: f64 = 48.79642070243617;
const GOLDEN_OCOM_STEP_INTERVALS: usize = 1235;
/// Windowed mean tracking error of control-1d-step-undisturbed at
/// t = 5000, 10000, 20000, and the digest of its trace.
const GOLDEN_UNDISTURBED_MEANS: [f64; 3] = [0.10222759554361166, 0.11851465010664511, 0.12391462654147437];
const GOLDEN_UNDISTURBED_SHA256: &str = "1170f90bc26bf66e9ccbe17904ab92c74debf2bee6a6698f28b4be056a439f99";

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Bisection on the strictly decreasing residual of the wealth equation.
fn bisect_wealth(p: f64, g_tilde: f64, beta: f64, beta_next: f64, t: usize, h: &Hyper1d) -> f64 {
    let a = 1.0 - g_tilde * beta - h.gamma * beta / (t as f64).sqrt();
    let f = |w: f64| a * p - h.lambda * (beta * p - beta_next * w).abs() - w;
    let (mut lo, mut hi) = (0.0, 1.0 + 4.0 * (a + h.lambda * beta).abs() * p);
    assert!(f(lo) > 0.0 && f(hi) < 0.0, "bracket");
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_res, mut worst_gap, mut failures) = (0.0f64, 0.0f64, 0usize);
    for i in 0..100_000 {
        let h = Hyper1d::new(
            rng.gen_range(0.0..10.0),
            if i % 3 == 0 { 0.0 } else { rng.gen_range(0.0..10.0) },
            1.0,
            rng.gen_range(0.1..5.0),
            f64::INFINITY,
        )
        .unwrap();
        let t = log_uniform(&mut rng, 1.0, 1e6) as usize;
        let beta = if t == 1 { 0.0 } else { rng.gen_range(0.0..=h.fraction_cap(t - 1)) };
        let p = log_uniform(&mut rng, 1e-3, 1e3);
        let g = rng.gen_range(-h.grad_bound..=h.grad_bound);
        let beta_next = match i % 4 {
            0 => 0.0,
            1 => h.fraction_cap(t),
            // near the kink of the absolute value
            2 if beta > 0.0 => (beta * p / (p * (1.0 - g * beta))).min(h.fraction_cap(t)),
            _ => rng.gen_range(0.0..=h.fraction_cap(t)),
        };
        let Ok(w) = solve_wealth(p, g, beta, beta_next, t, &h) else {
            failures += 1;
            continue;
        };
        let a = 1.0 - g * beta - h.gamma * beta / (t as f64).sqrt();
        let res = (a * p - h.lambda * (beta * p - beta_next * w).abs() - w).abs() / w.max(1.0);
        let gap = (w - bisect_wealth(p, g, beta, beta_next, t, &h)).abs();
        worst_res = worst_res.max(res);
        worst_gap = worst_gap.max(gap);
        if res > 1e-12 || gap > 1e-10 {
            failures += 1;
        }
    }
    Outcome::new(
        failures == 0,
        format!(
            "1e5 tuples, {failures} failures, max scaled residual {worst_res:.2e}, max bisection gap {worst_gap:.2e}"
        ),
    )
}

/// Gradient stream `i` as a function of the round and current prediction.
fn stream_grad(kind: usize, rng: &mut ChaCha8Rng, x: f64, radius: f64, block_sign: &mut f64) -> f64 {
    match kind {
        0 => rng.gen_range(-1.0..=1.0),
        1 => {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
        // pushes the prediction back across the middle of the domain
        2 => {
            if x > 0.5 * radius {
                1.0
            } else {
                -1.0
            }
        }
        3 => {
            if rng.gen_bool(0.01) {
                *block_sign = -*block_sign;
            }
            *block_sign * rng.gen_range(0.5..=1.0)
        }
        _ => -rng.gen_range(0.0..=1.0) * if rng.gen_bool(0.9) { 1.0 } else { -1.0 },
    }
}

fn hyper_grid() -> Vec<Hyper1d> {
    let mut out = Vec::new();
    for lambda in [0.0, 1.0, 5.0] {
        let mut gammas = vec![0.0, lambda];
        gammas.dedup();
        for gamma in gammas {
            for radius in [1.0, 10.0] {
                out.push(Hyper1d::new(lambda, gamma, 1.0, 1.0, radius).unwrap());
            }
        }
    }
    out
}

const STREAMS: usize = 50;
const STREAM_LEN: usize = 5000;

/// Runs one stream and returns the per-step audit together with the record.
fn play_stream(h: &Hyper1d, stream: usize, windows: &mut Vec<(usize, usize)>) -> (AuditLog, BettingRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + stream as u64);
    let mut learner = BettingLearner::new(*h);
    let mut log = AuditLog::new();
    let mut record = BettingRecord::new(learner.prediction());
    let mut sign = 1.0;
    for _ in 0..STREAM_LEN {
        let g = stream_grad(stream % 5, &mut rng, learner.prediction(), h.radius, &mut sign);
        let prev = learner.state().clone();
        learner.update(g).unwrap();
        check_betting_step(&mut log, h, &prev, learner.state());
        record.push(g, learner.prediction());
    }
    windows.clear();
    for _ in 0..100 {
        let a = rng.gen_range(1..=STREAM_LEN);
        let b = rng.gen_range(a..=STREAM_LEN);
        windows.push((a, b));
    }
    (log, record)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let grid = hyper_grid();
    let results: Vec<(usize, u64)> = grid
        .par_iter()
        .flat_map(|h| (0..STREAMS).into_par_iter().map(move |s| (h, s)))
        .map(|(h, s)| {
            let mut windows = Vec::new();
            let (mut log, record) = play_stream(h, s, &mut windows);
            record.check(&mut log, h, &[], &[], &windows);
            (log.count(), log.checks())
        })
        .collect();
    let elapsed = start.elapsed();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let checks: u64 = results.iter().map(|r| r.1).sum();
    Outcome::new(
        violations == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{} hyperparameter sets x {STREAMS} streams, {checks} checks, {violations} violations, {:.1}s",
            grid.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let grid = hyper_grid();
    let results: Vec<(usize, u64, f64)> = grid
        .par_iter()
        .flat_map(|h| (0..STREAMS).into_par_iter().map(move |s| (h, s)))
        .map(|(h, s)| {
            let mut windows = Vec::new();
            let (_, record) = play_stream(h, s, &mut windows);
            let us: Vec<f64> = (0..=100).map(|i| h.radius * i as f64 / 100.0).collect();
            let mut log = AuditLog::new();
            record.check(&mut log, h, &[100, 1000, 5000], &us, &[]);
            let slack = us
                .iter()
                .map(|&u| record.cost_plus_movement(h, u, STREAM_LEN) - h.regret_bound(u, STREAM_LEN))
                .fold(f64::NEG_INFINITY, f64::max);
            (log.count(), log.checks(), slack)
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let checks: u64 = results.iter().map(|r| r.1).sum();
    let closest = results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    Outcome::new(
        violations == 0 && checks > 0,
        format!("{checks} (stream, u, T) checks, {violations} violations, largest LHS - RHS at T=5000 is {closest:.3}"),
    )
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vector {
    Vector::from_fn(dim, |_, _| rng.gen_range(-scale..=scale))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0usize;
    let slack = |x: f64| AUDIT_TOL * (1.0 + x.abs());
    for i in 0..20_000 {
        let dim = rng.gen_range(1..=4);
        let size = rng.gen_range(0.5..3.0);
        let domain = if i % 2 == 0 { Domain::cube(dim, size) } else { Domain::ball(size) };
        let x_tilde = random_vector(&mut rng, dim, 3.0 * size);
        let g = random_vector(&mut rng, dim, 5.0);
        let x = domain.project(&x_tilde);
        let gt = constrained_surrogate(&g, &x_tilde, &x);
        if gt.norm() > g.norm() + slack(g.norm()) {
            failures += 1;
        }
        for _ in 0..100 {
            let u = domain.project(&random_vector(&mut rng, dim, size));
            let rhs = gt.dot(&(&x_tilde - &u));
            if g.dot(&(&x - &u)) > rhs + slack(rhs) {
                failures += 1;
            }
        }
    }
    // the scalar reduction onto [0, r]
    for _ in 0..10_000 {
        let r: f64 = rng.gen_range(0.5..10.0);
        let x_tilde = rng.gen_range(-r..3.0 * r);
        let x = x_tilde.clamp(0.0, r);
        let g = rng.gen_range(-1.0..=1.0);
        let gt = surrogate_grad_1d(g, x_tilde, x);
        if gt.abs() > g.abs() {
            failures += 1;
        }
        for _ in 0..100 {
            let u = rng.gen_range(0.0..=r);
            let rhs = gt * (x_tilde - u);
            if g * (x - u) > rhs + slack(rhs) {
                failures += 1;
            }
        }
    }
    Outcome::new(failures == 0, format!("1e4 box and 1e4 ball samples, 1e4 interval samples, {failures} violations"))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn criterion_5() -> Outcome {
    let cfg = make_experiment("ocom-step").unwrap();
    let out = run(&cfg, &RunOptions { audit: true, audit_grid: Some(101) }).unwrap();
    let log = out.audit.expect("audited run");
    let Setup::Ocom(setup) = &cfg.setup else { unreachable!() };

    // ideal loss (H+1)·‖x − x*‖ of the memory loss against its gradient
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let step = 1e-6;
    let mut worst = 0.0f64;
    let mut samples = 0;
    while samples < 1000 {
        let t = rng.gen_range(1..=cfg.horizon);
        let target = setup.target.at(t);
        let x = random_vector(&mut rng, target.len(), 5.0);
        if (&x - &target).norm() < 1e-3 {
            continue;
        }
        let ideal = |y: &Vector| memory_loss(&vec![y.clone(); setup.memory], y, &target);
        let grad = norm_subgradient(&x, &target) * (setup.memory + 1) as f64;
        for i in 0..x.len() {
            let mut e = Vector::zeros(x.len());
            e[i] = step;
            let fd = (ideal(&(&x + &e)) - ideal(&(&x - &e))) / (2.0 * step);
            worst = worst.max(relative_gap(fd, grad[i]));
        }
        samples += 1;
    }
    // the controller's ideal loss u ↦ ‖M u + v − x*‖ in two dimensions
    let loss = NormTrackingLoss::state_only(TargetSignal::Circle { ramp: 10, turn: 100 });
    samples = 0;
    while samples < 1000 {
        let t = rng.gen_range(1..=200);
        let m = Matrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let v = random_vector(&mut rng, 2, 2.0);
        let u = random_vector(&mut rng, 2, 2.0);
        if (&m * &u + &v - loss.state_target.at(t)).norm() < 1e-3 {
            continue;
        }
        let (_, grad) = ideal_loss_value_and_grad(&u, &m, &v, &loss, t, 10.0).unwrap();
        for i in 0..2 {
            let mut e = Vector::zeros(2);
            e[i] = step;
            let f = |w: &Vector| ideal_loss_value_and_grad(w, &m, &v, &loss, t, 10.0).unwrap().0;
            let fd = (f(&(&u + &e)) - f(&(&u - &e))) / (2.0 * step);
            if grad[i].abs() > 1e-6 {
                worst = worst.max(relative_gap(fd, grad[i]));
            }
        }
        samples += 1;
    }
    let clean = log.count() == 0;
    Outcome::new(
        clean && worst <= 1e-6,
        format!(
            "{} audit checks on ocom-step, {} violations; worst finite-difference gap {worst:.2e}",
            log.checks(),
            log.count()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut ratios = Vec::new();
    let mut digests = Vec::new();
    let mut counts = Vec::new();
    for seed in 1..=5 {
        let mut cfg = make_experiment("ocom-step").unwrap();
        cfg.seed = seed;
        let out = run(&cfg, &RunOptions::audited()).unwrap();
        let report = gc_sweep(&out.trace, &cfg, 32, 101).unwrap();
        ratios.push(report.max_ratio);
        counts.push(report.intervals.len());
        digests.push(sha256_hex(out.trace.to_csv_string().unwrap().as_bytes()));
    }
    let within = ratios.iter().all(|r| (r - GOLDEN_OCOM_STEP_RATIO).abs() <= 0.2 * GOLDEN_OCOM_STEP_RATIO);
    let exact = ratios.iter().all(|r| r.to_bits() == GOLDEN_OCOM_STEP_RATIO.to_bits())
        && digests.iter().all(|d| *d == digests[0]);
    let counted = counts.iter().all(|&c| c == GOLDEN_OCOM_STEP_INTERVALS);
    Outcome::new(
        within && exact && counted,
        format!(
            "max regret/sqrt|I| over {} intervals: {:?} (golden {GOLDEN_OCOM_STEP_RATIO}), exact reruns: {exact}",
            counts[0], ratios
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = make_experiment("control-1d-step-undisturbed").unwrap();
    let out = run(&cfg, &RunOptions::default()).unwrap();
    let means: Vec<f64> = ["window_mean_5000", "window_mean_10000", "window_mean_20000"]
        .iter()
        .map(|k| out.summary.metrics[*k])
        .collect();
    let golden = means.iter().zip(GOLDEN_UNDISTURBED_MEANS).all(|(a, b)| a.to_bits() == b.to_bits());
    let digest = sha256_hex(out.trace.to_csv_string().unwrap().as_bytes());
    let byte_exact = digest == GOLDEN_UNDISTURBED_SHA256;
    let monotone = means.windows(2).all(|w| w[1] < w[0]);
    let final_ok = means[2] <= 0.15;

    let mut bounds = Vec::new();
    for name in ["control-1d-step", "control-1d-square", "control-1d-sine", "control-1d-composite", "control-2d-circle"]
    {
        let cfg = make_experiment(name).unwrap();
        let log = run(&cfg, &RunOptions::audited()).unwrap().audit.expect("audited run");
        bounds.push((name, log.count()));
    }
    let bounds_ok = bounds.iter().all(|b| b.1 == 0);
    Outcome::new(
        golden && byte_exact && monotone && final_ok && bounds_ok,
        format!(
            "windowed means {:.4} / {:.4} / {:.4}: monotone decrease {monotone}, final <= 0.15 {final_ok}, \
             golden match {}; disturbed audits {:?}",
            means[0],
            means[1],
            means[2],
            golden && byte_exact,
            bounds
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mismatched: Vec<&str> = EXPERIMENT_NAMES
        .par_iter()
        .filter(|name| {
            let cfg = make_experiment(name).unwrap();
            let bytes = |out: Trace| out.to_csv_string().unwrap();
            let a = bytes(run(&cfg, &RunOptions::default()).unwrap().trace);
            let b = bytes(run(&cfg, &RunOptions::default()).unwrap().trace);
            a != b
        })
        .copied()
        .collect();
    let elapsed = start.elapsed();
    Outcome::new(
        mismatched.is_empty(),
        format!(
            "{} configs run twice in {:.1}s, mismatches: {:?}",
            EXPERIMENT_NAMES.len(),
            elapsed.as_secs_f64(),
            mismatched
        ),
    )
}

fn main() {
    let start = Instant::now();
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut unexpected = Vec::new();
    for (id, check) in criteria {
        let t0 = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(&id) { " [known failure]" } else { "" };
        println!("criterion {id}: {status}{note} ({:.1}s) {}", t0.elapsed().as_secs_f64(), o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    let total = start.elapsed();
    let within = total < Duration::from_secs(600);
    println!("suite runtime {:.1}s (limit 600s): {}", total.as_secs_f64(), if within { "PASS" } else { "FAIL" });
    if !unexpected.is_empty() || !within {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
