//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs every criterion even when an earlier one fails and exits non-zero if
//! any of them failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use byzadmm::algorithms::{aggregate, AggregationRule};
use byzadmm::attacks::{AttackKind, AttackSpec};
use byzadmm::cli::{self, Overrides};
use byzadmm::data::{self, Dataset};
use byzadmm::engine::verify::{
    check_bounds_and_determinism, check_equivalence, check_fixed_point, check_prox, check_rate,
};
use byzadmm::engine::{
    run_experiment, Algorithm, DataSource, ExperimentConfig, InitMode, MetricsRecord,
    PartitionMode, ProblemSpec, ProtocolState, Simulation, SoftmaxSpec, Workload,
};
use byzadmm::model::{LossModel, SoftmaxLoss};
use byzadmm::ModelVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Invariant = fn() -> Result<String, String>;
type Criterion = fn() -> Verdict;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Scalar three-worker run written out by hand: worker 2 is Byzantine,
/// `f₀ = x²/2`, `Fᵢ = (x − 1)²/4`, penalty ½, dual stepsize 1.
/// Returns `(x₀, [x₀ of worker 0, worker 1])` after `rounds` rounds.
fn toy_scalar_oracle(admm: bool, small_value: bool, rounds: usize) -> (f64, [f64; 2]) {
    let (lam, beta, eps) = (0.5, 1.0, 0.5);
    let a0 = |k: usize| 1.0 / (k as f64 / 8.0 + 3.0);
    let ai = |k: usize| 1.0 / (k as f64 / 8.0 + 1.0);
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let forged = |x0: f64, k: usize| {
        let k = k as f64;
        if small_value {
            x0 - eps / (k * (k + 1.0)).max(1.0)
        } else {
            let sign = if (k as usize).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            x0 - 4.0 * lam / beta * sign
        }
    };
    let mut x0 = 0.0;
    let mut x = [1.0, 1.0];
    let mut eta = [0.0; 3];
    let mut prev = [0.0; 3];
    for k in 0..rounds {
        if admm {
            let drive: f64 = (0..3).map(|j| 2.0 * eta[j] - prev[j]).sum();
            let x0n = x0 - a0(k) * (x0 - drive);
            let mut next = [0.0; 3];
            for i in 0..2 {
                let xn = x[i] - ai(k) * (0.5 * (x[i] - 1.0) + 2.0 * eta[i] - prev[i]);
                next[i] = (eta[i] + beta / 2.0 * (xn - x0n)).clamp(-lam, lam);
                x[i] = xn;
            }
            next[2] = (eta[2] + beta / 2.0 * (forged(x0n, k + 1) - x0n)).clamp(-lam, lam);
            prev = eta;
            eta = next;
            x0 = x0n;
        } else {
            let v = [x[0], x[1], forged(x0, k)];
            let pull: f64 = v.iter().map(|&u| sgn(u - x0)).sum();
            for xi in &mut x {
                *xi -= ai(k) * (0.5 * (*xi - 1.0) + lam * sgn(*xi - x0));
            }
            x0 -= a0(k) * (x0 - lam * pull);
        }
    }
    (x0, x)
}

fn criterion_1() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut total = Duration::ZERO;
    let mut finals = std::collections::BTreeMap::new();
    for (file, small) in [
        ("toy_large_value.toml", false),
        ("toy_small_value.toml", true),
    ] {
        let cfg = match cli::load_config_file(configs_dir().join(file), &Overrides::default()) {
            Ok(c) => c,
            Err(e) => return Verdict::new(false, format!("{file}: {e}")),
        };
        for alg in [Algorithm::Admm, Algorithm::Rsa] {
            let exp = cfg.experiment(alg);
            let (run, dt) = timed(|| -> byzadmm::Result<(MetricsRecord, f64, [f64; 2])> {
                let mut sim = Simulation::new(&exp)?;
                let last = sim.run_to_end()?.pop().expect("records");
                let x0 = sim.state().x0()[0];
                let xs = [
                    sim.state().worker_x(0).unwrap()[0],
                    sim.state().worker_x(1).unwrap()[0],
                ];
                Ok((last, x0, xs))
            });
            total += dt;
            let (last, x0, xs) = match run {
                Ok(r) => r,
                Err(e) => return Verdict::new(false, format!("{alg} {file}: {e}")),
            };
            let (ox0, oxs) = toy_scalar_oracle(alg == Algorithm::Admm, small, exp.rounds);
            let dev = (x0 - ox0)
                .abs()
                .max((xs[0] - oxs[0]).abs())
                .max((xs[1] - oxs[1]).abs());
            let gap = last.consensus_gap.unwrap_or(f64::NAN);
            let err = last.master_error.unwrap_or(f64::NAN);
            ok &= dev < 1e-9 && gap < 0.05;
            if !small {
                ok &= (x0 - 0.5).abs() < 0.05;
            }
            notes.push(format!(
                "{}/{}: x0={x0:.6} err={err:.3e} gap={gap:.3e} oracle-dev={dev:.1e}",
                alg,
                if small { "small" } else { "large" }
            ));
            finals.insert((alg, small), err);
        }
    }
    let ordering = finals[&(Algorithm::Admm, true)] < finals[&(Algorithm::Rsa, true)];
    ok &= ordering && total < Duration::from_secs(1);
    Verdict::new(
        ok,
        format!(
            "{}; small-value ADMM error < RSA error: {ordering}; {:.3}s",
            notes.join("; "),
            total.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let (out, dt) = timed(|| check_equivalence(100));
    match out {
        Ok(c) => Verdict::new(
            c.passed && dt < Duration::from_millis(100),
            format!("{}; {:.4}s", c.detail, dt.as_secs_f64()),
        ),
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

fn criterion_3() -> Verdict {
    let c = check_prox(1000);
    Verdict::new(c.passed, c.detail)
}

fn criterion_4() -> Verdict {
    match check_fixed_point() {
        Ok(c) => Verdict::new(c.passed, c.detail),
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

fn criterion_5() -> Verdict {
    let (out, dt) = timed(|| check_rate(100_000));
    match out {
        Ok(checks) => Verdict::new(
            checks.iter().all(|c| c.passed) && dt < Duration::from_secs(10),
            format!(
                "{}; {:.2}s",
                checks
                    .iter()
                    .map(|c| c.detail.clone())
                    .collect::<Vec<_>>()
                    .join("; "),
                dt.as_secs_f64()
            ),
        ),
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

fn final_accuracies(file: &str, roster: &[Algorithm]) -> byzadmm::Result<Vec<(Algorithm, f64)>> {
    let cfg = cli::load_config_file(configs_dir().join(file), &Overrides::default())?;
    let base = &cfg.base;
    let workload = Arc::new(Workload::build(&base.problem, base.workers, base.seed)?);
    roster
        .iter()
        .map(|&alg| {
            let last = Simulation::with_workload(&cfg.experiment(alg), workload.clone())?
                .run_to_end()?
                .pop()
                .expect("records");
            Ok((alg, last.top1_accuracy.unwrap_or(f64::NAN)))
        })
        .collect()
}

fn format_acc(acc: &[(Algorithm, f64)]) -> String {
    acc.iter()
        .map(|(a, v)| format!("{a}={v:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_6() -> Verdict {
    let roster = [
        Algorithm::IdealSgd,
        Algorithm::Admm,
        Algorithm::Rsa,
        Algorithm::Sgd(AggregationRule::GeometricMedian),
        Algorithm::Sgd(AggregationRule::Mean),
    ];
    let (out, dt) = timed(|| final_accuracies("mnist_gaussian.toml", &roster));
    let acc = match out {
        Ok(a) => a,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let ideal = acc[0].1;
    let close = acc[1..4].iter().all(|(_, a)| (a - ideal).abs() <= 0.05);
    let mean_fails = ideal - acc[4].1 >= 0.20;
    Verdict::new(
        close && mean_fails && dt < Duration::from_secs(120),
        format!(
            "{}; robust within 0.05 of ideal: {close}; mean >= 0.20 below: {mean_fails}; {:.1}s",
            format_acc(&acc),
            dt.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Verdict {
    let roster = [
        Algorithm::Admm,
        Algorithm::Sgd(AggregationRule::CoordinateMedian),
    ];
    let (out, dt) = timed(|| final_accuracies("mnist_digit_pairs.toml", &roster));
    let acc = match out {
        Ok(a) => a,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let ok = acc[0].1 > 0.45 && acc[1].1 < 0.3;
    Verdict::new(
        ok && dt < Duration::from_secs(120),
        format!("{}; {:.1}s", format_acc(&acc), dt.as_secs_f64()),
    )
}

fn synthetic_softmax(algorithm: Algorithm, attack: AttackSpec, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::toy_scalar(algorithm, AttackKind::None);
    c.attack = attack;
    c.workers = 8;
    c.master_schedule = byzadmm::algorithms::StepsizeSchedule::inverse_sqrt_k(5.0, 5.0);
    c.worker_schedule = byzadmm::algorithms::StepsizeSchedule::inverse_sqrt_k(1.0, 5.0);
    c.problem = ProblemSpec::Softmax(SoftmaxSpec {
        source: DataSource::Synthetic {
            classes: 4,
            features: 6,
            per_class: 60,
            spread: 1.5,
            test_fraction: 0.25,
        },
        partition: PartitionMode::Iid,
        batch_size: Some(8),
        regularization: 0.01,
        train_cap: None,
        test_cap: None,
    });
    c.init = InitMode::Zeros;
    c.rounds = 300;
    c.eval_every = 25;
    c.seed = seed;
    c.reference = false;
    c
}

/// Upload box and master drive bound on a stochastic softmax run.
fn invariant_bounds() -> Result<String, String> {
    let mut worst_box = 0.0f64;
    let mut worst_drive = 0.0f64;
    for kind in [
        AttackKind::Gaussian { std: 100.0 },
        AttackKind::SignFlip { epsilon: -4.0 },
        AttackKind::LargeValue,
        AttackKind::CopyRegular { target: 0 },
    ] {
        let config = synthetic_softmax(Algorithm::Admm, AttackSpec::new(kind, [5, 6, 7]), 11);
        let lambda = config.lambda;
        let mut sim = Simulation::new(&config).map_err(|e| e.to_string())?;
        for _ in 0..config.rounds {
            let msgs = sim.run_round().map_err(|e| e.to_string())?;
            for u in msgs.uploads.iter().flatten() {
                worst_box = worst_box.max(u.norm_inf() / lambda);
            }
            let ProtocolState::Admm { master, .. } = sim.state() else {
                return Err("ADMM run without ADMM state".into());
            };
            for (c, p) in master.received_curr.iter().zip(&master.received_prev) {
                for (c, p) in c.iter().zip(p.iter()) {
                    worst_drive = worst_drive.max((2.0 * c - p).abs() / lambda);
                }
            }
        }
    }
    if worst_box > 1.0 || worst_drive > 3.0 {
        return Err(format!(
            "|eta|/lambda = {worst_box}, |2eta - eta_prev|/lambda = {worst_drive}"
        ));
    }
    let lib = check_bounds_and_determinism().map_err(|e| e.to_string())?;
    if let Some(bad) = lib.iter().find(|c| !c.passed) {
        return Err(format!("{}: {}", bad.name, bad.detail));
    }
    Ok(format!(
        "box {worst_box:.3} lambda, drive {worst_drive:.3} lambda"
    ))
}

fn invariant_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for alg in Algorithm::ROSTER {
        let attack = match alg {
            Algorithm::Sgd(_) | Algorithm::IdealSgd => {
                AttackSpec::new(AttackKind::Gaussian { std: 10.0 }, [6, 7])
            }
            _ => AttackSpec::new(AttackKind::SmallValue { epsilon: 0.5 }, [6, 7]),
        };
        let config = synthetic_softmax(alg, attack, 5);
        for run in 0..2 {
            let recs = run_experiment(&config).map_err(|e| e.to_string())?;
            let path = dir.path().join(format!("{alg}-{run}.csv"));
            cli::emit_metrics(&recs, &path).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if bytes[bytes.len() - 1] != bytes[bytes.len() - 2] {
            return Err(format!("{alg} reruns differ"));
        }
    }
    Ok(format!("{} runs byte-identical in pairs", bytes.len()))
}

fn invariant_parsers() -> Result<String, String> {
    let (train, _) = data::load_mnist_dir(cli::bundled_mnist_dir()).map_err(|e| e.to_string())?;
    let (images, labels) = data::write_idx(&train).map_err(|e| e.to_string())?;
    let back = data::parse_idx(&images, &labels).map_err(|e| e.to_string())?;
    if back != train {
        return Err("IDX round trip changed the dataset".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, nf) = (40, 7);
    let feats: Vec<f64> = (0..n * nf)
        .map(|_| {
            if rng.random_bool(0.4) {
                rng.random_range(-5.0..5.0)
            } else {
                0.0
            }
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let ds = Dataset::new(feats, labels, 3).map_err(|e| e.to_string())?;
    let mut text = String::new();
    for i in 0..ds.len() {
        text.push_str(&(ds.label(i) + 1).to_string());
        for (j, v) in ds.row(i).iter().enumerate() {
            if *v != 0.0 {
                text.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        text.push('\n');
    }
    let parsed = data::parse_libsvm(&text, nf).map_err(|e| e.to_string())?;
    if parsed != ds {
        return Err("LIBSVM round trip changed the dataset".into());
    }
    Ok(format!(
        "IDX {} rows, LIBSVM {} rows",
        train.len(),
        ds.len()
    ))
}

fn invariant_weiszfeld() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n = 2 * (trial % 10) + 1;
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let pts: Vec<ModelVector> = xs.iter().map(|&x| ModelVector::from(vec![x])).collect();
        let gm = aggregate(AggregationRule::GeometricMedian, &pts).map_err(|e| e.to_string())?;
        xs.sort_by(f64::total_cmp);
        worst = worst.max((gm[0] - xs[n / 2]).abs());
    }
    if worst > 1e-6 {
        return Err(format!("largest deviation from the 1-d median {worst:.3e}"));
    }
    Ok(format!("200 odd-sized sets, worst deviation {worst:.1e}"))
}

fn softmax_fixture() -> Result<LossModel, String> {
    let ds = data::synthetic_blobs(3, 4, 3, 1.0, 9).map_err(|e| e.to_string())?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    Ok(LossModel::Softmax(
        SoftmaxLoss::new(Arc::new(ds), rows).map_err(|e| e.to_string())?,
    ))
}

fn invariant_gradients() -> Result<String, String> {
    let loss = softmax_fixture()?;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x: Vec<f64> = (0..loss.dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let g = loss.exact_gradient(&x).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for t in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up[t] += h;
        down[t] -= h;
        let fd = (loss.value(&up).map_err(|e| e.to_string())?
            - loss.value(&down).map_err(|e| e.to_string())?)
            / (2.0 * h);
        worst = worst.max((fd - g[t]).abs());
    }
    let quad = LossModel::quadratic(vec![1.0, -2.0], 0.75);
    let qg = quad
        .exact_gradient(&[0.0, 0.0])
        .map_err(|e| e.to_string())?;
    if worst > 1e-7 || (qg[0] + 0.75).abs() > 1e-15 || (qg[1] - 1.5).abs() > 1e-15 {
        return Err(format!("worst central-difference error {worst:.3e}"));
    }
    Ok(format!("worst central-difference error {worst:.1e}"))
}

/// Average of the batch gradient over every ordered batch with replacement.
fn invariant_unbiased() -> Result<String, String> {
    let loss = softmax_fixture()?;
    let x: Vec<f64> = (0..loss.dim()).map(|t| 0.1 * t as f64 - 0.5).collect();
    let exact = loss.exact_gradient(&x).map_err(|e| e.to_string())?;
    let n = loss.sample_count();
    let mut worst = 0.0f64;
    for b in 1..=2 {
        let total = n.pow(b as u32);
        let mut acc = ModelVector::zeros(x.len());
        for code in 0..total {
            let batch: Vec<usize> = (0..b).map(|p| code / n.pow(p as u32) % n).collect();
            let g = loss
                .stochastic_gradient(&x, &batch)
                .map_err(|e| e.to_string())?;
            acc.axpy(1.0 / total as f64, &g);
        }
        worst = worst.max(acc.dist_inf(&exact));
    }
    if worst > 1e-12 {
        return Err(format!(
            "enumerated mean differs from the exact gradient by {worst:.3e}"
        ));
    }
    Ok(format!(
        "batch sizes 1 and 2 over {n} rows, worst {worst:.1e}"
    ))
}

fn criterion_8() -> Verdict {
    let parts: [(&str, Invariant); 6] = [
        ("bounds", invariant_bounds),
        ("determinism", invariant_determinism),
        ("parsers", invariant_parsers),
        ("weiszfeld", invariant_weiszfeld),
        ("gradients", invariant_gradients),
        ("unbiased", invariant_unbiased),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, f) in parts {
        match f() {
            Ok(d) => notes.push(format!("{name} ok ({d})")),
            Err(d) => {
                ok = false;
                notes.push(format!("{name} FAILED ({d})"));
            }
        }
    }
    Verdict::new(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("criterion-1 toy scalar attacks", criterion_1),
        ("criterion-2 reduced vs three-block ADMM", criterion_2),
        ("criterion-3 coupled prox", criterion_3),
        ("criterion-4 optimality fixed point", criterion_4),
        ("criterion-5 Lyapunov rate", criterion_5),
        ("criterion-6 MNIST gaussian ordering", criterion_6),
        ("criterion-7 MNIST digit-pair ordering", criterion_7),
        ("criterion-8 invariant suites", criterion_8),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let v = f();
        println!(
            "{} {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
