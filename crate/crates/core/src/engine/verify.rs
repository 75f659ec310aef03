//! Self-checks of the round loop against independent computations.
//!
//! Each check builds its own small problem, runs it, and reports a verdict
//! with the measured quantity. `verify_suite` runs them all.

use rand::Rng;

use super::{
    loglog_slope, prox_pair_closed_form, unsimplified_admm_round, Algorithm, ExperimentConfig,
    InitMode, ProblemSpec, ProtocolState, QuadraticSpec, Simulation, UnsimplifiedAdmmState,
    Workload,
};
use crate::algorithms::StepsizeSchedule;
use crate::attacks::{AttackKind, AttackSpec};
use crate::model::ModelVector;
use crate::rng::{stream, Stream};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }
}

const FLEET_CENTERS: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 5.0];
const FLEET_SCALES: [f64; 5] = [1.0, 0.5, 1.0, 2.0, 1.0];

/// Five heterogeneous two-dimensional quadratic workers plus `q` Byzantine
/// slots under a Gaussian dual attack, running ADMM with exact gradients.
///
/// The penalty is `1.5·λ₀` and the stepsizes follow the O(1/k) rule
/// `min{1/(ck + mβ), A}` and `min{1/(ck + β), A}` with `c` at 90% of its
/// admissible bound and `A` at its default cap.
pub fn quadratic_fleet(q: usize) -> Result<ExperimentConfig> {
    let mut centers: Vec<Vec<f64>> = FLEET_CENTERS
        .iter()
        .map(|&a| vec![a, 1.0 - 0.5 * a])
        .collect();
    let mut scales = FLEET_SCALES.to_vec();
    centers.extend((0..q).map(|_| vec![0.0, 0.0]));
    scales.extend((0..q).map(|_| 1.0));
    let m = FLEET_CENTERS.len() + q;
    let problem = QuadraticSpec {
        regularizer_center: vec![0.0, 0.0],
        regularizer_scale: 1.0,
        centers,
        scales,
        noise_std: 0.0,
    };
    let byzantine: Vec<usize> = (FLEET_CENTERS.len()..m).collect();
    let attack = if q == 0 {
        AttackSpec::none()
    } else {
        AttackSpec::new(AttackKind::Gaussian { std: 100.0 }, byzantine)
    };
    let spec = ProblemSpec::Quadratic(problem);
    let workload = Workload::build(&spec, m, 0)?;
    let regular = attack.regular_ids(m);
    let problem = workload.problem(&regular)?;
    let lambda_zero = problem.lambda_zero()?;
    let profile = problem
        .profile()
        .expect("quadratic problems have a profile");
    let c = 0.9 * profile.rate_constant_bound();
    let cap = profile.stepsize_cap();
    let beta = 1.0;
    Ok(ExperimentConfig {
        algorithm: Algorithm::Admm,
        attack,
        workers: m,
        lambda: 1.5 * lambda_zero,
        beta,
        master_schedule: StepsizeSchedule::inverse_k(c, m as f64 * beta).with_cap(cap),
        worker_schedule: StepsizeSchedule::inverse_k(c, beta).with_cap(cap),
        problem: spec,
        init: InitMode::LocalOptima,
        rounds: 100,
        eval_every: 1,
        seed: 7,
        reference: true,
        ergodic: false,
    })
}

/// Brute-force minimiser of the coupled prox objective: a grid over the box
/// spanned by the inputs, then compass search with axis and diagonal moves.
fn prox_brute_force(a1: f64, a2: f64, lambda: f64) -> (f64, f64) {
    let obj = |z1: f64, z2: f64| {
        lambda * (z1 - z2).abs() + 0.5 * (z1 - a1).powi(2) + 0.5 * (z2 - a2).powi(2)
    };
    let lo = a1.min(a2) - 1.0;
    let hi = a1.max(a2) + 1.0;
    let n = 120;
    let h = (hi - lo) / n as f64;
    let mut best = (lo, lo, obj(lo, lo));
    for i in 0..=n {
        for j in 0..=n {
            let (z1, z2) = (lo + i as f64 * h, lo + j as f64 * h);
            let f = obj(z1, z2);
            if f < best.2 {
                best = (z1, z2, f);
            }
        }
    }
    let dirs = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (1.0, -1.0),
        (-1.0, 1.0),
    ];
    let mut step = h;
    while step > 1e-14 {
        let mut moved = false;
        for (d1, d2) in dirs {
            let (z1, z2) = (best.0 + step * d1, best.1 + step * d2);
            let f = obj(z1, z2);
            if f < best.2 {
                best = (z1, z2, f);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (best.0, best.1)
}

/// Closed-form coupled prox against brute force over random triples.
pub fn check_prox(triples: usize) -> CheckOutcome {
    let mut rng = stream(11, Stream::Synthetic, 0, 0);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_sum = 0.0f64;
    for _ in 0..triples {
        let a1 = rng.random_range(-5.0..5.0);
        let a2 = rng.random_range(-5.0..5.0);
        let lambda = rng.random_range(0.0..3.0);
        let obj = |z1: f64, z2: f64| {
            lambda * (z1 - z2).abs() + 0.5 * (z1 - a1).powi(2) + 0.5 * (z2 - a2).powi(2)
        };
        let (z1, z2) = prox_pair_closed_form(a1, a2, lambda);
        let (b1, b2) = prox_brute_force(a1, a2, lambda);
        worst_gap = worst_gap.max(obj(z1, z2) - obj(b1, b2));
        worst_sum = worst_sum.max((z1 + z2 - a1 - a2).abs());
    }
    CheckOutcome::new(
        "prox-closed-form",
        worst_gap <= 1e-8 && worst_sum <= 1e-12,
        format!("{triples} triples, worst objective excess {worst_gap:.3e}, worst sum error {worst_sum:.3e}"),
    )
}

/// Reduced ADMM against the three-block form on the attack-free fleet.
pub fn check_equivalence(rounds: usize) -> Result<CheckOutcome> {
    let mut config = quadratic_fleet(0)?;
    config.rounds = rounds;
    let mut sim = Simulation::new(&config)?;
    let hp = *sim.hyper();
    let workload = sim.workload().clone();
    let ProtocolState::Admm { master, workers } = sim.state() else {
        unreachable!("fleet runs ADMM")
    };
    let mut full = UnsimplifiedAdmmState::new(
        master.x0.clone(),
        workers.iter().map(|w| w.x.clone()).collect(),
    );
    let mut worst = 0.0f64;
    let mut worst_dual_sum = 0.0f64;
    for k in 0..rounds {
        let grads: Vec<ModelVector> = full
            .x
            .iter()
            .zip(&workload.losses)
            .map(|(x, l)| l.exact_gradient(x))
            .collect::<Result<_>>()?;
        let g0 = workload.regularizer.exact_gradient(&full.x0)?;
        full = unsimplified_admm_round(
            &full,
            &grads,
            &g0,
            &config.master_schedule,
            &config.worker_schedule,
            &hp,
            k,
        )?;
        sim.run_round()?;
        let ProtocolState::Admm { master, workers } = sim.state() else {
            unreachable!("fleet runs ADMM")
        };
        worst = worst.max(master.x0.dist_inf(&full.x0));
        for (w, x) in workers.iter().zip(&full.x) {
            worst = worst.max(w.x.dist_inf(x));
        }
        for (a, b) in full.eta_i0.iter().zip(&full.eta_0i) {
            worst_dual_sum = worst_dual_sum.max(a.add(b).norm_inf());
        }
    }
    Ok(CheckOutcome::new(
        "reduced-vs-three-block",
        worst < 1e-9 && worst_dual_sum < 1e-12,
        format!("{rounds} rounds, max primal deviation {worst:.3e}, max |eta(i,0)+eta(0,i)| {worst_dual_sum:.3e}"),
    ))
}

/// One exact round started at the optimum with optimal duals.
pub fn check_fixed_point() -> Result<CheckOutcome> {
    let config = quadratic_fleet(0)?;
    let mut sim = Simulation::new(&config)?;
    let r = sim.reference().expect("fleet solves its reference").clone();
    let ProtocolState::Admm { master, workers } = sim.state_mut() else {
        unreachable!("fleet runs ADMM")
    };
    master.x0 = r.x_star.clone();
    master.received_curr = r.eta_star.clone();
    master.received_prev = r.eta_star.clone();
    for (w, es) in workers.iter_mut().zip(&r.eta_star) {
        w.x = r.x_star.clone();
        w.eta_curr = es.clone();
        w.eta_prev = es.clone();
    }
    let before = sim.state().clone();
    sim.run_round()?;
    let moved = state_distance(&before, sim.state());
    Ok(CheckOutcome::new(
        "optimality-fixed-point",
        moved < 1e-12,
        format!("lambda/lambda0 = 1.5, largest change {moved:.3e}"),
    ))
}

/// Largest coordinate change between two ADMM states.
pub fn state_distance(a: &ProtocolState, b: &ProtocolState) -> f64 {
    let (
        ProtocolState::Admm {
            master: ma,
            workers: wa,
        },
        ProtocolState::Admm {
            master: mb,
            workers: wb,
        },
    ) = (a, b)
    else {
        return f64::INFINITY;
    };
    let mut d = ma.x0.dist_inf(&mb.x0);
    for (x, y) in ma.received_curr.iter().zip(&mb.received_curr) {
        d = d.max(x.dist_inf(y));
    }
    for (x, y) in ma.received_prev.iter().zip(&mb.received_prev) {
        d = d.max(x.dist_inf(y));
    }
    for (x, y) in wa.iter().zip(wb) {
        d = d
            .max(x.x.dist_inf(&y.x))
            .max(x.eta_curr.dist_inf(&y.eta_curr))
            .max(x.eta_prev.dist_inf(&y.eta_prev));
    }
    d
}

/// Attack-free consensus for a penalty above and below the threshold, with
/// constant stepsizes so the exact-gradient run converges linearly.
pub fn check_penalty_threshold() -> Result<Vec<CheckOutcome>> {
    let base = quadratic_fleet(0)?;
    let lambda_zero = base.lambda / 1.5;
    let run = |lambda: f64| -> Result<super::MetricsRecord> {
        let mut c = base.clone();
        c.lambda = lambda;
        c.master_schedule = StepsizeSchedule::inverse_k(0.0, 1.0 / 0.05);
        c.worker_schedule = StepsizeSchedule::inverse_k(0.0, 1.0 / 0.2);
        c.rounds = 20_000;
        c.eval_every = c.rounds;
        Ok(super::run_experiment(&c)?.pop().expect("final record"))
    };
    let above = run(1.5 * lambda_zero)?;
    let gap = above.consensus_gap.unwrap_or(f64::INFINITY);
    let err = above.master_error.unwrap_or(f64::INFINITY);
    let below = run(lambda_zero / 10.0)?;
    let low_gap = below.consensus_gap.unwrap_or(0.0);
    Ok(vec![
        CheckOutcome::new(
            "consensus-above-threshold",
            gap < 1e-6 && err < 1e-10,
            format!("lambda = 1.5 lambda0: consensus gap {gap:.3e}, master error {err:.3e}"),
        ),
        CheckOutcome::new(
            "no-consensus-below-threshold",
            low_gap > 1e-3,
            format!("lambda = lambda0/10: consensus gap {low_gap:.3e}"),
        ),
    ])
}

/// `(k, Vᵏ)` for every round of a run.
pub fn lyapunov_series(config: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let mut c = config.clone();
    c.eval_every = 1;
    Ok(super::run_experiment(&c)?
        .into_iter()
        .filter_map(|r| r.lyapunov.map(|v| (r.k as f64, v)))
        .collect())
}

fn slope_over(series: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(k, _)| *k >= lo && *k <= hi)
        .collect();
    loglog_slope(&window)
}

/// Log-log slopes of `Vᵏ` for the attack-free fleet over `[10³, rounds]`
/// and for the attacked fleet over its final decade.
pub fn check_rate(rounds: usize) -> Result<Vec<CheckOutcome>> {
    let mut clean = quadratic_fleet(0)?;
    clean.rounds = rounds;
    let series = lyapunov_series(&clean)?;
    let slope = slope_over(&series, 1e3, rounds as f64).unwrap_or(f64::NAN);
    let mut attacked = quadratic_fleet(2)?;
    attacked.rounds = rounds;
    let series_q = lyapunov_series(&attacked)?;
    let tail = slope_over(&series_q, rounds as f64 / 10.0, rounds as f64).unwrap_or(f64::NAN);
    let floor = series_q.last().map(|p| p.1).unwrap_or(0.0);
    Ok(vec![
        CheckOutcome::new(
            "rate-attack-free",
            (-1.3..=-0.8).contains(&slope),
            format!("q = 0, slope of log V vs log k over [1e3, {rounds}] = {slope:.3}, target [-1.3, -0.8]"),
        ),
        CheckOutcome::new(
            "rate-attacked-plateau",
            (-0.2..=0.2).contains(&tail) && floor > 0.0,
            format!("q = 2 gaussian, final-decade slope = {tail:.3}, final V = {floor:.3e}, target [-0.2, 0.2] above 0"),
        ),
    ])
}

/// Dual box, master-influence bound and bit-identical reruns under attack.
pub fn check_bounds_and_determinism() -> Result<Vec<CheckOutcome>> {
    let mut worst_box = 0.0f64;
    let mut worst_drive = 0.0f64;
    let mut lambda_ratio_ok = true;
    for kind in [
        AttackKind::Gaussian { std: 100.0 },
        AttackKind::LargeValue,
        AttackKind::SmallValue { epsilon: 0.5 },
    ] {
        let mut config = ExperimentConfig::toy_scalar(Algorithm::Admm, kind);
        config.rounds = 2000;
        let lambda = config.lambda;
        let mut sim = Simulation::new(&config)?;
        for _ in 0..config.rounds {
            let msgs = sim.run_round()?;
            for u in msgs.uploads.iter().flatten() {
                worst_box = worst_box.max(u.norm_inf() / lambda);
            }
            let ProtocolState::Admm { master, workers } = sim.state() else {
                unreachable!("toy runs ADMM")
            };
            for (c, p) in master.received_curr.iter().zip(&master.received_prev) {
                let drive: ModelVector = c.iter().zip(p.iter()).map(|(c, p)| 2.0 * c - p).collect();
                worst_drive = worst_drive.max(drive.norm_inf() / lambda);
            }
            for w in workers {
                lambda_ratio_ok &= w.eta_curr.norm_inf() <= lambda;
            }
        }
    }
    let mut config =
        ExperimentConfig::toy_scalar(Algorithm::Rsa, AttackKind::Gaussian { std: 100.0 });
    config.rounds = 500;
    let a = super::run_experiment(&config)?;
    let b = super::run_experiment(&config)?;
    let identical = a.len() == b.len()
        && a.iter().zip(&b).all(|(x, y)| {
            x.master_error.map(f64::to_bits) == y.master_error.map(f64::to_bits)
                && x.consensus_gap.map(f64::to_bits) == y.consensus_gap.map(f64::to_bits)
        });
    Ok(vec![
        CheckOutcome::new(
            "dual-box",
            worst_box <= 1.0 && lambda_ratio_ok,
            format!("largest |eta|/lambda over uploads = {worst_box:.6}"),
        ),
        CheckOutcome::new(
            "master-influence",
            worst_drive <= 3.0,
            format!("largest |2 eta - eta_prev|/lambda = {worst_drive:.6}"),
        ),
        CheckOutcome::new(
            "determinism",
            identical,
            format!("{} records compared bit for bit", a.len()),
        ),
    ])
}

/// Every check, in a fixed order.
pub fn verify_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        check_prox(1000),
        check_equivalence(100)?,
        check_fixed_point()?,
    ];
    out.extend(check_penalty_threshold()?);
    out.extend(check_bounds_and_determinism()?);
    out.extend(check_rate(100_000)?);
    Ok(out)
}
