//! Reference computations used to check the round loop.

use crate::algorithms::{AdmmWorkerState, HyperParams, StepsizeSchedule};
use crate::data::Dataset;
use crate::model::{check_dim, ModelVector};
use crate::{Error, Result};

/// Fraction of rows whose highest class score equals the label.
///
/// `x` holds one weight vector per class, concatenated. Ties go to the
/// lowest class index.
pub fn top1_accuracy(x: &[f64], test: &Dataset) -> f64 {
    let nf = test.feature_count();
    let classes = test.class_count();
    debug_assert_eq!(x.len(), nf * classes);
    let correct = (0..test.len())
        .filter(|&i| {
            let f = test.row(i);
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..classes {
                let s: f64 = x[c * nf..(c + 1) * nf]
                    .iter()
                    .zip(f)
                    .map(|(a, b)| a * b)
                    .sum();
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0 == test.label(i)
        })
        .count();
    correct as f64 / test.len() as f64
}

/// `‖x₀ − x*‖² + Σᵢ (‖xᵢ − x*‖² + (2αᵢᵏ⁻¹/β)‖ηᵢᵏ⁻¹ − ηᵢ*‖²)`
///
/// `workers` and `eta_star` list the regular workers in the same order. At
/// `k = 0` the dual weight uses `αᵢ⁰`, since `αᵢ⁻¹` does not exist.
pub fn lyapunov(
    x0: &[f64],
    workers: &[&AdmmWorkerState],
    x_star: &[f64],
    eta_star: &[ModelVector],
    worker_schedule: &StepsizeSchedule,
    beta: f64,
    k: usize,
) -> Result<f64> {
    if workers.len() != eta_star.len() {
        return Err(Error::config(format!(
            "{} workers but {} optimal duals",
            workers.len(),
            eta_star.len()
        )));
    }
    check_dim("Lyapunov master", x_star.len(), x0.len())?;
    let weight = 2.0 * worker_schedule.at(k.saturating_sub(1)) / beta;
    let mut v = ModelVector::from(x0).dist_sq(x_star);
    for (st, es) in workers.iter().zip(eta_star) {
        check_dim("Lyapunov worker", x_star.len(), st.x.len())?;
        v += st.x.dist_sq(x_star) + weight * st.eta_prev.dist_sq(es);
    }
    Ok(v)
}

/// `Σ αˡ xˡ / Σ αˡ`
pub fn ergodic_average(history: &[(f64, ModelVector)]) -> Result<ModelVector> {
    let (_, first) = history
        .first()
        .ok_or_else(|| Error::config("ergodic average of an empty history"))?;
    let mut acc = ModelVector::zeros(first.len());
    let mut total = 0.0;
    for (a, x) in history {
        if !(*a > 0.0) {
            return Err(Error::config(format!("ergodic weight {a} is not positive")));
        }
        check_dim("ergodic point", acc.len(), x.len())?;
        acc.axpy(*a, x);
        total += a;
    }
    Ok(acc.scaled(1.0 / total))
}

/// Least-squares slope of `ln y` against `ln x` over points with positive
/// coordinates. `None` when fewer than two such points have distinct `x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Minimiser of `λ|z₁ − z₂| + ½(z₁ − a₁)² + ½(z₂ − a₂)²`.
///
/// The two coordinates move towards each other by at most `λ` each, so the
/// sum `z₁ + z₂ = a₁ + a₂` is preserved.
pub fn prox_pair_closed_form(a1: f64, a2: f64, lambda: f64) -> (f64, f64) {
    let shift = (0.5 * (a2 - a1)).clamp(-lambda, lambda);
    (a1 + shift, a2 - shift)
}

/// Three-block ADMM variables before the dual-only reduction.
///
/// `z_i0[i]` is the master-side copy on edge `i` and `z_0i[i]` the
/// worker-side copy; `eta_i0`/`eta_0i` are their multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsimplifiedAdmmState {
    pub x0: ModelVector,
    pub x: Vec<ModelVector>,
    pub z_i0: Vec<ModelVector>,
    pub z_0i: Vec<ModelVector>,
    pub eta_i0: Vec<ModelVector>,
    pub eta_0i: Vec<ModelVector>,
}

impl UnsimplifiedAdmmState {
    /// `z(0,i) = xᵢ`, `z(i,0) = x₀` and zero multipliers, which makes the
    /// first round coincide with the reduced form started from zero duals.
    pub fn new(x0: ModelVector, x: Vec<ModelVector>) -> Self {
        let d = x0.len();
        let m = x.len();
        UnsimplifiedAdmmState {
            z_i0: vec![x0.clone(); m],
            z_0i: x.clone(),
            eta_i0: vec![ModelVector::zeros(d); m],
            eta_0i: vec![ModelVector::zeros(d); m],
            x0,
            x,
        }
    }
}

/// One round of linearised three-block ADMM: primal steps, coordinate-wise
/// coupled prox on every edge, then dual ascent.
///
/// `grads[i]` is worker `i`'s gradient at its current `xᵢ`.
pub fn unsimplified_admm_round(
    state: &UnsimplifiedAdmmState,
    grads: &[ModelVector],
    grad_f0: &[f64],
    master_schedule: &StepsizeSchedule,
    worker_schedule: &StepsizeSchedule,
    hp: &HyperParams,
    k: usize,
) -> Result<UnsimplifiedAdmmState> {
    let m = state.x.len();
    if grads.len() != m {
        return Err(Error::config(format!(
            "{} gradients for {m} workers",
            grads.len()
        )));
    }
    let d = state.x0.len();
    check_dim("unsimplified master gradient", d, grad_f0.len())?;
    let beta = hp.beta;
    let alpha_0 = master_schedule.at(k);
    let alpha_i = worker_schedule.at(k);

    let mut drive0 = ModelVector::from(grad_f0);
    for i in 0..m {
        for t in 0..d {
            drive0[t] += beta * state.x0[t] - beta * state.z_i0[i][t] - state.eta_i0[i][t];
        }
    }
    let x0: ModelVector = state
        .x0
        .iter()
        .zip(drive0.iter())
        .map(|(x, g)| x - alpha_0 * g)
        .collect();

    let mut next = state.clone();
    next.x0 = x0;
    for (i, grad) in grads.iter().enumerate() {
        check_dim(&format!("unsimplified gradient {i}"), d, grad.len())?;
        let xi: ModelVector = (0..d)
            .map(|t| {
                let g =
                    grad[t] + beta * state.x[i][t] - beta * state.z_0i[i][t] - state.eta_0i[i][t];
                state.x[i][t] - alpha_i * g
            })
            .collect();
        for t in 0..d {
            let a1 = next.x0[t] - state.eta_i0[i][t] / beta;
            let a2 = xi[t] - state.eta_0i[i][t] / beta;
            let (z1, z2) = prox_pair_closed_form(a1, a2, hp.lambda / beta);
            next.z_i0[i][t] = z1;
            next.z_0i[i][t] = z2;
            next.eta_i0[i][t] = state.eta_i0[i][t] + beta * (z1 - next.x0[t]);
            next.eta_0i[i][t] = state.eta_0i[i][t] + beta * (z2 - xi[t]);
        }
        next.x[i] = xi;
    }
    Ok(next)
}
