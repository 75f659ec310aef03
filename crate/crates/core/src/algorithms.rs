//! Per-round update rules.
//!
//! Three families share this module:
//!
//! * simplified stochastic ADMM: the worker primal step, the box-projected
//!   dual step and the master step, where the master only ever sees duals;
//! * RSA: subgradient steps on the TV-penalised objective, where the master
//!   sees primals through the element-wise sign;
//! * aggregation SGD: the master combines raw gradients by a robust rule.
//!
//! All functions here are pure. State is advanced by the engine.

use serde::{Deserialize, Serialize};

use crate::model::{check_dim, ModelVector};
use crate::{Error, Result};

/// Clamp every coordinate of `v` into `[-lambda, lambda]`.
pub fn proj_box(v: &[f64], lambda: f64) -> ModelVector {
    v.iter().map(|x| x.clamp(-lambda, lambda)).collect()
}

/// Element-wise sign with `sgn(0) = 0`.
pub fn elementwise_sign(v: &[f64]) -> ModelVector {
    v.iter()
        .map(|&x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// TV weight, dual stepsize and worker census.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda: f64,
    pub beta: f64,
    pub m: usize,
    pub r: usize,
    pub q: usize,
}

impl HyperParams {
    pub fn new(lambda: f64, beta: f64, m: usize, q: usize) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0 (got {lambda})")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(format!("beta must be > 0 (got {beta})")));
        }
        if q > m {
            return Err(Error::config(format!("q = {q} exceeds m = {m}")));
        }
        Ok(HyperParams {
            lambda,
            beta,
            m,
            r: m - q,
            q,
        })
    }
}

/// Diminishing stepsize rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepsizeSchedule {
    /// `min{1/(c·k + offset), cap}`
    InverseK {
        c: f64,
        offset: f64,
        #[serde(default = "infinite")]
        cap: f64,
    },
    /// `1/(a + b·√k)`
    InverseSqrtK { a: f64, b: f64 },
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl StepsizeSchedule {
    pub fn inverse_k(c: f64, offset: f64) -> Self {
        StepsizeSchedule::InverseK {
            c,
            offset,
            cap: f64::INFINITY,
        }
    }

    pub fn inverse_sqrt_k(a: f64, b: f64) -> Self {
        StepsizeSchedule::InverseSqrtK { a, b }
    }

    pub fn with_cap(self, cap: f64) -> Self {
        match self {
            StepsizeSchedule::InverseK { c, offset, .. } => {
                StepsizeSchedule::InverseK { c, offset, cap }
            }
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepsizeSchedule::InverseK { c, offset, cap } => {
                c >= 0.0 && offset >= 0.0 && cap > 0.0 && (offset > 0.0 || cap.is_finite())
            }
            StepsizeSchedule::InverseSqrtK { a, b } => a > 0.0 && b >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "stepsize schedule {self:?} is not strictly positive for all k"
            )))
        }
    }

    /// Stepsize for round `k`.
    pub fn at(&self, k: usize) -> f64 {
        stepsize(self, k)
    }
}

pub fn stepsize(schedule: &StepsizeSchedule, k: usize) -> f64 {
    let k = k as f64;
    match *schedule {
        StepsizeSchedule::InverseK { c, offset, cap } => (1.0 / (c * k + offset)).min(cap),
        StepsizeSchedule::InverseSqrtK { a, b } => 1.0 / (a + b * k.sqrt()),
    }
}

/// Primal, current dual and previous dual of one ADMM worker.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmWorkerState {
    pub x: ModelVector,
    pub eta_curr: ModelVector,
    pub eta_prev: ModelVector,
}

impl AdmmWorkerState {
    /// Duals start at zero, which lies in the box for any λ.
    pub fn new(x: ModelVector) -> Self {
        let d = x.len();
        AdmmWorkerState {
            x,
            eta_curr: ModelVector::zeros(d),
            eta_prev: ModelVector::zeros(d),
        }
    }

    /// `2ηᵏ − ηᵏ⁻¹`
    pub fn dual_drive(&self) -> ModelVector {
        dual_drive(&self.eta_curr, &self.eta_prev)
    }

    /// Install the round's outcome: new primal, and the new dual shifted in.
    pub fn advance(&mut self, x_new: ModelVector, eta_new: ModelVector) {
        self.x = x_new;
        self.eta_prev = std::mem::replace(&mut self.eta_curr, eta_new);
    }
}

fn dual_drive(curr: &[f64], prev: &[f64]) -> ModelVector {
    curr.iter().zip(prev).map(|(c, p)| 2.0 * c - p).collect()
}

/// `xᵢ − αᵢ(g + 2ηᵢᵏ − ηᵢᵏ⁻¹)`
pub fn admm_worker_step(
    state: &AdmmWorkerState,
    grad: &[f64],
    alpha_i: f64,
) -> Result<ModelVector> {
    check_dim("ADMM worker gradient", state.x.len(), grad.len())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            round: 0,
            worker: None,
        });
    }
    Ok(state
        .x
        .iter()
        .zip(grad)
        .zip(state.eta_curr.iter().zip(state.eta_prev.iter()))
        .map(|((x, g), (c, p))| x - alpha_i * (g + 2.0 * c - p))
        .collect())
}

/// `proj_λ(ηᵢᵏ + (β/2)(xᵢᵏ⁺¹ − x₀ᵏ⁺¹))`
pub fn admm_dual_step(
    state: &AdmmWorkerState,
    x_new: &[f64],
    x0_new: &[f64],
    hp: &HyperParams,
) -> Result<ModelVector> {
    dual_update(&state.eta_curr, x_new, x0_new, hp)
}

/// The dual recursion shared by honest workers and value-attack adversaries.
pub(crate) fn dual_update(
    eta: &[f64],
    x_new: &[f64],
    x0_new: &[f64],
    hp: &HyperParams,
) -> Result<ModelVector> {
    check_dim("ADMM dual primal", eta.len(), x_new.len())?;
    check_dim("ADMM dual master", eta.len(), x0_new.len())?;
    let half = 0.5 * hp.beta;
    Ok(eta
        .iter()
        .zip(x_new.iter().zip(x0_new))
        .map(|(e, (x, x0))| (e + half * (x - x0)).clamp(-hp.lambda, hp.lambda))
        .collect())
}

/// One message slot per worker for a synchronous round.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbox {
    slots: Vec<Option<ModelVector>>,
}

impl Inbox {
    pub fn new(workers: usize) -> Self {
        Inbox {
            slots: vec![None; workers],
        }
    }

    pub fn workers(&self) -> usize {
        self.slots.len()
    }

    pub fn deliver(&mut self, worker: usize, message: ModelVector) -> Result<()> {
        let slot = self
            .slots
            .get_mut(worker)
            .ok_or_else(|| Error::Protocol(format!("message from unknown worker {worker}")))?;
        if slot.is_some() {
            return Err(Error::Protocol(format!(
                "worker {worker} sent twice in one round"
            )));
        }
        *slot = Some(message);
        Ok(())
    }

    /// All messages in worker order, or a protocol error naming a missing one.
    pub fn complete(&self) -> Result<Vec<&ModelVector>> {
        self.slots
            .iter()
            .enumerate()
            .map(|(w, s)| {
                s.as_ref()
                    .ok_or_else(|| Error::Protocol(format!("missing message from worker {w}")))
            })
            .collect()
    }

    pub fn take(self) -> Result<Vec<ModelVector>> {
        self.complete()?;
        Ok(self.slots.into_iter().map(Option::unwrap).collect())
    }
}

/// Master side of the ADMM protocol: its primal and the last two duals
/// received from every worker (regular and Byzantine alike).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmMasterState {
    pub x0: ModelVector,
    pub received_curr: Vec<ModelVector>,
    pub received_prev: Vec<ModelVector>,
    lambda: f64,
}

impl AdmmMasterState {
    pub fn new(x0: ModelVector, workers: usize, lambda: f64) -> Self {
        let d = x0.len();
        AdmmMasterState {
            x0,
            received_curr: vec![ModelVector::zeros(d); workers],
            received_prev: vec![ModelVector::zeros(d); workers],
            lambda,
        }
    }

    pub fn workers(&self) -> usize {
        self.received_curr.len()
    }

    /// Accept a full round of duals. Each message is clamped into the box on
    /// receipt; anything outside it could only have come from an adversary.
    pub fn receive(&mut self, inbox: Inbox) -> Result<()> {
        if inbox.workers() != self.workers() {
            return Err(Error::Protocol(format!(
                "inbox for {} workers, master expects {}",
                inbox.workers(),
                self.workers()
            )));
        }
        let d = self.x0.len();
        let msgs = inbox.take()?;
        for (w, m) in msgs.iter().enumerate() {
            check_dim(&format!("dual from worker {w}"), d, m.len())?;
        }
        let clamped: Vec<ModelVector> = msgs.iter().map(|m| proj_box(m, self.lambda)).collect();
        self.received_prev = std::mem::replace(&mut self.received_curr, clamped);
        Ok(())
    }
}

/// `x₀ − α₀(f₀′(x₀) − Σⱼ(2ηⱼᵏ − ηⱼᵏ⁻¹))` over every worker's messages.
pub fn admm_master_step(
    state: &AdmmMasterState,
    grad_f0: &[f64],
    alpha_0: f64,
) -> Result<ModelVector> {
    check_dim(
        "ADMM master regulariser gradient",
        state.x0.len(),
        grad_f0.len(),
    )?;
    if state.received_curr.len() != state.received_prev.len() {
        return Err(Error::Protocol(
            "master dual history is inconsistent".into(),
        ));
    }
    let mut drive = ModelVector::zeros(state.x0.len());
    for (c, p) in state.received_curr.iter().zip(&state.received_prev) {
        drive.axpy(1.0, &dual_drive(c, p));
    }
    Ok(state
        .x0
        .iter()
        .zip(grad_f0)
        .zip(drive.iter())
        .map(|((x, g), s)| x - alpha_0 * (g - s))
        .collect())
}

/// `xᵢ − α(g + λ·sgn(xᵢ − x₀))`
pub fn rsa_worker_step(
    x_i: &[f64],
    x0: &[f64],
    grad: &[f64],
    alpha: f64,
    lambda: f64,
) -> Result<ModelVector> {
    check_dim("RSA worker master copy", x_i.len(), x0.len())?;
    check_dim("RSA worker gradient", x_i.len(), grad.len())?;
    let s = elementwise_sign(&ModelVector::from(x_i).sub(x0));
    Ok(x_i
        .iter()
        .zip(grad)
        .zip(s.iter())
        .map(|((x, g), s)| x - alpha * (g + lambda * s))
        .collect())
}

/// `x₀ − α(f₀′(x₀) − λ Σⱼ sgn(vⱼ − x₀))` over every received primal.
pub fn rsa_master_step(
    x0: &[f64],
    received: &Inbox,
    grad_f0: &[f64],
    alpha: f64,
    lambda: f64,
) -> Result<ModelVector> {
    check_dim("RSA master regulariser gradient", x0.len(), grad_f0.len())?;
    let msgs = received.complete()?;
    let mut pull = ModelVector::zeros(x0.len());
    for (w, v) in msgs.iter().enumerate() {
        check_dim(&format!("primal from worker {w}"), x0.len(), v.len())?;
        pull.axpy(1.0, &elementwise_sign(&v.sub(x0)));
    }
    Ok(x0
        .iter()
        .zip(grad_f0)
        .zip(pull.iter())
        .map(|((x, g), p)| x - alpha * (g - lambda * p))
        .collect())
}

/// How the SGD master combines worker gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationRule {
    Mean,
    CoordinateMedian,
    GeometricMedian,
}

const WEISZFELD_TOL: f64 = 1e-9;
const WEISZFELD_MAX_ITERS: usize = 1000;
const WEISZFELD_FLOOR: f64 = 1e-12;

pub fn aggregate(rule: AggregationRule, gradients: &[ModelVector]) -> Result<ModelVector> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::config("aggregation needs at least one gradient"))?;
    for (w, g) in gradients.iter().enumerate() {
        check_dim(&format!("gradient {w}"), first.len(), g.len())?;
    }
    Ok(match rule {
        AggregationRule::Mean => mean(gradients),
        AggregationRule::CoordinateMedian => coordinate_median(gradients),
        AggregationRule::GeometricMedian => geometric_median(gradients),
    })
}

fn mean(gradients: &[ModelVector]) -> ModelVector {
    let mut acc = ModelVector::zeros(gradients[0].len());
    for g in gradients {
        acc.axpy(1.0, g);
    }
    acc.scaled(1.0 / gradients.len() as f64)
}

fn coordinate_median(gradients: &[ModelVector]) -> ModelVector {
    let n = gradients.len();
    let mut column = vec![0.0; n];
    (0..gradients[0].len())
        .map(|t| {
            for (c, g) in column.iter_mut().zip(gradients) {
                *c = g[t];
            }
            column.sort_unstable_by(f64::total_cmp);
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect()
}

/// Sum of Euclidean distances from `point` to every gradient.
pub fn geometric_median_objective(gradients: &[ModelVector], point: &[f64]) -> f64 {
    gradients.iter().map(|g| g.dist_sq(point).sqrt()).sum()
}

/// Weiszfeld iteration with the Vardi-Zhang correction for iterates that
/// land on an input point. It starts from whichever of the mean and the
/// input points has the smallest objective; every step is a descent step.
fn geometric_median(gradients: &[ModelVector]) -> ModelVector {
    let mut m = mean(gradients);
    let mut best = geometric_median_objective(gradients, &m);
    for g in gradients {
        let obj = geometric_median_objective(gradients, g);
        if obj < best {
            best = obj;
            m = g.clone();
        }
    }
    for _ in 0..WEISZFELD_MAX_ITERS {
        let mut num = ModelVector::zeros(m.len());
        let mut pull = ModelVector::zeros(m.len());
        let mut den = 0.0;
        let mut coincident = 0.0;
        for g in gradients {
            let dist = g.dist_sq(&m).sqrt();
            if dist <= WEISZFELD_FLOOR {
                coincident += 1.0;
                continue;
            }
            num.axpy(1.0 / dist, g);
            den += 1.0 / dist;
            for ((p, gi), mi) in pull.iter_mut().zip(g.iter()).zip(m.iter()) {
                *p += (gi - mi) / dist;
            }
        }
        if den == 0.0 {
            break;
        }
        let step = num.scaled(1.0 / den);
        let next = if coincident > 0.0 {
            let r = pull.norm();
            if r <= coincident {
                break;
            }
            let keep = coincident / r;
            let mut blend = step.scaled(1.0 - keep);
            blend.axpy(keep, &m);
            blend
        } else {
            step
        };
        let moved = next.dist_sq(&m).sqrt();
        m = next;
        if moved <= WEISZFELD_TOL {
            break;
        }
    }
    m
}

/// `x₀ − α(aggregated + f₀′(x₀))`
pub fn sgd_master_step(
    x0: &[f64],
    aggregated: &[f64],
    grad_f0: &[f64],
    alpha: f64,
) -> Result<ModelVector> {
    check_dim("SGD aggregate", x0.len(), aggregated.len())?;
    check_dim("SGD regulariser gradient", x0.len(), grad_f0.len())?;
    Ok(x0
        .iter()
        .zip(aggregated.iter().zip(grad_f0))
        .map(|(x, (a, g))| x - alpha * (a + g))
        .collect())
}
