//! Synchronous master-worker simulation.
//!
//! A [`Simulation`] owns the protocol state for one algorithm and advances it
//! one round at a time behind a barrier: every worker (regular or Byzantine)
//! delivers exactly one message before the master moves. Worker computations
//! inside a round run on the rayon pool, each with its own seeded stream, and
//! every reduction happens in worker order, so results do not depend on the
//! thread count.

mod oracles;
pub mod verify;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::algorithms::{
    admm_dual_step, admm_master_step, admm_worker_step, aggregate, rsa_master_step,
    rsa_worker_step, sgd_master_step, AdmmMasterState, AdmmWorkerState, AggregationRule,
    HyperParams, Inbox, StepsizeSchedule,
};
use crate::attacks::{byzantine_payload, AttackContext, AttackKind, AttackSpec, Protocol};
use crate::data::{self, Dataset};
use crate::model::{LossModel, ModelVector, Problem, SoftmaxLoss};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub use oracles::{
    ergodic_average, loglog_slope, lyapunov, prox_pair_closed_form, top1_accuracy,
    unsimplified_admm_round, UnsimplifiedAdmmState,
};
pub use verify::{verify_suite, CheckOutcome};

/// One entry of the comparison roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Admm,
    Rsa,
    /// Robust-aggregation SGD over every upload, Byzantine ones included.
    Sgd(AggregationRule),
    /// Mean-aggregation SGD over the regular workers only.
    IdealSgd,
}

impl Algorithm {
    pub const ROSTER: [Algorithm; 6] = [
        Algorithm::Admm,
        Algorithm::Rsa,
        Algorithm::Sgd(AggregationRule::Mean),
        Algorithm::Sgd(AggregationRule::CoordinateMedian),
        Algorithm::Sgd(AggregationRule::GeometricMedian),
        Algorithm::IdealSgd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Admm => "admm",
            Algorithm::Rsa => "rsa",
            Algorithm::Sgd(AggregationRule::Mean) => "sgd-mean",
            Algorithm::Sgd(AggregationRule::CoordinateMedian) => "sgd-median",
            Algorithm::Sgd(AggregationRule::GeometricMedian) => "sgd-geomed",
            Algorithm::IdealSgd => "ideal-sgd",
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            Algorithm::Admm => Protocol::Admm,
            Algorithm::Rsa => Protocol::Rsa,
            Algorithm::Sgd(_) | Algorithm::IdealSgd => Protocol::AggSgd,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ROSTER
            .into_iter()
            .find(|a| a.label() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ROSTER.iter().map(Algorithm::label).collect();
                Error::config(format!(
                    "unknown algorithm {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Scalar-or-vector quadratic costs, one per worker slot.
///
/// Byzantine slots still carry a cost: it drives the honest computation a
/// sign-flipping adversary needs, and is ignored otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub regularizer_center: Vec<f64>,
    pub regularizer_scale: f64,
    pub centers: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    /// Standard deviation of additive Gaussian noise on worker gradients.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory holding the four standard IDX files, gzipped or not.
    Mnist { dir: PathBuf },
    /// One LIBSVM text file, standardised per column and split for testing.
    Libsvm {
        path: PathBuf,
        features: usize,
        test_fraction: f64,
    },
    /// Gaussian class blobs.
    Synthetic {
        classes: usize,
        features: usize,
        per_class: usize,
        spread: f64,
        test_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    /// Workers `2c` and `2c+1` split class `c` between them.
    DigitPairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxSpec {
    pub source: DataSource,
    pub partition: PartitionMode,
    /// `None` means exact full-shard gradients.
    pub batch_size: Option<usize>,
    /// Weight of the master's `(w/2)‖x‖²` regulariser.
    pub regularization: f64,
    pub train_cap: Option<usize>,
    pub test_cap: Option<usize>,
}

impl SoftmaxSpec {
    pub const DESK_TRAIN_CAP: usize = 2000;
    pub const DESK_TEST_CAP: usize = 500;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic(QuadraticSpec),
    Softmax(SoftmaxSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zeros,
    /// Workers start at their local minimisers, the master at zero.
    LocalOptima,
}

/// Full declarative description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub attack: AttackSpec,
    pub workers: usize,
    pub lambda: f64,
    pub beta: f64,
    pub master_schedule: StepsizeSchedule,
    pub worker_schedule: StepsizeSchedule,
    pub problem: ProblemSpec,
    pub init: InitMode,
    pub rounds: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Solve for `x̃*` so error, Lyapunov and ergodic metrics can be reported.
    pub reference: bool,
    pub ergodic: bool,
}

impl ExperimentConfig {
    /// Three scalar workers with costs `(x−1)²/4`, master cost `x²/2` and
    /// worker 2 Byzantine, under `1/(k/8+3)` and `1/(k/8+1)` stepsizes.
    pub fn toy_scalar(algorithm: Algorithm, attack: AttackKind) -> Self {
        ExperimentConfig {
            algorithm,
            attack: AttackSpec::new(attack, [2]),
            workers: 3,
            lambda: 0.5,
            beta: 1.0,
            master_schedule: StepsizeSchedule::inverse_k(0.125, 3.0),
            worker_schedule: StepsizeSchedule::inverse_k(0.125, 1.0),
            problem: ProblemSpec::Quadratic(QuadraticSpec {
                regularizer_center: vec![0.0],
                regularizer_scale: 1.0,
                centers: vec![vec![1.0]; 3],
                scales: vec![0.5; 3],
                noise_std: 0.0,
            }),
            init: InitMode::LocalOptima,
            rounds: 10_000,
            eval_every: 10,
            seed: 0,
            reference: true,
            ergodic: false,
        }
    }

    pub fn hyper(&self) -> Result<HyperParams> {
        HyperParams::new(self.lambda, self.beta, self.workers, self.attack.q())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        self.hyper()?;
        self.attack.validate(self.workers)?;
        self.master_schedule.validate()?;
        self.worker_schedule.validate()?;
        if self.algorithm.protocol() == Protocol::AggSgd && self.algorithm != Algorithm::IdealSgd {
            if let AttackKind::SmallValue { .. } | AttackKind::LargeValue = self.attack.kind {
                return Err(Error::config(format!(
                    "attack {} has no gradient form and cannot target {}",
                    self.attack.kind.label(),
                    self.algorithm
                )));
            }
        }
        if let ProblemSpec::Softmax(s) = &self.problem {
            if s.batch_size == Some(0) {
                return Err(Error::config("batch_size must be >= 1"));
            }
            if !(s.regularization >= 0.0) {
                return Err(Error::config("regularization must be >= 0"));
            }
            if self.init == InitMode::LocalOptima {
                return Err(Error::config(
                    "init = local-optima needs quadratic worker costs",
                ));
            }
        }
        Ok(())
    }
}

/// Metrics of one evaluation point. Absent values do not apply to the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub k: usize,
    pub algorithm: String,
    pub top1_accuracy: Option<f64>,
    /// `‖x₀ᵏ − x̃*‖²`
    pub master_error: Option<f64>,
    /// `Σᵢ ‖xᵢᵏ − x̃*‖²` over regular workers.
    pub worker_error: Option<f64>,
    /// `maxᵢ ‖xᵢᵏ − x₀ᵏ‖∞` over regular workers.
    pub consensus_gap: Option<f64>,
    pub lyapunov: Option<f64>,
    /// Objective gap at the stepsize-weighted running averages.
    pub ergodic_gap: Option<f64>,
}

/// The loaded costs and evaluation data of a run.
#[derive(Debug, Clone)]
pub struct Workload {
    pub regularizer: LossModel,
    /// One cost per worker slot, Byzantine slots included.
    pub losses: Vec<LossModel>,
    pub test: Option<Arc<Dataset>>,
    batch_size: Option<usize>,
    noise_std: f64,
}

fn derived_seed(seed: u64, purpose: Stream) -> u64 {
    stream(seed, purpose, 0, 0).next_u64()
}

impl Workload {
    pub fn build(spec: &ProblemSpec, workers: usize, seed: u64) -> Result<Self> {
        match spec {
            ProblemSpec::Quadratic(q) => {
                if q.centers.len() != workers || q.scales.len() != workers {
                    return Err(Error::config(format!(
                        "quadratic problem lists {} centers and {} scales for {workers} workers",
                        q.centers.len(),
                        q.scales.len()
                    )));
                }
                if !(q.noise_std >= 0.0 && q.noise_std.is_finite()) {
                    return Err(Error::config("noise_std must be a finite value >= 0"));
                }
                let d = q.regularizer_center.len();
                let mut losses = Vec::with_capacity(workers);
                for (i, (c, &s)) in q.centers.iter().zip(&q.scales).enumerate() {
                    if c.len() != d {
                        return Err(Error::config(format!(
                            "center {i} has dimension {}, expected {d}",
                            c.len()
                        )));
                    }
                    if !(s > 0.0) {
                        return Err(Error::config(format!("scale {i} must be > 0")));
                    }
                    losses.push(LossModel::quadratic(c.clone(), s));
                }
                Ok(Workload {
                    regularizer: LossModel::quadratic(
                        q.regularizer_center.clone(),
                        q.regularizer_scale,
                    ),
                    losses,
                    test: None,
                    batch_size: None,
                    noise_std: q.noise_std,
                })
            }
            ProblemSpec::Softmax(s) => {
                let (train, test) = load_source(&s.source, seed)?;
                let train = match s.train_cap {
                    Some(cap) if cap < train.len() => {
                        train.stratified_subsample(cap, derived_seed(seed, Stream::Subsample))
                    }
                    _ => train,
                };
                let test = match s.test_cap {
                    Some(cap) if cap < test.len() => {
                        test.stratified_subsample(cap, derived_seed(seed, Stream::Subsample) ^ 1)
                    }
                    _ => test,
                };
                let partition = match s.partition {
                    PartitionMode::Iid => data::partition_iid(
                        train.len(),
                        workers,
                        derived_seed(seed, Stream::Partition),
                    )?,
                    PartitionMode::DigitPairs => data::partition_digit_pairs(&train, workers)?,
                };
                let train = Arc::new(train);
                let losses = partition
                    .shards
                    .into_iter()
                    .map(|shard| SoftmaxLoss::new(train.clone(), shard).map(LossModel::Softmax))
                    .collect::<Result<Vec<_>>>()?;
                let dim = train.class_count() * train.feature_count();
                Ok(Workload {
                    regularizer: LossModel::quadratic(ModelVector::zeros(dim), s.regularization),
                    losses,
                    test: Some(Arc::new(test)),
                    batch_size: s.batch_size,
                    noise_std: 0.0,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.regularizer.dim()
    }

    /// The gradient worker `w` computes at `x` in round `k`.
    fn gradient(&self, seed: u64, w: usize, x: &[f64], k: usize) -> Result<ModelVector> {
        let loss = &self.losses[w];
        match (loss, self.batch_size) {
            (LossModel::Softmax(s), Some(bs)) => {
                let mut rng = stream(seed, Stream::Batch, w as u64, k as u64);
                let batch = data::sample_batch(s.shard(), bs, &mut rng);
                loss.stochastic_gradient(x, &batch)
            }
            _ => {
                let mut g = loss.exact_gradient(x)?;
                if self.noise_std > 0.0 {
                    let mut rng = stream(seed, Stream::Batch, w as u64, k as u64);
                    let noise = Normal::new(0.0, self.noise_std)
                        .map_err(|e| Error::config(e.to_string()))?;
                    g.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                }
                Ok(g)
            }
        }
    }

    /// The problem the regular workers jointly solve.
    pub fn problem(&self, regular: &[usize]) -> Result<Problem> {
        Problem::new(
            self.regularizer.clone(),
            regular.iter().map(|&i| self.losses[i].clone()).collect(),
        )
    }
}

fn load_source(source: &DataSource, seed: u64) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Mnist { dir } => data::load_mnist_dir(dir),
        DataSource::Libsvm {
            path,
            features,
            test_fraction,
        } => {
            let text = String::from_utf8(data::read_maybe_gzip(path)?)
                .map_err(|e| Error::config(format!("{} is not UTF-8: {e}", path.display())))?;
            let mut ds = data::parse_libsvm(&text, *features)?;
            ds.standardize();
            ds.split(*test_fraction, derived_seed(seed, Stream::Partition) ^ 2)
        }
        DataSource::Synthetic {
            classes,
            features,
            per_class,
            spread,
            test_fraction,
        } => {
            let ds = data::synthetic_blobs(*classes, *features, *per_class, *spread, seed)?;
            ds.split(*test_fraction, derived_seed(seed, Stream::Partition) ^ 2)
        }
    }
}

/// Optimum of the regular workers' problem and its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x_star: ModelVector,
    /// `ηᵢ* = −∇E[Fᵢ](x̃*)`, indexed like the regular-id list.
    pub eta_star: Vec<ModelVector>,
    pub optimum_value: f64,
    pub lambda_zero: f64,
}

impl Reference {
    pub fn solve(problem: &Problem) -> Result<Self> {
        let x_star = problem.exact_minimizer()?;
        let eta_star = problem
            .workers
            .iter()
            .map(|w| w.exact_gradient(&x_star).map(|g| g.scaled(-1.0)))
            .collect::<Result<Vec<_>>>()?;
        let lambda_zero = eta_star.iter().map(|e| e.norm_inf()).fold(0.0, f64::max);
        Ok(Reference {
            optimum_value: problem.objective(&x_star)?,
            x_star,
            eta_star,
            lambda_zero,
        })
    }
}

/// Protocol-specific variables.
///
/// Byzantine slots hold whatever the adversary tracks: its own dual recursion
/// for ADMM value attacks, or a shadow honest trajectory for sign flipping.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolState {
    Admm {
        master: AdmmMasterState,
        workers: Vec<AdmmWorkerState>,
    },
    Rsa {
        x0: ModelVector,
        workers: Vec<ModelVector>,
    },
    Sgd {
        x0: ModelVector,
    },
}

impl ProtocolState {
    pub fn x0(&self) -> &ModelVector {
        match self {
            ProtocolState::Admm { master, .. } => &master.x0,
            ProtocolState::Rsa { x0, .. } | ProtocolState::Sgd { x0 } => x0,
        }
    }

    /// Primal of worker slot `w`, when the protocol keeps one.
    pub fn worker_x(&self, w: usize) -> Option<&ModelVector> {
        match self {
            ProtocolState::Admm { workers, .. } => workers.get(w).map(|s| &s.x),
            ProtocolState::Rsa { workers, .. } => workers.get(w),
            ProtocolState::Sgd { .. } => None,
        }
    }
}

/// What reached the master in one round, before any clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessages {
    pub k: usize,
    /// Indexed by worker slot. Ideal SGD leaves Byzantine slots empty.
    pub uploads: Vec<Option<ModelVector>>,
}

#[derive(Debug, Clone)]
struct ErgodicTracker {
    weight: f64,
    master: ModelVector,
    workers: Vec<ModelVector>,
}

pub struct Simulation {
    config: ExperimentConfig,
    hyper: HyperParams,
    workload: Arc<Workload>,
    regular: Vec<usize>,
    reference: Option<Reference>,
    state: ProtocolState,
    k: usize,
    ergodic: Option<ErgodicTracker>,
}

fn with_round(e: Error, k: usize, w: Option<usize>) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite {
            round: k,
            worker: w,
        },
        other => other,
    }
}

fn ensure_finite(v: &ModelVector, k: usize, w: Option<usize>) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            round: k,
            worker: w,
        })
    }
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let workload = Workload::build(&config.problem, config.workers, config.seed)?;
        Self::with_workload(config, Arc::new(workload))
    }

    /// Start a run on an already loaded workload, so a roster can share data.
    pub fn with_workload(config: &ExperimentConfig, workload: Arc<Workload>) -> Result<Self> {
        config.validate()?;
        let hyper = config.hyper()?;
        if workload.losses.len() != config.workers {
            return Err(Error::config(format!(
                "workload has {} worker costs, config declares {}",
                workload.losses.len(),
                config.workers
            )));
        }
        let regular = config.attack.regular_ids(config.workers);
        let reference = if config.reference {
            Some(Reference::solve(&workload.problem(&regular)?)?)
        } else {
            None
        };
        if config.ergodic && reference.is_none() {
            return Err(Error::config("ergodic metrics need reference = true"));
        }
        let d = workload.dim();
        let start = |w: usize| -> Result<ModelVector> {
            match config.init {
                InitMode::Zeros => Ok(ModelVector::zeros(d)),
                InitMode::LocalOptima => workload.losses[w].local_minimizer().ok_or_else(|| {
                    Error::config(format!("worker {w} has no closed-form minimiser"))
                }),
            }
        };
        let x0 = ModelVector::zeros(d);
        let state = match config.algorithm.protocol() {
            Protocol::Admm => ProtocolState::Admm {
                master: AdmmMasterState::new(x0, config.workers, config.lambda),
                workers: (0..config.workers)
                    .map(|w| start(w).map(AdmmWorkerState::new))
                    .collect::<Result<_>>()?,
            },
            Protocol::Rsa => ProtocolState::Rsa {
                x0,
                workers: (0..config.workers).map(start).collect::<Result<_>>()?,
            },
            Protocol::AggSgd => ProtocolState::Sgd { x0 },
        };
        let ergodic = config.ergodic.then(|| ErgodicTracker {
            weight: 0.0,
            master: ModelVector::zeros(d),
            workers: vec![ModelVector::zeros(d); regular.len()],
        });
        Ok(Simulation {
            config: config.clone(),
            hyper,
            workload,
            regular,
            reference,
            state,
            k: 0,
            ergodic,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn workload(&self) -> &Arc<Workload> {
        &self.workload
    }

    /// Index of the next round to run.
    pub fn round(&self) -> usize {
        self.k
    }

    pub fn regular_ids(&self) -> &[usize] {
        &self.regular
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    pub fn state(&self) -> &ProtocolState {
        &self.state
    }

    /// Direct state access, for placing a run at a chosen point.
    pub fn state_mut(&mut self) -> &mut ProtocolState {
        &mut self.state
    }

    fn is_byzantine(&self, w: usize) -> bool {
        self.config.attack.is_byzantine(w)
    }

    /// Whether worker slot `w` runs the honest computation this round.
    fn computes_honestly(&self, w: usize) -> bool {
        !self.is_byzantine(w) || self.config.attack.kind.needs_honest_value()
    }

    fn copy_target(&self) -> Option<usize> {
        match self.config.attack.kind {
            AttackKind::CopyRegular { target } => Some(target),
            _ => None,
        }
    }

    /// Advance every variable by one round.
    pub fn run_round(&mut self) -> Result<RoundMessages> {
        let k = self.k;
        let uploads = match self.config.algorithm {
            Algorithm::Admm => self.admm_round(k)?,
            Algorithm::Rsa => self.rsa_round(k)?,
            Algorithm::Sgd(rule) => self.sgd_round(k, Some(rule))?,
            Algorithm::IdealSgd => self.sgd_round(k, None)?,
        };
        ensure_finite(self.state.x0(), k, None)?;
        for &w in &self.regular {
            if let Some(x) = self.state.worker_x(w) {
                ensure_finite(x, k, Some(w))?;
            }
        }
        self.k += 1;
        self.track_ergodic()?;
        Ok(RoundMessages { k, uploads })
    }

    fn admm_round(&mut self, k: usize) -> Result<Vec<Option<ModelVector>>> {
        let alpha_0 = self.config.master_schedule.at(k);
        let alpha_i = self.config.worker_schedule.at(k);
        let seed = self.config.seed;
        let hp = self.hyper;
        let workload = self.workload.clone();
        let attack = self.config.attack.clone();
        let honest: Vec<bool> = (0..self.config.workers)
            .map(|w| self.computes_honestly(w))
            .collect();
        let copy_target = self.copy_target();
        let ProtocolState::Admm { master, workers } = &mut self.state else {
            unreachable!("state matches protocol")
        };

        let grad_f0 = workload.regularizer.exact_gradient(&master.x0)?;
        let x0_new = admm_master_step(master, &grad_f0, alpha_0)?;
        ensure_finite(&x0_new, k, None)?;

        let stepped: Vec<Option<(ModelVector, ModelVector)>> = workers
            .par_iter()
            .enumerate()
            .map(|(w, st)| {
                if !honest[w] {
                    return Ok(None);
                }
                let g = workload.gradient(seed, w, &st.x, k)?;
                let x_new =
                    admm_worker_step(st, &g, alpha_i).map_err(|e| with_round(e, k, Some(w)))?;
                let eta_new = admm_dual_step(st, &x_new, &x0_new, &hp)?;
                Ok(Some((x_new, eta_new)))
            })
            .collect::<Result<_>>()?;

        let mut inbox = Inbox::new(workers.len());
        let mut uploads = Vec::with_capacity(workers.len());
        for (w, step) in stepped.iter().enumerate() {
            let msg = if attack.is_byzantine(w) {
                let target_x = copy_target.and_then(|t| stepped[t].as_ref().map(|s| &s.0));
                let ctx = AttackContext {
                    k: k + 1,
                    x0: &x0_new,
                    hyper: &hp,
                    own_dual: Some(&workers[w].eta_curr),
                    honest: step.as_ref().map(|s| &s.1),
                    copy_target: target_x,
                };
                let mut rng = stream(seed, Stream::Attack, w as u64, k as u64);
                byzantine_payload(&attack.kind, Protocol::Admm, &ctx, &mut rng)?
            } else {
                step.as_ref()
                    .expect("regular workers always step")
                    .1
                    .clone()
            };
            ensure_finite(&msg, k, Some(w))?;
            inbox.deliver(w, msg.clone())?;
            uploads.push(Some(msg));
        }

        for (w, (st, step)) in workers.iter_mut().zip(stepped).enumerate() {
            match step {
                Some((x_new, eta_new)) => st.advance(x_new, eta_new),
                // A value attacker's recursion continues from what it sent.
                None => {
                    let x = st.x.clone();
                    st.advance(x, uploads[w].clone().expect("every slot uploads"));
                }
            }
        }
        master.x0 = x0_new;
        master.receive(inbox)?;
        Ok(uploads)
    }

    fn rsa_round(&mut self, k: usize) -> Result<Vec<Option<ModelVector>>> {
        let alpha_0 = self.config.master_schedule.at(k);
        let alpha_i = self.config.worker_schedule.at(k);
        let seed = self.config.seed;
        let hp = self.hyper;
        let lambda = self.config.lambda;
        let workload = self.workload.clone();
        let attack = self.config.attack.clone();
        let honest: Vec<bool> = (0..self.config.workers)
            .map(|w| self.computes_honestly(w))
            .collect();
        let copy_target = self.copy_target();
        let ProtocolState::Rsa { x0, workers } = &mut self.state else {
            unreachable!("state matches protocol")
        };

        // Workers upload their current primal before stepping.
        let mut inbox = Inbox::new(workers.len());
        let mut uploads = Vec::with_capacity(workers.len());
        for w in 0..workers.len() {
            let msg = if attack.is_byzantine(w) {
                let ctx = AttackContext {
                    k,
                    x0,
                    hyper: &hp,
                    own_dual: None,
                    honest: Some(&workers[w]),
                    copy_target: copy_target.map(|t| &workers[t]),
                };
                let mut rng = stream(seed, Stream::Attack, w as u64, k as u64);
                byzantine_payload(&attack.kind, Protocol::Rsa, &ctx, &mut rng)?
            } else {
                workers[w].clone()
            };
            ensure_finite(&msg, k, Some(w))?;
            inbox.deliver(w, msg.clone())?;
            uploads.push(Some(msg));
        }

        let x0_ref: &ModelVector = x0;
        let next: Vec<Option<ModelVector>> = workers
            .par_iter()
            .enumerate()
            .map(|(w, x)| {
                if !honest[w] {
                    return Ok(None);
                }
                let g = workload.gradient(seed, w, x, k)?;
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        round: k,
                        worker: Some(w),
                    });
                }
                rsa_worker_step(x, x0_ref, &g, alpha_i, lambda).map(Some)
            })
            .collect::<Result<_>>()?;
        let grad_f0 = workload.regularizer.exact_gradient(x0)?;
        let x0_new = rsa_master_step(x0, &inbox, &grad_f0, alpha_0, lambda)?;
        for (x, n) in workers.iter_mut().zip(next) {
            if let Some(n) = n {
                *x = n;
            }
        }
        *x0 = x0_new;
        Ok(uploads)
    }

    fn sgd_round(
        &mut self,
        k: usize,
        rule: Option<AggregationRule>,
    ) -> Result<Vec<Option<ModelVector>>> {
        let alpha = self.config.master_schedule.at(k);
        let seed = self.config.seed;
        let hp = self.hyper;
        let workload = self.workload.clone();
        let attack = self.config.attack.clone();
        let m = self.config.workers;
        let honest: Vec<bool> = (0..m)
            .map(|w| {
                if rule.is_none() {
                    !self.is_byzantine(w)
                } else {
                    self.computes_honestly(w)
                }
            })
            .collect();
        let copy_target = self.copy_target();
        let ProtocolState::Sgd { x0 } = &mut self.state else {
            unreachable!("state matches protocol")
        };
        let x0_ref: &ModelVector = x0;
        let grads: Vec<Option<ModelVector>> = (0..m)
            .into_par_iter()
            .map(|w| {
                if !honest[w] {
                    return Ok(None);
                }
                let g = workload.gradient(seed, w, x0_ref, k)?;
                ensure_finite(&g, k, Some(w))?;
                Ok(Some(g))
            })
            .collect::<Result<_>>()?;

        let uploads: Vec<Option<ModelVector>> = match rule {
            None => (0..m)
                .map(|w| {
                    if attack.is_byzantine(w) {
                        None
                    } else {
                        grads[w].clone()
                    }
                })
                .collect(),
            Some(_) => (0..m)
                .map(|w| {
                    if !attack.is_byzantine(w) {
                        return Ok(grads[w].clone());
                    }
                    let ctx = AttackContext {
                        k,
                        x0: x0_ref,
                        hyper: &hp,
                        own_dual: None,
                        honest: grads[w].as_ref(),
                        copy_target: copy_target.and_then(|t| grads[t].as_ref()),
                    };
                    let mut rng = stream(seed, Stream::Attack, w as u64, k as u64);
                    let g = byzantine_payload(&attack.kind, Protocol::AggSgd, &ctx, &mut rng)?;
                    ensure_finite(&g, k, Some(w))?;
                    Ok(Some(g))
                })
                .collect::<Result<_>>()?,
        };
        let received: Vec<ModelVector> = uploads.iter().flatten().cloned().collect();
        let aggregated = aggregate(rule.unwrap_or(AggregationRule::Mean), &received)?;
        let grad_f0 = workload.regularizer.exact_gradient(x0_ref)?;
        *x0 = sgd_master_step(x0_ref, &aggregated, &grad_f0, alpha)?;
        Ok(uploads)
    }

    fn track_ergodic(&mut self) -> Result<()> {
        let Some(tr) = self.ergodic.as_mut() else {
            return Ok(());
        };
        let a = self.config.master_schedule.at(self.k);
        tr.weight += a;
        tr.master.axpy(a, self.state.x0());
        for (acc, &w) in tr.workers.iter_mut().zip(&self.regular) {
            acc.axpy(a, self.state.worker_x(w).unwrap_or(self.state.x0()));
        }
        Ok(())
    }

    /// Metrics of the current state.
    pub fn metrics(&self) -> Result<MetricsRecord> {
        let x0 = self.state.x0();
        let primals: Option<Vec<&ModelVector>> = self
            .regular
            .iter()
            .map(|&w| self.state.worker_x(w))
            .collect();
        let consensus_gap = primals
            .as_ref()
            .map(|xs| xs.iter().map(|x| x.dist_inf(x0)).fold(0.0, f64::max));
        let top1_accuracy = self.workload.test.as_ref().map(|t| top1_accuracy(x0, t));
        let mut rec = MetricsRecord {
            k: self.k,
            algorithm: self.config.algorithm.label().to_string(),
            top1_accuracy,
            master_error: None,
            worker_error: None,
            consensus_gap,
            lyapunov: None,
            ergodic_gap: None,
        };
        if let Some(r) = &self.reference {
            rec.master_error = Some(x0.dist_sq(&r.x_star));
            rec.worker_error = primals
                .as_ref()
                .map(|xs| xs.iter().map(|x| x.dist_sq(&r.x_star)).sum());
            if let ProtocolState::Admm { master, workers } = &self.state {
                if self.workload.regularizer.is_quadratic()
                    && self.workload.losses.iter().all(LossModel::is_quadratic)
                {
                    let regular: Vec<&AdmmWorkerState> =
                        self.regular.iter().map(|&w| &workers[w]).collect();
                    rec.lyapunov = Some(lyapunov(
                        &master.x0,
                        &regular,
                        &r.x_star,
                        &r.eta_star,
                        &self.config.worker_schedule,
                        self.config.beta,
                        self.k,
                    )?);
                }
            }
            if let Some(tr) = self.ergodic.as_ref().filter(|t| t.weight > 0.0) {
                let inv = 1.0 / tr.weight;
                let mut value = self.workload.regularizer.value(&tr.master.scaled(inv))?;
                for (acc, &w) in tr.workers.iter().zip(&self.regular) {
                    value += self.workload.losses[w].value(&acc.scaled(inv))?;
                }
                rec.ergodic_gap = Some(value - r.optimum_value);
            }
        }
        for v in [
            rec.top1_accuracy,
            rec.master_error,
            rec.worker_error,
            rec.consensus_gap,
            rec.lyapunov,
            rec.ergodic_gap,
        ]
        .into_iter()
        .flatten()
        {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    round: self.k,
                    worker: None,
                });
            }
        }
        Ok(rec)
    }

    /// Run to `config.rounds`, recording at 0, every `eval_every`, and the end.
    pub fn run_to_end(&mut self) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::with_capacity(self.config.rounds / self.config.eval_every + 2);
        if self.k == 0 {
            records.push(self.metrics()?);
        }
        while self.k < self.config.rounds {
            self.run_round()?;
            if self.k.is_multiple_of(self.config.eval_every) || self.k == self.config.rounds {
                records.push(self.metrics()?);
            }
        }
        Ok(records)
    }
}

/// Build and run one experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    Simulation::new(config)?.run_to_end()
}

#[cfg(test)]
mod tests;
