//! Declarative experiment runner.
//!
//! A TOML file with `[problem]`, `[algorithm]`, `[attack]`, `[schedule]` and
//! `[run]` sections describes a run; optional `[tuning.<algorithm>]` sections
//! override penalty, dual stepsize or schedules for one roster entry, and an
//! optional `[sweep]` section lists penalty or Byzantine-count values. Unknown
//! keys are rejected. Every output file is written to a temporary name and
//! renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::algorithms::StepsizeSchedule;
use crate::attacks::{AttackKind, AttackSpec};
use crate::data;
use crate::engine::{
    Algorithm, DataSource, ExperimentConfig, InitMode, MetricsRecord, PartitionMode, ProblemSpec,
    QuadraticSpec, Simulation, SoftmaxSpec, Workload,
};
use crate::{Error, Result};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "BYZADMM_DATA_DIR";

/// Header shared by every metrics CSV.
pub const CSV_HEADER: [&str; 8] = [
    "k",
    "algorithm",
    "top1_accuracy",
    "master_error",
    "worker_error",
    "consensus_gap",
    "lyapunov",
    "ergodic_gap",
];

/// The MNIST subset shipped with the crate.
pub fn bundled_mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join("mnist-desk")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    algorithm: RawAlgorithm,
    #[serde(default)]
    attack: RawAttack,
    schedule: RawSchedule,
    run: RawRun,
    #[serde(default)]
    tuning: BTreeMap<String, RawTuning>,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: String,
    init: Option<String>,
    // quadratic
    regularizer_center: Option<Vec<f64>>,
    regularizer_scale: Option<f64>,
    centers: Option<Vec<Vec<f64>>>,
    scales: Option<Vec<f64>>,
    noise_std: Option<f64>,
    // softmax
    dataset: Option<String>,
    data_dir: Option<PathBuf>,
    path: Option<PathBuf>,
    features: Option<usize>,
    classes: Option<usize>,
    per_class: Option<usize>,
    spread: Option<f64>,
    test_fraction: Option<f64>,
    partition: Option<String>,
    batch_size: Option<usize>,
    full_batch: Option<bool>,
    regularization: Option<f64>,
    train_cap: Option<usize>,
    test_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    roster: Option<Vec<String>>,
    workers: usize,
    lambda: f64,
    beta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    kind: Option<String>,
    q: Option<usize>,
    byzantine: Option<Vec<usize>>,
    std: Option<f64>,
    epsilon: Option<f64>,
    target: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    master: StepsizeSchedule,
    worker: StepsizeSchedule,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    rounds: usize,
    eval_every: Option<usize>,
    seed: Option<u64>,
    reference: Option<bool>,
    ergodic: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTuning {
    lambda: Option<f64>,
    beta: Option<f64>,
    master: Option<StepsizeSchedule>,
    worker: Option<StepsizeSchedule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    lambda: Option<Vec<f64>>,
    q: Option<Vec<usize>>,
}

/// Per-algorithm overrides of the shared settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tuning {
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub master_schedule: Option<StepsizeSchedule>,
    pub worker_schedule: Option<StepsizeSchedule>,
}

/// The grid axis of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Lambda(Vec<f64>),
    Q(Vec<usize>),
}

/// Command-line adjustments applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub desk_scale: bool,
    pub data_dir: Option<PathBuf>,
    pub attack: Option<String>,
}

/// A parsed config file: the shared experiment plus its roster.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    /// Settings for the first roster entry, before tuning.
    pub base: ExperimentConfig,
    pub roster: Vec<Algorithm>,
    pub tuning: BTreeMap<Algorithm, Tuning>,
    pub sweep: Option<SweepAxis>,
    /// Byzantine slots chosen by count rather than listed, so a `q` sweep can
    /// re-pick them.
    byzantine_by_count: bool,
}

impl ConfigFile {
    /// The experiment for one roster entry, with its tuning applied.
    pub fn experiment(&self, algorithm: Algorithm) -> ExperimentConfig {
        let mut c = self.base.clone();
        c.algorithm = algorithm;
        if let Some(t) = self.tuning.get(&algorithm) {
            c.lambda = t.lambda.unwrap_or(c.lambda);
            c.beta = t.beta.unwrap_or(c.beta);
            c.master_schedule = t.master_schedule.unwrap_or(c.master_schedule);
            c.worker_schedule = t.worker_schedule.unwrap_or(c.worker_schedule);
        }
        c
    }

    /// Re-pick the Byzantine set for a different count, keeping the attack.
    pub fn with_q(&self, q: usize) -> Result<ConfigFile> {
        if !self.byzantine_by_count {
            return Err(Error::config(
                "a q sweep needs attack.q, not an explicit attack.byzantine list",
            ));
        }
        let mut out = self.clone();
        let m = self.base.workers;
        if q >= m {
            return Err(Error::config(format!(
                "q = {q} leaves no regular worker among {m}"
            )));
        }
        out.base.attack = if q == 0 {
            AttackSpec::none()
        } else {
            AttackSpec::new(self.base.attack.kind, m - q..m)
        };
        Ok(out)
    }
}

fn required<T>(value: Option<T>, key: &str, context: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(format!("{key} required {context}")))
}

fn parse_init(s: Option<&str>, quadratic: bool) -> Result<InitMode> {
    match s {
        None if quadratic => Ok(InitMode::LocalOptima),
        None => Ok(InitMode::Zeros),
        Some("zeros") => Ok(InitMode::Zeros),
        Some("local-optima") => Ok(InitMode::LocalOptima),
        Some(other) => Err(Error::config(format!(
            "problem.init = {other:?}; expected \"zeros\" or \"local-optima\""
        ))),
    }
}

fn resolve(base_dir: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base_dir.join(p)
    }
}

fn build_problem(
    raw: RawProblem,
    base_dir: &Path,
    ov: &Overrides,
) -> Result<(ProblemSpec, InitMode)> {
    match raw.kind.as_str() {
        "quadratic" => {
            let ctx = "for problem.kind = \"quadratic\"";
            let centers = required(raw.centers, "problem.centers", ctx)?;
            let dim = centers.first().map_or(1, Vec::len);
            let spec = QuadraticSpec {
                regularizer_center: raw.regularizer_center.unwrap_or_else(|| vec![0.0; dim]),
                regularizer_scale: required(
                    raw.regularizer_scale,
                    "problem.regularizer_scale",
                    ctx,
                )?,
                scales: required(raw.scales, "problem.scales", ctx)?,
                centers,
                noise_std: raw.noise_std.unwrap_or(0.0),
            };
            Ok((
                ProblemSpec::Quadratic(spec),
                parse_init(raw.init.as_deref(), true)?,
            ))
        }
        "softmax" => {
            let ctx = "for problem.kind = \"softmax\"";
            let dataset = required(raw.dataset, "problem.dataset", ctx)?;
            let test_fraction = raw.test_fraction.unwrap_or(0.2);
            let source = match dataset.as_str() {
                "mnist" => DataSource::Mnist {
                    dir: raw
                        .data_dir
                        .map(|d| resolve(base_dir, d))
                        .or_else(|| ov.data_dir.clone())
                        .unwrap_or_else(bundled_mnist_dir),
                },
                "libsvm" => DataSource::Libsvm {
                    path: resolve(
                        base_dir,
                        required(raw.path, "problem.path", "for problem.dataset = \"libsvm\"")?,
                    ),
                    features: required(
                        raw.features,
                        "problem.features",
                        "for problem.dataset = \"libsvm\"",
                    )?,
                    test_fraction,
                },
                "synthetic" => {
                    let c = "for problem.dataset = \"synthetic\"";
                    DataSource::Synthetic {
                        classes: required(raw.classes, "problem.classes", c)?,
                        features: required(raw.features, "problem.features", c)?,
                        per_class: required(raw.per_class, "problem.per_class", c)?,
                        spread: raw.spread.unwrap_or(1.0),
                        test_fraction,
                    }
                }
                other => return Err(Error::config(format!(
                    "problem.dataset = {other:?}; expected \"mnist\", \"libsvm\" or \"synthetic\""
                ))),
            };
            let partition = match raw.partition.as_deref().unwrap_or("iid") {
                "iid" => PartitionMode::Iid,
                "digit-pairs" => PartitionMode::DigitPairs,
                other => {
                    return Err(Error::config(format!(
                        "problem.partition = {other:?}; expected \"iid\" or \"digit-pairs\""
                    )))
                }
            };
            let batch_size = match (raw.full_batch.unwrap_or(false), raw.batch_size) {
                (true, Some(_)) => {
                    return Err(Error::config(
                        "problem.batch_size and problem.full_batch are exclusive",
                    ))
                }
                (true, None) => None,
                (false, b) => Some(b.unwrap_or(32)),
            };
            let desk = |cap: Option<usize>, desk_cap: usize| {
                if ov.desk_scale {
                    Some(cap.unwrap_or(desk_cap).min(desk_cap))
                } else {
                    cap.or(Some(desk_cap)).filter(|&c| c > 0)
                }
            };
            let spec = SoftmaxSpec {
                source,
                partition,
                batch_size,
                regularization: raw.regularization.unwrap_or(0.01),
                train_cap: desk(raw.train_cap, SoftmaxSpec::DESK_TRAIN_CAP),
                test_cap: desk(raw.test_cap, SoftmaxSpec::DESK_TEST_CAP),
            };
            Ok((
                ProblemSpec::Softmax(spec),
                parse_init(raw.init.as_deref(), false)?,
            ))
        }
        other => Err(Error::config(format!(
            "problem.kind = {other:?}; expected \"quadratic\" or \"softmax\""
        ))),
    }
}

fn build_attack(
    raw: &RawAttack,
    m: usize,
    kind_override: Option<&str>,
) -> Result<(AttackSpec, bool)> {
    let label = kind_override.or(raw.kind.as_deref()).unwrap_or("none");
    let ctx = format!("for attack.kind = {label:?}");
    let kind = match label {
        "none" => AttackKind::None,
        "gaussian" => AttackKind::Gaussian {
            std: required(raw.std, "attack.std", &ctx)?,
        },
        "sign-flip" => AttackKind::SignFlip {
            epsilon: required(raw.epsilon, "attack.epsilon", &ctx)?,
        },
        "small-value" => AttackKind::SmallValue {
            epsilon: required(raw.epsilon, "attack.epsilon", &ctx)?,
        },
        "large-value" => AttackKind::LargeValue,
        "copy-regular" => AttackKind::CopyRegular {
            target: required(raw.target, "attack.target", &ctx)?,
        },
        other => {
            return Err(Error::config(format!(
                "attack.kind = {other:?}; expected none, gaussian, sign-flip, small-value, large-value or copy-regular"
            )))
        }
    };
    let (ids, by_count): (Vec<usize>, bool) = match (&raw.byzantine, raw.q) {
        (Some(_), Some(_)) => {
            return Err(Error::config("give attack.q or attack.byzantine, not both"))
        }
        (Some(ids), None) => (ids.clone(), false),
        (None, Some(q)) if q > m => {
            return Err(Error::config(format!(
                "attack.q = {q} exceeds algorithm.workers = {m}"
            )))
        }
        (None, Some(q)) => ((m - q..m).collect(), true),
        (None, None) => (Vec::new(), true),
    };
    if kind == AttackKind::None && !ids.is_empty() {
        return Err(Error::config(
            "attack.kind = \"none\" with a non-empty Byzantine set",
        ));
    }
    if kind != AttackKind::None && ids.is_empty() {
        return Err(Error::config(format!(
            "{ctx} needs attack.q or attack.byzantine"
        )));
    }
    if ids.len() != ids.iter().collect::<std::collections::BTreeSet<_>>().len() {
        return Err(Error::config("attack.byzantine lists a worker twice"));
    }
    Ok((AttackSpec::new(kind, ids), by_count))
}

/// Parse config text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path, ov: &Overrides) -> Result<ConfigFile> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    let m = raw.algorithm.workers;
    let (problem, init) = build_problem(raw.problem, base_dir, ov)?;
    let (attack, byzantine_by_count) = build_attack(&raw.attack, m, ov.attack.as_deref())?;
    let roster = match raw.algorithm.roster {
        None => vec![Algorithm::Admm],
        Some(names) if names.is_empty() => return Err(Error::config("algorithm.roster is empty")),
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>>>()?,
    };
    let mut tuning = BTreeMap::new();
    for (name, t) in raw.tuning {
        let alg: Algorithm = name
            .parse()
            .map_err(|e| Error::config(format!("[tuning.{name}]: {e}")))?;
        tuning.insert(
            alg,
            Tuning {
                lambda: t.lambda,
                beta: t.beta,
                master_schedule: t.master,
                worker_schedule: t.worker,
            },
        );
    }
    let sweep = match raw.sweep {
        None => None,
        Some(RawSweep {
            lambda: Some(l),
            q: None,
        }) => Some(SweepAxis::Lambda(l)),
        Some(RawSweep {
            lambda: None,
            q: Some(q),
        }) => Some(SweepAxis::Q(q)),
        Some(_) => return Err(Error::config("[sweep] needs exactly one of lambda or q")),
    };
    let seed = match ov.seed {
        Some(s) => s,
        None => raw
            .run
            .seed
            .ok_or_else(|| Error::config("run.seed: seed required"))?,
    };
    let quadratic = matches!(problem, ProblemSpec::Quadratic(_));
    let base = ExperimentConfig {
        algorithm: roster[0],
        attack,
        workers: m,
        lambda: raw.algorithm.lambda,
        beta: raw.algorithm.beta,
        master_schedule: raw.schedule.master,
        worker_schedule: raw.schedule.worker,
        problem,
        init,
        rounds: raw.run.rounds,
        eval_every: raw.run.eval_every.unwrap_or(10),
        seed,
        reference: raw.run.reference.unwrap_or(quadratic),
        ergodic: raw.run.ergodic.unwrap_or(false),
    };
    let file = ConfigFile {
        base,
        roster,
        tuning,
        sweep,
        byzantine_by_count,
    };
    for &alg in &file.roster {
        file.experiment(alg)
            .validate()
            .map_err(|e| Error::config(format!("{alg}: {e}")))?;
    }
    Ok(file)
}

/// Read and validate a config file.
pub fn load_config_file(path: impl AsRef<Path>, ov: &Overrides) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")), ov)
}

/// The experiment for the first roster entry of a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let file = load_config_file(path, &Overrides::default())?;
    Ok(file.experiment(file.roster[0]))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_row(r: &MetricsRecord) -> [String; 8] {
    [
        r.k.to_string(),
        r.algorithm.clone(),
        cell(r.top1_accuracy),
        cell(r.master_error),
        cell(r.worker_error),
        cell(r.consensus_gap),
        cell(r.lyapunov),
        cell(r.ergodic_gap),
    ]
}

/// Write `bytes` next to `path` and rename over it.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write one run's records as CSV.
pub fn emit_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::config("no metrics records to write"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path.as_ref(), &bytes)
}

fn parse_cell(s: &str, column: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Line {
        line,
        message: format!("{column} = {s:?} is not a number"),
    })
}

/// Read a CSV written by [`emit_metrics`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Line {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let k = row[0].parse().map_err(|_| Error::Line {
            line,
            message: format!("k = {:?} is not a round index", &row[0]),
        })?;
        out.push(MetricsRecord {
            k,
            algorithm: row[1].to_string(),
            top1_accuracy: parse_cell(&row[2], CSV_HEADER[2], line)?,
            master_error: parse_cell(&row[3], CSV_HEADER[3], line)?,
            worker_error: parse_cell(&row[4], CSV_HEADER[4], line)?,
            consensus_gap: parse_cell(&row[5], CSV_HEADER[5], line)?,
            lyapunov: parse_cell(&row[6], CSV_HEADER[6], line)?,
            ergodic_gap: parse_cell(&row[7], CSV_HEADER[7], line)?,
        });
    }
    Ok(out)
}

/// The metric a comparison plot shows: accuracy when available, else the
/// master's squared error.
fn headline(r: &MetricsRecord) -> Option<f64> {
    r.top1_accuracy.or(r.master_error)
}

/// Space-separated comparison table: `k` then one column per run.
pub fn emit_plot(runs: &[Vec<MetricsRecord>], path: impl AsRef<Path>) -> Result<()> {
    let Some(first) = runs.first() else {
        return Err(Error::config("no runs to plot"));
    };
    let metric = if first.iter().any(|r| r.top1_accuracy.is_some()) {
        "top1_accuracy"
    } else {
        "master_error"
    };
    let mut out = format!("# k vs {metric}\nk");
    for run in runs {
        let name = run.first().map_or("?", |r| r.algorithm.as_str());
        write!(out, " {name}").expect("writing to a String");
    }
    out.push('\n');
    for (i, r) in first.iter().enumerate() {
        write!(out, "{}", r.k).expect("writing to a String");
        for run in runs {
            let v = run.get(i).filter(|x| x.k == r.k).and_then(headline);
            match v {
                Some(v) => write!(out, " {v}"),
                None => write!(out, " nan"),
            }
            .expect("writing to a String");
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Everything `run` and `sweep` need.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// Overrides the config roster when set.
    pub roster: Option<Vec<Algorithm>>,
    /// Overrides the config sweep when set.
    pub sweep: Option<SweepAxis>,
    /// Ignore any `[sweep]` section and run a single grid point.
    pub single: bool,
    pub overwrite: bool,
    pub overrides: Overrides,
}

/// One finished run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Sweep coordinate, e.g. `("lambda", "0.5")`.
    pub point: Option<(&'static str, String)>,
    pub algorithm: Algorithm,
    pub final_record: MetricsRecord,
    pub csv: PathBuf,
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !overwrite {
            return Err(Error::config(format!(
                "{} is not empty; pass --overwrite to replace its contents",
                dir.display()
            )));
        }
        let failed = dir.join("FAILED");
        if failed.exists() {
            fs::remove_file(failed)?;
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Run the roster over every sweep point and write all outputs.
///
/// On failure the outputs written so far stay in place next to a `FAILED`
/// marker holding the error.
pub fn run_command(manifest: &RunManifest) -> Result<Vec<RunOutcome>> {
    let file = load_config_file(&manifest.config_path, &manifest.overrides)?;
    prepare_out_dir(&manifest.out_dir, manifest.overwrite)?;
    let text = fs::read(&manifest.config_path)?;
    write_atomic(&manifest.out_dir.join("config.toml"), &text)?;
    let result = run_grid(&file, manifest);
    if let Err(e) = &result {
        write_atomic(
            &manifest.out_dir.join("FAILED"),
            format!("{e}\n").as_bytes(),
        )?;
    }
    result
}

/// Sweep coordinate, the config at that point and a penalty override.
type GridPoint = (Option<(&'static str, String)>, ConfigFile, Option<f64>);

fn run_grid(file: &ConfigFile, manifest: &RunManifest) -> Result<Vec<RunOutcome>> {
    let roster = manifest
        .roster
        .clone()
        .unwrap_or_else(|| file.roster.clone());
    let sweep = if manifest.single {
        None
    } else {
        manifest.sweep.clone().or_else(|| file.sweep.clone())
    };
    let points: Vec<GridPoint> = match &sweep {
        None => vec![(None, file.clone(), None)],
        Some(SweepAxis::Lambda(ls)) => ls
            .iter()
            .map(|&l| (Some(("lambda", l.to_string())), file.clone(), Some(l)))
            .collect(),
        Some(SweepAxis::Q(qs)) => qs
            .iter()
            .map(|&q| Ok((Some(("q", q.to_string())), file.with_q(q)?, None)))
            .collect::<Result<_>>()?,
    };
    let mut outcomes = Vec::new();
    for (point, cfg, lambda) in points {
        let dir = match &point {
            None => manifest.out_dir.clone(),
            Some((axis, v)) => manifest.out_dir.join(format!("{axis}-{v}")),
        };
        fs::create_dir_all(&dir)?;
        let workload = Arc::new(Workload::build(
            &cfg.base.problem,
            cfg.base.workers,
            cfg.base.seed,
        )?);
        let mut runs = Vec::new();
        for &alg in &roster {
            let mut exp = cfg.experiment(alg);
            if let Some(l) = lambda {
                exp.lambda = l;
            }
            let records = Simulation::with_workload(&exp, workload.clone())?
                .run_to_end()
                .map_err(|e| Error::Run {
                    context: format!("{alg}{}", point_suffix(&point)),
                    source: Box::new(e),
                })?;
            let csv = dir.join(format!("{alg}.csv"));
            emit_metrics(&records, &csv)?;
            outcomes.push(RunOutcome {
                point: point.clone(),
                algorithm: alg,
                final_record: records.last().expect("at least one record").clone(),
                csv,
            });
            runs.push(records);
        }
        emit_plot(&runs, dir.join("plot.dat"))?;
    }
    emit_summary(&outcomes, &manifest.out_dir.join("summary.csv"))?;
    Ok(outcomes)
}

fn point_suffix(point: &Option<(&'static str, String)>) -> String {
    point
        .as_ref()
        .map(|(a, v)| format!(" at {a} = {v}"))
        .unwrap_or_default()
}

fn emit_summary(outcomes: &[RunOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sweep", "value"];
    header.extend(CSV_HEADER);
    w.write_record(&header)?;
    for o in outcomes {
        let (axis, value) = o.point.clone().unwrap_or(("", String::new()));
        let mut row = vec![axis.to_string(), value];
        row.extend(record_row(&o.final_record));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Plain-text table of final metrics.
pub fn format_outcomes(outcomes: &[RunOutcome]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"));
    let mut s = format!(
        "{:<14} {:<12} {:>8} {:>12} {:>12} {:>12}\n",
        "point", "algorithm", "top1", "master_err", "consensus", "lyapunov"
    );
    for o in outcomes {
        let r = &o.final_record;
        let point = o
            .point
            .as_ref()
            .map(|(a, v)| format!("{a}={v}"))
            .unwrap_or_else(|| "-".into());
        writeln!(
            s,
            "{:<14} {:<12} {:>8} {:>12} {:>12} {:>12}",
            point,
            o.algorithm.label(),
            r.top1_accuracy
                .map_or_else(|| "-".to_string(), |a| format!("{a:.4}")),
            fmt(r.master_error),
            fmt(r.consensus_gap),
            fmt(r.lyapunov),
        )
        .expect("writing to a String");
    }
    s
}

/// What `parse-check` should read.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseTarget {
    MnistDir(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
    Libsvm { path: PathBuf, features: usize },
}

fn describe(name: &str, ds: &data::Dataset) -> String {
    let hist: Vec<String> = ds.class_histogram().iter().map(usize::to_string).collect();
    format!(
        "{name}: {} rows, {} features, {} classes, per-class counts [{}]",
        ds.len(),
        ds.feature_count(),
        ds.class_count(),
        hist.join(", ")
    )
}

/// Parse a dataset and summarise it, or report the first format error.
pub fn parse_check(target: &ParseTarget) -> Result<String> {
    match target {
        ParseTarget::MnistDir(dir) => {
            let (train, test) = data::load_mnist_dir(dir)?;
            Ok(format!(
                "{}\n{}",
                describe("train", &train),
                describe("test", &test)
            ))
        }
        ParseTarget::Idx { images, labels } => {
            let ds = data::parse_idx(
                &data::read_maybe_gzip(images)?,
                &data::read_maybe_gzip(labels)?,
            )?;
            Ok(describe("idx", &ds))
        }
        ParseTarget::Libsvm { path, features } => {
            let text = String::from_utf8(data::read_maybe_gzip(path)?)
                .map_err(|e| Error::config(format!("{} is not UTF-8: {e}", path.display())))?;
            Ok(describe("libsvm", &data::parse_libsvm(&text, *features)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
[problem]
kind = "quadratic"
regularizer_scale = 1.0
centers = [[1.0], [1.0], [1.0]]
scales = [0.5, 0.5, 0.5]

[algorithm]
roster = ["admm", "rsa"]
workers = 3
lambda = 0.5
beta = 1.0

[attack]
kind = "small-value"
epsilon = 0.5
q = 1

[schedule]
master = { kind = "inverse-k", c = 0.125, offset = 3.0 }
worker = { kind = "inverse-k", c = 0.125, offset = 1.0 }

[run]
rounds = 50
seed = 1
"#;

    fn parse(text: &str) -> Result<ConfigFile> {
        parse_config(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn toy_config_parses_into_the_toy_experiment() {
        let f = parse(TOY).unwrap();
        let mut expected =
            ExperimentConfig::toy_scalar(Algorithm::Admm, AttackKind::SmallValue { epsilon: 0.5 });
        expected.rounds = 50;
        expected.seed = 1;
        assert_eq!(f.base, expected);
        assert_eq!(f.roster, vec![Algorithm::Admm, Algorithm::Rsa]);
    }

    #[test]
    fn missing_seed_and_unknown_keys_are_errors() {
        let e = parse(&TOY.replace("seed = 1", "")).unwrap_err().to_string();
        assert!(e.contains("seed required"), "{e}");
        let e = parse(&TOY.replace("epsilon = 0.5", "epsilon = 0.5\nepsilonn = 1"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("epsilonn"), "{e}");
        let e = parse(&TOY.replace("small-value", "small-valu"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("small-valu"), "{e}");
        let e = parse(&TOY.replace("epsilon = 0.5", "epsilon = -0.5"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("epsilon"), "{e}");
        let e = parse(&TOY.replace("rounds = 50", "rounds = \"many\""))
            .unwrap_err()
            .to_string();
        assert!(e.contains("rounds"), "{e}");
        let e = parse(&TOY.replace("beta = 1.0", ""))
            .unwrap_err()
            .to_string();
        assert!(e.contains("beta"), "{e}");
    }

    #[test]
    fn seed_override_replaces_a_missing_seed() {
        let ov = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let f = parse_config(&TOY.replace("seed = 1", ""), Path::new("."), &ov).unwrap();
        assert_eq!(f.base.seed, 9);
    }

    #[test]
    fn tuning_overrides_one_algorithm() {
        let text = format!("{TOY}\n[tuning.rsa]\nlambda = 0.25\nmaster = {{ kind = \"inverse-sqrt-k\", a = 1.0, b = 2.0 }}\n");
        let f = parse(&text).unwrap();
        assert_eq!(f.experiment(Algorithm::Admm).lambda, 0.5);
        let rsa = f.experiment(Algorithm::Rsa);
        assert_eq!(rsa.lambda, 0.25);
        assert_eq!(
            rsa.master_schedule,
            StepsizeSchedule::inverse_sqrt_k(1.0, 2.0)
        );
        assert!(parse(&format!("{TOY}\n[tuning.krum]\nlambda = 1.0\n")).is_err());
    }

    #[test]
    fn gaussian_mnist_config() {
        let text = r#"
[problem]
kind = "softmax"
dataset = "mnist"
[algorithm]
roster = ["admm"]
workers = 20
lambda = 0.5
beta = 0.5
[attack]
kind = "gaussian"
std = 100.0
q = 8
[schedule]
master = { kind = "inverse-sqrt-k", a = 10.0, b = 10.0 }
worker = { kind = "inverse-sqrt-k", a = 0.5, b = 10.0 }
[run]
rounds = 500
seed = 0
"#;
        let f = parse(text).unwrap();
        let ProblemSpec::Softmax(s) = &f.base.problem else {
            panic!()
        };
        assert_eq!(s.batch_size, Some(32));
        assert_eq!(s.train_cap, Some(2000));
        assert_eq!(
            s.source,
            DataSource::Mnist {
                dir: bundled_mnist_dir()
            }
        );
        assert_eq!(f.base.attack.byzantine_ids, (12..20).collect());
        assert_eq!(f.base.attack.kind, AttackKind::Gaussian { std: 100.0 });
        assert!(!f.base.reference);
    }

    fn record(k: usize, acc: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            k,
            algorithm: "admm".into(),
            top1_accuracy: acc,
            master_error: Some(0.1 + 0.2),
            worker_error: Some(1.0 / 3.0),
            consensus_gap: Some(f64::MIN_POSITIVE),
            lyapunov: None,
            ergodic_gap: Some(-2.5e-300),
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs = vec![
            record(0, None),
            record(10, Some(0.125)),
            record(20, Some(std::f64::consts::PI)),
        ];
        emit_metrics(&recs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(read_metrics(&path).unwrap(), recs);
        assert!(emit_metrics(&[], &path).is_err());
    }

    #[test]
    fn plot_has_one_column_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.dat");
        let runs: Vec<Vec<MetricsRecord>> = (0..6)
            .map(|_| vec![record(0, Some(0.1)), record(10, Some(0.5))])
            .collect();
        emit_plot(&runs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.split(' ').count() == 7));
    }
}
