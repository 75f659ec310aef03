//! Loss models and their first-order oracles.
//!
//! Two cost families are supported: the separable quadratic
//! `(s/2)‖x − a‖²` used by the toy problems, and multi-class softmax
//! regression over a worker's data shard. A softmax model with `C` classes and
//! `F` features is stored as `C` weight rows concatenated into one vector of
//! length `C·F`.

use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use crate::data::Dataset;
use crate::{Error, Result};

/// A dense real parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ModelVector(vec![value; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &[f64]) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += a * o;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.0.iter().map(|v| a * v).collect()
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        self.0.iter().zip(other).map(|(a, b)| a - b).collect()
    }

    pub fn add(&self, other: &[f64]) -> Self {
        self.0.iter().zip(other).map(|(a, b)| a + b).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist_inf(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl Deref for ModelVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

impl From<&[f64]> for ModelVector {
    fn from(v: &[f64]) -> Self {
        ModelVector(v.to_vec())
    }
}

impl FromIterator<f64> for ModelVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        ModelVector(iter.into_iter().collect())
    }
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::config(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        )));
    }
    Ok(())
}

/// Softmax regression over a fixed subset of a shared dataset.
#[derive(Debug, Clone)]
pub struct SoftmaxLoss {
    data: Arc<Dataset>,
    shard: Arc<[usize]>,
}

impl SoftmaxLoss {
    pub fn new(data: Arc<Dataset>, shard: impl Into<Arc<[usize]>>) -> Result<Self> {
        let shard = shard.into();
        if shard.is_empty() {
            return Err(Error::config("softmax loss needs at least one sample"));
        }
        if let Some(&bad) = shard.iter().find(|&&i| i >= data.len()) {
            return Err(Error::config(format!(
                "shard index {bad} out of range for dataset of {} rows",
                data.len()
            )));
        }
        Ok(SoftmaxLoss { data, shard })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }

    pub fn classes(&self) -> usize {
        self.data.class_count()
    }

    pub fn features(&self) -> usize {
        self.data.feature_count()
    }

    pub fn dim(&self) -> usize {
        self.classes() * self.features()
    }

    /// Mean cross-entropy and (optionally) its gradient over `rows`.
    fn evaluate(&self, x: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let classes = self.classes();
        let nf = self.features();
        let mut logits = vec![0.0; classes];
        let mut loss = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for &row in rows {
            let f = self.data.row(row);
            let label = self.data.label(row);
            for (c, z) in logits.iter_mut().enumerate() {
                let w = &x[c * nf..(c + 1) * nf];
                *z = w.iter().zip(f).map(|(a, b)| a * b).sum();
            }
            let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|z| (z - zmax).exp()).sum();
            let lse = zmax + sum.ln();
            loss += lse - logits[label];
            if let Some(g) = grad.as_deref_mut() {
                for (c, &z) in logits.iter().enumerate() {
                    let mut coef = (z - lse).exp();
                    if c == label {
                        coef -= 1.0;
                    }
                    if coef == 0.0 {
                        continue;
                    }
                    let gc = &mut g[c * nf..(c + 1) * nf];
                    for (gv, fv) in gc.iter_mut().zip(f) {
                        *gv += coef * fv;
                    }
                }
            }
        }
        let inv = 1.0 / rows.len() as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        loss * inv
    }
}

/// A cost function with exact and stochastic first-order oracles.
#[derive(Debug, Clone)]
pub enum LossModel {
    /// `(scale/2)·‖x − center‖²`
    Quadratic {
        center: ModelVector,
        scale: f64,
    },
    Softmax(SoftmaxLoss),
}

impl LossModel {
    pub fn quadratic(center: impl Into<ModelVector>, scale: f64) -> Self {
        LossModel::Quadratic {
            center: center.into(),
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LossModel::Quadratic { center, .. } => center.len(),
            LossModel::Softmax(s) => s.dim(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, LossModel::Quadratic { .. })
    }

    /// Number of local samples a stochastic batch can be drawn from.
    pub fn sample_count(&self) -> usize {
        match self {
            LossModel::Quadratic { .. } => 1,
            LossModel::Softmax(s) => s.shard().len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim("loss value", self.dim(), x.len())?;
        Ok(match self {
            LossModel::Quadratic { center, scale } => 0.5 * scale * center.dist_sq(x),
            LossModel::Softmax(s) => s.evaluate(x, s.shard(), None),
        })
    }

    pub fn exact_gradient(&self, x: &[f64]) -> Result<ModelVector> {
        check_dim("exact gradient", self.dim(), x.len())?;
        Ok(match self {
            LossModel::Quadratic { center, scale } => x
                .iter()
                .zip(center.iter())
                .map(|(a, c)| scale * (a - c))
                .collect(),
            LossModel::Softmax(s) => {
                let mut g = ModelVector::zeros(s.dim());
                s.evaluate(x, s.shard(), Some(&mut g));
                g
            }
        })
    }

    /// Mini-batch gradient; `batch` holds dataset row indices, repeats allowed.
    /// For quadratic models the batch only has to be non-empty.
    pub fn stochastic_gradient(&self, x: &[f64], batch: &[usize]) -> Result<ModelVector> {
        if batch.is_empty() {
            return Err(Error::config("stochastic gradient needs a non-empty batch"));
        }
        match self {
            LossModel::Quadratic { .. } => self.exact_gradient(x),
            LossModel::Softmax(s) => {
                check_dim("stochastic gradient", s.dim(), x.len())?;
                if let Some(&bad) = batch.iter().find(|&&i| i >= s.dataset().len()) {
                    return Err(Error::config(format!("batch index {bad} out of range")));
                }
                let mut g = ModelVector::zeros(s.dim());
                s.evaluate(x, batch, Some(&mut g));
                Ok(g)
            }
        }
    }

    /// The model's own minimiser when it has a closed form.
    pub fn local_minimizer(&self) -> Option<ModelVector> {
        match self {
            LossModel::Quadratic { center, scale } if *scale > 0.0 => Some(center.clone()),
            _ => None,
        }
    }
}

/// Strong-convexity / smoothness constants of a problem.
///
/// `delta` carries per-worker bounds on the stochastic gradient standard
/// deviation; it is informational only.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceProfile {
    pub mu_0: f64,
    pub l_0: f64,
    pub mu: Vec<f64>,
    pub l: Vec<f64>,
    pub delta: Vec<f64>,
}

impl ConvergenceProfile {
    /// Largest `c` allowed by the O(1/k) schedule condition, exclusive.
    pub fn rate_constant_bound(&self) -> f64 {
        let pair = |mu: f64, l: f64| mu * l / (mu + l);
        self.mu
            .iter()
            .zip(&self.l)
            .fold(pair(self.mu_0, self.l_0), |m, (&mu, &l)| m.min(pair(mu, l)))
    }

    /// Default stepsize cap `min{1/(μ₀+L₀), 1/(μᵢ+Lᵢ)}`.
    pub fn stepsize_cap(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.l)
            .fold(1.0 / (self.mu_0 + self.l_0), |m, (&mu, &l)| {
                m.min(1.0 / (mu + l))
            })
    }
}

/// The regular workers' costs plus the master's regulariser.
#[derive(Debug, Clone)]
pub struct Problem {
    pub regularizer: LossModel,
    pub workers: Vec<LossModel>,
}

const SOLVER_TOLERANCE: f64 = 1e-10;
const SOLVER_ACCEPT: f64 = 1e-8;
const SOLVER_MAX_ITERS: usize = 100_000;

impl Problem {
    pub fn new(regularizer: LossModel, workers: Vec<LossModel>) -> Result<Self> {
        let d = regularizer.dim();
        for (i, w) in workers.iter().enumerate() {
            check_dim(&format!("worker {i} loss"), d, w.dim())?;
        }
        Ok(Problem {
            regularizer,
            workers,
        })
    }

    pub fn dim(&self) -> usize {
        self.regularizer.dim()
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let mut total = self.regularizer.value(x)?;
        for w in &self.workers {
            total += w.value(x)?;
        }
        Ok(total)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<ModelVector> {
        let mut g = self.regularizer.exact_gradient(x)?;
        for w in &self.workers {
            g.axpy(1.0, &w.exact_gradient(x)?);
        }
        Ok(g)
    }

    fn is_quadratic(&self) -> bool {
        self.regularizer.is_quadratic() && self.workers.iter().all(LossModel::is_quadratic)
    }

    /// Minimiser of the regular workers' summed costs plus the regulariser.
    ///
    /// Quadratic problems are solved in closed form; anything else runs
    /// full-gradient descent with Armijo backtracking.
    pub fn exact_minimizer(&self) -> Result<ModelVector> {
        if self.is_quadratic() {
            return self.quadratic_minimizer();
        }
        self.descend()
    }

    fn quadratic_minimizer(&self) -> Result<ModelVector> {
        let d = self.dim();
        let mut num = ModelVector::zeros(d);
        let mut den = 0.0;
        for m in std::iter::once(&self.regularizer).chain(&self.workers) {
            if let LossModel::Quadratic { center, scale } = m {
                num.axpy(*scale, center);
                den += scale;
            }
        }
        if den <= 0.0 {
            return Err(Error::config("quadratic problem has zero total curvature"));
        }
        Ok(num.scaled(1.0 / den))
    }

    fn descend(&self) -> Result<ModelVector> {
        let mut x = ModelVector::zeros(self.dim());
        let mut f = self.objective(&x)?;
        let mut g = self.gradient(&x)?;
        let mut step = 1.0 / g.norm().max(1.0);
        let mut prev: Option<(ModelVector, ModelVector)> = None;
        for iter in 0..SOLVER_MAX_ITERS {
            let gnorm = g.norm();
            if gnorm <= SOLVER_TOLERANCE {
                return Ok(x);
            }
            // Barzilai-Borwein trial step, then backtrack.
            if let Some((px, pg)) = &prev {
                let s = x.sub(px);
                let y = g.sub(pg);
                let sy = s.dot(&y);
                if sy > 0.0 {
                    step = (s.norm_sq() / sy).clamp(1e-12, 1e12);
                }
            }
            let gsq = gnorm * gnorm;
            let slack = 1e-14 * f.abs().max(1.0);
            let mut accepted = None;
            let mut t = step;
            for _ in 0..60 {
                let mut trial = x.clone();
                trial.axpy(-t, &g);
                let ft = self.objective(&trial)?;
                if ft <= f - 1e-4 * t * gsq || (ft <= f + slack && t * gsq <= slack) {
                    accepted = Some((trial, ft));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, fnext)) = accepted else {
                return self.finish(x, g, iter);
            };
            let gnext = self.gradient(&next)?;
            prev = Some((
                std::mem::replace(&mut x, next),
                std::mem::replace(&mut g, gnext),
            ));
            f = fnext;
            step = t;
        }
        self.finish(x, g, SOLVER_MAX_ITERS)
    }

    fn finish(&self, x: ModelVector, g: ModelVector, iterations: usize) -> Result<ModelVector> {
        let grad_norm = g.norm();
        if grad_norm <= SOLVER_ACCEPT {
            Ok(x)
        } else {
            Err(Error::Solver {
                iterations,
                grad_norm,
            })
        }
    }

    /// Smallest TV weight for which the penalised problem stays consensual:
    /// `maxᵢ ‖∇E[Fᵢ](x̃*)‖∞` over the regular workers.
    pub fn lambda_zero(&self) -> Result<f64> {
        let x = self.exact_minimizer()?;
        self.lambda_zero_at(&x)
    }

    pub fn lambda_zero_at(&self, x_star: &[f64]) -> Result<f64> {
        let mut lam = 0.0f64;
        for w in &self.workers {
            lam = lam.max(w.exact_gradient(x_star)?.norm_inf());
        }
        Ok(lam)
    }

    /// Constants for quadratic problems, where `μ = L = scale`.
    pub fn profile(&self) -> Option<ConvergenceProfile> {
        let scale = |m: &LossModel| match m {
            LossModel::Quadratic { scale, .. } if *scale > 0.0 => Some(*scale),
            _ => None,
        };
        let s0 = scale(&self.regularizer)?;
        let s: Vec<f64> = self.workers.iter().map(scale).collect::<Option<_>>()?;
        Some(ConvergenceProfile {
            mu_0: s0,
            l_0: s0,
            mu: s.clone(),
            l: s,
            delta: vec![0.0; self.workers.len()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tiny_softmax() -> LossModel {
        // 3 samples, 2 features, 2 classes
        let ds = Dataset::new(vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0], vec![0, 1, 1], 2).unwrap();
        LossModel::Softmax(SoftmaxLoss::new(Arc::new(ds), vec![0, 1, 2]).unwrap())
    }

    fn central_difference(m: &LossModel, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|t| {
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[t] += h;
                q[t] -= h;
                (m.value(&p).unwrap() - m.value(&q).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_gradient_examples() {
        let m = LossModel::quadratic(vec![1.0], 0.5);
        assert_eq!(&*m.exact_gradient(&[1.0]).unwrap(), &[0.0]);
        assert_eq!(&*m.exact_gradient(&[0.0]).unwrap(), &[-0.5]);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let m = LossModel::quadratic(vec![1.0, 2.0], 1.0);
        assert!(matches!(m.exact_gradient(&[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let m = tiny_softmax();
        let x = [0.3, -0.2, 0.1, 0.4];
        let g = m.exact_gradient(&x).unwrap();
        let fd = central_difference(&m, &x, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn full_batch_equals_exact_and_singletons_average_to_exact() {
        let m = tiny_softmax();
        let x = [0.3, -0.2, 0.1, 0.4];
        let exact = m.exact_gradient(&x).unwrap();
        let full = m.stochastic_gradient(&x, &[0, 1, 2]).unwrap();
        assert_eq!(exact, full);
        let mut avg = ModelVector::zeros(4);
        for i in 0..3 {
            avg.axpy(1.0 / 3.0, &m.stochastic_gradient(&x, &[i]).unwrap());
        }
        for (a, b) in avg.iter().zip(exact.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn quadratic_stochastic_gradient_is_exact_and_rejects_empty_batch() {
        let m = LossModel::quadratic(vec![2.0, -1.0], 3.0);
        let x = [0.5, 0.5];
        assert_eq!(
            m.stochastic_gradient(&x, &[0]).unwrap(),
            m.exact_gradient(&x).unwrap()
        );
        assert!(matches!(
            m.stochastic_gradient(&x, &[]),
            Err(Error::Config(_))
        ));
    }

    fn example_one() -> Problem {
        Problem::new(
            LossModel::quadratic(vec![0.0], 1.0),
            vec![
                LossModel::quadratic(vec![1.0], 0.5),
                LossModel::quadratic(vec![1.0], 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn exact_minimizer_examples() {
        assert_abs_diff_eq!(
            example_one().exact_minimizer().unwrap()[0],
            0.5,
            epsilon = 1e-15
        );

        let single = Problem::new(
            LossModel::quadratic(vec![0.0, 0.0], 0.0),
            vec![LossModel::quadratic(vec![3.0, -2.0], 2.0)],
        )
        .unwrap();
        assert_eq!(&*single.exact_minimizer().unwrap(), &[3.0, -2.0]);

        let sym = Problem::new(
            LossModel::quadratic(vec![0.0], 0.0),
            vec![
                LossModel::quadratic(vec![0.0], 0.5),
                LossModel::quadratic(vec![2.0], 0.5),
            ],
        )
        .unwrap();
        assert_eq!(sym.exact_minimizer().unwrap()[0], 1.0);
        assert_abs_diff_eq!(sym.lambda_zero().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn lambda_zero_examples() {
        assert_abs_diff_eq!(example_one().lambda_zero().unwrap(), 0.25, epsilon = 1e-15);
        let iid = Problem::new(
            LossModel::quadratic(vec![1.0], 1.0),
            vec![LossModel::quadratic(vec![1.0], 0.5); 4],
        )
        .unwrap();
        assert_eq!(iid.lambda_zero().unwrap(), 0.0);
    }

    #[test]
    fn softmax_minimizer_reaches_tolerance() {
        let ds = crate::data::synthetic_blobs(3, 4, 12, 1.0, 5).unwrap();
        let ds = Arc::new(ds);
        let shards = [(0..18).collect::<Vec<_>>(), (18..36).collect()];
        let workers = shards
            .iter()
            .map(|s| LossModel::Softmax(SoftmaxLoss::new(ds.clone(), s.clone()).unwrap()))
            .collect();
        let p = Problem::new(LossModel::quadratic(vec![0.0; 12], 0.01), workers).unwrap();
        let x = p.exact_minimizer().unwrap();
        assert!(p.gradient(&x).unwrap().norm() <= 1e-8);
    }

    #[test]
    fn profile_for_quadratics() {
        let p = example_one().profile().unwrap();
        assert_eq!(p.mu_0, 1.0);
        assert_eq!(p.l, vec![0.5, 0.5]);
        assert_eq!(p.rate_constant_bound(), 0.25);
        assert_eq!(p.stepsize_cap(), 0.5);
    }

    proptest! {
        #[test]
        fn quadratic_monotonicity_is_exact(
            s in 0.1f64..10.0,
            a in prop::collection::vec(-5.0f64..5.0, 3),
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let m = LossModel::quadratic(a, s);
            let gx = m.exact_gradient(&x).unwrap();
            let gy = m.exact_gradient(&y).unwrap();
            let diff = ModelVector::from(x.clone()).sub(&y);
            let lhs = gx.sub(&gy).dot(&diff);
            prop_assert!((lhs - s * diff.norm_sq()).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn gradients_match_central_differences(x in prop::collection::vec(-1.0f64..1.0, 4)) {
            let m = tiny_softmax();
            let g = m.exact_gradient(&x).unwrap();
            let fd = central_difference(&m, &x, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-2));
            }
            let q = LossModel::quadratic(vec![0.3, -0.7, 1.1, 0.0], 1.7);
            let gq = q.exact_gradient(&x).unwrap();
            let fdq = central_difference(&q, &x, 1e-5);
            for (a, b) in gq.iter().zip(&fdq) {
                prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-2));
            }
        }
    }
}
