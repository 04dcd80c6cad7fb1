//! The learning task each device runs: convex losses over a local dataset,
//! the gradient-corrected surrogate objective a device minimizes for its
//! update, plain gradient descent on that surrogate with relative-accuracy
//! accounting, iteration bounds, and the access point's update averaging.

pub mod data;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use data::LocalDataset;

/// Flat parameter (or update) vector exchanged between devices and the AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(len: usize) -> Self {
        ModelVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &ModelVector) -> ModelVector {
        ModelVector(self.0.iter().zip(&other.0).map(|(a, b)| a + scale * b).collect())
    }

    pub fn scaled(&self, scale: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|a| a * scale).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: self.len() });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// log(1 + exp(-y x^T w)) + reg/2 |w|^2 with y in {-1, +1}.
    RegularizedLogistic,
    /// 0.5 (x^T w - y)^2 + reg/2 |w|^2.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningTask {
    pub loss: LossKind,
    /// L2 regularization weight.
    pub regularization: f64,
    /// Strong-convexity modulus of the local objectives.
    pub strong_convexity: f64,
    /// Lipschitz constant of the local gradients.
    pub smoothness: f64,
    /// Weight of the global-gradient correction in the surrogate.
    pub surrogate_weight: f64,
    pub step_size: f64,
}

impl LearningTask {
    /// Derive smoothness and strong convexity from the datasets' second-moment
    /// spectra and set the step size to `step_scale / L`.
    ///
    /// Logistic losses use the 1/4 curvature bound of the sigmoid, so L is an
    /// upper bound and the modulus is the regularization alone. Quadratic
    /// losses get exact constants.
    pub fn from_data(
        loss: LossKind,
        regularization: f64,
        surrogate_weight: f64,
        step_scale: f64,
        datasets: &[LocalDataset],
    ) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Empty("no datasets to estimate curvature from"));
        }
        let spectra: Vec<(f64, f64)> = datasets.iter().map(LocalDataset::gram_spectrum).collect();
        let hi = spectra.iter().map(|s| s.1).fold(0.0, f64::max);
        let lo = spectra.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let (mu, l) = match loss {
            LossKind::RegularizedLogistic => (regularization, 0.25 * hi + regularization),
            LossKind::Quadratic => (lo + regularization, hi + regularization),
        };
        let task = LearningTask {
            loss,
            regularization,
            strong_convexity: mu,
            smoothness: l,
            surrogate_weight,
            step_size: step_scale / l,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(crate::error::config_err(format!("task.{field}"), reason));
        if !(self.strong_convexity > 0.0) {
            return bad("strong_convexity", "must be > 0");
        }
        if !(self.smoothness >= self.strong_convexity) {
            return bad("smoothness", "must be >= strong convexity");
        }
        if !(self.surrogate_weight > 0.0) {
            return bad("surrogate_weight", "must be > 0");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size", "must be > 0");
        }
        let f = self.contraction_factor();
        if !(f > 0.0 && f < 1.0) {
            return bad("step_size", "0.5 (eta L)^2 - eta L + 1 must lie in (0, 1)");
        }
        Ok(())
    }

    /// 0.5 eta^2 L^2 - eta L + 1, the per-iteration factor behind [`min_iterations`].
    pub fn contraction_factor(&self) -> f64 {
        let el = self.step_size * self.smoothness;
        0.5 * el * el - el + 1.0
    }

    /// 0.5 mu eta^2 L - mu eta + 1, the factor behind [`accuracy_bound`].
    pub fn accuracy_factor(&self) -> f64 {
        let (mu, eta, l) = (self.strong_convexity, self.step_size, self.smoothness);
        0.5 * mu * eta * eta * l - mu * eta + 1.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-m)) without overflow.
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn sample_loss(task: &LearningTask, w: &[f64], x: &[f64], y: f64) -> f64 {
    let z = dot(w, x);
    match task.loss {
        LossKind::RegularizedLogistic => softplus_neg(y * z),
        LossKind::Quadratic => 0.5 * (z - y) * (z - y),
    }
}

/// d(sample loss)/dz where z = x^T w.
fn sample_slope(task: &LearningTask, w: &[f64], x: &[f64], y: f64) -> f64 {
    let z = dot(w, x);
    match task.loss {
        LossKind::RegularizedLogistic => -y * sigmoid(-y * z),
        LossKind::Quadratic => z - y,
    }
}

fn check_dims(w: &ModelVector, data: &LocalDataset) -> Result<()> {
    w.check_len(data.dim())
}

/// Mean per-sample loss over the device's data.
pub fn local_loss(w: &ModelVector, data: &LocalDataset, task: &LearningTask) -> Result<f64> {
    check_dims(w, data)?;
    let sum: f64 = data.samples().map(|(x, y)| sample_loss(task, &w.0, x, y)).sum();
    Ok(sum / data.len() as f64 + 0.5 * task.regularization * w.dot(w))
}

pub fn local_gradient(w: &ModelVector, data: &LocalDataset, task: &LearningTask) -> Result<ModelVector> {
    check_dims(w, data)?;
    let mut g = vec![0.0; w.len()];
    for (x, y) in data.samples() {
        let s = sample_slope(task, &w.0, x, y);
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += s * xi;
        }
    }
    let n = data.len() as f64;
    for (gi, wi) in g.iter_mut().zip(&w.0) {
        *gi = *gi / n + task.regularization * wi;
    }
    Ok(ModelVector(g))
}

/// Sample-weighted loss over all devices.
pub fn global_loss(w: &ModelVector, datasets: &[LocalDataset], task: &LearningTask) -> Result<f64> {
    if datasets.is_empty() {
        return Err(Error::Empty("global loss needs at least one device"));
    }
    let total: usize = datasets.iter().map(LocalDataset::len).sum();
    let mut acc = 0.0;
    for d in datasets {
        acc += d.len() as f64 * local_loss(w, d, task)?;
    }
    Ok(acc / total as f64)
}

/// Plain average of the devices' local gradients, as broadcast by the AP.
pub fn average_gradients(grads: &[ModelVector]) -> Result<ModelVector> {
    mean_of(grads, "no gradients to average")
}

fn mean_of(vs: &[ModelVector], what: &'static str) -> Result<ModelVector> {
    let first = vs.first().ok_or(Error::Empty(what))?;
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        v.check_len(first.len())?;
        for (a, b) in acc.iter_mut().zip(&v.0) {
            *a += b;
        }
    }
    let k = vs.len() as f64;
    Ok(ModelVector(acc.into_iter().map(|a| a / k).collect()))
}

/// The surrogate a device minimizes over its update h:
/// F(h) = L_k(w + h) - (grad L_k(w) - xi grad G(w))^T h.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    base: &'a ModelVector,
    /// grad L_k(w) - xi grad G(w)
    correction: ModelVector,
    data: &'a LocalDataset,
    task: &'a LearningTask,
}

impl<'a> Surrogate<'a> {
    pub fn new(
        base: &'a ModelVector,
        local_grad: &ModelVector,
        global_grad: &ModelVector,
        data: &'a LocalDataset,
        task: &'a LearningTask,
    ) -> Result<Self> {
        check_dims(base, data)?;
        local_grad.check_len(base.len())?;
        global_grad.check_len(base.len())?;
        Ok(Surrogate {
            base,
            correction: local_grad.add_scaled(-task.surrogate_weight, global_grad),
            data,
            task,
        })
    }

    pub fn value(&self, h: &ModelVector) -> Result<f64> {
        h.check_len(self.base.len())?;
        Ok(local_loss(&self.base.add_scaled(1.0, h), self.data, self.task)? - self.correction.dot(h))
    }

    pub fn gradient(&self, h: &ModelVector) -> Result<ModelVector> {
        h.check_len(self.base.len())?;
        let g = local_gradient(&self.base.add_scaled(1.0, h), self.data, self.task)?;
        Ok(g.add_scaled(-1.0, &self.correction))
    }

    /// `iterations` gradient steps from `start`. Errors if the objective
    /// rises five steps in a row.
    pub fn descend(&self, start: ModelVector, iterations: usize) -> Result<ModelVector> {
        let eta = self.task.step_size;
        let mut h = start;
        let mut prev = self.value(&h)?;
        let mut rising = 0;
        for it in 0..iterations {
            h = h.add_scaled(-eta, &self.gradient(&h)?);
            let v = self.value(&h)?;
            if !v.is_finite() {
                return Err(Error::Divergence { iterations: it + 1 });
            }
            // rises within round-off of a converged value do not count
            rising = if v > prev + 1e-12 * prev.abs().max(1e-300) { rising + 1 } else { 0 };
            if rising >= 5 {
                return Err(Error::Divergence { iterations: it + 1 });
            }
            prev = v;
        }
        Ok(h)
    }

    /// High-precision minimizer by gradient descent down to gradient norm `tol`.
    pub fn reference_optimum(&self, tol: f64, max_iterations: usize) -> Result<ModelVector> {
        let eta = self.task.step_size;
        let mut h = ModelVector::zeros(self.base.len());
        for _ in 0..max_iterations {
            let g = self.gradient(&h)?;
            if g.norm() < tol {
                return Ok(h);
            }
            h = h.add_scaled(-eta, &g);
            if !h.is_finite() {
                return Err(Error::Divergence { iterations: max_iterations });
            }
        }
        log::debug!("reference solve stopped at the iteration cap");
        Ok(h)
    }

    /// Relative suboptimality (F(h) - F*) / (F(0) - F*), zero when the start
    /// is already optimal.
    pub fn accuracy(&self, h: &ModelVector, optimum: &ModelVector) -> Result<f64> {
        let f_star = self.value(optimum)?;
        let f0 = self.value(&ModelVector::zeros(self.base.len()))?;
        let gap0 = f0 - f_star;
        if gap0 <= 1e-14 * f0.abs().max(1.0) {
            return Ok(0.0);
        }
        Ok(((self.value(h)? - f_star) / gap0).max(0.0))
    }
}

pub fn surrogate_objective(
    w_g: &ModelVector,
    h: &ModelVector,
    local_grad: &ModelVector,
    global_grad: &ModelVector,
    data: &LocalDataset,
    task: &LearningTask,
) -> Result<f64> {
    Surrogate::new(w_g, local_grad, global_grad, data, task)?.value(h)
}

pub const REFERENCE_TOLERANCE: f64 = 1e-10;
pub const REFERENCE_MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub update: ModelVector,
    pub achieved_accuracy: f64,
}

/// Run `iterations` gradient steps on the surrogate from h = 0 and report the
/// achieved relative accuracy against a tightly converged reference.
pub fn solve_local(
    w_g: &ModelVector,
    local_grad: &ModelVector,
    global_grad: &ModelVector,
    data: &LocalDataset,
    task: &LearningTask,
    iterations: usize,
) -> Result<LocalSolution> {
    if iterations == 0 {
        return Err(Error::Domain("local solve needs at least one iteration".into()));
    }
    let s = Surrogate::new(w_g, local_grad, global_grad, data, task)?;
    let update = s.descend(ModelVector::zeros(w_g.len()), iterations)?;
    let optimum = s.reference_optimum(REFERENCE_TOLERANCE, REFERENCE_MAX_ITERATIONS)?;
    let achieved_accuracy = s.accuracy(&update, &optimum)?;
    Ok(LocalSolution { update, achieved_accuracy })
}

/// Smallest iteration count whose worst-case contraction reaches accuracy `phi`:
/// ceil(log(phi) / log(0.5 eta^2 L^2 - eta L + 1)), at least 1.
pub fn min_iterations(phi: f64, task: &LearningTask) -> Result<usize> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Domain(format!("accuracy {phi} must lie in (0, 1)")));
    }
    let factor = task.contraction_factor();
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidStepSize { factor });
    }
    let ratio = phi.ln() / factor.ln();
    // absorb round-off when the ratio is an exact integer
    Ok(((ratio - 1e-9).ceil() as usize).max(1))
}

/// Upper bound on the accuracy after `iterations` steps:
/// exp((j + 1) log(0.5 mu eta^2 L - mu eta + 1)).
pub fn accuracy_bound(iterations: f64, task: &LearningTask) -> f64 {
    ((iterations + 1.0) * task.accuracy_factor().ln()).exp()
}

/// w + mean(updates).
pub fn aggregate(w_g: &ModelVector, updates: &[ModelVector]) -> Result<ModelVector> {
    let mean = mean_of(updates, "aggregation needs at least one update")?;
    mean.check_len(w_g.len())?;
    Ok(w_g.add_scaled(1.0, &mean))
}
