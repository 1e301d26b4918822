//! Energies, free energy, the two training losses and their gradients.
//!
//! Sign convention: the network output is the energy, so class probabilities
//! are `p(c|x) = softmax(-E)[c]` and the prediction is the lowest-energy class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sample::{Domain, Sample};
use crate::scalar::Scalar;

/// Inverse temperature of the Gibbs distribution. Fixed.
pub const TAU: f64 = 1.0;

/// One energy per class.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector<T>(Vec<T>);

/// `ln(1 + t)`: `ln_1p` where it matters, the plain logarithm once `t >= 1`
/// so that integer sums such as uniform energies give `ln C` exactly.
fn log_one_plus<T: Scalar>(t: T) -> T {
    if t < T::one() {
        t.ln_1p()
    } else {
        (T::one() + t).ln()
    }
}

impl<T: Scalar> EnergyVector<T> {
    pub fn new(energies: Vec<T>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::Contract("energy vector must be nonempty".into()));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Contract("energies must be finite".into()));
        }
        Ok(Self(energies))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest energy; ties resolve to the smallest class index.
    pub fn argmin(&self) -> (usize, T) {
        let mut best = (0, self.0[0]);
        for (c, &e) in self.0.iter().enumerate().skip(1) {
            if e < best.1 {
                best = (c, e);
            }
        }
        best
    }

    /// `Σ_{c ≠ argmin} exp(-(E_c - E_min))`, the mass beyond the dominant term.
    fn tail_mass(&self) -> (usize, T, T) {
        let (arg, min) = self.argmin();
        let tail = self
            .0
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != arg)
            .map(|(_, &e)| (min - e).exp())
            .sum();
        (arg, min, tail)
    }

    /// `F = -log Σ_c exp(-E_c)`, evaluated around the minimum energy.
    pub fn free_energy(&self) -> T {
        let (_, min, tail) = self.tail_mass();
        min - log_one_plus(tail)
    }

    /// `softmax(-E)`.
    pub fn probabilities(&self) -> Vec<T> {
        let (_, min, tail) = self.tail_mass();
        let denom = T::one() + tail;
        self.0.iter().map(|&e| (min - e).exp() / denom).collect()
    }

    pub fn predict(&self) -> usize {
        self.argmin().0
    }

    /// `E_y - F`, the negative log-likelihood of class `y`.
    pub fn nll(&self, y: usize) -> Result<T> {
        if y >= self.len() {
            return Err(Error::Contract(format!("label {y} out of range for {} classes", self.len())));
        }
        let (_, min, tail) = self.tail_mass();
        Ok((self.0[y] - min) + log_one_plus(tail))
    }

    /// Shannon entropy of `softmax(-E)` in nats.
    pub fn entropy(&self) -> T {
        let p = self.probabilities();
        -p.iter().filter(|&&v| v > T::zero()).map(|&v| v * v.ln()).sum::<T>()
    }

    /// The same energies with `offset` added to every class.
    pub fn shifted(&self, offset: T) -> Self {
        Self(self.0.iter().map(|&e| e + offset).collect())
    }
}

pub fn energies<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<EnergyVector<T>> {
    model.energies(x)
}

pub fn free_energy<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<T> {
    Ok(model.energies(x)?.free_energy())
}

pub fn predict<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<usize> {
    Ok(model.energies(x)?.predict())
}

pub fn nll_loss<T: Scalar>(model: &ModelParams<T>, x: &[T], y: usize) -> Result<T> {
    model.energies(x)?.nll(y)
}

/// Hinge `max(0, F(x) - delta)`.
pub fn fea_loss<T: Scalar>(model: &ModelParams<T>, x: &[T], delta: T) -> Result<T> {
    Ok(fea_hinge(free_energy(model, x)?, delta))
}

pub fn fea_hinge<T: Scalar>(free_energy: T, delta: T) -> T {
    (free_energy - delta).max(T::zero())
}

/// Loss weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Weight of the free-energy alignment term.
    pub gamma: f64,
    /// Weight of the source supervised term.
    pub delta_s: f64,
    /// Weight of the labeled-target supervised term.
    pub delta_t: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { gamma: 0.01, delta_s: 1.0, delta_t: 1.0 }
    }
}

/// Value of the objective on one batch, split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    /// Weighted supervised term `δ_s·mean nll(S) + δ_t·mean nll(T_l)`.
    pub nll: T,
    /// Mean alignment hinge over the unlabeled target samples.
    pub fea: T,
    /// `nll + γ·fea`.
    pub total: T,
    pub tau: T,
    pub source_nll: T,
    pub target_nll: T,
}

struct BatchCounts {
    source: usize,
    target: usize,
}

fn count_labeled<T: Scalar>(model: &ModelParams<T>, labeled: &[Sample<T>]) -> Result<BatchCounts> {
    if labeled.is_empty() {
        return Err(Error::Contract("objective needs at least one labeled sample".into()));
    }
    let mut counts = BatchCounts { source: 0, target: 0 };
    for s in labeled {
        s.validate(model.dim(), model.classes())?;
        s.require_label()?;
        match s.domain {
            Domain::Source => counts.source += 1,
            Domain::Target => counts.target += 1,
        }
    }
    Ok(counts)
}

fn per_sample_weight<T: Scalar>(domain: Domain, counts: &BatchCounts, cfg: &ObjectiveConfig) -> T {
    match domain {
        Domain::Source => T::lit(cfg.delta_s) / T::from_usize_lossy(counts.source),
        Domain::Target => T::lit(cfg.delta_t) / T::from_usize_lossy(counts.target),
    }
}

/// Objective over a batch. Labeled samples are weighted by their domain tag;
/// an empty domain contributes nothing.
pub fn objective_batch<T: Scalar>(
    model: &ModelParams<T>,
    labeled: &[Sample<T>],
    unlabeled_target: &[Sample<T>],
    delta: T,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown<T>> {
    evaluate_objective(model, labeled, unlabeled_target, delta, cfg, None)
}

/// Objective value and its gradient with respect to every parameter.
///
/// At the hinge kink `F = Δ` the subgradient 0 is used.
pub fn grad_objective<T: Scalar>(
    model: &ModelParams<T>,
    labeled: &[Sample<T>],
    unlabeled_target: &[Sample<T>],
    delta: T,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    let mut grad = model.zeros_like();
    let loss = evaluate_objective(model, labeled, unlabeled_target, delta, cfg, Some(&mut grad))?;
    Ok((loss, grad))
}

fn evaluate_objective<T: Scalar>(
    model: &ModelParams<T>,
    labeled: &[Sample<T>],
    unlabeled_target: &[Sample<T>],
    delta: T,
    cfg: &ObjectiveConfig,
    mut grad: Option<&mut ModelParams<T>>,
) -> Result<LossBreakdown<T>> {
    let counts = count_labeled(model, labeled)?;
    let mut source_sum = T::zero();
    let mut target_sum = T::zero();
    for s in labeled {
        let y = s.require_label()?;
        let (ev, hidden) = model.forward(&s.features)?;
        let loss = ev.nll(y)?;
        match s.domain {
            Domain::Source => source_sum += loss,
            Domain::Target => target_sum += loss,
        }
        if let Some(g) = grad.as_deref_mut() {
            let w = per_sample_weight::<T>(s.domain, &counts, cfg);
            model.accumulate_energy_grad(&s.features, hidden.as_deref(), &nll_class_weights(&ev, y), w, g);
        }
    }

    let gamma = T::lit(cfg.gamma);
    let mut fea_sum = T::zero();
    for s in unlabeled_target {
        s.validate(model.dim(), model.classes())?;
        let (ev, hidden) = model.forward(&s.features)?;
        let f = ev.free_energy();
        fea_sum += fea_hinge(f, delta);
        if f > delta {
            if let Some(g) = grad.as_deref_mut() {
                let w = gamma / T::from_usize_lossy(unlabeled_target.len());
                model.accumulate_energy_grad(&s.features, hidden.as_deref(), &ev.probabilities(), w, g);
            }
        }
    }

    let source_nll = if counts.source > 0 { source_sum / T::from_usize_lossy(counts.source) } else { T::zero() };
    let target_nll = if counts.target > 0 { target_sum / T::from_usize_lossy(counts.target) } else { T::zero() };
    let fea = if unlabeled_target.is_empty() {
        T::zero()
    } else {
        fea_sum / T::from_usize_lossy(unlabeled_target.len())
    };
    let nll = T::lit(cfg.delta_s) * source_nll + T::lit(cfg.delta_t) * target_nll;
    Ok(LossBreakdown { nll, fea, total: nll + gamma * fea, tau: T::lit(TAU), source_nll, target_nll })
}

/// `dL_nll/dE_c = 1{c=y} - p(c|x)`. The `c = y` entry is evaluated as the
/// probability mass of the other classes so it stays exact when `p(y|x) → 1`.
pub(crate) fn nll_class_weights<T: Scalar>(ev: &EnergyVector<T>, y: usize) -> Vec<T> {
    let p = ev.probabilities();
    let rest: T = p.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, &v)| v).sum();
    p.iter().enumerate().map(|(c, &v)| if c == y { rest } else { -v }).collect()
}

/// Gradient of `L_nll(x, y)` with respect to every parameter.
pub fn grad_nll<T: Scalar>(model: &ModelParams<T>, x: &[T], y: usize) -> Result<ModelParams<T>> {
    let (ev, hidden) = model.forward(x)?;
    if y >= model.classes() {
        return Err(Error::Contract(format!("label {y} out of range for {} classes", model.classes())));
    }
    let mut grad = model.zeros_like();
    model.accumulate_energy_grad(x, hidden.as_deref(), &nll_class_weights(&ev, y), T::one(), &mut grad);
    Ok(grad)
}

/// Gradient of `F(x)`: `Σ_c p(c|x) ∇E(x, c)`.
pub fn grad_free_energy<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<ModelParams<T>> {
    let (ev, hidden) = model.forward(x)?;
    let mut grad = model.zeros_like();
    model.accumulate_energy_grad(x, hidden.as_deref(), &ev.probabilities(), T::one(), &mut grad);
    Ok(grad)
}

/// Central-difference gradient of an arbitrary scalar loss over all parameters.
pub fn finite_diff_grad<T, F>(model: &ModelParams<T>, loss: F, h: T) -> Result<ModelParams<T>>
where
    T: Scalar,
    F: Fn(&ModelParams<T>) -> T,
{
    if !(h > T::zero()) {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let base = model.flat();
    let mut probe = model.clone();
    let mut values = base.clone();
    let mut out = Vec::with_capacity(base.len());
    let two_h = h + h;
    for i in 0..base.len() {
        values[i] = base[i] + h;
        probe.set_flat(&values)?;
        let up = loss(&probe);
        values[i] = base[i] - h;
        probe.set_flat(&values)?;
        let down = loss(&probe);
        values[i] = base[i];
        out.push((up - down) / two_h);
    }
    let mut grad = model.zeros_like();
    grad.set_flat(&out)?;
    Ok(grad)
}
