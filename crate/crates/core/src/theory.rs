//! Numerical probes of the gradient-alignment results for energy-based
//! classifiers: the sign and closed form of `⟨∇L_nll, ∇F⟩` for linear
//! models, one-step free-energy descent, the step-size-conditioned descent
//! bound for general models, the exponential exchange inequality behind the
//! descent argument, and the split-source free-energy bias control.
//!
//! Every suite is deterministic in its seed: trial `k` draws from its own
//! ChaCha stream, so trials can run in parallel and still aggregate in trial
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{gen_toy, SyntheticSpec};
use crate::energy::{grad_free_energy, grad_nll, EnergyVector};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::sample::Sample;
use crate::scalar::{mean, squared_norm, Scalar};
use crate::trainer::{train_source_only, TrainConfig};

/// Lemma-check aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probe: String,
    pub seed: u64,
    pub trials: usize,
    /// Trials whose hypothesis was not met and that were left out of the count.
    pub excluded: usize,
    pub violations: usize,
    /// Smallest value of the probe's margin; a violation is a margin ≤ 0.
    pub worst_margin: f64,
    /// Largest numeric-versus-closed-form disagreement, where applicable.
    pub max_relative_error: f64,
    /// Records of the first `detail_limit` trials and of every violation.
    pub details: Vec<TrialDetail>,
}

impl ProbeReport {
    pub fn empty(probe: &str, seed: u64) -> Self {
        Self {
            probe: probe.into(),
            seed,
            trials: 0,
            excluded: 0,
            violations: 0,
            worst_margin: 0.0,
            max_relative_error: 0.0,
            details: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialDetail {
    InnerProduct {
        trial: usize,
        classes: usize,
        dim: usize,
        label: usize,
        x: Vec<f64>,
        numeric: f64,
        closed_form: f64,
        violation: bool,
    },
    Descent {
        trial: usize,
        classes: usize,
        dim: usize,
        label: usize,
        x: Vec<f64>,
        eta: f64,
        f_before: f64,
        f_after: f64,
        decrease: f64,
        violation: bool,
    },
    Exchange {
        trial: usize,
        a: f64,
        a_list: Vec<f64>,
        b_list: Vec<f64>,
        margin: f64,
        violation: bool,
    },
    StepBound {
        trial: usize,
        architecture: Architecture,
        inner_product: f64,
        gated: bool,
        grad_bound: f64,
        beta: f64,
        step_bound: f64,
        steps: Vec<StepCheck>,
        violation: bool,
    },
    Bias(BiasReport),
}

/// `⟨∇L_nll, ∇F⟩` through analytic gradients and through the closed form
/// `Σ_{c≠y} p(c|x)(p(y|x) - p(c|x))‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProduct<T> {
    pub numeric: T,
    pub closed_form: T,
}

fn require_plain_linear<T: Scalar>(model: &ModelParams<T>) -> Result<()> {
    if model.architecture() != Architecture::Linear {
        return Err(Error::UnsupportedArchitecture("the linear-model probes need a Linear architecture".into()));
    }
    if model.has_bias() {
        return Err(Error::UnsupportedArchitecture("the linear-model probes need a bias-free model".into()));
    }
    Ok(())
}

pub fn grad_inner_product<T: Scalar>(model: &ModelParams<T>, x: &[T], y: usize) -> Result<InnerProduct<T>> {
    require_plain_linear(model)?;
    let norm2 = squared_norm(x);
    if !(norm2 > T::zero()) {
        return Err(Error::Precondition("x must have positive norm".into()));
    }
    let numeric = grad_nll(model, x, y)?.dot(&grad_free_energy(model, x)?);
    let p = model.energies(x)?.probabilities();
    let closed_form = p
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &pc)| pc * (p[y] - pc))
        .sum::<T>()
        * norm2;
    Ok(InnerProduct { numeric, closed_form })
}

/// `F(θ) - F(θ')` evaluated from the energy change `d_c = E'_c - E_c` as
/// `log Σ_c p(c|x) exp(-d_c)`, which keeps its sign when both free energies
/// are large and nearly equal.
pub fn free_energy_decrease<T: Scalar>(before: &EnergyVector<T>, energy_change: &[T]) -> T {
    let p = before.probabilities();
    p.iter().zip(energy_change).map(|(&pc, &d)| pc * (-d).exp_m1()).sum::<T>().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOutcome<T> {
    pub f_before: T,
    /// Free energy after the step, by a direct forward pass.
    pub f_after: T,
    /// `F(W) - F(W')` from the exact energy change.
    pub decrease: T,
    pub descended: bool,
}

/// One gradient step `W' = W - η ∇L_nll(x, y; W)` on a correctly predicted
/// sample of a bias-free linear model.
pub fn lemma2_probe<T: Scalar>(model: &ModelParams<T>, x: &[T], y: usize, eta: T) -> Result<DescentOutcome<T>> {
    require_plain_linear(model)?;
    if !(eta >= T::zero()) {
        return Err(Error::Precondition("learning rate must be nonnegative".into()));
    }
    let before = model.energies(x)?;
    if before.predict() != y {
        return Err(Error::Precondition(format!("model predicts {} but the label is {y}", before.predict())));
    }
    let grad = grad_nll(model, x, y)?;
    let mut stepped = model.clone();
    stepped.axpy(-eta, &grad);
    // E'_c - E_c = -η ⟨∇_{ω_c} L, x⟩ for a linear map
    let change: Vec<T> = (0..model.classes()).map(|c| -eta * crate::scalar::dot(grad.class_row(c), x)).collect();
    let decrease = free_energy_decrease(&before, &change);
    Ok(DescentOutcome {
        f_before: before.free_energy(),
        f_after: stepped.energies(x)?.free_energy(),
        decrease,
        descended: decrease > T::zero(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeOutcome {
    pub holds: bool,
    /// `(LHS - RHS) / RHS`.
    pub margin: f64,
}

/// Checks `exp(a + Σb_i) + Σ exp(a_i - b_i) > exp(a) + Σ exp(a_i)` for
/// `a > a_i`, `b_i > 0`, with every exponential shifted by `a`.
pub fn lemma3_check<T: Scalar>(a: T, a_list: &[T], b_list: &[T]) -> Result<ExchangeOutcome> {
    if a_list.len() != b_list.len() {
        return Err(Error::Shape { expected: a_list.len(), got: b_list.len() });
    }
    if a_list.iter().any(|&ai| !(a > ai)) || b_list.iter().any(|&b| !(b > T::zero())) {
        return Err(Error::Precondition("need a > a_i and b_i > 0 for every i".into()));
    }
    let b_total: T = b_list.iter().copied().sum();
    let shifted: Vec<T> = a_list.iter().map(|&ai| (ai - a).exp()).collect();
    let diff = b_total.exp_m1() + shifted.iter().zip(b_list).map(|(&s, &b)| s * (-b).exp_m1()).sum::<T>();
    let rhs = T::one() + shifted.iter().copied().sum::<T>();
    Ok(ExchangeOutcome { holds: diff > T::zero(), margin: (diff / rhs).as_f64() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCheck {
    pub eta: f64,
    /// Below the locally estimated step bound.
    pub certified: bool,
    pub decrease: f64,
    pub descended: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBoundReport {
    pub inner_product: f64,
    /// Inner product not above ε: the hypothesis fails and nothing is checked.
    pub gated: bool,
    /// `G = max(‖∇L_nll‖, ‖∇F‖)` at θ.
    pub grad_bound: f64,
    pub beta: f64,
    /// `2ε / (βG²)`.
    pub step_bound: f64,
    pub steps: Vec<StepCheck>,
}

impl StepBoundReport {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| s.certified && !s.descended).count()
    }
}

/// Smoothness probe settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessSampling {
    /// Points along the descent segment paired with θ.
    pub segment_points: usize,
    /// Random pairs in a ball around θ.
    pub random_pairs: usize,
}

impl Default for SmoothnessSampling {
    fn default() -> Self {
        Self { segment_points: 16, random_pairs: 16 }
    }
}

fn gradient_ratio<T: Scalar>(model_a: &ModelParams<T>, model_b: &ModelParams<T>, x: &[T], y: usize) -> Result<T> {
    let mut diff = model_a.clone();
    diff.axpy(-T::one(), model_b);
    let dist = diff.norm();
    if !(dist > T::zero()) {
        return Ok(T::zero());
    }
    let mut dl = grad_nll(model_a, x, y)?;
    dl.axpy(-T::one(), &grad_nll(model_b, x, y)?);
    let mut df = grad_free_energy(model_a, x)?;
    df.axpy(-T::one(), &grad_free_energy(model_b, x)?);
    Ok(dl.norm().max(df.norm()) / dist)
}

/// Checks free-energy descent after one nll step for every `η` of the grid
/// below `2ε/(βG²)`, with β and G estimated around θ.
///
/// β is the largest gradient-difference ratio (of both `∇L_nll` and `∇F`)
/// over points on the segment `θ - tη_max∇L_nll`, `t ∈ (0, 1]`, and random
/// pairs in the ball of the same radius.
pub fn theorem1_probe<T: Scalar, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    x: &[T],
    y: usize,
    epsilon: T,
    eta_grid: &[T],
    sampling: &SmoothnessSampling,
    rng: &mut R,
) -> Result<StepBoundReport> {
    if !(epsilon > T::zero()) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    let g_loss = grad_nll(model, x, y)?;
    let g_free = grad_free_energy(model, x)?;
    let inner = g_loss.dot(&g_free);
    let grad_bound = g_loss.norm().max(g_free.norm());
    if !(inner > epsilon) {
        return Ok(StepBoundReport {
            inner_product: inner.as_f64(),
            gated: true,
            grad_bound: grad_bound.as_f64(),
            beta: f64::NAN,
            step_bound: f64::NAN,
            steps: Vec::new(),
        });
    }

    let eta_max = eta_grid.iter().copied().fold(T::zero(), T::max);
    let mut beta = T::zero();
    for k in 1..=sampling.segment_points {
        let t = T::from_usize_lossy(k) / T::from_usize_lossy(sampling.segment_points);
        let mut point = model.clone();
        point.axpy(-t * eta_max, &g_loss);
        beta = beta.max(gradient_ratio(&point, model, x, y)?);
    }
    let radius = eta_max * g_loss.norm();
    let n = model.num_params();
    for _ in 0..sampling.random_pairs {
        let mut pair = [model.clone(), model.clone()];
        for p in &mut pair {
            let dir: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
            let len = squared_norm(&dir).sqrt();
            let r = radius * T::lit(rng.random::<f64>());
            let mut offset = model.zeros_like();
            offset.set_flat(&dir.iter().map(|&d| d / len * r).collect::<Vec<_>>())?;
            p.axpy(T::one(), &offset);
        }
        beta = beta.max(gradient_ratio(&pair[0], &pair[1], x, y)?);
    }

    let step_bound = if beta > T::zero() {
        (epsilon + epsilon) / (beta * grad_bound * grad_bound)
    } else {
        T::infinity()
    };
    let before = model.energies(x)?;
    let mut steps = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        let mut stepped = model.clone();
        stepped.axpy(-eta, &g_loss);
        let after = stepped.energies(x)?;
        let change: Vec<T> = after.as_slice().iter().zip(before.as_slice()).map(|(&a, &b)| a - b).collect();
        let decrease = free_energy_decrease(&before, &change);
        steps.push(StepCheck {
            eta: eta.as_f64(),
            certified: eta > T::zero() && eta < step_bound,
            decrease: decrease.as_f64(),
            descended: decrease > T::zero(),
        });
    }
    Ok(StepBoundReport {
        inner_product: inner.as_f64(),
        gated: false,
        grad_bound: grad_bound.as_f64(),
        beta: beta.as_f64(),
        step_bound: step_bound.as_f64(),
        steps,
    })
}

/// Random instance shapes and value ranges for the suites.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSampling {
    pub dims: std::ops::RangeInclusive<usize>,
    pub classes: std::ops::RangeInclusive<usize>,
    pub hidden: std::ops::RangeInclusive<usize>,
    /// Weights uniform on `[-w, w]`.
    pub weight_range: f64,
    /// Inputs uniform on `[-r, r]`.
    pub input_range: f64,
}

impl Default for InstanceSampling {
    fn default() -> Self {
        Self { dims: 2..=8, classes: 2..=6, hidden: 2..=6, weight_range: 1.0, input_range: 3.0 }
    }
}

/// A model, an input and a label.
pub struct Instance<T> {
    pub model: ModelParams<T>,
    pub x: Vec<T>,
    pub label: usize,
}

fn random_model<T: Scalar, R: Rng + ?Sized>(arch: Architecture, dim: usize, classes: usize, s: &InstanceSampling, rng: &mut R) -> Result<ModelParams<T>> {
    ModelParams::init_with_scale(arch, dim, classes, false, s.weight_range, rng)
}

fn random_input<T: Scalar, R: Rng + ?Sized>(dim: usize, s: &InstanceSampling, rng: &mut R) -> Vec<T> {
    (0..dim).map(|_| T::lit(rng.random_range(-s.input_range..=s.input_range))).collect()
}

/// Bias-free linear instance, rejection-sampled until the model predicts the
/// drawn label.
pub fn random_correct_linear_instance<T: Scalar, R: Rng + ?Sized>(s: &InstanceSampling, rng: &mut R) -> Result<Instance<T>> {
    let dim = rng.random_range(s.dims.clone());
    let classes = rng.random_range(s.classes.clone());
    loop {
        let model = random_model(Architecture::Linear, dim, classes, s, rng)?;
        let x: Vec<T> = random_input(dim, s, rng);
        let label = rng.random_range(0..classes);
        if squared_norm(&x) > T::zero() && model.energies(&x)?.predict() == label {
            return Ok(Instance { model, x, label });
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

struct TrialOutcome {
    margin: f64,
    relative_error: f64,
    violation: bool,
    excluded: bool,
    detail: TrialDetail,
}

fn run_suite<F>(probe: &str, trials: usize, seed: u64, detail_limit: usize, trial: F) -> Result<ProbeReport>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<TrialOutcome> + Sync,
{
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|k| trial(k, &mut trial_rng(seed, k)))
        .collect::<Result<_>>()?;
    let mut report = ProbeReport::empty(probe, seed);
    report.trials = trials;
    let mut worst = f64::INFINITY;
    for (k, o) in outcomes.into_iter().enumerate() {
        if o.excluded {
            report.excluded += 1;
        } else {
            worst = worst.min(o.margin);
            report.max_relative_error = report.max_relative_error.max(o.relative_error);
        }
        report.violations += usize::from(o.violation);
        if k < detail_limit || o.violation {
            report.details.push(o.detail);
        }
    }
    report.worst_margin = if worst.is_finite() { worst } else { 0.0 };
    Ok(report)
}

/// Closed-form agreement required by the inner-product suite.
pub const INNER_PRODUCT_TOLERANCE: f64 = 1e-10;

/// Positive inner product and closed-form agreement on random correctly
/// predicted bias-free linear instances.
pub fn lemma1_suite(trials: usize, seed: u64, sampling: &InstanceSampling, detail_limit: usize) -> Result<ProbeReport> {
    run_suite("lemma1", trials, seed, detail_limit, |k, rng| {
        let inst = random_correct_linear_instance::<f64, _>(sampling, rng)?;
        let ip = grad_inner_product(&inst.model, &inst.x, inst.label)?;
        let rel = (ip.numeric - ip.closed_form).abs() / ip.closed_form.abs().max(1.0);
        let violation = !(ip.numeric > 0.0) || rel > INNER_PRODUCT_TOLERANCE;
        Ok(TrialOutcome {
            margin: ip.numeric,
            relative_error: rel,
            violation,
            excluded: false,
            detail: TrialDetail::InnerProduct {
                trial: k,
                classes: inst.model.classes(),
                dim: inst.model.dim(),
                label: inst.label,
                x: inst.x.clone(),
                numeric: ip.numeric,
                closed_form: ip.closed_form,
                violation,
            },
        })
    })
}

/// Strict free-energy descent after one nll step of size `eta`.
pub fn lemma2_suite(trials: usize, seed: u64, eta: f64, sampling: &InstanceSampling, detail_limit: usize) -> Result<ProbeReport> {
    run_suite("lemma2", trials, seed, detail_limit, |k, rng| {
        let inst = random_correct_linear_instance::<f64, _>(sampling, rng)?;
        let out = lemma2_probe(&inst.model, &inst.x, inst.label, eta)?;
        let violation = !out.descended;
        Ok(TrialOutcome {
            margin: out.decrease,
            relative_error: 0.0,
            violation,
            excluded: false,
            detail: TrialDetail::Descent {
                trial: k,
                classes: inst.model.classes(),
                dim: inst.model.dim(),
                label: inst.label,
                x: inst.x.clone(),
                eta,
                f_before: out.f_before,
                f_after: out.f_after,
                decrease: out.decrease,
                violation,
            },
        })
    })
}

/// Randomized counterexample search for the exchange inequality. Each trial
/// draws `n ∈ 1..=10`, `a ~ U(-5, 5)`, `a_i = a - U(0, 5]` and
/// `b_i ~ U(0, 3]`; every tenth trial uses `b_i ~ U(0, 1e-6]`.
pub fn lemma3_suite(trials: usize, seed: u64, detail_limit: usize) -> Result<ProbeReport> {
    run_suite("lemma3", trials, seed, detail_limit, |k, rng| {
        let n = rng.random_range(1..=10);
        let a: f64 = rng.random_range(-5.0..5.0);
        let b_scale = if k % 10 == 9 { 1e-6 } else { 3.0 };
        // 1 - U[0, 1) lies in (0, 1]
        let a_list: Vec<f64> = (0..n).map(|_| a - 5.0 * (1.0 - rng.random::<f64>())).collect();
        let b_list: Vec<f64> = (0..n).map(|_| b_scale * (1.0 - rng.random::<f64>())).collect();
        let out = lemma3_check(a, &a_list, &b_list)?;
        Ok(TrialOutcome {
            margin: out.margin,
            relative_error: 0.0,
            violation: !out.holds,
            excluded: false,
            detail: TrialDetail::Exchange { trial: k, a, a_list, b_list, margin: out.margin, violation: !out.holds },
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Settings {
    pub epsilon: f64,
    pub eta_grid: Vec<f64>,
    pub sampling: InstanceSampling,
    pub smoothness: SmoothnessSampling,
}

impl Default for Theorem1Settings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            eta_grid: vec![1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0, 10.0],
            sampling: InstanceSampling::default(),
            smoothness: SmoothnessSampling::default(),
        }
    }
}

/// Step-bound probe on alternating linear and one-hidden-layer instances
/// with uniformly drawn labels.
pub fn theorem1_suite(trials: usize, seed: u64, settings: &Theorem1Settings, detail_limit: usize) -> Result<ProbeReport> {
    run_suite("theorem1", trials, seed, detail_limit, |k, rng| {
        let s = &settings.sampling;
        let dim = rng.random_range(s.dims.clone());
        let classes = rng.random_range(s.classes.clone());
        let arch = if k % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::OneHiddenLayer { hidden: rng.random_range(s.hidden.clone()) }
        };
        let model = random_model::<f64, _>(arch, dim, classes, s, rng)?;
        let x = random_input(dim, s, rng);
        let label = rng.random_range(0..classes);
        let rep = theorem1_probe(&model, &x, label, settings.epsilon, &settings.eta_grid, &settings.smoothness, rng)?;
        let violations = rep.violations();
        let margin = rep.steps.iter().filter(|s| s.certified).map(|s| s.decrease).fold(f64::INFINITY, f64::min);
        Ok(TrialOutcome {
            margin,
            relative_error: 0.0,
            violation: violations > 0,
            excluded: rep.gated,
            detail: TrialDetail::StepBound {
                trial: k,
                architecture: arch,
                inner_product: rep.inner_product,
                gated: rep.gated,
                grad_bound: rep.grad_bound,
                beta: rep.beta,
                step_bound: rep.step_bound,
                steps: rep.steps,
                violation: violations > 0,
            },
        })
    })
}

/// Mean free energies of the training half of the source domain, the held-out
/// half, and the shifted target domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    pub mean_f_s1: f64,
    pub mean_f_s2: f64,
    pub mean_f_t: f64,
}

impl BiasReport {
    /// `|F̄(S1) - F̄(S2)|`.
    pub fn split_gap(&self) -> f64 {
        (self.mean_f_s1 - self.mean_f_s2).abs()
    }

    /// `F̄(T) - F̄(S1)`.
    pub fn shift_gap(&self) -> f64 {
        self.mean_f_t - self.mean_f_s1
    }
}

fn mean_free_energy<T: Scalar>(model: &ModelParams<T>, samples: &[Sample<T>]) -> Result<f64> {
    let values: Vec<T> = samples.iter().map(|s| model.energies(&s.features).map(|e| e.free_energy())).collect::<Result<_>>()?;
    mean(&values).map(Scalar::as_f64).ok_or_else(|| Error::Contract("empty sample set".into()))
}

/// Splits the source domain in two at random (seeded by `cfg.seed`), trains
/// source-only on the first half and measures mean free energies.
pub fn bias_probe(spec: &SyntheticSpec, cfg: &TrainConfig) -> Result<BiasReport> {
    let domains = gen_toy::<f64>(spec)?;
    let mut source = domains.source;
    let mut rng = trial_rng(cfg.seed, 7);
    rand::seq::SliceRandom::shuffle(source.as_mut_slice(), &mut rng);
    let s2 = source.split_off(source.len() / 2);
    let s1 = source;
    let model = train_source_only(&s1, cfg)?;
    Ok(BiasReport {
        mean_f_s1: mean_free_energy(&model, &s1)?,
        mean_f_s2: mean_free_energy(&model, &s2)?,
        mean_f_t: mean_free_energy(&model, &domains.target)?,
    })
}

/// Probe report wrapper for the bias probe: a violation when the shift gap
/// does not exceed `ratio` times the split gap.
pub fn bias_suite(spec: &SyntheticSpec, cfg: &TrainConfig, ratio: f64) -> Result<ProbeReport> {
    let report = bias_probe(spec, cfg)?;
    let margin = report.shift_gap() - ratio * report.split_gap();
    let mut out = ProbeReport::empty("bias", cfg.seed);
    out.trials = 1;
    out.violations = usize::from(!(margin > 0.0));
    out.worst_margin = margin;
    out.details.push(TrialDetail::Bias(report));
    Ok(out)
}
