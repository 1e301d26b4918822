//! Mini-batch training with a moving free-energy threshold, and the
//! multi-round active adaptation loop.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{grad_objective, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::sample::{Domain, Sample};
use crate::scalar::{mean, Scalar};
use crate::selection::{budget_count, select, PoolState, SelectionConfig};

/// Number of histogram bins used by [`evaluate`].
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaRecord<T> {
    pub batch_index: usize,
    /// `None` for the initializing batch.
    pub lambda: Option<T>,
    pub batch_mean: T,
    pub delta_after: T,
}

/// Running estimate `Δ` of the mean source free energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T> {
    pub delta: T,
    pub initialized: bool,
    pub updates: usize,
    pub trace: Option<Vec<EmaRecord<T>>>,
}

impl<T: Scalar> Default for EmaState<T> {
    fn default() -> Self {
        Self::new(false)
    }
}

impl<T: Scalar> EmaState<T> {
    pub fn new(record_trace: bool) -> Self {
        Self { delta: T::zero(), initialized: false, updates: 0, trace: record_trace.then(Vec::new) }
    }

    /// Blends in a batch mean with `λ ~ U(0, 1)` drawn from `rng`. The first
    /// update adopts the batch mean outright.
    pub fn update<R: Rng + ?Sized>(&mut self, batch_mean: T, rng: &mut R) -> Result<T> {
        if !self.initialized {
            return self.update_with_lambda(batch_mean, T::one());
        }
        let lambda = T::lit(rng.random::<f64>());
        self.update_with_lambda(batch_mean, lambda)
    }

    /// `Δ ← λΔ + (1 - λ)·batch_mean`, or `Δ ← batch_mean` when uninitialized.
    pub fn update_with_lambda(&mut self, batch_mean: T, lambda: T) -> Result<T> {
        if !batch_mean.is_finite() {
            return Err(Error::Contract("batch mean free energy must be finite".into()));
        }
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::Contract("EMA weight must lie in [0, 1]".into()));
        }
        let (delta, used) = if self.initialized {
            let mixed = lambda * self.delta + (T::one() - lambda) * batch_mean;
            // keep the blend inside the closed interval despite rounding
            let (lo, hi) = if self.delta <= batch_mean { (self.delta, batch_mean) } else { (batch_mean, self.delta) };
            (mixed.max(lo).min(hi), Some(lambda))
        } else {
            (batch_mean, None)
        };
        self.delta = delta;
        self.initialized = true;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(EmaRecord { batch_index: self.updates, lambda: used, batch_mean, delta_after: delta });
        }
        self.updates += 1;
        Ok(delta)
    }
}

/// Hyper-parameters of one active adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub objective: ObjectiveConfig,
    /// Epochs (1-based) after which a selection round fires.
    pub selection_rounds: BTreeSet<usize>,
    pub selection: SelectionConfig,
    pub seed: u64,
    pub architecture: Architecture,
    pub bias: bool,
    pub record_ema_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 32,
            objective: ObjectiveConfig::default(),
            selection_rounds: BTreeSet::new(),
            selection: SelectionConfig::default(),
            seed: 0,
            architecture: Architecture::Linear,
            bias: true,
            record_ema_trace: false,
        }
    }
}

impl TrainConfig {
    pub fn round_budget(&self, n_target: usize) -> usize {
        budget_count(n_target, self.selection.per_round_budget_percent)
    }

    pub fn validate(&self, n_target: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Contract("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract("learning rate must be finite and nonnegative".into()));
        }
        if let Some(&r) = self.selection_rounds.iter().find(|&&r| r == 0 || r > self.epochs) {
            return Err(Error::Contract(format!("selection round {r} outside epochs 1..={}", self.epochs)));
        }
        self.selection.validate()?;
        if !self.selection_rounds.is_empty() {
            let needed = self.selection_rounds.len() * self.round_budget(n_target);
            if needed > n_target {
                return Err(Error::Budget { requested: needed, available: n_target });
            }
        }
        Ok(())
    }
}

/// Independent generator streams of a run, all derived from its seed.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub train: ChaCha8Rng,
    pub select: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self { init: stream(0), train: stream(1), select: stream(2) }
    }
}

fn shuffled<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

fn cycled<T: Clone>(pool: &[T], order: &[usize], step: usize, size: usize) -> Vec<T> {
    let take = size.min(pool.len());
    (0..take).map(|j| pool[order[(step * take + j) % pool.len()]].clone()).collect()
}

/// One shuffled pass of plain SGD over the source pool.
///
/// Each step pairs a source batch with equally sized labeled-target and
/// unlabeled-target batches drawn cyclically from their own shuffles. The
/// threshold is refreshed from the source batch before the step's gradient.
pub fn train_epoch<T: Scalar, R: Rng + ?Sized>(
    model: &mut ModelParams<T>,
    source: &[Sample<T>],
    target_labeled: &[Sample<T>],
    target_unlabeled: &[Sample<T>],
    cfg: &TrainConfig,
    ema: &mut EmaState<T>,
    rng: &mut R,
) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Contract("training needs a nonempty source set".into()));
    }
    let b = cfg.batch_size.max(1);
    let source_order = shuffled(source.len(), rng);
    let labeled_order = shuffled(target_labeled.len(), rng);
    let unlabeled_order = shuffled(target_unlabeled.len(), rng);
    let steps = source.len().div_ceil(b);
    let eta = T::lit(cfg.learning_rate);

    for step in 0..steps {
        let mut labeled: Vec<Sample<T>> =
            source_order[step * b..((step + 1) * b).min(source.len())].iter().map(|&i| source[i].clone()).collect();
        let mut source_f = Vec::with_capacity(labeled.len());
        for s in &labeled {
            let e = model.energies(&s.features).map_err(|_| divergence(ema.updates, "non-finite energies"))?;
            source_f.push(e.free_energy());
        }
        let batch_mean = mean(&source_f).expect("nonempty source batch");
        if !batch_mean.is_finite() {
            return Err(divergence(ema.updates, "non-finite source free energy"));
        }
        let delta = ema.update(batch_mean, rng)?;

        if !target_labeled.is_empty() {
            labeled.extend(cycled(target_labeled, &labeled_order, step, b));
        }
        let unlabeled =
            if target_unlabeled.is_empty() { Vec::new() } else { cycled(target_unlabeled, &unlabeled_order, step, b) };

        let (loss, grad) = grad_objective(model, &labeled, &unlabeled, delta, &cfg.objective)?;
        if !loss.total.is_finite() {
            return Err(divergence(ema.updates - 1, "non-finite loss"));
        }
        if !grad.is_finite() {
            return Err(divergence(ema.updates - 1, "non-finite gradient"));
        }
        model.axpy(-eta, &grad);
        if !model.is_finite() {
            return Err(divergence(ema.updates - 1, "non-finite parameters"));
        }
    }
    Ok(())
}

fn divergence(batch: usize, reason: &str) -> Error {
    Error::Divergence { batch, reason: reason.into() }
}

/// Fixed-bin histogram of free energies per domain over a shared range.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyHistogram {
    pub lo: f64,
    pub hi: f64,
    pub source_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
}

impl FreeEnergyHistogram {
    pub fn bins(&self) -> usize {
        self.source_counts.len()
    }

    /// `[lo, hi)` edges of bin `k`; the last bin is closed on the right.
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + width * k as f64, if k + 1 == self.bins() { self.hi } else { self.lo + width * (k + 1) as f64 })
    }

    fn build(values: &[(Domain, f64)], bins: usize) -> Self {
        let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let mut hist = Self { lo, hi, source_counts: vec![0; bins], target_counts: vec![0; bins] };
        let width = hi - lo;
        for &(domain, v) in values {
            let k = if width > 0.0 { (((v - lo) / width) * bins as f64).floor() as usize } else { 0 };
            let k = k.min(bins - 1);
            match domain {
                Domain::Source => hist.source_counts[k] += 1,
                Domain::Target => hist.target_counts[k] += 1,
            }
        }
        hist
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStats {
    pub count: usize,
    pub errors: usize,
    pub mean_free_energy: f64,
}

impl DomainStats {
    pub fn error_rate(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.errors as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    pub source: Option<DomainStats>,
    pub target: Option<DomainStats>,
    pub histogram: FreeEnergyHistogram,
}

/// Error rate, per-domain mean free energy and a 64-bin free-energy
/// histogram over a labeled dataset.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, dataset: &[Sample<T>]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let mut values = Vec::with_capacity(dataset.len());
    let mut acc = [(0usize, 0usize, 0.0f64); 2];
    for s in dataset {
        let y = s.require_label()?;
        let ev = model.energies(&s.features)?;
        let f = ev.free_energy().as_f64();
        let slot = &mut acc[s.domain as usize];
        slot.0 += 1;
        slot.1 += usize::from(ev.predict() != y);
        slot.2 += f;
        values.push((s.domain, f));
    }
    let stats = |(count, errors, sum): (usize, usize, f64)| {
        (count > 0).then(|| DomainStats { count, errors, mean_free_energy: sum / count as f64 })
    };
    let errors = acc[0].1 + acc[1].1;
    Ok(Evaluation {
        error_rate: errors as f64 / dataset.len() as f64,
        source: stats(acc[0]),
        target: stats(acc[1]),
        histogram: FreeEnergyHistogram::build(&values, HISTOGRAM_BINS),
    })
}

/// Snapshot of a run after `round_index` completed selection rounds.
///
/// The evaluated model is the one that trained with the labels of rounds
/// `1..=round_index`; `selected_indices` are the samples it queried next
/// (empty for the final snapshot).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round_index: usize,
    pub epoch: usize,
    pub target_error_rate: f64,
    pub mean_f_source: f64,
    /// Over the unlabeled target pool; over the whole target set once the
    /// pool is exhausted.
    pub mean_f_target_unlabeled: f64,
    pub labeled_count: usize,
    pub selected_indices: Vec<usize>,
    /// Fraction of `selected_indices` the snapshot model misclassifies.
    pub selected_error_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ActiveRun<T> {
    pub model: ModelParams<T>,
    pub rounds: Vec<RoundMetrics>,
    /// Histogram over source and the whole target set at each snapshot.
    pub histograms: Vec<FreeEnergyHistogram>,
    pub ema: EmaState<T>,
    pub pool: PoolState<T>,
}

impl<T> ActiveRun<T> {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.rounds.last().expect("a run records at least its final snapshot")
    }
}

fn snapshot<T: Scalar>(
    model: &ModelParams<T>,
    source: &[Sample<T>],
    pool: &PoolState<T>,
    round_index: usize,
    epoch: usize,
    selected: Vec<usize>,
) -> Result<(RoundMetrics, FreeEnergyHistogram)> {
    let mut all: Vec<Sample<T>> = source.to_vec();
    all.extend(pool.samples().iter().cloned());
    let eval = evaluate(model, &all)?;
    let target = eval.target.ok_or_else(|| Error::Contract("target set is empty".into()))?;
    let source_stats = eval.source.ok_or_else(|| Error::Contract("source set is empty".into()))?;
    let unlabeled_f: Vec<f64> = pool
        .unlabeled_idx()
        .iter()
        .map(|&i| model.energies(&pool.samples()[i].features).map(|e| e.free_energy().as_f64()))
        .collect::<Result<_>>()?;
    let mut selected_errors = 0usize;
    for &i in &selected {
        let s = &pool.samples()[i];
        selected_errors += usize::from(model.energies(&s.features)?.predict() != s.require_label()?);
    }
    let metrics = RoundMetrics {
        round_index,
        epoch,
        target_error_rate: target.error_rate(),
        mean_f_source: source_stats.mean_free_energy,
        mean_f_target_unlabeled: mean(&unlabeled_f).unwrap_or(target.mean_free_energy),
        labeled_count: pool.labeled_idx().len(),
        selected_error_rate: if selected.is_empty() { 0.0 } else { selected_errors as f64 / selected.len() as f64 },
        selected_indices: selected,
    };
    Ok((metrics, eval.histogram))
}

/// `1 + max label`, at least 2.
fn class_count<'a, T: Scalar>(samples: impl Iterator<Item = &'a Sample<T>>) -> Result<usize> {
    let mut classes = 2;
    for s in samples {
        classes = classes.max(s.require_label()? + 1);
    }
    Ok(classes)
}

/// Plain supervised training on labeled source data only, seeded like
/// [`run_active_loop`].
pub fn train_source_only<T: Scalar>(source: &[Sample<T>], cfg: &TrainConfig) -> Result<ModelParams<T>> {
    if source.is_empty() {
        return Err(Error::Contract("source set is empty".into()));
    }
    let classes = class_count(source.iter())?;
    let mut rngs = RunRngs::new(cfg.seed);
    let mut model = ModelParams::init_uniform(cfg.architecture, source[0].dim(), classes, cfg.bias, &mut rngs.init)?;
    let mut ema = EmaState::new(false);
    for _ in 0..cfg.epochs {
        train_epoch(&mut model, source, &[], &[], cfg, &mut ema, &mut rngs.train)?;
    }
    Ok(model)
}

/// Trains for `cfg.epochs` epochs, querying labels from the target oracle
/// after every epoch listed in `cfg.selection_rounds`.
///
/// `target` carries the oracle labels; the learner only sees the labels of
/// the samples it has queried.
pub fn run_active_loop<T: Scalar>(source: &[Sample<T>], target: &[Sample<T>], cfg: &TrainConfig) -> Result<ActiveRun<T>> {
    if source.is_empty() {
        return Err(Error::Contract("source set is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::Contract("target set is empty".into()));
    }
    cfg.validate(target.len())?;
    let classes = class_count(source.iter().chain(target))?;
    let mut rngs = RunRngs::new(cfg.seed);
    let mut model = ModelParams::init_uniform(cfg.architecture, source[0].dim(), classes, cfg.bias, &mut rngs.init)?;
    let mut ema = EmaState::new(cfg.record_ema_trace);
    let mut pool = PoolState::new(target.to_vec());
    let budget = cfg.round_budget(target.len());
    let mut rounds = Vec::new();
    let mut histograms = Vec::new();

    for epoch in 1..=cfg.epochs {
        let labeled = pool.labeled_samples();
        let unlabeled = pool.unlabeled_samples();
        train_epoch(&mut model, source, &labeled, &unlabeled, cfg, &mut ema, &mut rngs.train)?;
        if cfg.selection_rounds.contains(&epoch) {
            let selected = select(&model, &pool, &cfg.selection, budget, &mut rngs.select)?;
            let (metrics, hist) = snapshot(&model, source, &pool, rounds.len(), epoch, selected.clone())?;
            rounds.push(metrics);
            histograms.push(hist);
            pool.commit(&selected)?;
            pool.check_invariants()?;
        }
    }
    let (metrics, hist) = snapshot(&model, source, &pool, rounds.len(), cfg.epochs, Vec::new())?;
    rounds.push(metrics);
    histograms.push(hist);
    Ok(ActiveRun { model, rounds, histograms, ema, pool })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::grad_nll;

    #[test]
    fn ema_initializes_then_blends() {
        let mut ema = EmaState::<f64>::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ema.update(2.0, &mut rng).unwrap(), 2.0);
        let mut forced = EmaState::<f64>::default();
        forced.update_with_lambda(1.0, 0.3).unwrap();
        assert_eq!(forced.update_with_lambda(3.0, 0.5).unwrap(), 2.0);
        for &lambda in &[0.0, 0.25, 0.999, 1.0] {
            let mut e = forced.clone();
            e.delta = 1.0;
            let d = e.update_with_lambda(3.0, lambda).unwrap();
            assert!((1.0..=3.0).contains(&d));
        }
        assert_eq!(ema.trace.as_ref().unwrap().len(), 1);
        assert!(ema.update(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let source = vec![
            Sample::labeled(vec![1.0, 0.5], 0, Domain::Source),
            Sample::labeled(vec![-1.0, 0.2], 1, Domain::Source),
        ];
        let mut model = ModelParams::linear(&[vec![0.1, 0.2], vec![-0.3, 0.05]]).unwrap();
        let before = model.clone();
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let mut ema = EmaState::default();
        train_epoch(&mut model, &source, &[], &[], &cfg, &mut ema, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(model, before);
        assert!(ema.initialized);
    }

    #[test]
    fn single_sample_step_matches_closed_form() {
        let x = vec![0.8, -1.5];
        let source = vec![Sample::labeled(x.clone(), 1, Domain::Source)];
        let rows = [vec![0.4, -0.2], vec![0.1, 0.3]];
        let mut model = ModelParams::linear(&rows).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            objective: ObjectiveConfig { gamma: 0.0, delta_s: 1.0, delta_t: 1.0 },
            ..Default::default()
        };
        train_epoch(&mut model, &source, &[], &[], &cfg, &mut EmaState::default(), &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        // p = softmax(-E), gradient row c = x (1{c=y} - p_c)
        let e: Vec<f64> = rows.iter().map(|r| r[0] * x[0] + r[1] * x[1]).collect();
        let z: f64 = e.iter().map(|v| (-v).exp()).sum();
        for (c, row) in rows.iter().enumerate() {
            let p = (-e[c]).exp() / z;
            let coeff = if c == 1 { 1.0 - p } else { -p };
            for i in 0..2 {
                let expect = row[i] - 0.1 * coeff * x[i];
                assert!((model.class_row(c)[i] - expect).abs() < 1e-15);
            }
        }
        let _ = grad_nll(&model, &x, 1).unwrap();
    }

    #[test]
    fn divergence_names_the_batch() {
        let source = vec![Sample::labeled(vec![1e300, 1e300], 0, Domain::Source)];
        let mut model = ModelParams::linear(&[vec![1e10, 1e10], vec![-1e10, -1e10]]).unwrap();
        let cfg = TrainConfig { learning_rate: 1e10, ..Default::default() };
        let err = train_epoch(&mut model, &source, &[], &[], &cfg, &mut EmaState::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Divergence { .. }) | Err(Error::Contract(_))), "{err:?}");
    }

    #[test]
    fn evaluate_counts_errors_and_bins() {
        let identity = ModelParams::linear(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let data = vec![
            Sample::labeled(vec![0.0, 5.0], 0, Domain::Source),
            Sample::labeled(vec![5.0, 0.0], 1, Domain::Source),
            Sample::labeled(vec![0.0, 5.0], 1, Domain::Target),
        ];
        let eval = evaluate(&identity, &data).unwrap();
        assert!((eval.error_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval.source.unwrap().errors, 0);
        assert_eq!(eval.target.unwrap().errors, 1);
        assert_eq!(eval.histogram.source_counts.iter().sum::<usize>(), 2);
        assert_eq!(eval.histogram.target_counts.iter().sum::<usize>(), 1);
        assert_eq!(eval.histogram.bins(), HISTOGRAM_BINS);
        assert!(evaluate::<f64>(&identity, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig { epochs: 3, ..Default::default() };
        cfg.selection_rounds = [4].into();
        assert!(cfg.validate(100).is_err());
        cfg.selection_rounds = [1, 2, 3].into();
        cfg.selection.per_round_budget_percent = 50.0;
        assert!(matches!(cfg.validate(100), Err(Error::Budget { .. })));
        cfg.selection.per_round_budget_percent = 10.0;
        cfg.validate(100).unwrap();
    }
}
