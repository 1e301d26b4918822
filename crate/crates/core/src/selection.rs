//! Query strategies over the unlabeled target pool.
//!
//! Every ranking is stable and breaks ties by ascending sample index, and every
//! strategy returns indices in rank order (most informative first).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyVector;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sample::Sample;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Eada,
    Random,
    Entropy,
    Bvsb,
    #[serde(rename = "coreset")]
    CoreSet,
}

impl QueryStrategy {
    pub const ALL: [QueryStrategy; 5] =
        [QueryStrategy::Eada, QueryStrategy::Random, QueryStrategy::Entropy, QueryStrategy::Bvsb, QueryStrategy::CoreSet];

    pub fn name(self) -> &'static str {
        match self {
            QueryStrategy::Eada => "eada",
            QueryStrategy::Random => "random",
            QueryStrategy::Entropy => "entropy",
            QueryStrategy::Bvsb => "bvsb",
            QueryStrategy::CoreSet => "coreset",
        }
    }
}

impl std::str::FromStr for QueryStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        QueryStrategy::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| format!("unknown query strategy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Percentage of the unlabeled pool kept as high free-energy candidates.
    pub alpha1: f64,
    /// Percentage of the candidates finally queried.
    pub alpha2: f64,
    /// Labels spent per round, as a percentage of the whole target domain.
    pub per_round_budget_percent: f64,
    pub strategy: QueryStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { alpha1: 50.0, alpha2: 2.0, per_round_budget_percent: 1.0, strategy: QueryStrategy::Eada }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("per_round_budget_percent", self.per_round_budget_percent),
        ] {
            if !(v > 0.0 && v <= 100.0) {
                return Err(Error::Contract(format!("{name} must lie in (0, 100], got {v}")));
            }
        }
        Ok(())
    }
}

/// Partition of the target set into labeled and unlabeled indices, plus the
/// indices queried in each round.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState<T> {
    all_target: Vec<Sample<T>>,
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    history: Vec<Vec<usize>>,
}

impl<T: Scalar> PoolState<T> {
    /// Everything starts unlabeled.
    pub fn new(all_target: Vec<Sample<T>>) -> Self {
        let unlabeled = (0..all_target.len()).collect();
        Self { all_target, labeled: BTreeSet::new(), unlabeled, history: Vec::new() }
    }

    /// A pool with a caller-supplied labeled set. The partition is re-derived
    /// from `labeled`; the history holds it as a single round.
    pub fn with_labeled(all_target: Vec<Sample<T>>, labeled: &[usize]) -> Result<Self> {
        let mut pool = Self::new(all_target);
        if !labeled.is_empty() {
            pool.commit(labeled)?;
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.all_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all_target.is_empty()
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.all_target
    }

    pub fn labeled_idx(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn unlabeled_idx(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn history(&self) -> &[Vec<usize>] {
        &self.history
    }

    /// Labeled target samples in ascending index order.
    pub fn labeled_samples(&self) -> Vec<Sample<T>> {
        self.labeled.iter().map(|&i| self.all_target[i].clone()).collect()
    }

    /// Unlabeled target samples in ascending index order, labels stripped.
    pub fn unlabeled_samples(&self) -> Vec<Sample<T>> {
        self.unlabeled.iter().map(|&i| self.all_target[i].without_label()).collect()
    }

    /// Moves `selected` from the unlabeled to the labeled pool as one round.
    pub fn commit(&mut self, selected: &[usize]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in selected {
            if !self.unlabeled.contains(&i) {
                return Err(Error::Contract(format!("index {i} is not in the unlabeled pool")));
            }
            if !seen.insert(i) {
                return Err(Error::Contract(format!("index {i} selected twice")));
            }
        }
        for &i in selected {
            self.unlabeled.remove(&i);
            self.labeled.insert(i);
        }
        self.history.push(selected.to_vec());
        Ok(())
    }

    /// Checks that the two pools partition `0..N` and that the history
    /// matches the labeled pool.
    pub fn check_invariants(&self) -> Result<()> {
        if self.labeled.intersection(&self.unlabeled).next().is_some() {
            return Err(Error::Contract("labeled and unlabeled pools overlap".into()));
        }
        if self.labeled.len() + self.unlabeled.len() != self.all_target.len()
            || self.labeled.iter().chain(&self.unlabeled).any(|&i| i >= self.all_target.len())
        {
            return Err(Error::Contract("pools do not cover the target set".into()));
        }
        let mut from_history = BTreeSet::new();
        for round in &self.history {
            for &i in round {
                if !from_history.insert(i) {
                    return Err(Error::Contract(format!("index {i} appears in two rounds")));
                }
            }
        }
        if from_history != self.labeled {
            return Err(Error::Contract("selection history does not match the labeled pool".into()));
        }
        Ok(())
    }

    fn unlabeled_vec(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    fn check_budget(&self, budget: usize) -> Result<()> {
        self.check_invariants()?;
        if budget > self.unlabeled.len() {
            return Err(Error::Budget { requested: budget, available: self.unlabeled.len() });
        }
        Ok(())
    }
}

/// Min-versus-second-min margin `E(x, y*) - E(x, y')`; nonpositive, closer to
/// zero means more uncertain.
pub fn mvsm<T: Scalar>(ev: &EnergyVector<T>) -> Result<T> {
    let e = ev.as_slice();
    if e.len() < 2 {
        return Err(Error::Contract("MvSM needs at least two classes".into()));
    }
    let (mut lo, mut second) = if e[0] <= e[1] { (e[0], e[1]) } else { (e[1], e[0]) };
    for &v in &e[2..] {
        if v < lo {
            second = lo;
            lo = v;
        } else if v < second {
            second = v;
        }
    }
    Ok(lo - second)
}

/// `max(1, round_half_up(n * percent / 100))`.
pub fn budget_count(n_target: usize, percent: f64) -> usize {
    round_half_up(n_target as f64 * percent / 100.0).max(1)
}

// The 1e-9 slack absorbs representation noise such as 0.29 * 100.0 = 28.999999999999996.
fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn ceil_percent(n: usize, percent: f64) -> usize {
    ((n as f64 * percent / 100.0) - 1e-9).ceil().max(0.0) as usize
}

/// `(candidates, selected)` counts of the two-step strategy on a pool of
/// `n_unlabeled` samples.
pub fn eada_counts(n_unlabeled: usize, alpha1: f64, alpha2: f64) -> (usize, usize) {
    let n1 = ceil_percent(n_unlabeled, alpha1).min(n_unlabeled);
    let n2 = round_half_up(n1 as f64 * alpha2 / 100.0);
    (n1, n2.max(1).min(n1.max(1)))
}

fn descending<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn ascending<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> Ordering {
    a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn score_pool<T, F>(pool: &PoolState<T>, indices: &[usize], score: F) -> Result<Vec<(usize, T)>>
where
    T: Scalar,
    F: Fn(&Sample<T>) -> Result<T> + Sync,
{
    indices.par_iter().map(|&i| score(&pool.all_target[i]).map(|s| (i, s))).collect()
}

/// Result of the two-step query, with the intermediate candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct EadaSelection {
    /// High free-energy candidates in rank order.
    pub candidates: Vec<usize>,
    /// Queried samples in rank order.
    pub selected: Vec<usize>,
}

/// Two-step query: keep the `ceil(α1%)` unlabeled samples with the highest
/// free energy, then the `round(α2%)` of those with the highest MvSM.
pub fn eada_select<T: Scalar>(
    model: &ModelParams<T>,
    pool: &PoolState<T>,
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    eada_select_detailed(model, pool, cfg).map(|s| s.selected)
}

pub fn eada_select_detailed<T: Scalar>(
    model: &ModelParams<T>,
    pool: &PoolState<T>,
    cfg: &SelectionConfig,
) -> Result<EadaSelection> {
    cfg.validate()?;
    if pool.unlabeled.is_empty() {
        return Err(Error::Budget { requested: 1, available: 0 });
    }
    let (n1, n2) = eada_counts(pool.unlabeled.len(), cfg.alpha1, cfg.alpha2);
    eada_two_step(model, pool, n1, n2)
}

/// Two-step query with an explicit final count `budget`; the candidate set
/// never shrinks below `budget`.
pub fn eada_select_budget<T: Scalar>(
    model: &ModelParams<T>,
    pool: &PoolState<T>,
    alpha1: f64,
    budget: usize,
) -> Result<EadaSelection> {
    pool.check_budget(budget)?;
    let n1 = ceil_percent(pool.unlabeled.len(), alpha1).clamp(budget, pool.unlabeled.len());
    eada_two_step(model, pool, n1, budget)
}

fn eada_two_step<T: Scalar>(
    model: &ModelParams<T>,
    pool: &PoolState<T>,
    n1: usize,
    n2: usize,
) -> Result<EadaSelection> {
    pool.check_budget(n2)?;
    let unlabeled = pool.unlabeled_vec();
    let mut by_free_energy = score_pool(pool, &unlabeled, |s| Ok(model.energies(&s.features)?.free_energy()))?;
    by_free_energy.sort_by(descending);
    let candidates: Vec<usize> = by_free_energy.iter().take(n1).map(|&(i, _)| i).collect();

    let mut by_margin = score_pool(pool, &candidates, |s| mvsm(&model.energies(&s.features)?))?;
    by_margin.sort_by(descending);
    let selected = by_margin.iter().take(n2).map(|&(i, _)| i).collect();
    Ok(EadaSelection { candidates, selected })
}

/// Uniform sample without replacement from the unlabeled pool.
pub fn random_select<T: Scalar, R: Rng + ?Sized>(pool: &PoolState<T>, budget: usize, rng: &mut R) -> Result<Vec<usize>> {
    pool.check_budget(budget)?;
    let unlabeled = pool.unlabeled_vec();
    Ok(rand::seq::index::sample(rng, unlabeled.len(), budget).into_iter().map(|k| unlabeled[k]).collect())
}

/// Highest predictive entropy first.
pub fn entropy_select<T: Scalar>(model: &ModelParams<T>, pool: &PoolState<T>, budget: usize) -> Result<Vec<usize>> {
    pool.check_budget(budget)?;
    let mut scored = score_pool(pool, &pool.unlabeled_vec(), |s| Ok(model.energies(&s.features)?.entropy()))?;
    scored.sort_by(descending);
    Ok(scored.into_iter().take(budget).map(|(i, _)| i).collect())
}

/// `p_max - p_second`.
pub fn probability_margin<T: Scalar>(ev: &EnergyVector<T>) -> T {
    let p = ev.probabilities();
    let (mut hi, mut second) = (T::neg_infinity(), T::neg_infinity());
    for v in p {
        if v > hi {
            second = hi;
            hi = v;
        } else if v > second {
            second = v;
        }
    }
    hi - second
}

/// Smallest best-versus-second-best probability margin first.
pub fn bvsb_select<T: Scalar>(model: &ModelParams<T>, pool: &PoolState<T>, budget: usize) -> Result<Vec<usize>> {
    pool.check_budget(budget)?;
    let mut scored =
        score_pool(pool, &pool.unlabeled_vec(), |s| Ok(probability_margin(&model.energies(&s.features)?)))?;
    scored.sort_by(ascending);
    Ok(scored.into_iter().take(budget).map(|(i, _)| i).collect())
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// Greedy k-center over `embeddings` (one per target sample): each pick
/// maximizes the distance to the labeled set plus the points picked so far.
/// With nothing labeled the first pick is the unlabeled point farthest from
/// the unlabeled mean.
pub fn coreset_select<T: Scalar>(embeddings: &[Vec<T>], pool: &PoolState<T>, budget: usize) -> Result<Vec<usize>> {
    pool.check_budget(budget)?;
    if embeddings.len() != pool.len() {
        return Err(Error::Shape { expected: pool.len(), got: embeddings.len() });
    }
    let unlabeled = pool.unlabeled_vec();
    if budget == 0 {
        return Ok(Vec::new());
    }
    let mut min_dist: Vec<T> = if pool.labeled.is_empty() {
        vec![T::infinity(); unlabeled.len()]
    } else {
        unlabeled
            .par_iter()
            .map(|&i| {
                pool.labeled
                    .iter()
                    .map(|&l| squared_distance(&embeddings[i], &embeddings[l]))
                    .fold(T::infinity(), T::min)
            })
            .collect()
    };

    let mut picked = Vec::with_capacity(budget);
    let mut taken = vec![false; unlabeled.len()];
    if pool.labeled.is_empty() {
        let dim = embeddings[unlabeled[0]].len();
        let mut mean = vec![T::zero(); dim];
        for &i in &unlabeled {
            for (m, &v) in mean.iter_mut().zip(&embeddings[i]) {
                *m += v;
            }
        }
        let n = T::from_usize_lossy(unlabeled.len());
        mean.iter_mut().for_each(|m| *m /= n);
        let first = argmax_untaken(&unlabeled.iter().map(|&i| squared_distance(&embeddings[i], &mean)).collect::<Vec<_>>(), &taken);
        taken[first] = true;
        picked.push(unlabeled[first]);
        relax(&mut min_dist, &unlabeled, embeddings, unlabeled[first]);
    }
    while picked.len() < budget {
        let next = argmax_untaken(&min_dist, &taken);
        taken[next] = true;
        picked.push(unlabeled[next]);
        relax(&mut min_dist, &unlabeled, embeddings, unlabeled[next]);
    }
    Ok(picked)
}

fn argmax_untaken<T: Scalar>(scores: &[T], taken: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (k, &s) in scores.iter().enumerate() {
        if taken[k] {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(k);
        }
    }
    best.expect("budget checked against pool size")
}

fn relax<T: Scalar>(min_dist: &mut [T], unlabeled: &[usize], embeddings: &[Vec<T>], center: usize) {
    min_dist.par_iter_mut().zip(unlabeled.par_iter()).for_each(|(d, &i)| {
        let dist = squared_distance(&embeddings[i], &embeddings[center]);
        if dist < *d {
            *d = dist;
        }
    });
}

/// Runs `strategy` for exactly `budget` samples. The two-step strategy takes
/// its candidate ratio from `cfg.alpha1`; CoreSet embeds samples by their raw
/// features.
pub fn select<T: Scalar, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    pool: &PoolState<T>,
    cfg: &SelectionConfig,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match cfg.strategy {
        QueryStrategy::Eada => eada_select_budget(model, pool, cfg.alpha1, budget).map(|s| s.selected),
        QueryStrategy::Random => random_select(pool, budget, rng),
        QueryStrategy::Entropy => entropy_select(model, pool, budget),
        QueryStrategy::Bvsb => bvsb_select(model, pool, budget),
        QueryStrategy::CoreSet => {
            let embeddings: Vec<Vec<T>> = pool.samples().iter().map(|s| s.features.clone()).collect();
            coreset_select(&embeddings, pool, budget)
        }
    }
}
