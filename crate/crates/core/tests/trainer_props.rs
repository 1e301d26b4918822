use eada_core::datagen::{gen_toy, SyntheticSpec};
use eada_core::trainer::{run_active_loop, train_source_only, EmaState, TrainConfig};
use eada_core::{QueryStrategy, Sample64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_toy(seed: u64) -> (Vec<Sample64>, Vec<Sample64>) {
    let spec = SyntheticSpec { n_per_class_source: 60, n_per_class_target: 60, seed, ..Default::default() };
    let d = gen_toy(&spec).unwrap();
    (d.source, d.target)
}

fn loop_cfg(strategy: QueryStrategy, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig { epochs: 4, seed, ..Default::default() };
    cfg.selection_rounds = [1, 2, 3].into();
    cfg.selection.per_round_budget_percent = 5.0;
    cfg.selection.strategy = strategy;
    cfg
}

proptest! {
    #[test]
    fn ema_stays_in_the_convex_hull(values in prop::collection::vec(-20.0f64..20.0, 1..50), seed in any::<u64>()) {
        let mut ema = EmaState::<f64>::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &values {
            let before = ema.delta;
            let was_init = ema.initialized;
            let d = ema.update(v, &mut rng).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
            prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
            if was_init {
                prop_assert!(d >= before.min(v) - 1e-12 && d <= before.max(v) + 1e-12);
            } else {
                prop_assert_eq!(d, v);
            }
        }
        let trace = ema.trace.unwrap();
        prop_assert_eq!(trace.len(), values.len());
        prop_assert!(trace.iter().skip(1).all(|r| r.lambda.is_some_and(|l| (0.0..1.0).contains(&l))));
    }

    #[test]
    fn convex_update_with_fixed_lambda(prev in -10.0f64..10.0, v in -10.0f64..10.0, lambda in 0.0f64..=1.0) {
        let mut ema = EmaState::<f64>::default();
        ema.update_with_lambda(prev, 0.5).unwrap();
        let d = ema.update_with_lambda(v, lambda).unwrap();
        prop_assert!((d - (lambda * prev + (1.0 - lambda) * v)).abs() <= 1e-12);
    }
}

#[test]
fn active_loop_is_deterministic_per_seed() {
    let (source, target) = small_toy(4);
    for strategy in QueryStrategy::ALL {
        let a = run_active_loop(&source, &target, &loop_cfg(strategy, 11)).unwrap();
        let b = run_active_loop(&source, &target, &loop_cfg(strategy, 11)).unwrap();
        assert_eq!(a.rounds, b.rounds, "{strategy:?}");
        assert_eq!(a.model, b.model);
    }
}

#[test]
fn labeled_count_grows_by_the_budget() {
    let (source, target) = small_toy(1);
    let run = run_active_loop(&source, &target, &loop_cfg(QueryStrategy::Eada, 0)).unwrap();
    let counts: Vec<usize> = run.rounds.iter().map(|r| r.labeled_count).collect();
    assert_eq!(counts, vec![0, 6, 12, 18]);
    assert_eq!(run.rounds.last().unwrap().selected_indices, Vec::<usize>::new());
    let picked: Vec<usize> = run.rounds.iter().flat_map(|r| r.selected_indices.clone()).collect();
    assert_eq!(picked.len(), 18);
    assert_eq!(run.pool.labeled_idx().iter().copied().collect::<Vec<_>>(), {
        let mut p = picked.clone();
        p.sort();
        p
    });
    run.pool.check_invariants().unwrap();
}

#[test]
fn empty_round_set_is_source_only_training() {
    let (source, target) = small_toy(2);
    let mut cfg = loop_cfg(QueryStrategy::Eada, 3);
    cfg.selection_rounds.clear();
    cfg.objective.gamma = 0.0;
    let run = run_active_loop(&source, &target, &cfg).unwrap();
    assert_eq!(run.rounds.len(), 1);
    assert_eq!(run.rounds[0].labeled_count, 0);
    assert!(run.pool.labeled_idx().is_empty());
}

#[test]
fn random_and_eada_share_a_trajectory_until_the_first_query() {
    let (source, target) = small_toy(5);
    let a = run_active_loop(&source, &target, &loop_cfg(QueryStrategy::Random, 8)).unwrap();
    let b = run_active_loop(&source, &target, &loop_cfg(QueryStrategy::Entropy, 8)).unwrap();
    let (ra, rb) = (&a.rounds[0], &b.rounds[0]);
    assert_eq!(ra.target_error_rate, rb.target_error_rate);
    assert_eq!(ra.mean_f_source, rb.mean_f_source);
}

#[test]
fn default_toy_is_in_the_shifted_regime() {
    let spec = SyntheticSpec::default();
    let d = gen_toy::<f64>(&spec).unwrap();
    let cfg = TrainConfig::default();
    let model = train_source_only(&d.source, &cfg).unwrap();
    let err = |set: &[Sample64]| {
        set.iter().filter(|s| model.energies(&s.features).unwrap().predict() != s.label.unwrap()).count() as f64
            / set.len() as f64
    };
    assert!(err(&d.source) <= 0.05, "source error {}", err(&d.source));
    assert!(err(&d.target) >= 0.35, "target error {}", err(&d.target));
}
