mod common;

use eada_core::energy::{fea_hinge, nll_loss};
use eada_core::{Architecture, EnergyVector, Model};
use proptest::prelude::*;

fn energy_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 2..=10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn free_energy_lies_between_min_minus_log_c_and_min(e in energy_vec()) {
        let ev = EnergyVector::new(e.clone()).unwrap();
        let f = ev.free_energy();
        let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let c = e.len() as f64;
        prop_assert!(f <= min + 1e-12);
        prop_assert!(f >= min - c.ln() - 1e-12);
    }

    #[test]
    fn free_energy_shifts_with_constant_offset(e in energy_vec(), k in -100.0f64..100.0) {
        let ev = EnergyVector::new(e).unwrap();
        let shifted = ev.shifted(k);
        prop_assert!((shifted.free_energy() - (ev.free_energy() + k)).abs() <= 1e-10 * (1.0 + k.abs()));
        let (p, q) = (ev.probabilities(), shifted.probabilities());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(ev.predict(), shifted.predict());
    }

    #[test]
    fn free_energy_matches_oracle(e in energy_vec()) {
        let f = EnergyVector::new(e.clone()).unwrap().free_energy();
        let want = common::free_energy(&e);
        prop_assert!((f - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn probabilities_form_a_distribution(e in energy_vec()) {
        let p = EnergyVector::new(e.clone()).unwrap().probabilities();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let oracle = common::softmax_neg(&e);
        for (a, b) in p.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn nll_is_nonnegative_and_matches_cross_entropy(e in energy_vec(), pick in 0usize..10) {
        let y = pick % e.len();
        let ev = EnergyVector::new(e.clone()).unwrap();
        let nll = ev.nll(y).unwrap();
        prop_assert!(nll >= 0.0);
        let ce = common::cross_entropy(&e, y);
        prop_assert!((nll - ce).abs() <= 1e-12 * ce.abs().max(f64::MIN_POSITIVE));
        // nll = E_y - F
        prop_assert!((nll - (e[y] - ev.free_energy())).abs() <= 1e-9 * (1.0 + e[y].abs()));
    }

    #[test]
    fn predict_is_argmax_of_softmax(e in energy_vec()) {
        let p = common::softmax_neg(&e);
        let mut best = 0;
        for c in 1..p.len() {
            if p[c] > p[best] {
                best = c;
            }
        }
        prop_assert_eq!(EnergyVector::new(e).unwrap().predict(), best);
    }

    #[test]
    fn hinge_is_nonnegative_and_exact(f in -50.0f64..50.0, delta in -50.0f64..50.0) {
        let h = fea_hinge(f, delta);
        prop_assert!(h >= 0.0);
        prop_assert_eq!(h, if f > delta { f - delta } else { 0.0 });
    }

    #[test]
    fn entropy_matches_oracle(e in energy_vec()) {
        let h = EnergyVector::new(e.clone()).unwrap().entropy();
        let c = e.len() as f64;
        prop_assert!(h >= -1e-12 && h <= c.ln() + 1e-12);
        prop_assert!((h - common::entropy(&e)).abs() <= 1e-12);
    }

    #[test]
    fn model_energies_match_layer_oracle(
        seed in any::<u64>(),
        dim in 1usize..6,
        classes in 2usize..6,
        hidden in 1usize..5,
        mlp in any::<bool>(),
        bias in any::<bool>(),
        x in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        use rand::SeedableRng;
        let arch = if mlp { Architecture::OneHiddenLayer { hidden } } else { Architecture::Linear };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::init_with_scale(arch, dim, classes, bias, 1.0, &mut rng).unwrap();
        for (k, p) in model.iter_mut().enumerate() {
            *p += 0.01 * k as f64;
        }
        let x = &x[..dim];
        let got = model.energies(x).unwrap();
        let want = common::energies(&model, x);
        for (a, b) in got.as_slice().iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn uniform_energies_give_log_c() {
    for c in 2..=10 {
        let ev = EnergyVector::new(vec![0.7; c]).unwrap();
        assert!((ev.free_energy() - (0.7 - (c as f64).ln())).abs() < 1e-14);
        assert!((ev.entropy() - (c as f64).ln()).abs() < 1e-14);
        assert!((ev.nll(c - 1).unwrap() - (c as f64).ln()).abs() < 1e-14);
    }
}

#[test]
fn five_sample_entropy_oracle() {
    let batch = [
        vec![0.0, 0.0, 0.0],
        vec![-5.0, 1.0, 2.0],
        vec![1.0, 1.0, -1.0],
        vec![10.0, -10.0, 0.0],
        vec![0.3, 0.2, 0.1],
    ];
    for e in &batch {
        let got = EnergyVector::new(e.clone()).unwrap().entropy();
        assert!((got - common::entropy(e)).abs() < 1e-13, "{e:?}");
    }
    assert!((EnergyVector::new(batch[0].clone()).unwrap().entropy() - 3f64.ln()).abs() < 1e-15);
}

#[test]
fn nll_of_confident_prediction_keeps_relative_precision() {
    let model = Model::linear(&[vec![-40.0], vec![0.0]]).unwrap();
    let nll = nll_loss(&model, &[1.0], 0).unwrap();
    let want = (-40f64).exp();
    assert!((nll - want).abs() <= 1e-14 * want);
}

#[test]
fn f32_instantiation_agrees_with_f64() {
    let e64 = vec![0.5, -1.25, 2.0, 0.0];
    let e32: Vec<f32> = e64.iter().map(|&v| v as f32).collect();
    let f64v = EnergyVector::new(e64).unwrap().free_energy();
    let f32v = EnergyVector::new(e32).unwrap().free_energy();
    assert!((f64v - f32v as f64).abs() < 1e-6);
}
