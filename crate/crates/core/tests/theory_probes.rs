mod common;

use eada_core::datagen::SyntheticSpec;
use eada_core::theory::{
    bias_probe, grad_inner_product, lemma1_suite, lemma2_probe, lemma2_suite, lemma3_check, lemma3_suite,
    theorem1_suite, InstanceSampling, Theorem1Settings,
};
use eada_core::{Architecture, Model, TrainConfig};

#[test]
fn inner_product_closed_form_on_a_fixed_instance() {
    let model = Model::linear(&[vec![-1.0, 0.5], vec![0.3, 0.2], vec![0.0, -0.4]]).unwrap();
    let x = [1.5, -0.5];
    let y = 0;
    let p = common::softmax_neg(&common::linear_energies(&model, &x));
    let norm2 = x[0] * x[0] + x[1] * x[1];
    let want: f64 = (1..3).map(|c| p[c] * (p[y] - p[c]) * norm2).sum();
    let ip = grad_inner_product(&model, &x, y).unwrap();
    assert!((ip.numeric - want).abs() < 1e-14);
    assert!((ip.closed_form - want).abs() < 1e-14);
    assert!(want > 0.0);
}

#[test]
fn inner_product_vanishes_at_the_uniform_point() {
    let model = Model::zeros(Architecture::Linear, 2, 3, false).unwrap();
    let ip = grad_inner_product(&model, &[0.4, -2.0], 1).unwrap();
    assert_eq!(ip.closed_form, 0.0);
    assert!(ip.numeric.abs() < 1e-15);
}

#[test]
fn one_step_energy_updates_follow_the_closed_form() {
    let model = Model::linear(&[vec![-0.8, 0.1], vec![0.5, 0.5]]).unwrap();
    let x = [1.0, 2.0];
    let eta = 0.05;
    let e = common::linear_energies(&model, &x);
    let p = common::softmax_neg(&e);
    let n2 = 5.0;
    let e_after = [e[0] - eta * (1.0 - p[0]) * n2, e[1] + eta * p[1] * n2];
    let out = lemma2_probe(&model, &x, 0, eta).unwrap();
    assert!((out.f_before - common::free_energy(&e)).abs() < 1e-14);
    assert!((out.f_after - common::free_energy(&e_after)).abs() < 1e-13);
    assert!(out.descended && out.decrease > 0.0);
}

#[test]
fn exchange_inequality_examples() {
    let out = lemma3_check(1.0, &[0.0], &[1.0]).unwrap();
    assert!(out.holds);
    let lhs = 2f64.exp() + (-1f64).exp();
    let rhs = 1f64.exp() + 1.0;
    assert!((lhs - 7.757).abs() < 1e-3 && (rhs - 3.718).abs() < 1e-3);
    assert!(lemma3_check(2.0, &[1.0, 0.5], &[1e-8, 1e-8]).unwrap().margin > 0.0);
    assert!(lemma3_check(1.0, &[2.0], &[0.0]).is_err());
    assert!(lemma3_check(1.0, &[2.0], &[-1.0]).is_err());
}

#[test]
fn suites_find_no_violations() {
    let s = InstanceSampling::default();
    let r = lemma1_suite(300, 1, &s, 5).unwrap();
    assert_eq!((r.trials, r.violations), (300, 0));
    assert!(r.max_relative_error <= 1e-10);
    assert_eq!(r.details.len(), 5);
    let r = lemma2_suite(300, 2, 0.01, &s, 0).unwrap();
    assert_eq!(r.violations, 0);
    let r = lemma3_suite(5000, 3, 0).unwrap();
    assert_eq!(r.violations, 0);
    let r = theorem1_suite(60, 4, &Theorem1Settings::default(), 0).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.excluded < r.trials);
}

#[test]
fn empty_suites_are_vacuous() {
    let r = lemma2_suite(0, 0, 0.01, &InstanceSampling::default(), 10).unwrap();
    assert_eq!((r.trials, r.violations, r.details.len()), (0, 0, 0));
}

#[test]
fn suites_are_deterministic() {
    let s = InstanceSampling::default();
    assert_eq!(lemma1_suite(50, 9, &s, 50).unwrap(), lemma1_suite(50, 9, &s, 50).unwrap());
    // gated trials carry NaN bounds, so compare serialized forms
    let t = Theorem1Settings::default();
    let json = |r| serde_json::to_string(&r).unwrap();
    assert_eq!(json(theorem1_suite(20, 9, &t, 20).unwrap()), json(theorem1_suite(20, 9, &t, 20).unwrap()));
}

#[test]
fn bias_pattern_on_the_default_toy() {
    let r = bias_probe(&SyntheticSpec::default(), &TrainConfig::default()).unwrap();
    assert!(r.shift_gap() > 5.0 * r.split_gap(), "{r:?}");
}

#[test]
fn no_shift_means_no_bias() {
    let spec = SyntheticSpec { rotation_deg: 0.0, ..Default::default() };
    let r = bias_probe(&spec, &TrainConfig::default()).unwrap();
    // target is a third i.i.d. draw: its gap should be of the same order as the split gap
    assert!(r.shift_gap().abs() < 0.2, "{r:?}");
}

#[test]
fn untrained_model_has_uniform_free_energy() {
    for c in 2..6 {
        let model = Model::zeros(Architecture::Linear, 2, c, true).unwrap();
        let f = model.energies(&[3.0, -1.0]).unwrap().free_energy();
        assert_eq!(f, -(c as f64).ln());
    }
}
