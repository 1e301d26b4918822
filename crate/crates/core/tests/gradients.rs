use eada_core::energy::{finite_diff_grad, grad_free_energy, grad_nll, grad_objective, objective_batch};
use eada_core::{Architecture, Domain, Model, ObjectiveConfig, Sample64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, dim: usize, classes: usize, domain: Domain, labeled: bool) -> Sample64 {
    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    if labeled {
        Sample64::labeled(x, rng.random_range(0..classes), domain)
    } else {
        Sample64::unlabeled(x, domain)
    }
}

fn relative_error(a: &Model, b: &Model) -> f64 {
    let mut diff = a.clone();
    diff.axpy(-1.0, b);
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff.norm() / scale
    }
}

struct Case {
    model: Model,
    labeled: Vec<Sample64>,
    unlabeled: Vec<Sample64>,
    delta: f64,
    cfg: ObjectiveConfig,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let dim = rng.random_range(1..=5);
    let classes = rng.random_range(2..=5);
    let arch = if rng.random_bool(0.5) {
        Architecture::Linear
    } else {
        Architecture::OneHiddenLayer { hidden: rng.random_range(1..=5) }
    };
    let model = Model::init_with_scale(arch, dim, classes, rng.random_bool(0.5), 1.0, rng).unwrap();
    let n_src = rng.random_range(1..=4);
    let n_tl = rng.random_range(0..=3);
    let n_tu = rng.random_range(0..=4);
    let mut labeled: Vec<Sample64> = (0..n_src).map(|_| sample(rng, dim, classes, Domain::Source, true)).collect();
    labeled.extend((0..n_tl).map(|_| sample(rng, dim, classes, Domain::Target, true)));
    let unlabeled: Vec<Sample64> = (0..n_tu).map(|_| sample(rng, dim, classes, Domain::Target, false)).collect();
    let cfg = ObjectiveConfig {
        gamma: rng.random_range(0.0..1.0),
        delta_s: rng.random_range(0.1..2.0),
        delta_t: rng.random_range(0.1..2.0),
    };
    // keep every unlabeled free energy away from the hinge kink
    let fs: Vec<f64> = unlabeled.iter().map(|s| model.energies(&s.features).unwrap().free_energy()).collect();
    let delta = loop {
        let d = rng.random_range(-4.0..2.0);
        if fs.iter().all(|f| (f - d).abs() > 1e-3) {
            break d;
        }
    };
    Case { model, labeled, unlabeled, delta, cfg }
}

#[test]
fn objective_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let c = random_case(&mut rng);
        let (loss, analytic) = grad_objective(&c.model, &c.labeled, &c.unlabeled, c.delta, &c.cfg).unwrap();
        let direct = objective_batch(&c.model, &c.labeled, &c.unlabeled, c.delta, &c.cfg).unwrap();
        assert_eq!(loss, direct);
        let numeric = finite_diff_grad(
            &c.model,
            |m| objective_batch(m, &c.labeled, &c.unlabeled, c.delta, &c.cfg).unwrap().total,
            1e-6,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn nll_and_free_energy_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let c = random_case(&mut rng);
        let s = &c.labeled[0];
        let y = s.label.unwrap();
        let g = grad_nll(&c.model, &s.features, y).unwrap();
        let n = finite_diff_grad(&c.model, |m| m.energies(&s.features).unwrap().nll(y).unwrap(), 1e-6).unwrap();
        assert!(relative_error(&g, &n) < 1e-6);
        let g = grad_free_energy(&c.model, &s.features).unwrap();
        let n = finite_diff_grad(&c.model, |m| m.energies(&s.features).unwrap().free_energy(), 1e-6).unwrap();
        assert!(relative_error(&g, &n) < 1e-6);
    }
}

#[test]
fn linear_nll_gradient_rows_are_x_times_indicator_minus_p() {
    let x = vec![0.5, -1.0, 2.0];
    let model = Model::linear(&[vec![0.1, 0.2, 0.3], vec![-0.4, 0.0, 0.5], vec![1.0, -1.0, 0.0]]).unwrap();
    let g = grad_nll(&model, &x, 1).unwrap();
    let p = model.energies(&x).unwrap().probabilities();
    for c in 0..3 {
        let coef = f64::from(u8::from(c == 1)) - p[c];
        for (gj, xj) in g.class_row(c).iter().zip(&x) {
            assert!((gj - xj * coef).abs() < 1e-15);
        }
    }
}

#[test]
fn hinge_inactive_term_has_no_gradient() {
    let model = Model::linear(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let labeled = vec![Sample64::labeled(vec![1.0, 1.0], 0, Domain::Source)];
    let unlabeled = vec![Sample64::unlabeled(vec![0.2, -0.3], Domain::Target)];
    let cfg = ObjectiveConfig { gamma: 0.5, ..Default::default() };
    let (_, with) = grad_objective(&model, &labeled, &unlabeled, 100.0, &cfg).unwrap();
    let (_, without) = grad_objective(&model, &labeled, &[], 100.0, &cfg).unwrap();
    assert_eq!(with, without);
}
