use cdii::autodiff::{grad_check, Tape};
use cdii::field::Rect;
use cdii::forward::DirichletData;
use cdii::loss::{
    empirical_loss, empirical_loss_partial, huber, loss_value, quadrature_loss, sample_boundary,
    sample_interior, LossConfig, LossEvaluator, SampleBatch,
};
use cdii::network::{init_params, Activation, InitScheme, MlpSpec};
use cdii::rng::SeededRng;

/// Identity network with `u(x, y) = y`.
fn linear_y_net() -> (MlpSpec, Vec<f64>) {
    let spec = MlpSpec::new(vec![2, 1, 1], Activation::Identity).unwrap();
    (spec, vec![0.0, 1.0, 0.0, 1.0, 0.0])
}

fn unit_batch(n1: usize, n2: usize, seed: u64) -> SampleBatch {
    SampleBatch::draw_with(|_, _| 1.0, &DirichletData::linear_y(), n1, n2, seed, None).unwrap()
}

fn bump(x: f64, y: f64) -> f64 {
    1.0 + 0.5 * (3.0 * x).sin() * (2.0 * y).cos().powi(2)
}

#[test]
fn interior_sampler_statistics() {
    let a = sample_interior(100_000, 4, None).unwrap();
    assert_eq!(a, sample_interior(100_000, 4, None).unwrap());
    assert!(a.iter().all(|p| p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0));
    let mean = a.iter().map(|p| p[0]).sum::<f64>() / a.len() as f64;
    assert!((0.494..=0.506).contains(&mean), "mean {mean}");
    assert_ne!(a, sample_interior(100_000, 5, None).unwrap());

    let r = Rect::new(0.25, 0.75, 0.1, 0.4).unwrap();
    let p = sample_interior(10_000, 4, Some(&r)).unwrap();
    assert!(p.iter().all(|p| p[0] > 0.25 && p[0] < 0.75 && p[1] > 0.1 && p[1] < 0.4));
}

#[test]
fn boundary_sampler_statistics() {
    let b = sample_boundary(100_000, 9).unwrap();
    assert_eq!(b, sample_boundary(100_000, 9).unwrap());
    let mut counts = [0usize; 4];
    for &[x, y] in &b {
        assert_eq!(x.min(1.0 - x).min(y).min(1.0 - y), 0.0);
        let edge = if y == 0.0 {
            0
        } else if x == 1.0 {
            1
        } else if y == 1.0 {
            2
        } else {
            3
        };
        counts[edge] += 1;
    }
    for c in counts {
        let f = c as f64 / b.len() as f64;
        assert!((0.24..=0.26).contains(&f), "edge frequency {f}");
    }
}

#[test]
fn zero_network_closed_form() {
    let spec = MlpSpec::uniform(3, 5, Activation::Tanh).unwrap();
    let theta = vec![0.0; spec.num_params()];
    let cfg = LossConfig::default();
    let batch = unit_batch(500, 300, 2);
    let parts = loss_value(&spec, &theta, &batch, &cfg).unwrap();
    assert!((parts.interior - cfg.zeta / 2.0).abs() < 1e-15);
    // u ≡ 0, so the mismatch is |y| on each boundary point.
    let mean_psi: f64 =
        batch.boundary().iter().map(|p| huber(p[1], cfg.zeta)).sum::<f64>() / batch.n2() as f64;
    let expected = cfg.gamma * 4.0 * mean_psi;
    assert!((parts.boundary - expected).abs() <= 1e-12 * expected);
}

#[test]
fn linear_solution_gives_one_plus_two_gamma_zeta() {
    let (spec, theta) = linear_y_net();
    for (gamma, zeta) in [(100.0, 0.01), (10.0, 0.05), (3.0, 0.2)] {
        let cfg = LossConfig::new(gamma, zeta).unwrap();
        let expected = 1.0 + 2.0 * gamma * zeta;
        let mc = loss_value(&spec, &theta, &unit_batch(1000, 400, 1), &cfg).unwrap();
        assert_eq!(mc.interior, 1.0);
        assert!((mc.total() - expected).abs() <= 1e-13 * expected);
        let q = quadrature_loss(&spec, &theta, |_, _| 1.0, &DirichletData::linear_y(), 64, &cfg, None)
            .unwrap();
        assert_eq!(q.interior, 1.0);
        assert!((q.total() - expected).abs() <= 1e-13 * expected);
    }
}

#[test]
fn gamma_enters_linearly() {
    let spec = MlpSpec::uniform(4, 8, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 3, InitScheme::GlorotUniform).into_vec();
    let batch = SampleBatch::draw_with(bump, &DirichletData::linear_y(), 300, 200, 8, None).unwrap();
    let l1 = loss_value(&spec, &theta, &batch, &LossConfig::new(10.0, 0.01).unwrap()).unwrap();
    let l2 = loss_value(&spec, &theta, &batch, &LossConfig::new(20.0, 0.01).unwrap()).unwrap();
    assert_eq!(l1.interior, l2.interior);
    assert!((l2.total() - l1.total() - l1.boundary).abs() <= 1e-12 * l1.boundary);
}

#[test]
fn partial_loss_properties() {
    let (spec, theta) = linear_y_net();
    let g = DirichletData::linear_y();
    let unit = Rect::unit();
    let full = SampleBatch::draw_with(bump, &g, 400, 200, 6, None).unwrap();
    let same = SampleBatch::draw_with(bump, &g, 400, 200, 6, Some(&unit)).unwrap();
    assert_eq!(full, same);

    let r = Rect::new(0.25, 0.75, 0.25, 0.75).unwrap();
    let cfg = LossConfig::partial(10.0, 0.01, &r).unwrap();
    let batch = unit_batch_in(&r);
    let tape = Tape::new();
    let th = tape.vars(&theta);
    let l = empirical_loss_partial(&spec, &th, &batch, &cfg, &r).unwrap();
    let parts = loss_value(&spec, &theta, &batch, &cfg).unwrap();
    assert_eq!(parts.interior, 0.25);
    assert!((l.value() - parts.total()).abs() < 1e-14);

    // Wrong area or points outside the rectangle are rejected.
    let wrong = LossConfig::new(10.0, 0.01).unwrap();
    assert!(empirical_loss_partial(&spec, &th, &batch, &wrong, &r).is_err());
    assert!(empirical_loss_partial(&spec, &th, &full, &cfg, &r).is_err());
}

fn unit_batch_in(r: &Rect) -> SampleBatch {
    SampleBatch::draw_with(|_, _| 1.0, &DirichletData::linear_y(), 300, 100, 12, Some(r)).unwrap()
}

#[test]
fn tape_and_batched_losses_agree() {
    let mut rng = SeededRng::new(31);
    for trial in 0..10 {
        let depth = 2 + rng.index(5);
        let width = 3 + rng.index(8);
        let spec = MlpSpec::uniform(depth, width, Activation::Tanh).unwrap();
        let theta = init_params(&spec, trial, InitScheme::Uniform(0.9)).into_vec();
        let batch = SampleBatch::draw_with(bump, &DirichletData::linear_y(), 70, 65, trial, None).unwrap();
        let cfg = LossConfig::new(10.0, 0.05).unwrap();

        let tape = Tape::new();
        let th = tape.vars(&theta);
        let l = empirical_loss(&spec, &th, &batch, &cfg).unwrap();
        let expected = tape.backward(l).unwrap().wrt_all(&th);

        let mut grad = vec![0.0; theta.len()];
        let parts = LossEvaluator::new(&spec)
            .value_and_grad(&theta, &batch, &cfg, &mut grad)
            .unwrap();
        assert!((parts.total() - l.value()).abs() <= 1e-12 * l.value());
        for (a, b) in grad.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = SeededRng::new(41);
    for trial in 0..10 {
        let depth = 2 + rng.index(4);
        let width = 3 + rng.index(5);
        let spec = MlpSpec::uniform(depth, width, Activation::Tanh).unwrap();
        let theta = init_params(&spec, 100 + trial, InitScheme::GlorotUniform).into_vec();
        let batch = SampleBatch::draw_with(bump, &DirichletData::linear_y(), 20, 12, trial, None).unwrap();
        let cfg = LossConfig::new(10.0, 0.01).unwrap();
        let worst = grad_check(|_, th| empirical_loss(&spec, th, &batch, &cfg), &theta, 1e-5).unwrap();
        assert!(worst <= 1e-5, "trial {trial}: {worst}");

        // The batched gradient against finite differences of the batched value.
        let mut eval = LossEvaluator::new(&spec);
        let mut grad = vec![0.0; theta.len()];
        eval.value_and_grad(&theta, &batch, &cfg, &mut grad).unwrap();
        let h = 1e-5;
        let mut th = theta.clone();
        for k in 0..theta.len() {
            th[k] = theta[k] + h;
            let up = eval.value(&th, &batch, &cfg).unwrap().total();
            th[k] = theta[k] - h;
            let down = eval.value(&th, &batch, &cfg).unwrap().total();
            th[k] = theta[k];
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[k]).abs() / grad[k].abs().max(1.0) <= 1e-5, "trial {trial} k {k}");
        }
    }
}

#[test]
fn smoothing_dominates_and_is_bounded() {
    let mut rng = SeededRng::new(51);
    for trial in 0..20 {
        let spec = MlpSpec::uniform(3, 6, Activation::Tanh).unwrap();
        let theta = init_params(&spec, trial, InitScheme::Uniform(rng.uniform_in(0.05, 1.5))).into_vec();
        let batch = SampleBatch::draw_with(bump, &DirichletData::linear_y(), 200, 100, trial, None).unwrap();
        let cfg = LossConfig::new(rng.uniform_in(1.0, 50.0), rng.uniform_in(1e-3, 0.3)).unwrap();
        let smooth = loss_value(&spec, &theta, &batch, &cfg).unwrap().total();
        assert!(smooth >= 0.0);

        // Unsmoothed loss from the network outputs.
        let ev = cdii::network::evaluate(&spec, &theta, batch.interior()).unwrap();
        let inner: f64 = ev.iter().zip(batch.interior_a()).map(|(e, a)| a * e.grad_norm()).sum();
        let eb = cdii::network::evaluate(&spec, &theta, batch.boundary()).unwrap();
        let outer: f64 = eb
            .iter()
            .zip(batch.boundary_a().iter().zip(batch.boundary_g()))
            .map(|(e, (a, g))| a * (e.u - g).abs())
            .sum();
        let raw = inner / batch.n1() as f64 + cfg.gamma * 4.0 * outer / batch.n2() as f64;
        let amax = batch.interior_a().iter().chain(batch.boundary_a()).fold(0.0f64, |m, &a| m.max(a));
        let slack = (1.0 + cfg.gamma * 4.0) * amax * cfg.zeta / 2.0;
        assert!(smooth >= raw - 1e-12 * raw);
        assert!(smooth <= raw + slack + 1e-12 * raw);
    }
}

#[test]
fn quadrature_refinement_is_stable() {
    let spec = MlpSpec::uniform(4, 10, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 17, InitScheme::GlorotUniform).into_vec();
    let cfg = LossConfig::new(10.0, 0.01).unwrap();
    let g = DirichletData::linear_y();
    let q1 = quadrature_loss(&spec, &theta, bump, &g, 128, &cfg, None).unwrap().total();
    let q2 = quadrature_loss(&spec, &theta, bump, &g, 256, &cfg, None).unwrap().total();
    assert!((q1 - q2).abs() < 1e-3 * q2, "{q1} vs {q2}");
    assert!(quadrature_loss(&spec, &theta, bump, &g, 32, &cfg, None).is_err());
}

#[test]
fn monte_carlo_tracks_quadrature() {
    let spec = MlpSpec::uniform(4, 10, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 17, InitScheme::GlorotUniform).into_vec();
    let cfg = LossConfig::new(10.0, 0.01).unwrap();
    let g = DirichletData::linear_y();
    let q = quadrature_loss(&spec, &theta, bump, &g, 256, &cfg, None).unwrap().total();
    let mut eval = LossEvaluator::new(&spec);
    let mut within = 0;
    for seed in 0..5 {
        let batch = SampleBatch::draw_with(bump, &g, 20_000, 20_000, 500 + seed, None).unwrap();
        let est = eval.estimate(&theta, &batch, &cfg).unwrap();
        if (est.value - q).abs() <= 3.0 * est.standard_error {
            within += 1;
        }
    }
    assert!(within >= 4, "{within}/5 within three standard errors");
}
