use cdii::error::Error;
use cdii::forward::DirichletData;
use cdii::loss::{LossConfig, SampleBatch};
use cdii::network::{init_params, Activation, InitScheme, MlpSpec};
use cdii::optim::{
    adam_step, train, train_objective, AdamConfig, AdamState, NetworkObjective, Objective, Optimizer,
    TrainOptions,
};

/// `½ Σ cᵢ (θᵢ − tᵢ)²`.
struct Quadratic {
    c: Vec<f64>,
    target: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> cdii::Result<f64> {
        let mut v = 0.0;
        for k in 0..theta.len() {
            let d = theta[k] - self.target[k];
            grad[k] = self.c[k] * d;
            v += 0.5 * self.c[k] * d * d;
        }
        Ok(v)
    }
}

fn quadratic() -> Quadratic {
    Quadratic {
        c: vec![1.0, 2.0, 0.5, 3.0],
        target: vec![0.3, -0.7, 1.1, 0.0],
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut theta = vec![0.25, -1.5];
    let mut state = AdamState::new(2);
    adam_step(&mut theta, &[0.0, 0.0], &mut state, &AdamConfig::default(), 1).unwrap();
    assert_eq!(theta, vec![0.25, -1.5]);
}

#[test]
fn first_step_matches_hand_computation() {
    // m̂ = g, v̂ = g² after one step, so θ′ = θ − lr·g/(|g| + eps).
    let cfg = AdamConfig::new(1e-2, 1).unwrap();
    for g in [3.0, -0.2, 1e-6] {
        let mut theta = vec![1.0];
        let mut state = AdamState::new(1);
        adam_step(&mut theta, &[g], &mut state, &cfg, 1).unwrap();
        let expected = 1.0 - 1e-2 * g / (g.abs() + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15, "{} vs {expected}", theta[0]);
    }
}

#[test]
fn second_step_matches_hand_computation() {
    let cfg = AdamConfig::new(0.1, 2).unwrap();
    let mut theta = vec![0.0];
    let mut state = AdamState::new(1);
    adam_step(&mut theta, &[1.0], &mut state, &cfg, 1).unwrap();
    adam_step(&mut theta, &[2.0], &mut state, &cfg, 2).unwrap();
    let m = 0.9 * 0.1 + 0.1 * 2.0;
    let v = 0.999 * 0.001 + 0.001 * 4.0;
    let m_hat = m / (1.0 - 0.81);
    let v_hat: f64 = v / (1.0 - 0.999f64 * 0.999);
    let expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((theta[0] - expected).abs() < 1e-14);
}

#[test]
fn non_finite_gradient_aborts_step() {
    let mut theta = vec![1.0, 2.0];
    let mut state = AdamState::new(2);
    let err = adam_step(&mut theta, &[0.5, f64::NAN], &mut state, &AdamConfig::default(), 1).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }));
    assert_eq!(theta, vec![1.0, 2.0]);
    assert!(adam_step(&mut theta, &[0.5, 0.5], &mut state, &AdamConfig::default(), 0).is_err());
}

#[test]
fn zero_epochs_returns_start() {
    let mut q = quadratic();
    let cfg = AdamConfig::new(1e-2, 0).unwrap();
    let (theta, history) = train_objective(&mut q, &[1.0; 4], &cfg, &TrainOptions::default(), None).unwrap();
    assert_eq!(theta, vec![1.0; 4]);
    assert!(history.is_empty());
}

#[test]
fn adam_solves_quadratic() {
    let mut q = quadratic();
    let cfg = AdamConfig::new(1e-2, 2000).unwrap();
    let (theta, history) = train_objective(&mut q, &[1.0; 4], &cfg, &TrainOptions::default(), None).unwrap();
    assert_eq!(history.len(), 2000);
    let mut grad = vec![0.0; 4];
    let final_loss = q.value_and_grad(&theta, &mut grad).unwrap();
    assert!(final_loss < 1e-8, "final loss {final_loss}");
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(gnorm < 1e-6, "gradient norm {gnorm}");
}

#[test]
fn sgd_decreases_quadratic_monotonically() {
    let mut q = quadratic();
    let cfg = AdamConfig::new(1e-2, 2000).unwrap();
    let opts = TrainOptions {
        optimizer: Optimizer::Sgd,
        ..TrainOptions::default()
    };
    let (theta, history) = train_objective(&mut q, &[1.0; 4], &cfg, &opts, None).unwrap();
    assert!(history.loss.windows(2).all(|w| w[1] <= w[0]));
    let final_loss = q.value_and_grad(&theta, &mut [0.0; 4]).unwrap();
    assert!(final_loss < 1e-8, "final loss {final_loss}");
}

#[test]
fn clipping_bounds_parameters() {
    let mut q = Quadratic {
        c: vec![1.0; 3],
        target: vec![5.0, -5.0, 0.1],
    };
    let cfg = AdamConfig::new(0.1, 500).unwrap();
    let opts = TrainOptions {
        clip: Some(1.0),
        ..TrainOptions::default()
    };
    let (theta, _) = train_objective(&mut q, &[0.0; 3], &cfg, &opts, None).unwrap();
    assert!((theta[0] - 1.0).abs() < 1e-12 && (theta[1] + 1.0).abs() < 1e-12);
    assert!((theta[2] - 0.1).abs() < 1e-3);
}

/// Gradient that turns NaN after a few evaluations.
struct Exploding {
    calls: usize,
}

impl Objective for Exploding {
    fn dim(&self) -> usize {
        1
    }

    fn value_and_grad(&mut self, _theta: &[f64], grad: &mut [f64]) -> cdii::Result<f64> {
        self.calls += 1;
        grad[0] = if self.calls > 3 { f64::NAN } else { 1.0 };
        Ok(1.0)
    }
}

#[test]
fn failure_keeps_partial_history() {
    let cfg = AdamConfig::new(1e-2, 10).unwrap();
    let err = train_objective(&mut Exploding { calls: 0 }, &[0.0], &cfg, &TrainOptions::default(), None)
        .unwrap_err();
    assert_eq!(err.epoch, 3);
    assert_eq!(err.history.len(), 4);
    assert!(matches!(err.error, Error::Numeric { .. }));
    assert!(err.to_string().contains("epoch 3"));
}

#[test]
fn monitor_runs_on_schedule() {
    let mut q = quadratic();
    let cfg = AdamConfig::new(1e-2, 25).unwrap();
    let opts = TrainOptions {
        eval_every: 10,
        ..TrainOptions::default()
    };
    let mut calls = 0;
    let mut monitor = |theta: &[f64]| {
        calls += 1;
        Ok(theta[0])
    };
    let (_, history) = train_objective(&mut q, &[1.0; 4], &cfg, &opts, Some(&mut monitor)).unwrap();
    assert_eq!(calls, 3);
    let epochs: Vec<usize> = history.monitored().iter().map(|m| m.0).collect();
    assert_eq!(epochs, vec![0, 10, 20]);
}

fn small_problem() -> (MlpSpec, Vec<f64>, SampleBatch, LossConfig) {
    let spec = MlpSpec::uniform(3, 6, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 5, InitScheme::GlorotUniform).into_vec();
    let batch = SampleBatch::draw_with(|_, _| 1.0, &DirichletData::linear_y(), 200, 100, 3, None).unwrap();
    (spec, theta, batch, LossConfig::new(10.0, 0.01).unwrap())
}

#[test]
fn network_training_is_deterministic_and_learns() {
    let (spec, theta, batch, cfg) = small_problem();
    let adam = AdamConfig::new(1e-2, 300).unwrap();
    let opts = TrainOptions::default();
    let (t1, h1) = train(&spec, &theta, &batch, &cfg, &adam, &opts, None).unwrap();
    let (t2, h2) = train(&spec, &theta, &batch, &cfg, &adam, &opts, None).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(h1, h2);
    assert!(h1.loss[299] < 0.5 * h1.loss[0]);
}

#[test]
fn resampling_changes_the_batch() {
    let (spec, theta, batch, cfg) = small_problem();
    let g = DirichletData::linear_y();
    let mut seen = Vec::new();
    let mut obj = NetworkObjective::new(&spec, batch, cfg).resample_with(|epoch| {
        seen.push(epoch);
        SampleBatch::draw_with(|_, _| 1.0, &g, 200, 100, 1000 + epoch as u64, None)
    });
    let adam = AdamConfig::new(1e-2, 4).unwrap();
    train_objective(&mut obj, &theta, &adam, &TrainOptions::default(), None).unwrap();
    drop(obj);
    assert_eq!(seen, vec![1, 2, 3]);
}
