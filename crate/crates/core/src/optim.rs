//! First-order optimizers and the full-batch training loop.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::Rect;
use crate::loss::{LossConfig, LossEvaluator, SampleBatch};
use crate::network::MlpSpec;

/// ADAM hyperparameters and the epoch budget.
///
/// `schedule` lists `(first_epoch, lr)` pairs; when empty the rate is `lr`
/// throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub schedule: Vec<(usize, f64)>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 5000,
            schedule: Vec::new(),
        }
    }
}

impl AdamConfig {
    pub fn new(lr: f64, epochs: usize) -> Result<Self> {
        let cfg = Self {
            lr,
            epochs,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::arg(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::arg(format!("eps must be positive, got {}", self.eps)));
        }
        if let Some(&(first, _)) = self.schedule.first() {
            if first != 0 {
                return Err(Error::arg("learning-rate schedule must start at epoch 0"));
            }
        }
        if self.schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::arg("learning-rate schedule epochs must increase strictly"));
        }
        if let Some(&(_, lr)) = self.schedule.iter().find(|(_, lr)| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::arg(format!("scheduled learning rate must be positive, got {lr}")));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|(start, _)| *start <= epoch)
            .map_or(self.lr, |&(_, lr)| lr)
    }
}

/// Parses a schedule written as `epoch:lr,epoch:lr,…`.
pub fn parse_schedule(s: &str) -> Result<Vec<(usize, f64)>> {
    let bad = || Error::arg(format!("schedule must look like 0:8e-4,3000:4e-4, got {s:?}"));
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (e, lr) = item.split_once(':').ok_or_else(bad)?;
            Ok((e.trim().parse().map_err(|_| bad())?, lr.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn format_schedule(schedule: &[(usize, f64)]) -> String {
    schedule
        .iter()
        .map(|(e, lr)| format!("{e}:{lr:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }
}

fn check_finite(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(k) => Err(Error::numeric(
            "gradient",
            format!("component {k} is {}", grad[k]),
        )),
        None => Ok(()),
    }
}

/// One bias-corrected ADAM update at step `t ≥ 1` with rate `cfg.lr_at(t − 1)`.
///
/// `theta` and `state` are left untouched when the gradient is not finite.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig, t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::arg("ADAM step index starts at 1"));
    }
    if grad.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::arg(format!(
            "ADAM shapes differ: θ {}, gradient {}, state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    check_finite(grad)?;
    let lr = cfg.lr_at(t - 1);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..theta.len() {
        let g = grad[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        theta[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Plain gradient descent step.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != theta.len() {
        return Err(Error::arg("SGD shapes differ"));
    }
    check_finite(grad)?;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::arg(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// Loop settings besides the step rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub optimizer: Optimizer,
    /// Clip every parameter into `[-R, R]` after each step.
    pub clip: Option<f64>,
    /// Epoch spacing of monitor evaluations; 0 disables the monitor.
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            clip: None,
            eval_every: 100,
        }
    }
}

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns the value and overwrites `grad` with the gradient.
    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Called before each epoch.
    fn start_epoch(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

/// Loss per epoch (at the parameters entering that epoch), with monitor
/// values on the epochs where the monitor ran.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub sigma_error: Vec<Option<f64>>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// `(epoch, error)` for the epochs where the monitor ran.
    pub fn monitored(&self) -> Vec<(usize, f64)> {
        self.sigma_error
            .iter()
            .enumerate()
            .filter_map(|(e, v)| v.map(|v| (e, v)))
            .collect()
    }

    /// CSV with header `epoch,loss[,sigma_error]`; unmonitored cells stay empty.
    pub fn to_csv(&self) -> String {
        let with_error = self.sigma_error.iter().any(Option::is_some);
        let mut out = String::from(if with_error { "epoch,loss,sigma_error\n" } else { "epoch,loss\n" });
        for (e, loss) in self.loss.iter().enumerate() {
            out.push_str(&format!("{e},{loss:.16e}"));
            if with_error {
                out.push(',');
                if let Some(v) = self.sigma_error[e] {
                    out.push_str(&format!("{v:.16e}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Training stopped early; carries the state reached before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub epoch: usize,
    pub theta: Vec<f64>,
    pub history: TrainHistory,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training failed at epoch {}: {}", self.epoch, self.error)
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        match f.error {
            Error::Numeric { op, message } => Error::Numeric {
                op,
                message: format!("{message} (epoch {})", f.epoch),
            },
            other => other,
        }
    }
}

pub type Monitor<'a> = dyn FnMut(&[f64]) -> Result<f64> + 'a;

/// Runs `adam.epochs` full-batch steps from `theta0`.
pub fn train_objective<O: Objective + ?Sized>(
    objective: &mut O,
    theta0: &[f64],
    adam: &AdamConfig,
    opts: &TrainOptions,
    mut monitor: Option<&mut Monitor<'_>>,
) -> std::result::Result<(Vec<f64>, TrainHistory), TrainFailure> {
    let mut theta = theta0.to_vec();
    let mut history = TrainHistory::default();
    let fail = |error: Error, epoch: usize, theta: Vec<f64>, history: TrainHistory| TrainFailure {
        error,
        epoch,
        theta,
        history,
    };
    if let Err(e) = adam.validate() {
        return Err(fail(e, 0, theta, history));
    }
    if objective.dim() != theta.len() {
        let e = Error::arg(format!("objective has {} parameters, θ₀ has {}", objective.dim(), theta.len()));
        return Err(fail(e, 0, theta, history));
    }
    let mut state = AdamState::new(theta.len());
    let mut grad = vec![0.0; theta.len()];
    for epoch in 0..adam.epochs {
        let step = (|| -> Result<(f64, Option<f64>)> {
            objective.start_epoch(epoch)?;
            let loss = objective.value_and_grad(&theta, &mut grad)?;
            let err = match monitor.as_deref_mut() {
                Some(m) if opts.eval_every > 0 && epoch % opts.eval_every == 0 => Some(m(&theta)?),
                _ => None,
            };
            Ok((loss, err))
        })();
        let (loss, err) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, epoch, theta, history)),
        };
        history.loss.push(loss);
        history.sigma_error.push(err);
        let updated = match opts.optimizer {
            Optimizer::Adam => adam_step(&mut theta, &grad, &mut state, adam, epoch + 1),
            Optimizer::Sgd => sgd_step(&mut theta, &grad, adam.lr_at(epoch)),
        };
        if let Err(e) = updated {
            return Err(fail(e, epoch, theta, history));
        }
        if let Some(r) = opts.clip {
            for t in theta.iter_mut() {
                *t = t.clamp(-r, r);
            }
        }
    }
    Ok((theta, history))
}

/// Source of a fresh sample batch for each epoch.
pub type Resampler<'a> = dyn FnMut(usize) -> Result<SampleBatch> + 'a;

/// The empirical loss of a network as an [`Objective`].
pub struct NetworkObjective<'a> {
    eval: LossEvaluator,
    batch: SampleBatch,
    cfg: LossConfig,
    subdomain: Option<Rect>,
    resample: Option<Box<Resampler<'a>>>,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(spec: &MlpSpec, batch: SampleBatch, cfg: LossConfig) -> Self {
        Self {
            eval: LossEvaluator::new(spec),
            batch,
            cfg,
            subdomain: None,
            resample: None,
        }
    }

    /// Uses the partial-data loss over `rect`.
    pub fn partial(mut self, rect: Rect) -> Self {
        self.subdomain = Some(rect);
        self
    }

    /// Replaces the batch before every epoch after the first.
    pub fn resample_with(mut self, f: impl FnMut(usize) -> Result<SampleBatch> + 'a) -> Self {
        self.resample = Some(Box::new(f));
        self
    }

    pub fn batch(&self) -> &SampleBatch {
        &self.batch
    }
}

impl Objective for NetworkObjective<'_> {
    fn dim(&self) -> usize {
        self.eval.spec().num_params()
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let parts = match &self.subdomain {
            Some(r) => self.eval.value_and_grad_partial(theta, &self.batch, &self.cfg, r, grad)?,
            None => self.eval.value_and_grad(theta, &self.batch, &self.cfg, grad)?,
        };
        Ok(parts.total())
    }

    fn start_epoch(&mut self, epoch: usize) -> Result<()> {
        if epoch > 0 {
            if let Some(f) = self.resample.as_mut() {
                self.batch = f(epoch)?;
            }
        }
        Ok(())
    }
}

/// Trains `u_θ` on the empirical loss of a fixed batch.
pub fn train(
    spec: &MlpSpec,
    theta0: &[f64],
    batch: &SampleBatch,
    loss_cfg: &LossConfig,
    adam: &AdamConfig,
    opts: &TrainOptions,
    monitor: Option<&mut Monitor<'_>>,
) -> std::result::Result<(Vec<f64>, TrainHistory), TrainFailure> {
    let mut objective = NetworkObjective::new(spec, batch.clone(), *loss_cfg);
    train_objective(&mut objective, theta0, adam, opts, monitor)
}
