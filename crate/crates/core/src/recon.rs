//! Reconstruction pipelines.
//!
//! * [`reconstruct_nn`]: fit `u_θ` to the data by minimising the empirical
//!   loss, then read off `σ̂ = a / |∇u_θ|` at the grid nodes.
//! * [`baseline_iterate`]: alternate forward solves and the update
//!   `σⁿ⁺¹ = a / |∇uⁿ|`.
//! * [`denoise`]: fit a small network to noisy grid data with a fixed budget.
//!
//! The division is guarded by a floor on `|∇u|`; nodes that hit it are counted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{
    relative_l2_error, relative_l2_error_masked, write_grid, write_mask, write_pgm, GridField, Mask, Rect,
};
use crate::forward::{gradient_magnitude, solve_conductivity_pde, DirichletData};
use crate::loss::{LossConfig, SampleBatch};
use crate::network::batch::BLOCK;
use crate::network::{evaluate, init_params, BatchNet, InitScheme, MlpSpec};
use crate::optim::{train_objective, AdamConfig, NetworkObjective, Objective, TrainHistory, TrainOptions};

/// Default floor on `|∇u|` in the division.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Lower and upper clamp of baseline conductivity iterates.
pub const SIGMA_CLAMP: (f64, f64) = (1e-3, 1e3);

/// Conductivity estimate and the number of nodes where the floor was active.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: GridField,
    pub floored: usize,
}

fn divide(a: &GridField, grad_norm: &[f64], floor: f64) -> Result<SigmaEstimate> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::arg(format!("gradient floor must be positive, got {floor}")));
    }
    let mut floored = 0;
    let values = a
        .values()
        .iter()
        .zip(grad_norm)
        .map(|(&a, &g)| {
            if g < floor {
                floored += 1;
            }
            a / g.max(floor)
        })
        .collect();
    Ok(SigmaEstimate {
        sigma: GridField::new(a.nx(), a.ny(), values)?,
        floored,
    })
}

/// `σ = a / max(|∇u|, floor)` with the finite-difference gradient of `u`.
pub fn recover_sigma(a_used: &GridField, u: &GridField, floor: f64) -> Result<SigmaEstimate> {
    if !a_used.same_shape(u) {
        return Err(Error::arg("data and potential must share a grid"));
    }
    divide(a_used, gradient_magnitude(u).values(), floor)
}

/// Network potential and its gradient norm at every node of an `nx × ny` grid.
pub fn network_on_grid(spec: &MlpSpec, theta: &[f64], nx: usize, ny: usize) -> Result<(GridField, Vec<f64>)> {
    let shape = GridField::constant(nx, ny, 0.0)?;
    let nodes: Vec<[f64; 2]> = shape.nodes().map(|(x, y)| [x, y]).collect();
    let evals = evaluate(spec, theta, &nodes)?;
    let u = evals.iter().map(|e| e.u).collect();
    let grad = evals.iter().map(|e| e.grad_norm()).collect();
    let u = GridField::new(nx, ny, u).map_err(|_| Error::numeric("network", "non-finite network output"))?;
    Ok((u, grad))
}

/// `σ = a / max(|∇u_θ|, floor)` with the exact network gradient.
pub fn recover_sigma_nn(a_used: &GridField, spec: &MlpSpec, theta: &[f64], floor: f64) -> Result<SigmaEstimate> {
    let (_, grad) = network_on_grid(spec, theta, a_used.nx(), a_used.ny())?;
    divide(a_used, &grad, floor)
}

/// Settings of the network-fit denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub spec: MlpSpec,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            spec: MlpSpec::default(),
            epochs: 2000,
            lr: 1e-2,
            seed: 7,
        }
    }
}

/// Mean squared mismatch between the network and grid data at the nodes.
struct GridFit {
    net: BatchNet,
    nodes: Vec<[f64; 2]>,
    data: Vec<f64>,
    u_bar: Vec<f64>,
}

impl Objective for GridFit {
    fn dim(&self) -> usize {
        self.net.spec().num_params()
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.fill(0.0);
        let scale = 1.0 / self.nodes.len() as f64;
        let mut total = 0.0;
        for (pts, data) in self.nodes.chunks(BLOCK).zip(self.data.chunks(BLOCK)) {
            self.net.forward(theta, pts, false)?;
            let u = self.net.u();
            for b in 0..pts.len() {
                let r = u[b] - data[b];
                total += r * r;
                self.u_bar[b] = 2.0 * scale * r;
            }
            self.net.backward(theta, &self.u_bar[..pts.len()], None, grad);
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::numeric("denoise", "fit loss is not finite"));
        }
        Ok(loss)
    }
}

/// Fits a freshly initialised network to `a_noisy` and returns it on the grid.
pub fn denoise(a_noisy: &GridField, cfg: &DenoiseConfig) -> Result<(GridField, TrainHistory)> {
    let nodes: Vec<[f64; 2]> = a_noisy.nodes().map(|(x, y)| [x, y]).collect();
    let mut fit = GridFit {
        net: BatchNet::new(&cfg.spec),
        nodes,
        data: a_noisy.values().to_vec(),
        u_bar: vec![0.0; BLOCK],
    };
    let theta0 = init_params(&cfg.spec, cfg.seed, InitScheme::GlorotUniform).into_vec();
    let adam = AdamConfig::new(cfg.lr, cfg.epochs)?;
    let opts = TrainOptions {
        eval_every: 0,
        ..TrainOptions::default()
    };
    let (theta, history) = train_objective(&mut fit, &theta0, &adam, &opts, None)?;
    let (fitted, _) = network_on_grid(&cfg.spec, &theta, a_noisy.nx(), a_noisy.ny())?;
    Ok((fitted, history))
}

/// Reference fields used only for reporting errors.
#[derive(Debug, Clone, Default)]
pub struct Truth {
    pub sigma: Option<GridField>,
    pub u: Option<GridField>,
}

/// Settings of the network reconstruction.
#[derive(Debug, Clone)]
pub struct NnConfig {
    pub spec: MlpSpec,
    pub init_seed: u64,
    pub init: InitScheme,
    pub sample_seed: u64,
    pub n1: usize,
    pub n2: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub train: TrainOptions,
    pub denoise: Option<DenoiseConfig>,
    /// Train the loss on the denoised data instead of the raw data.
    pub train_on_denoised: bool,
    /// Draw a fresh batch every epoch.
    pub resample: bool,
    pub subdomain: Option<Rect>,
    pub floor: f64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            spec: MlpSpec::default(),
            init_seed: 1,
            init: InitScheme::GlorotUniform,
            sample_seed: 2,
            n1: 10_000,
            n2: 4_000,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            train: TrainOptions::default(),
            denoise: None,
            train_on_denoised: false,
            resample: false,
            subdomain: None,
            floor: GRADIENT_FLOOR,
        }
    }
}

/// One step of the alternating baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma_error: Option<f64>,
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconHistory {
    Training(TrainHistory),
    Iterations(Vec<IterationRecord>),
}

impl ReconHistory {
    pub fn to_csv(&self) -> String {
        match self {
            ReconHistory::Training(h) => h.to_csv(),
            ReconHistory::Iterations(log) => {
                let mut out = String::from("iteration,sigma_error,floored\n");
                for r in log {
                    let err = r.sigma_error.map(|e| format!("{e:.16e}")).unwrap_or_default();
                    out.push_str(&format!("{},{err},{}\n", r.iteration, r.floored));
                }
                out
            }
        }
    }
}

/// Output of either pipeline.
#[derive(Debug, Clone)]
pub struct ReconResult {
    pub u_hat: GridField,
    /// Zero outside `mask` when the data were partial.
    pub sigma_hat: GridField,
    pub mask: Option<Mask>,
    /// Data used in the division, when it differs from the input.
    pub a_denoised: Option<GridField>,
    pub history: ReconHistory,
    pub floored: usize,
    /// Nodes considered (inside the mask when there is one).
    pub nodes: usize,
    pub sigma_error: Option<f64>,
    pub u_error: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub best_iteration: Option<usize>,
}

impl ReconResult {
    pub fn floored_fraction(&self) -> f64 {
        self.floored as f64 / self.nodes as f64
    }
}

fn sigma_error(sigma: &GridField, truth: &GridField, mask: Option<&Mask>) -> Result<f64> {
    match mask {
        Some(m) => relative_l2_error_masked(sigma, truth, m),
        None => relative_l2_error(sigma, truth),
    }
}

fn check_data(a: &GridField) -> Result<()> {
    match a.values().iter().find(|&&v| v < 0.0) {
        Some(v) => Err(Error::arg(format!("data must be nonnegative, found {v}"))),
        None => Ok(()),
    }
}

/// Network reconstruction from interior data `a` and boundary voltage `g`.
pub fn reconstruct_nn(a: &GridField, g: &DirichletData, cfg: &NnConfig, truth: &Truth) -> Result<ReconResult> {
    check_data(a)?;
    let a_denoised = match &cfg.denoise {
        Some(d) => Some(denoise(a, d)?.0),
        None => None,
    };
    let a_used = a_denoised.as_ref().unwrap_or(a);
    let a_train = if cfg.train_on_denoised { a_used } else { a };
    let sub = cfg.subdomain.as_ref();
    let mask = sub.map(|r| Mask::from_rect(a.nx(), a.ny(), r)).transpose()?;

    let batch = SampleBatch::draw(a_train, g, cfg.n1, cfg.n2, cfg.sample_seed, sub)?;
    let mut objective = NetworkObjective::new(&cfg.spec, batch, cfg.loss);
    if let Some(r) = cfg.subdomain {
        objective = objective.partial(r);
    }
    if cfg.resample {
        let seed = cfg.sample_seed;
        let (n1, n2) = (cfg.n1, cfg.n2);
        objective = objective.resample_with(move |epoch| {
            let s = seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            SampleBatch::draw(a_train, g, n1, n2, s, sub)
        });
    }

    let theta0 = init_params(&cfg.spec, cfg.init_seed, cfg.init).into_vec();
    let mut monitor = |theta: &[f64]| -> Result<f64> {
        let truth = truth.sigma.as_ref().expect("monitor only installed with a truth field");
        let est = recover_sigma_nn(a_used, &cfg.spec, theta, cfg.floor)?;
        sigma_error(&est.sigma, truth, mask.as_ref())
    };
    let monitor_ref: Option<&mut crate::optim::Monitor<'_>> =
        if truth.sigma.is_some() { Some(&mut monitor) } else { None };
    let (theta, history) = train_objective(&mut objective, &theta0, &cfg.adam, &cfg.train, monitor_ref)?;

    let (u_hat, grad) = network_on_grid(&cfg.spec, &theta, a.nx(), a.ny())?;
    let est = divide(a_used, &grad, cfg.floor)?;
    let (sigma_hat, floored, nodes) = match &mask {
        Some(m) => {
            let floored = grad
                .iter()
                .zip(m.flags())
                .filter(|(g, &inside)| inside && **g < cfg.floor)
                .count();
            let masked = crate::field::MaskedField {
                field: est.sigma,
                mask: m.clone(),
            };
            (masked.filled(0.0), floored, m.count())
        }
        None => (est.sigma, est.floored, a.len()),
    };
    let sigma_error = truth
        .sigma
        .as_ref()
        .map(|t| sigma_error(&sigma_hat, t, mask.as_ref()))
        .transpose()?;
    let u_error = truth.u.as_ref().map(|t| relative_l2_error(&u_hat, t)).transpose()?;
    Ok(ReconResult {
        u_hat,
        sigma_hat,
        mask,
        a_denoised: a_denoised.clone(),
        history: ReconHistory::Training(history),
        floored,
        nodes,
        sigma_error,
        u_error,
        theta: Some(theta),
        best_iteration: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineStop {
    /// Return the iterate after exactly this many updates.
    Fixed(usize),
    /// Run `max_iters` updates and return the one closest to the truth.
    OracleBest,
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub sigma0: GridField,
    pub max_iters: usize,
    pub stop: BaselineStop,
    pub floor: f64,
}

impl BaselineConfig {
    pub fn new(sigma0: GridField, max_iters: usize, stop: BaselineStop) -> Self {
        Self {
            sigma0,
            max_iters,
            stop,
            floor: GRADIENT_FLOOR,
        }
    }
}

/// Alternating iteration started from `cfg.sigma0`.
///
/// Iterate `k` is `σᵏ = clamp(a / |∇uᵏ⁻¹|)` with `uᵏ⁻¹` the forward solution
/// for `σᵏ⁻¹`; the returned `u_hat` is the potential that produced `σ̂`.
pub fn baseline_iterate(a: &GridField, g: &DirichletData, cfg: &BaselineConfig, truth: &Truth) -> Result<ReconResult> {
    check_data(a)?;
    if !cfg.sigma0.same_shape(a) {
        return Err(Error::arg("initial conductivity and data must share a grid"));
    }
    if cfg.sigma0.min() <= 0.0 {
        return Err(Error::arg("initial conductivity must be positive"));
    }
    let iters = match cfg.stop {
        BaselineStop::Fixed(k) => k,
        BaselineStop::OracleBest => {
            if truth.sigma.is_none() {
                return Err(Error::arg("oracle stopping needs the true conductivity"));
            }
            cfg.max_iters
        }
    };
    if iters == 0 {
        return Err(Error::arg("baseline needs at least one iteration"));
    }
    let mut sigma = cfg.sigma0.clone();
    let mut log = Vec::with_capacity(iters);
    let mut best: Option<(usize, f64, GridField, GridField, usize)> = None;
    let mut last = None;
    for k in 1..=iters {
        let u = solve_conductivity_pde(&sigma, g).map_err(|e| match e {
            Error::Numeric { op, message } => Error::Numeric {
                op,
                message: format!("{message} (baseline iteration {k})"),
            },
            other => other,
        })?;
        let est = recover_sigma(a, &u, cfg.floor)?;
        sigma = est.sigma.map(|s| s.clamp(SIGMA_CLAMP.0, SIGMA_CLAMP.1))?;
        let err = truth.sigma.as_ref().map(|t| relative_l2_error(&sigma, t)).transpose()?;
        log.push(IterationRecord {
            iteration: k,
            sigma_error: err,
            floored: est.floored,
        });
        if cfg.stop == BaselineStop::OracleBest {
            let e = err.expect("truth checked above");
            if best.as_ref().is_none_or(|b| e < b.1) {
                best = Some((k, e, sigma.clone(), u.clone(), est.floored));
            }
        }
        last = Some((k, u, est.floored));
    }
    let (k, sigma_hat, u_hat, floored) = match best {
        Some((k, _, s, u, f)) => (k, s, u, f),
        None => {
            let (k, u, f) = last.expect("at least one iteration ran");
            (k, sigma, u, f)
        }
    };
    let sigma_error = truth.sigma.as_ref().map(|t| relative_l2_error(&sigma_hat, t)).transpose()?;
    let u_error = truth.u.as_ref().map(|t| relative_l2_error(&u_hat, t)).transpose()?;
    Ok(ReconResult {
        nodes: a.len(),
        u_hat,
        sigma_hat,
        mask: None,
        a_denoised: None,
        history: ReconHistory::Iterations(log),
        floored,
        sigma_error,
        u_error,
        theta: None,
        best_iteration: Some(k),
    })
}

/// Writes grids, images, `history.csv` and `run.txt` into `dir`.
///
/// `config` is echoed into `run.txt` as `key=value` lines, followed by the
/// results as `result.*` keys.
pub fn write_run_dir(dir: impl AsRef<Path>, result: &ReconResult, config: &[(String, String)], images: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut grids = vec![("u_hat", &result.u_hat), ("sigma_hat", &result.sigma_hat)];
    if let Some(a) = &result.a_denoised {
        grids.push(("a_denoised", a));
    }
    for (name, f) in &grids {
        write_grid(f, dir.join(format!("{name}.grid")))?;
        if images {
            write_pgm(f, dir.join(format!("{name}.pgm")))?;
        }
    }
    if let Some(m) = &result.mask {
        write_mask(m, dir.join("mask.txt"))?;
    }
    let history = dir.join("history.csv");
    fs::write(&history, result.history.to_csv()).map_err(|e| Error::io(&history, e))?;

    let mut run = String::new();
    for (k, v) in config {
        run.push_str(&format!("{k}={v}\n"));
    }
    let opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |v| format!("{v:.6e}"));
    run.push_str(&format!("result.sigma_error={}\n", opt(result.sigma_error)));
    run.push_str(&format!("result.u_error={}\n", opt(result.u_error)));
    run.push_str(&format!("result.floored_nodes={}\n", result.floored));
    run.push_str(&format!("result.floored_fraction={:.6e}\n", result.floored_fraction()));
    if let ReconHistory::Training(h) = &result.history {
        if let Some(last) = h.loss.last() {
            run.push_str(&format!("result.final_loss={last:.6e}\n"));
        }
    }
    if let Some(k) = result.best_iteration {
        run.push_str(&format!("result.iteration={k}\n"));
    }
    let path = dir.join("run.txt");
    fs::write(&path, run).map_err(|e| Error::io(&path, e))
}
