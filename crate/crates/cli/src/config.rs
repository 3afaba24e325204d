//! Flat `key=value` run configuration.
//!
//! Every key has a default reproducing the full-size four-mode run. Files may hold
//! blank lines and `#` comments; `result.*` lines are skipped so a `run.txt`
//! can be fed back in unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cdii::field::{PhantomKind, Rect};
use cdii::forward::{DirichletData, NoiseSpec};
use cdii::loss::LossConfig;
use cdii::network::{Activation, InitScheme, MlpSpec};
use cdii::optim::{parse_schedule, AdamConfig, Optimizer, TrainOptions};
use cdii::recon::{DenoiseConfig, NnConfig};

use crate::CliError;

/// `(key, default, description)` in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("phantom", "fourmode", "constant:<c> | fourmode | bump | shepplogan"),
    ("grid", "128", "nodes per axis"),
    ("g", "y", "boundary voltage: y | x | x+y"),
    ("delta", "0", "relative noise level"),
    ("seed.noise", "20220617", "noise realisation"),
    ("seed.init", "1", "network initialisation"),
    ("seed.sample", "2", "training points"),
    ("seed.denoise", "7", "denoiser initialisation"),
    ("method", "nn", "nn | baseline"),
    ("n1", "10000", "interior samples"),
    ("n2", "4000", "boundary samples"),
    ("gamma", "100", "boundary weight"),
    ("zeta", "0.01", "Huber knee"),
    ("depth", "9", "layer count L"),
    ("width", "10", "hidden width"),
    ("activation", "tanh", "tanh | sigmoid | identity"),
    ("init", "glorot", "glorot | uniform:<r>"),
    ("optimizer", "adam", "adam | sgd"),
    ("lr", "8e-4", "learning rate"),
    ("schedule", "", "piecewise rates epoch:lr,..."),
    ("epochs", "5000", "training epochs"),
    ("beta1", "0.9", "ADAM first-moment decay"),
    ("beta2", "0.999", "ADAM second-moment decay"),
    ("eps", "1e-8", "ADAM denominator guard"),
    ("clip", "none", "parameter clip bound or none"),
    ("resample", "false", "fresh batch every epoch"),
    ("eval_every", "100", "epochs between sigma-error records, 0 = off"),
    ("denoise", "auto", "auto (when delta > 0) | on | off"),
    ("denoise.epochs", "2000", "denoiser epochs"),
    ("denoise.lr", "1e-2", "denoiser learning rate"),
    ("train_on_denoised", "false", "train the loss on denoised data"),
    ("partial", "none", "interior data rectangle x0,x1,y0,y1 or none"),
    ("floor", "1e-6", "floor on |grad u| in the division"),
    ("baseline.iters", "30", "maximum baseline iterations"),
    ("baseline.stop", "auto", "auto | oracle | fixed:<k>"),
    ("baseline.sigma0", "1", "initial conductivity: constant value or truth"),
    ("images", "true", "write PGM renderings"),
    ("data", "data", "directory with generated data"),
    ("out", "run", "output directory"),
];

/// Raw configuration: every known key with its current text value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _, _)| *k).find(|k| *k == key)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let k = known(key).ok_or_else(|| CliError::Config(format!("unknown key {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    /// Applies `key=value` lines.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value", n + 1)))?;
            if k.trim().starts_with("result.") {
                continue;
            }
            self.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Applies `--key value` pairs.
    pub fn merge_args(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("expected --key, found {flag:?}")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("missing value for --{key}")))?;
                    (key, v.clone())
                }
            };
            self.set(key, &value)?;
        }
        Ok(())
    }

    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.merge_file(f)?;
        }
        cfg.merge_args(overrides)?;
        Ok(cfg)
    }

    /// All keys in echo order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        KEYS.iter().map(|(k, _, _)| (k.to_string(), self.get(k).to_string())).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn resolve(&self) -> Result<Settings, CliError> {
        Settings::from_config(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nn,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    Auto,
    Oracle,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma0 {
    Constant(f64),
    Truth,
}

/// Typed view of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Settings {
    pub phantom: PhantomKind,
    pub grid: usize,
    pub g: DirichletData,
    pub noise: NoiseSpec,
    pub method: Method,
    pub nn: NnConfig,
    pub baseline_iters: usize,
    pub baseline_stop: StopRule,
    pub sigma0: Sigma0,
    pub images: bool,
    pub data: PathBuf,
    pub out: PathBuf,
}

fn parse<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<T, CliError> {
    let raw = cfg.get(key);
    raw.parse()
        .map_err(|_| CliError::Config(format!("invalid value {raw:?} for {key}")))
}

fn lib<T>(key: &str, r: cdii::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(format!("{key}: {e}")))
}

pub fn boundary_data(name: &str) -> Result<DirichletData, CliError> {
    match name {
        "y" => Ok(DirichletData::linear_y()),
        "x" => Ok(DirichletData::from_fn("x", |x, _| x)),
        "x+y" => Ok(DirichletData::from_fn("x+y", |x, y| x + y)),
        _ => Err(CliError::Config(format!("unknown boundary voltage {name:?}"))),
    }
}

impl Settings {
    fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let phantom: PhantomKind = lib("phantom", cfg.get("phantom").parse())?;
        let grid: usize = parse(cfg, "grid")?;
        if grid < 3 {
            return Err(CliError::Config(format!("grid must be at least 3, got {grid}")));
        }
        let delta: f64 = parse(cfg, "delta")?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(CliError::Config(format!("delta must lie in [0, 1], got {delta}")));
        }
        let noise = NoiseSpec::new(delta, parse(cfg, "seed.noise")?);
        let method = match cfg.get("method") {
            "nn" => Method::Nn,
            "baseline" => Method::Baseline,
            m => return Err(CliError::Config(format!("unknown method {m:?}"))),
        };

        let activation: Activation = lib("activation", cfg.get("activation").parse())?;
        let spec = lib("depth/width", MlpSpec::uniform(parse(cfg, "depth")?, parse(cfg, "width")?, activation))?;
        let init = match cfg.get("init") {
            "glorot" => InitScheme::GlorotUniform,
            other => match other.strip_prefix("uniform:").map(str::parse::<f64>) {
                Some(Ok(r)) if r > 0.0 => InitScheme::Uniform(r),
                _ => return Err(CliError::Config(format!("invalid init {other:?}"))),
            },
        };
        let loss = lib("gamma/zeta", LossConfig::new(parse(cfg, "gamma")?, parse(cfg, "zeta")?))?;
        let subdomain = match cfg.get("partial") {
            "none" | "" => None,
            r => Some(lib("partial", r.parse::<Rect>())?),
        };
        let loss = match &subdomain {
            Some(r) => lib("partial", LossConfig::partial(loss.gamma, loss.zeta, r))?,
            None => loss,
        };
        let adam = AdamConfig {
            lr: parse(cfg, "lr")?,
            beta1: parse(cfg, "beta1")?,
            beta2: parse(cfg, "beta2")?,
            eps: parse(cfg, "eps")?,
            epochs: parse(cfg, "epochs")?,
            schedule: lib("schedule", parse_schedule(cfg.get("schedule")))?,
        };
        lib("optimizer", adam.validate())?;
        let clip = match cfg.get("clip") {
            "none" => None,
            _ => {
                let r: f64 = parse(cfg, "clip")?;
                if !(r > 0.0) {
                    return Err(CliError::Config("clip must be positive".into()));
                }
                Some(r)
            }
        };
        let train = TrainOptions {
            optimizer: lib("optimizer", cfg.get("optimizer").parse::<Optimizer>())?,
            clip,
            eval_every: parse(cfg, "eval_every")?,
        };
        let denoise_on = match cfg.get("denoise") {
            "auto" => delta > 0.0,
            "on" => true,
            "off" => false,
            d => return Err(CliError::Config(format!("denoise must be auto, on or off, got {d:?}"))),
        };
        let denoise = denoise_on.then(|| -> Result<DenoiseConfig, CliError> {
            Ok(DenoiseConfig {
                spec: MlpSpec::default(),
                epochs: parse(cfg, "denoise.epochs")?,
                lr: parse(cfg, "denoise.lr")?,
                seed: parse(cfg, "seed.denoise")?,
            })
        });
        let floor: f64 = parse(cfg, "floor")?;
        if !(floor > 0.0) {
            return Err(CliError::Config("floor must be positive".into()));
        }
        let (n1, n2): (usize, usize) = (parse(cfg, "n1")?, parse(cfg, "n2")?);
        if n1 == 0 || n2 == 0 {
            return Err(CliError::Config("n1 and n2 must be at least 1".into()));
        }
        let nn = NnConfig {
            spec,
            init_seed: parse(cfg, "seed.init")?,
            init,
            sample_seed: parse(cfg, "seed.sample")?,
            n1,
            n2,
            loss,
            adam,
            train,
            denoise: denoise.transpose()?,
            train_on_denoised: parse(cfg, "train_on_denoised")?,
            resample: parse(cfg, "resample")?,
            subdomain,
            floor,
        };

        let baseline_stop = match cfg.get("baseline.stop") {
            "auto" => StopRule::Auto,
            "oracle" => StopRule::Oracle,
            s => match s.strip_prefix("fixed:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => StopRule::Fixed(k),
                _ => return Err(CliError::Config(format!("invalid baseline.stop {s:?}"))),
            },
        };
        let sigma0 = match cfg.get("baseline.sigma0") {
            "truth" => Sigma0::Truth,
            _ => {
                let c: f64 = parse(cfg, "baseline.sigma0")?;
                if !(c > 0.0 && c.is_finite()) {
                    return Err(CliError::Config("baseline.sigma0 must be positive".into()));
                }
                Sigma0::Constant(c)
            }
        };
        Ok(Self {
            phantom,
            grid,
            g: boundary_data(cfg.get("g"))?,
            noise,
            method,
            nn,
            baseline_iters: parse(cfg, "baseline.iters")?,
            baseline_stop,
            sigma0,
            images: parse(cfg, "images")?,
            data: PathBuf::from(cfg.get("data")),
            out: PathBuf::from(cfg.get("out")),
        })
    }
}
