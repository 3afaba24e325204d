//! Fully connected feedforward ansatz `u_θ : [0,1]² → ℝ`.
//!
//! ```text
//! f⁽⁰⁾ = x
//! f⁽ˡ⁾ = ρ(W⁽ˡ⁾ f⁽ˡ⁻¹⁾ + b⁽ˡ⁾)      ℓ = 1, …, L−1
//! u    = W⁽ᴸ⁾ f⁽ᴸ⁻¹⁾ + b⁽ᴸ⁾
//! ```
//!
//! Parameters live in one flat [`ParamVector`]; for each layer in order the
//! weight matrix is stored row-major (`d_ℓ × d_{ℓ−1}`), followed by the bias.
//!
//! Two evaluation routes share that layout. [`tape`] records the network and
//! its spatial gradient on an [`autodiff::Tape`](crate::autodiff::Tape), which
//! is general but slow. [`batch`] runs the same layer-wise recursion over
//! blocks of points with a hand-written adjoint; training uses it.

pub mod batch;
pub mod bounds;
pub mod tape;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub use batch::{evaluate, BatchNet, PointEval};
pub use bounds::{check_gradient_sup_bound, check_layer_gradient_bounds, check_param_lipschitz, BoundCheck};

/// Scalar activation applied between affine layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    /// Linear pass-through; makes affine targets exactly representable.
    Identity,
}

impl Activation {
    /// `(ρ(z), ρ'(z), ρ''(z))`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let f = z.tanh();
                let d1 = 1.0 - f * f;
                (f, d1, -2.0 * f * d1)
            }
            Activation::Sigmoid => {
                let f = 1.0 / (1.0 + (-z).exp());
                let d1 = f * (1.0 - f);
                (f, d1, d1 * (1.0 - 2.0 * f))
            }
            Activation::Identity => (z, 1.0, 0.0),
        }
    }

    /// Bound `ρ₁` on `|ρ'|`.
    pub fn derivative_bound(self) -> f64 {
        match self {
            Activation::Tanh | Activation::Identity => 1.0,
            Activation::Sigmoid => 0.25,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::arg(format!("unknown activation {other:?}"))),
        }
    }
}

/// Architecture: layer sizes `d₀ = 2, d₁, …, d_L = 1` and the activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layers: Vec<usize>,
    activation: Activation,
}

/// Location of one layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: usize,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>, activation: Activation) -> Result<Self> {
        if layers.len() < 3 {
            return Err(Error::arg(format!(
                "need at least one hidden layer (L >= 2), got sizes {layers:?}"
            )));
        }
        if layers[0] != 2 || *layers.last().unwrap() != 1 {
            return Err(Error::arg(format!(
                "input size must be 2 and output size 1, got {layers:?}"
            )));
        }
        if layers.contains(&0) {
            return Err(Error::arg("layer sizes must be positive"));
        }
        Ok(Self { layers, activation })
    }

    /// `depth` layers (so `depth − 1` hidden layers) of uniform `width`.
    pub fn uniform(depth: usize, width: usize, activation: Activation) -> Result<Self> {
        if depth < 2 {
            return Err(Error::arg(format!("depth must be >= 2, got {depth}")));
        }
        let mut layers = vec![2];
        layers.extend(std::iter::repeat_n(width, depth - 1));
        layers.push(1);
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// `𝒲 = max_ℓ d_ℓ`, input layer included.
    pub fn width(&self) -> usize {
        *self.layers.iter().max().unwrap()
    }

    /// `N_θ = Σ_ℓ d_ℓ d_{ℓ−1} + d_ℓ`.
    pub fn num_params(&self) -> usize {
        self.layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layers
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = l.bias + w[1];
                l
            })
            .collect()
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        self.check_len(theta.len())
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n != self.num_params() {
            return Err(Error::arg(format!(
                "parameter vector has length {n}, architecture needs {}",
                self.num_params()
            )));
        }
        Ok(())
    }
}

impl Default for MlpSpec {
    /// Nine affine layers, eight hidden layers of width 10, tanh: 811 parameters.
    fn default() -> Self {
        Self::uniform(9, 10, Activation::Tanh).expect("valid default architecture")
    }
}

impl fmt::Display for MlpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.layers.iter().map(|d| d.to_string()).collect();
        write!(f, "layers={} activation={}", sizes.join(","), self.activation)
    }
}

/// Parses a comma-separated list of layer sizes such as `2,10,10,1`.
pub fn parse_layers(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::arg(format!("bad layer size {t:?}")))
        })
        .collect()
}

/// Flat parameter vector `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_params(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self(vec![0.0; spec.num_params()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `‖θ‖_∞`.
    pub fn linf_norm(&self) -> f64 {
        linf(&self.0)
    }
}

pub(crate) fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Weights `U(−√(6/(d_in+d_out)), +√(6/(d_in+d_out)))` per layer, zero biases.
    GlorotUniform,
    /// Every parameter `U(−r, r)`.
    Uniform(f64),
}

pub fn init_params(spec: &MlpSpec, seed: u64, scheme: InitScheme) -> ParamVector {
    let mut rng = SeededRng::new(seed);
    let mut theta = vec![0.0; spec.num_params()];
    match scheme {
        InitScheme::GlorotUniform => {
            for l in spec.layout() {
                let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
                for w in &mut theta[l.weights..l.bias] {
                    *w = rng.uniform_in(-limit, limit);
                }
            }
        }
        InitScheme::Uniform(r) => {
            for v in &mut theta {
                *v = rng.uniform_in(-r, r);
            }
        }
    }
    ParamVector(theta)
}

/// Componentwise clamp into `[−R, R]`.
pub fn clip_params(theta: &ParamVector, bound: f64) -> Result<ParamVector> {
    if !(bound > 0.0) {
        return Err(Error::arg(format!("clip bound must be positive, got {bound}")));
    }
    Ok(ParamVector(theta.0.iter().map(|v| v.clamp(-bound, bound)).collect()))
}

/// Writes `mlp layers=<d0,...,dL> activation=<name>` then one line per layer.
pub fn write_checkpoint(spec: &MlpSpec, theta: &ParamVector, path: impl AsRef<Path>) -> Result<()> {
    spec.check_params(theta.as_slice())?;
    let path = path.as_ref();
    let mut out = format!("mlp {spec}\n");
    for l in spec.layout() {
        let row: Vec<String> = theta.0[l.weights..l.bias + l.outputs]
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(MlpSpec, ParamVector)> {
    let path = path.as_ref();
    let fmt_err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let spec = parse_checkpoint_header(header).map_err(|e| fmt_err(1, e.to_string()))?;
    let mut values = Vec::with_capacity(spec.num_params());
    for (k, line) in lines.enumerate() {
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fmt_err(k + 2, format!("invalid value {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != spec.num_params() {
        return Err(fmt_err(
            text.lines().count(),
            format!("expected {} values, found {}", spec.num_params(), values.len()),
        ));
    }
    Ok((spec, ParamVector(values)))
}

fn parse_checkpoint_header(line: &str) -> Result<MlpSpec> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("mlp") {
        return Err(Error::arg("header must start with `mlp`"));
    }
    let layers = parts
        .next()
        .and_then(|p| p.strip_prefix("layers="))
        .ok_or_else(|| Error::arg("missing layers="))?;
    let activation = parts
        .next()
        .and_then(|p| p.strip_prefix("activation="))
        .ok_or_else(|| Error::arg("missing activation="))?;
    MlpSpec::new(parse_layers(layers)?, activation.parse()?)
}
