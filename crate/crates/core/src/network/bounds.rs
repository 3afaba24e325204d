//! Numerical checks of the Lipschitz and sup-norm estimates for `∇ₓu_θ`.
//!
//! For an `L`-layer network of width `𝒲` with `‖θ‖_∞ ≤ R` and an activation
//! with `|ρ'| ≤ ρ₁`:
//!
//! ```text
//! |∂ᵢ f⁽ˡ⁾_j|              ≤ (ρ₁R)^ℓ 𝒲^(ℓ−1)                   hidden layers
//! sup |∇ₓu_θ|              ≤ √d R^L (ρ₁𝒲)^(L−1)
//! |∂ᵢ(u_θ − u_θ̃)|          ≤ L² (R𝒲)^(2L−2) ‖θ − θ̃‖_∞           ρ, ρ', ρ'' bounded by 1, R ≥ 1
//! ```
//!
//! These are proved inequalities; a failed check points at a bug in the
//! derivative code, not at the estimate.

use super::batch::{BatchNet, BLOCK};
use super::{linf, Activation, MlpSpec};
use crate::error::{Error, Result};

/// Outcome of one inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(measured: f64, bound: f64) -> Self {
        Self {
            measured,
            bound,
            pass: measured <= bound,
        }
    }
}

/// `max |∇ₓu_θ|` over `probes` against `√2 R^L (ρ₁𝒲)^(L−1)`, `R = ‖θ‖_∞`.
pub fn check_gradient_sup_bound(spec: &MlpSpec, theta: &[f64], probes: &[[f64; 2]]) -> Result<BoundCheck> {
    let evals = super::evaluate(spec, theta, probes)?;
    let measured = evals.iter().map(|e| e.grad_norm()).fold(0.0, f64::max);
    let (l, w) = (spec.depth() as i32, spec.width() as f64);
    let r = linf(theta);
    let rho1 = spec.activation().derivative_bound();
    let bound = 2f64.sqrt() * r.powi(l) * (rho1 * w).powi(l - 1);
    Ok(BoundCheck::new(measured, bound))
}

/// `max_{x,i} |∂ᵢ(u_θ − u_θ̃)(x)|` against `L² (R𝒲)^(2L−2) ‖θ − θ̃‖_∞`,
/// `R = max(‖θ‖_∞, ‖θ̃‖_∞, 1)`.
pub fn check_param_lipschitz(
    spec: &MlpSpec,
    theta: &[f64],
    theta_tilde: &[f64],
    probes: &[[f64; 2]],
) -> Result<BoundCheck> {
    spec.check_params(theta)?;
    spec.check_params(theta_tilde)
        .map_err(|_| Error::arg("the two parameter vectors belong to different architectures"))?;
    if spec.activation() == Activation::Identity {
        return Err(Error::arg("the parameter Lipschitz estimate needs a bounded activation"));
    }
    let a = super::evaluate(spec, theta, probes)?;
    let b = super::evaluate(spec, theta_tilde, probes)?;
    let measured = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p.gx - q.gx).abs().max((p.gy - q.gy).abs()))
        .fold(0.0, f64::max);
    let diff = theta.iter().zip(theta_tilde).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let r = linf(theta).max(linf(theta_tilde)).max(1.0);
    let l = spec.depth() as i32;
    let w = spec.width() as f64;
    let bound = (l * l) as f64 * (r * w).powi(2 * l - 2) * diff;
    Ok(BoundCheck::new(measured, bound))
}

/// Per-layer estimate `|∂ᵢ f⁽ˡ⁾_j| ≤ (ρ₁R)^ℓ 𝒲^(ℓ−1)` on every hidden layer;
/// returns the worst ratio measured/bound (≤ 1 means all hold).
pub fn check_layer_gradient_bounds(spec: &MlpSpec, theta: &[f64], probes: &[[f64; 2]]) -> Result<f64> {
    let r = linf(theta);
    let rho1 = spec.activation().derivative_bound();
    let w = spec.width() as f64;
    let mut net = BatchNet::new(spec);
    let mut worst: f64 = 0.0;
    for chunk in probes.chunks(BLOCK) {
        net.forward(theta, chunk, true)?;
        for ell in 1..spec.depth() {
            let bound = (rho1 * r).powi(ell as i32) * w.powi(ell as i32 - 1);
            for j in 0..spec.layers()[ell] {
                for b in 0..chunk.len() {
                    let (px, py) = net.hidden_partial(ell, j, b);
                    let m = px.abs().max(py.abs());
                    if m > 0.0 {
                        worst = worst.max(if bound > 0.0 { m / bound } else { f64::INFINITY });
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Regular `n × n` probe lattice over the closed unit square.
pub fn probe_grid(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / (n.max(2) - 1) as f64;
    (0..n)
        .flat_map(|j| (0..n).map(move |i| [i as f64 * h, j as f64 * h]))
        .collect()
}
