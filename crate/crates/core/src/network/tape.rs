//! Tape-recorded network evaluation.
//!
//! The spatial gradient is built by the explicit chain-rule recursion
//!
//! ```text
//! ∂ᵢ f⁽ˡ⁾_j = ρ'(z⁽ˡ⁾_j) Σ_k W⁽ˡ⁾_jk ∂ᵢ f⁽ˡ⁻¹⁾_k,    ∂ᵢ f⁽⁰⁾ = eᵢ
//! ```
//!
//! with every quantity on the tape, so one reverse sweep differentiates any
//! expression in `u_θ` and `∇ₓu_θ` with respect to `θ`.

use super::{Activation, MlpSpec};
use crate::autodiff::Var;
use crate::error::Result;

/// Output and spatial gradient of the network at one point.
#[derive(Debug, Clone, Copy)]
pub struct TapedPoint<'t> {
    pub u: Var<'t>,
    pub grad: [Var<'t>; 2],
}

fn activate<'t>(act: Activation, z: Var<'t>) -> (Var<'t>, Var<'t>) {
    match act {
        Activation::Tanh => {
            let f = z.tanh();
            (f, Var::constant(1.0) - f.square())
        }
        Activation::Sigmoid => {
            let f = z.sigmoid();
            (f, f * (Var::constant(1.0) - f))
        }
        Activation::Identity => (z, Var::constant(1.0)),
    }
}

/// `u_θ(x)` recorded on the tape of `theta`.
pub fn forward_eval<'t>(spec: &MlpSpec, theta: &[Var<'t>], x: [Var<'t>; 2]) -> Result<Var<'t>> {
    Ok(eval_inner(spec, theta, x, false)?.u)
}

/// `u_θ(x)` together with `∇ₓu_θ(x)`, both recorded on the tape.
pub fn spatial_gradient<'t>(
    spec: &MlpSpec,
    theta: &[Var<'t>],
    x: [Var<'t>; 2],
) -> Result<TapedPoint<'t>> {
    eval_inner(spec, theta, x, true)
}

fn eval_inner<'t>(
    spec: &MlpSpec,
    theta: &[Var<'t>],
    x: [Var<'t>; 2],
    with_gradient: bool,
) -> Result<TapedPoint<'t>> {
    spec.check_len(theta.len())?;
    let layout = spec.layout();
    let zero = Var::constant(0.0);
    let one = Var::constant(1.0);
    let mut f: Vec<Var<'t>> = x.to_vec();
    let mut df: [Vec<Var<'t>>; 2] = [vec![one, zero], vec![zero, one]];

    let last = layout.len() - 1;
    for (idx, l) in layout.iter().enumerate() {
        let w = |j: usize, k: usize| theta[l.weights + j * l.inputs + k];
        let mut next_f = Vec::with_capacity(l.outputs);
        let mut next_df: [Vec<Var<'t>>; 2] = [Vec::new(), Vec::new()];
        for j in 0..l.outputs {
            let mut z = theta[l.bias + j];
            for (k, &fk) in f.iter().enumerate() {
                z = z + w(j, k) * fk;
            }
            let mut dz = [zero, zero];
            if with_gradient {
                for i in 0..2 {
                    for (k, &d) in df[i].iter().enumerate() {
                        if !d.is_constant() || d.value() != 0.0 {
                            dz[i] = dz[i] + w(j, k) * d;
                        }
                    }
                }
            }
            if idx == last {
                next_f.push(z);
                for i in 0..2 {
                    next_df[i].push(dz[i]);
                }
            } else {
                let (fj, slope) = activate(spec.activation(), z);
                next_f.push(fj);
                for i in 0..2 {
                    next_df[i].push(slope * dz[i]);
                }
            }
        }
        f = next_f;
        df = next_df;
    }
    Ok(TapedPoint {
        u: f[0],
        grad: [df[0][0], df[1][0]],
    })
}
