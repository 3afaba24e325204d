//! Block evaluation of the network and the adjoint of the spatial-gradient
//! recursion.
//!
//! Points are processed in blocks of [`BLOCK`]; every per-layer buffer is laid
//! out neuron-major with the block index innermost so the inner loops are
//! contiguous axpy/dot kernels. Reductions over a block always run in sample
//! order, so results do not depend on anything but the inputs.
//!
//! For a block the forward pass stores, per hidden layer, `f = ρ(z)`, `ρ'(z)`,
//! `ρ''(z)` and (optionally) the spatial derivatives `∂ᵢz` and `∂ᵢf = ρ'(z)∂ᵢz`.
//! [`BatchNet::backward`] then pulls seeds `ū = ∂ℓ/∂u` and `ḡᵢ = ∂ℓ/∂(∂ᵢu)`
//! back to `∂ℓ/∂θ`:
//!
//! ```text
//! ∂ᵢz̄ = ρ' ∂ᵢf̄
//! z̄   = ρ' f̄ + ρ'' Σᵢ ∂ᵢf̄ ∂ᵢz
//! W̄  += z̄ f_prevᵀ + Σᵢ ∂ᵢz̄ ∂ᵢf_prevᵀ,   b̄ += z̄
//! f̄_prev = Wᵀ z̄,  ∂ᵢf̄_prev = Wᵀ ∂ᵢz̄
//! ```

use super::{LayerLayout, MlpSpec};
use crate::error::Result;

/// Number of points evaluated together.
pub const BLOCK: usize = 64;

/// Value and spatial gradient of `u_θ` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEval {
    pub u: f64,
    pub gx: f64,
    pub gy: f64,
}

impl PointEval {
    pub fn grad_norm(&self) -> f64 {
        self.gx.hypot(self.gy)
    }
}

/// Reusable workspace for block forward/backward passes.
#[derive(Debug, Clone)]
pub struct BatchNet {
    spec: MlpSpec,
    layout: Vec<LayerLayout>,
    n: usize,
    spatial: bool,
    // Indexed by layer ℓ = 0..L-1; entry 0 holds the inputs.
    f: Vec<Vec<f64>>,
    dfx: Vec<Vec<f64>>,
    dfy: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    dzx: Vec<Vec<f64>>,
    dzy: Vec<Vec<f64>>,
    u: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    // Adjoint scratch, sized for the widest layer.
    bar_f: Vec<f64>,
    bar_dx: Vec<f64>,
    bar_dy: Vec<f64>,
    zbar: Vec<f64>,
    dzxbar: Vec<f64>,
    dzybar: Vec<f64>,
}

impl BatchNet {
    pub fn new(spec: &MlpSpec) -> Self {
        let layers = spec.layers();
        let hidden = &layers[..layers.len() - 1];
        let alloc = || hidden.iter().map(|&d| vec![0.0; d * BLOCK]).collect::<Vec<_>>();
        let mut dfx = alloc();
        let mut dfy = alloc();
        // ∂f⁽⁰⁾/∂xᵢ = eᵢ for every point.
        dfx[0][..BLOCK].fill(1.0);
        dfy[0][BLOCK..2 * BLOCK].fill(1.0);
        let wide = spec.width() * BLOCK;
        Self {
            spec: spec.clone(),
            layout: spec.layout(),
            n: 0,
            spatial: false,
            f: alloc(),
            dfx,
            dfy,
            d1: alloc(),
            d2: alloc(),
            dzx: alloc(),
            dzy: alloc(),
            u: vec![0.0; BLOCK],
            gx: vec![0.0; BLOCK],
            gy: vec![0.0; BLOCK],
            bar_f: vec![0.0; wide],
            bar_dx: vec![0.0; wide],
            bar_dy: vec![0.0; wide],
            zbar: vec![0.0; wide],
            dzxbar: vec![0.0; wide],
            dzybar: vec![0.0; wide],
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Outputs of the last forward pass.
    pub fn u(&self) -> &[f64] {
        &self.u[..self.n]
    }

    /// Spatial gradient of the last forward pass (zeros unless `spatial`).
    pub fn grad(&self) -> (&[f64], &[f64]) {
        (&self.gx[..self.n], &self.gy[..self.n])
    }

    /// `∂f⁽ˡ⁾_j/∂xᵢ` of hidden layer `layer` (1-based) at block slot `b`.
    pub fn hidden_partial(&self, layer: usize, neuron: usize, b: usize) -> (f64, f64) {
        let k = neuron * BLOCK + b;
        (self.dfx[layer][k], self.dfy[layer][k])
    }

    /// Runs the network on up to [`BLOCK`] points.
    pub fn forward(&mut self, theta: &[f64], points: &[[f64; 2]], spatial: bool) -> Result<()> {
        self.spec.check_params(theta)?;
        assert!(points.len() <= BLOCK, "block holds at most {BLOCK} points");
        let n = points.len();
        self.n = n;
        self.spatial = spatial;
        for (b, p) in points.iter().enumerate() {
            self.f[0][b] = p[0];
            self.f[0][BLOCK + b] = p[1];
        }
        let act = self.spec.activation();
        let depth = self.layout.len();
        let mut zx = [0.0; BLOCK];
        let mut zy = [0.0; BLOCK];
        let mut z = [0.0; BLOCK];
        for ell in 1..depth {
            let l = self.layout[ell - 1];
            let (prev, cur) = self.f.split_at_mut(ell);
            let (f_prev, f_cur) = (&prev[ell - 1], &mut cur[0]);
            for j in 0..l.outputs {
                let row = &theta[l.weights + j * l.inputs..l.weights + (j + 1) * l.inputs];
                let z = &mut z[..n];
                z.fill(theta[l.bias + j]);
                for (k, &w) in row.iter().enumerate() {
                    axpy(z, w, &f_prev[k * BLOCK..k * BLOCK + n]);
                }
                let base = j * BLOCK;
                let (d1, d2) = (&mut self.d1[ell], &mut self.d2[ell]);
                for b in 0..n {
                    let (fv, s1, s2) = act.eval(z[b]);
                    f_cur[base + b] = fv;
                    d1[base + b] = s1;
                    d2[base + b] = s2;
                }
                if spatial {
                    let zx = &mut zx[..n];
                    let zy = &mut zy[..n];
                    zx.fill(0.0);
                    zy.fill(0.0);
                    for (k, &w) in row.iter().enumerate() {
                        axpy(zx, w, &self.dfx[ell - 1][k * BLOCK..k * BLOCK + n]);
                        axpy(zy, w, &self.dfy[ell - 1][k * BLOCK..k * BLOCK + n]);
                    }
                    for b in 0..n {
                        let s1 = self.d1[ell][base + b];
                        self.dzx[ell][base + b] = zx[b];
                        self.dzy[ell][base + b] = zy[b];
                        self.dfx[ell][base + b] = s1 * zx[b];
                        self.dfy[ell][base + b] = s1 * zy[b];
                    }
                }
            }
        }
        let l = self.layout[depth - 1];
        let row = &theta[l.weights..l.bias];
        let top = depth - 1;
        let u = &mut self.u[..n];
        u.fill(theta[l.bias]);
        for (k, &w) in row.iter().enumerate() {
            axpy(u, w, &self.f[top][k * BLOCK..k * BLOCK + n]);
        }
        if spatial {
            let (gx, gy) = (&mut self.gx[..n], &mut self.gy[..n]);
            gx.fill(0.0);
            gy.fill(0.0);
            for (k, &w) in row.iter().enumerate() {
                axpy(gx, w, &self.dfx[top][k * BLOCK..k * BLOCK + n]);
                axpy(gy, w, &self.dfy[top][k * BLOCK..k * BLOCK + n]);
            }
        } else {
            self.gx[..n].fill(0.0);
            self.gy[..n].fill(0.0);
        }
        Ok(())
    }

    /// Accumulates `Σ_b ū_b ∂u_b/∂θ + ḡx_b ∂(∂ₓu_b)/∂θ + ḡy_b ∂(∂ᵧu_b)/∂θ` into `grad`.
    ///
    /// Gradient seeds require the preceding forward pass to have been spatial.
    pub fn backward(
        &mut self,
        theta: &[f64],
        u_bar: &[f64],
        grad_bar: Option<(&[f64], &[f64])>,
        grad: &mut [f64],
    ) {
        let n = self.n;
        assert_eq!(u_bar.len(), n);
        assert!(grad_bar.is_none() || self.spatial, "gradient seeds need a spatial forward pass");
        let spatial = grad_bar.is_some();
        let depth = self.layout.len();
        let top = depth - 1;

        let l = self.layout[top];
        for k in 0..l.inputs {
            let w = theta[l.weights + k];
            let s = k * BLOCK;
            let mut acc = dot(u_bar, &self.f[top][s..s + n]);
            for b in 0..n {
                self.bar_f[s + b] = w * u_bar[b];
            }
            if let Some((gxb, gyb)) = grad_bar {
                acc += dot(gxb, &self.dfx[top][s..s + n]) + dot(gyb, &self.dfy[top][s..s + n]);
                for b in 0..n {
                    self.bar_dx[s + b] = w * gxb[b];
                    self.bar_dy[s + b] = w * gyb[b];
                }
            }
            grad[l.weights + k] += acc;
        }
        grad[l.bias] += u_bar.iter().sum::<f64>();

        for ell in (1..depth).rev() {
            let l = self.layout[ell - 1];
            for j in 0..l.outputs {
                let s = j * BLOCK;
                let (d1, d2) = (&self.d1[ell][s..s + n], &self.d2[ell][s..s + n]);
                if spatial {
                    let (zx, zy) = (&self.dzx[ell][s..s + n], &self.dzy[ell][s..s + n]);
                    for b in 0..n {
                        let (bx, by) = (self.bar_dx[s + b], self.bar_dy[s + b]);
                        self.dzxbar[s + b] = d1[b] * bx;
                        self.dzybar[s + b] = d1[b] * by;
                        self.zbar[s + b] = d1[b] * self.bar_f[s + b] + d2[b] * (bx * zx[b] + by * zy[b]);
                    }
                } else {
                    for b in 0..n {
                        self.zbar[s + b] = d1[b] * self.bar_f[s + b];
                    }
                }
            }
            let f_prev = &self.f[ell - 1];
            for j in 0..l.outputs {
                let s = j * BLOCK;
                let zbar = &self.zbar[s..s + n];
                grad[l.bias + j] += zbar.iter().sum::<f64>();
                let row = l.weights + j * l.inputs;
                for k in 0..l.inputs {
                    let t = k * BLOCK;
                    let mut acc = dot(zbar, &f_prev[t..t + n]);
                    if spatial {
                        acc += dot(&self.dzxbar[s..s + n], &self.dfx[ell - 1][t..t + n])
                            + dot(&self.dzybar[s..s + n], &self.dfy[ell - 1][t..t + n]);
                    }
                    grad[row + k] += acc;
                }
            }
            if ell == 1 {
                break;
            }
            // Pull adjoints down to layer ℓ−1.
            for k in 0..l.inputs {
                let t = k * BLOCK;
                self.bar_f[t..t + n].fill(0.0);
                if spatial {
                    self.bar_dx[t..t + n].fill(0.0);
                    self.bar_dy[t..t + n].fill(0.0);
                }
            }
            for j in 0..l.outputs {
                let s = j * BLOCK;
                for k in 0..l.inputs {
                    let w = theta[l.weights + j * l.inputs + k];
                    let t = k * BLOCK;
                    axpy(&mut self.bar_f[t..t + n], w, &self.zbar[s..s + n]);
                    if spatial {
                        axpy(&mut self.bar_dx[t..t + n], w, &self.dzxbar[s..s + n]);
                        axpy(&mut self.bar_dy[t..t + n], w, &self.dzybar[s..s + n]);
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Evaluates `u_θ` and `∇ₓu_θ` at every point.
pub fn evaluate(spec: &MlpSpec, theta: &[f64], points: &[[f64; 2]]) -> Result<Vec<PointEval>> {
    let mut net = BatchNet::new(spec);
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(BLOCK) {
        net.forward(theta, chunk, true)?;
        let (gx, gy) = net.grad();
        out.extend(
            net.u()
                .iter()
                .zip(gx.iter().zip(gy))
                .map(|(&u, (&gx, &gy))| PointEval { u, gx, gy }),
        );
    }
    Ok(out)
}
