//! Synthetic data: the conductivity equation `−∇·(σ∇u) = 0` with Dirichlet
//! data, the current magnitude `a = σ|∇u|`, and multiplicative Gaussian noise.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::rng::SeededRng;

/// Relative residual at which the conjugate-gradient solve stops.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Boundary voltage `g(x, y)`, evaluated on `∂Ω`.
#[derive(Clone)]
pub struct DirichletData {
    label: String,
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl DirichletData {
    /// `g(x, y) = y`: ground on the bottom edge, unit potential on the top.
    pub fn linear_y() -> Self {
        Self::from_fn("y", |_, y| y)
    }

    pub fn from_fn(label: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl Default for DirichletData {
    fn default() -> Self {
        Self::linear_y()
    }
}

impl fmt::Debug for DirichletData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DirichletData({})", self.label)
    }
}

/// Relative noise level and the seed of its realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub const DEFAULT_SEED: u64 = 20_220_617;

    pub fn new(delta: f64, seed: u64) -> Self {
        Self { delta, seed }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            delta: 0.0,
            seed: Self::DEFAULT_SEED,
        }
    }
}

/// Solves `−∇·(σ∇u) = 0`, `u = g` on `∂Ω`, on the grid of `sigma`.
///
/// Five-point finite volumes with harmonic-mean face conductivities; the
/// interior system is symmetric positive definite and is solved by
/// Jacobi-preconditioned conjugate gradients.
pub fn solve_conductivity_pde(sigma: &GridField, g: &DirichletData) -> Result<GridField> {
    let (nx, ny) = (sigma.nx(), sigma.ny());
    if nx < 3 || ny < 3 {
        return Err(Error::arg(format!("forward solve needs at least 3x3 nodes, got {nx}x{ny}")));
    }
    if let Some(k) = sigma.values().iter().position(|&s| s <= 0.0) {
        return Err(Error::arg(format!(
            "conductivity must be positive, node {k} has {}",
            sigma.values()[k]
        )));
    }
    let op = Operator::new(sigma);

    // Dirichlet values on the boundary, zero in the interior.
    let mut u = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                let (x, y) = sigma.node(i, j);
                u[j * nx + i] = g.eval(x, y);
            }
        }
    }
    // Right-hand side: boundary couplings moved across.
    let mut rhs = vec![0.0; nx * ny];
    op.apply_boundary(&u, &mut rhs);

    let interior = pcg(&op, &rhs)?;
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            u[k] = interior[k];
        }
    }
    GridField::new(nx, ny, u)
}

/// Matrix-free interior operator; vectors are full-grid sized with the
/// boundary entries ignored (and kept at zero).
struct Operator {
    nx: usize,
    ny: usize,
    /// Face coefficient between `(i, j)` and `(i+1, j)`, divided by `h_x²`.
    east: Vec<f64>,
    /// Face coefficient between `(i, j)` and `(i, j+1)`, divided by `h_y²`.
    north: Vec<f64>,
    diag: Vec<f64>,
}

impl Operator {
    fn new(sigma: &GridField) -> Self {
        let (nx, ny) = (sigma.nx(), sigma.ny());
        let (ihx2, ihy2) = (1.0 / sigma.hx().powi(2), 1.0 / sigma.hy().powi(2));
        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut east = vec![0.0; nx * ny];
        let mut north = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if i + 1 < nx {
                    east[k] = harmonic(sigma.at(i, j), sigma.at(i + 1, j)) * ihx2;
                }
                if j + 1 < ny {
                    north[k] = harmonic(sigma.at(i, j), sigma.at(i, j + 1)) * ihy2;
                }
            }
        }
        let mut diag = vec![0.0; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                diag[k] = east[k] + east[k - 1] + north[k] + north[k - nx];
            }
        }
        Self {
            nx,
            ny,
            east,
            north,
            diag,
        }
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.ny - 1).flat_map(move |j| (1..self.nx - 1).map(move |i| j * self.nx + i))
    }

    fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = (k % self.nx, k / self.nx);
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// `out = A v` on interior nodes; boundary entries of `v` must be zero.
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        for k in self.interior() {
            out[k] = self.diag[k] * v[k]
                - self.east[k] * v[k + 1]
                - self.east[k - 1] * v[k - 1]
                - self.north[k] * v[k + nx]
                - self.north[k - nx] * v[k - nx];
        }
    }

    /// Adds the couplings of interior nodes to boundary values of `u` into `rhs`.
    fn apply_boundary(&self, u: &[f64], rhs: &mut [f64]) {
        let nx = self.nx;
        for k in self.interior() {
            let mut acc = 0.0;
            for (nb, c) in [
                (k + 1, self.east[k]),
                (k - 1, self.east[k - 1]),
                (k + nx, self.north[k]),
                (k - nx, self.north[k - nx]),
            ] {
                if self.is_boundary(nb) {
                    acc += c * u[nb];
                }
            }
            rhs[k] = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(op: &Operator, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(rhs, rhs).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    for k in op.interior() {
        z[k] = r[k] / op.diag[k];
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_iter = 10 * n + 100;
    let mut res = 1.0;
    for _ in 0..max_iter {
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in op.interior() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= SOLVER_TOLERANCE {
            return Ok(x);
        }
        if !res.is_finite() {
            break;
        }
        for k in op.interior() {
            z[k] = r[k] / op.diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in op.interior() {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::numeric(
        "conjugate gradients",
        format!("no convergence, final relative residual {res:e}"),
    ))
}

/// Nodal gradient `(∂x u, ∂y u)`: central differences inside, second-order
/// one-sided differences on the edges (first-order when an axis has 2 nodes).
pub fn gradient(u: &GridField) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (u.nx(), u.ny());
    let mut gx = vec![0.0; nx * ny];
    let mut gy = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            gx[k] = axis_derivative(|m| u.at(m, j), i, nx, u.hx());
            gy[k] = axis_derivative(|m| u.at(i, m), j, ny, u.hy());
        }
    }
    (gx, gy)
}

fn axis_derivative(v: impl Fn(usize) -> f64, m: usize, n: usize, h: f64) -> f64 {
    if n == 2 {
        return (v(1) - v(0)) / h;
    }
    if m == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
    } else if m == n - 1 {
        (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
    } else {
        (v(m + 1) - v(m - 1)) / (2.0 * h)
    }
}

/// `|∇u|` at every node, using the stencils of [`gradient`].
pub fn gradient_magnitude(u: &GridField) -> GridField {
    let (gx, gy) = gradient(u);
    let values = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    GridField::new(u.nx(), u.ny(), values).expect("gradient of a finite field is finite")
}

/// Current density magnitude `a = σ |∇u|`.
pub fn current_magnitude(sigma: &GridField, u: &GridField) -> Result<GridField> {
    if !sigma.same_shape(u) {
        return Err(Error::arg("sigma and u must share a grid"));
    }
    let grad = gradient_magnitude(u);
    let values = sigma.values().iter().zip(grad.values()).map(|(s, g)| s * g).collect();
    GridField::new(u.nx(), u.ny(), values)
}

/// `a^δ = a (1 + δ ξ)` with `ξ` i.i.d. standard normal, drawn in node order.
pub fn add_noise(a: &GridField, spec: &NoiseSpec) -> Result<GridField> {
    if !(spec.delta >= 0.0 && spec.delta.is_finite()) {
        return Err(Error::arg(format!("noise level must be >= 0, got {}", spec.delta)));
    }
    if spec.delta == 0.0 {
        return Ok(a.clone());
    }
    let mut rng = SeededRng::new(spec.seed);
    let values = a.values().iter().map(|&v| v * (1.0 + spec.delta * rng.normal())).collect();
    GridField::new(a.nx(), a.ny(), values)
}
