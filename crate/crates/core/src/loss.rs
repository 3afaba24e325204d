//! Monte Carlo discretisation of the relaxed weighted least-gradient energy.
//!
//! ```text
//! L̂(θ) = |Ω|/n₁ Σᵢ a(Xᵢ) ψ(|∇u_θ(Xᵢ)|) + γ |∂Ω|/n₂ Σⱼ a(Yⱼ) ψ(|u_θ(Yⱼ) − g(Yⱼ)|)
//! ```
//!
//! `ψ` is the Huber function with knee `ζ`. For partial interior data the
//! interior points come from a rectangle `Ω′` and `|Ω|` becomes `|Ω′|`; the
//! boundary term always covers the whole of `∂Ω`.
//!
//! The loss exists in two forms: [`empirical_loss`] records it on an
//! [`autodiff::Tape`](crate::autodiff::Tape), and [`LossEvaluator`] computes
//! value and θ-gradient with the batched network kernel. Both sum samples in
//! batch order.

use crate::autodiff::{sum, Var};
use crate::error::{Error, Result};
use crate::field::{GridField, Rect};
use crate::forward::DirichletData;
use crate::network::batch::BLOCK;
use crate::network::tape::{forward_eval, spatial_gradient};
use crate::network::{evaluate, BatchNet, MlpSpec};
use crate::rng::SeededRng;

pub const UNIT_AREA: f64 = 1.0;
pub const UNIT_PERIMETER: f64 = 4.0;

const BOUNDARY_STREAM: u64 = 1;

/// `ψ(t) = t` for `t ≥ ζ`, `t²/(2ζ) + ζ/2` below.
pub fn huber(t: f64, zeta: f64) -> f64 {
    if t >= zeta {
        t
    } else {
        t * t / (2.0 * zeta) + zeta / 2.0
    }
}

pub fn huber_derivative(t: f64, zeta: f64) -> f64 {
    if t >= zeta {
        1.0
    } else {
        t / zeta
    }
}

/// Weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub zeta: f64,
    pub area: f64,
    pub perimeter: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 100.0,
            zeta: 0.01,
            area: UNIT_AREA,
            perimeter: UNIT_PERIMETER,
        }
    }
}

impl LossConfig {
    pub fn new(gamma: f64, zeta: f64) -> Result<Self> {
        let cfg = Self {
            gamma,
            zeta,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration for interior data restricted to `rect`.
    pub fn partial(gamma: f64, zeta: f64, rect: &Rect) -> Result<Self> {
        let cfg = Self {
            area: rect.area(),
            ..Self::new(gamma, zeta)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("area", self.area),
            ("perimeter", self.perimeter),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::arg(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    fn interior_weight(&self, n1: usize) -> f64 {
        self.area / n1 as f64
    }

    fn boundary_weight(&self, n2: usize) -> f64 {
        self.gamma * self.perimeter / n2 as f64
    }
}

/// `n₁` i.i.d. uniform points in the open unit square, or in `subdomain`.
pub fn sample_interior(n1: usize, seed: u64, subdomain: Option<&Rect>) -> Result<Vec<[f64; 2]>> {
    if n1 == 0 {
        return Err(Error::arg("n1 must be at least 1"));
    }
    let r = subdomain.copied().unwrap_or_else(Rect::unit);
    let mut rng = SeededRng::new(seed);
    Ok((0..n1)
        .map(|_| {
            let x = r.x0 + (r.x1 - r.x0) * rng.uniform_open();
            let y = r.y0 + (r.y1 - r.y0) * rng.uniform_open();
            [x, y]
        })
        .collect())
}

/// `n₂` i.i.d. uniform points on the boundary of the unit square.
///
/// Edges are chosen with equal probability (all have length one), then a
/// position along the edge: 0 is `y = 0`, 1 is `x = 1`, 2 is `y = 1`, 3 is `x = 0`.
pub fn sample_boundary(n2: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n2 == 0 {
        return Err(Error::arg("n2 must be at least 1"));
    }
    let mut rng = SeededRng::with_stream(seed, BOUNDARY_STREAM);
    Ok((0..n2)
        .map(|_| {
            let edge = rng.index(4);
            let t = rng.uniform();
            match edge {
                0 => [t, 0.0],
                1 => [1.0, t],
                2 => [t, 1.0],
                _ => [0.0, t],
            }
        })
        .collect())
}

/// Training points with the data values attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    interior: Vec<[f64; 2]>,
    interior_a: Vec<f64>,
    boundary: Vec<[f64; 2]>,
    boundary_a: Vec<f64>,
    boundary_g: Vec<f64>,
}

impl SampleBatch {
    pub fn new(
        interior: Vec<[f64; 2]>,
        interior_a: Vec<f64>,
        boundary: Vec<[f64; 2]>,
        boundary_a: Vec<f64>,
        boundary_g: Vec<f64>,
    ) -> Result<Self> {
        if interior.is_empty() || boundary.is_empty() {
            return Err(Error::arg("sample batch needs interior and boundary points"));
        }
        if interior_a.len() != interior.len() {
            return Err(Error::arg("interior data length differs from point count"));
        }
        if boundary_a.len() != boundary.len() || boundary_g.len() != boundary.len() {
            return Err(Error::arg("boundary data length differs from point count"));
        }
        for &[x, y] in &interior {
            if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0) {
                return Err(Error::arg(format!("interior point ({x}, {y}) not inside the unit square")));
            }
        }
        for &[x, y] in &boundary {
            let inside = (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y);
            let on_edge = x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0;
            if !(inside && on_edge) {
                return Err(Error::arg(format!("boundary point ({x}, {y}) not on the boundary")));
            }
        }
        for &a in interior_a.iter().chain(&boundary_a) {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::arg(format!("data value {a} is negative or not finite")));
            }
        }
        if let Some(g) = boundary_g.iter().find(|g| !g.is_finite()) {
            return Err(Error::arg(format!("boundary value {g} is not finite")));
        }
        Ok(Self {
            interior,
            interior_a,
            boundary,
            boundary_a,
            boundary_g,
        })
    }

    /// Samples points and reads `a` from the grid by bilinear interpolation.
    pub fn draw(
        a: &GridField,
        g: &DirichletData,
        n1: usize,
        n2: usize,
        seed: u64,
        subdomain: Option<&Rect>,
    ) -> Result<Self> {
        Self::draw_with(|x, y| a.bilinear_unchecked(x, y), g, n1, n2, seed, subdomain)
    }

    /// Samples points and evaluates `a` directly.
    pub fn draw_with(
        a: impl Fn(f64, f64) -> f64,
        g: &DirichletData,
        n1: usize,
        n2: usize,
        seed: u64,
        subdomain: Option<&Rect>,
    ) -> Result<Self> {
        let interior = sample_interior(n1, seed, subdomain)?;
        let boundary = sample_boundary(n2, seed)?;
        let interior_a = interior.iter().map(|p| a(p[0], p[1])).collect();
        let boundary_a = boundary.iter().map(|p| a(p[0], p[1])).collect();
        let boundary_g = boundary.iter().map(|p| g.eval(p[0], p[1])).collect();
        Self::new(interior, interior_a, boundary, boundary_a, boundary_g)
    }

    pub fn interior(&self) -> &[[f64; 2]] {
        &self.interior
    }

    pub fn interior_a(&self) -> &[f64] {
        &self.interior_a
    }

    pub fn boundary(&self) -> &[[f64; 2]] {
        &self.boundary
    }

    pub fn boundary_a(&self) -> &[f64] {
        &self.boundary_a
    }

    pub fn boundary_g(&self) -> &[f64] {
        &self.boundary_g
    }

    pub fn n1(&self) -> usize {
        self.interior.len()
    }

    pub fn n2(&self) -> usize {
        self.boundary.len()
    }

    fn check_within(&self, rect: &Rect) -> Result<()> {
        match self.interior.iter().find(|p| !rect.contains(p[0], p[1])) {
            Some(p) => Err(Error::arg(format!("interior point ({}, {}) outside {rect}", p[0], p[1]))),
            None => Ok(()),
        }
    }
}

/// The loss split into its interior and boundary terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub interior: f64,
    pub boundary: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary
    }
}

/// Loss value together with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub standard_error: f64,
}

/// The empirical loss recorded on the tape that owns `theta`.
pub fn empirical_loss<'t>(
    spec: &MlpSpec,
    theta: &[Var<'t>],
    batch: &SampleBatch,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let mut interior = Vec::with_capacity(batch.n1());
    for (p, &a) in batch.interior.iter().zip(&batch.interior_a) {
        let e = spatial_gradient(spec, theta, [Var::constant(p[0]), Var::constant(p[1])])?;
        interior.push(e.grad[0].norm_smooth(e.grad[1], cfg.zeta) * a);
    }
    let mut boundary = Vec::with_capacity(batch.n2());
    for ((p, &a), &g) in batch.boundary.iter().zip(&batch.boundary_a).zip(&batch.boundary_g) {
        let u = forward_eval(spec, theta, [Var::constant(p[0]), Var::constant(p[1])])?;
        boundary.push((u - g).abs_smooth(cfg.zeta) * a);
    }
    Ok(sum(interior) * cfg.interior_weight(batch.n1()) + sum(boundary) * cfg.boundary_weight(batch.n2()))
}

/// [`empirical_loss`] for interior data known only on `rect`.
///
/// Checks that the batch was drawn from `rect` and that `cfg.area` is its area.
pub fn empirical_loss_partial<'t>(
    spec: &MlpSpec,
    theta: &[Var<'t>],
    batch: &SampleBatch,
    cfg: &LossConfig,
    rect: &Rect,
) -> Result<Var<'t>> {
    check_partial(batch, cfg, rect)?;
    empirical_loss(spec, theta, batch, cfg)
}

fn check_partial(batch: &SampleBatch, cfg: &LossConfig, rect: &Rect) -> Result<()> {
    batch.check_within(rect)?;
    if (cfg.area - rect.area()).abs() > 1e-12 {
        return Err(Error::arg(format!(
            "loss area {} does not match subdomain area {}",
            cfg.area,
            rect.area()
        )));
    }
    Ok(())
}

/// Batched evaluation of the empirical loss and its θ-gradient.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    net: BatchNet,
    u_bar: Vec<f64>,
    gx_bar: Vec<f64>,
    gy_bar: Vec<f64>,
}

#[derive(Debug, Default)]
struct Sums {
    interior: f64,
    interior_sq: f64,
    boundary: f64,
    boundary_sq: f64,
}

impl LossEvaluator {
    pub fn new(spec: &MlpSpec) -> Self {
        Self {
            net: BatchNet::new(spec),
            u_bar: vec![0.0; BLOCK],
            gx_bar: vec![0.0; BLOCK],
            gy_bar: vec![0.0; BLOCK],
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        self.net.spec()
    }

    pub fn value(&mut self, theta: &[f64], batch: &SampleBatch, cfg: &LossConfig) -> Result<LossParts> {
        let s = self.pass(theta, batch, cfg, None)?;
        Ok(Self::parts(&s, batch, cfg))
    }

    /// Loss value; `grad` is overwritten with `∂L̂/∂θ`.
    pub fn value_and_grad(
        &mut self,
        theta: &[f64],
        batch: &SampleBatch,
        cfg: &LossConfig,
        grad: &mut [f64],
    ) -> Result<LossParts> {
        let s = self.pass(theta, batch, cfg, Some(grad))?;
        Ok(Self::parts(&s, batch, cfg))
    }

    /// Loss value with the standard error of the Monte Carlo estimate.
    pub fn estimate(&mut self, theta: &[f64], batch: &SampleBatch, cfg: &LossConfig) -> Result<McEstimate> {
        if batch.n1() < 2 || batch.n2() < 2 {
            return Err(Error::arg("standard error needs at least two samples per term"));
        }
        let s = self.pass(theta, batch, cfg, None)?;
        let parts = Self::parts(&s, batch, cfg);
        let variance = |total: f64, sq: f64, n: usize| {
            let n = n as f64;
            ((sq - total * total / n) / (n - 1.0)).max(0.0)
        };
        let vi = variance(s.interior, s.interior_sq, batch.n1());
        let vb = variance(s.boundary, s.boundary_sq, batch.n2());
        let se2 = cfg.area.powi(2) * vi / batch.n1() as f64
            + (cfg.gamma * cfg.perimeter).powi(2) * vb / batch.n2() as f64;
        Ok(McEstimate {
            value: parts.total(),
            standard_error: se2.sqrt(),
        })
    }

    /// Partial-data variant of [`LossEvaluator::value_and_grad`].
    pub fn value_and_grad_partial(
        &mut self,
        theta: &[f64],
        batch: &SampleBatch,
        cfg: &LossConfig,
        rect: &Rect,
        grad: &mut [f64],
    ) -> Result<LossParts> {
        check_partial(batch, cfg, rect)?;
        self.value_and_grad(theta, batch, cfg, grad)
    }

    fn parts(s: &Sums, batch: &SampleBatch, cfg: &LossConfig) -> LossParts {
        LossParts {
            interior: cfg.area * s.interior / batch.n1() as f64,
            boundary: cfg.gamma * cfg.perimeter * s.boundary / batch.n2() as f64,
        }
    }

    fn pass(
        &mut self,
        theta: &[f64],
        batch: &SampleBatch,
        cfg: &LossConfig,
        mut grad: Option<&mut [f64]>,
    ) -> Result<Sums> {
        cfg.validate()?;
        self.net.spec().check_params(theta)?;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let zeta = cfg.zeta;
        let wi = cfg.interior_weight(batch.n1());
        let wb = cfg.boundary_weight(batch.n2());
        let mut s = Sums::default();

        for (pts, avals) in batch.interior.chunks(BLOCK).zip(batch.interior_a.chunks(BLOCK)) {
            let n = pts.len();
            self.net.forward(theta, pts, true)?;
            let (gx, gy) = self.net.grad();
            for b in 0..n {
                let r = gx[b].hypot(gy[b]);
                let term = avals[b] * huber(r, zeta);
                s.interior += term;
                s.interior_sq += term * term;
                let scale = if r >= zeta { 1.0 / r } else { 1.0 / zeta };
                let c = wi * avals[b] * scale;
                self.gx_bar[b] = c * gx[b];
                self.gy_bar[b] = c * gy[b];
            }
            if let Some(g) = grad.as_deref_mut() {
                self.u_bar[..n].fill(0.0);
                self.net.backward(
                    theta,
                    &self.u_bar[..n],
                    Some((&self.gx_bar[..n], &self.gy_bar[..n])),
                    g,
                );
            }
        }

        let chunks = batch
            .boundary
            .chunks(BLOCK)
            .zip(batch.boundary_a.chunks(BLOCK))
            .zip(batch.boundary_g.chunks(BLOCK));
        for ((pts, avals), gvals) in chunks {
            let n = pts.len();
            self.net.forward(theta, pts, false)?;
            let u = self.net.u();
            for b in 0..n {
                let t = u[b] - gvals[b];
                let r = t.abs();
                let term = avals[b] * huber(r, zeta);
                s.boundary += term;
                s.boundary_sq += term * term;
                let d = if r >= zeta { t.signum() } else { t / zeta };
                self.u_bar[b] = wb * avals[b] * d;
            }
            if let Some(g) = grad.as_deref_mut() {
                self.net.backward(theta, &self.u_bar[..n], None, g);
            }
        }

        if !(s.interior.is_finite() && s.boundary.is_finite()) {
            return Err(Error::numeric("loss", "loss value is not finite"));
        }
        Ok(s)
    }
}

/// Value-only convenience wrapper around [`LossEvaluator`].
pub fn loss_value(spec: &MlpSpec, theta: &[f64], batch: &SampleBatch, cfg: &LossConfig) -> Result<LossParts> {
    LossEvaluator::new(spec).value(theta, batch, cfg)
}

/// The same integrand integrated by the midpoint rule on an `m × m` grid.
///
/// Interior cells tile `subdomain` (default the unit square) and carry weight
/// `cfg.area / m²`; each edge of the unit square gets `m` midpoints of weight
/// `cfg.perimeter / (4m)`.
pub fn quadrature_loss(
    spec: &MlpSpec,
    theta: &[f64],
    a: impl Fn(f64, f64) -> f64,
    g: &DirichletData,
    m: usize,
    cfg: &LossConfig,
    subdomain: Option<&Rect>,
) -> Result<LossParts> {
    cfg.validate()?;
    if m < 64 {
        return Err(Error::arg(format!("quadrature grid must be at least 64, got {m}")));
    }
    let r = subdomain.copied().unwrap_or_else(Rect::unit);
    let mid = |k: usize| (k as f64 + 0.5) / m as f64;
    let mut interior_pts = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            interior_pts.push([r.x0 + (r.x1 - r.x0) * mid(i), r.y0 + (r.y1 - r.y0) * mid(j)]);
        }
    }
    let mut interior = 0.0;
    for (p, e) in interior_pts.iter().zip(evaluate(spec, theta, &interior_pts)?) {
        interior += a(p[0], p[1]) * huber(e.grad_norm(), cfg.zeta);
    }

    let mut boundary_pts = Vec::with_capacity(4 * m);
    for k in 0..m {
        let t = mid(k);
        boundary_pts.extend([[t, 0.0], [1.0, t], [t, 1.0], [0.0, t]]);
    }
    let mut boundary = 0.0;
    for (p, e) in boundary_pts.iter().zip(evaluate(spec, theta, &boundary_pts)?) {
        boundary += a(p[0], p[1]) * huber((e.u - g.eval(p[0], p[1])).abs(), cfg.zeta);
    }

    let m2 = (m * m) as f64;
    Ok(LossParts {
        interior: cfg.area * interior / m2,
        boundary: cfg.gamma * cfg.perimeter * boundary / (4 * m) as f64,
    })
}
