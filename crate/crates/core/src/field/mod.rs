//! Scalar fields sampled on uniform grids over the unit square.
//!
//! Nodes are stored row-major with `y` as the outer index: node `(i, j)` sits
//! at `(i·h_x, j·h_y)` and lives at `values[j * nx + i]`.

mod io;
mod phantom;

pub use io::{read_grid, read_mask, write_grid, write_mask, write_pgm};
pub use phantom::{make_phantom, PhantomKind};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A scalar field on a uniform `nx × ny` grid over `[0,1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(nx, ny)?;
        if values.len() != nx * ny {
            return Err(Error::arg(format!(
                "grid {nx}x{ny} needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at node {k}")));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn constant(nx: usize, ny: usize, c: f64) -> Result<Self> {
        Self::new(nx, ny, vec![c; nx * ny])
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_shape(nx, ny)?;
        let (hx, hy) = (1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64);
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(i as f64 * hx, j as f64 * hy));
            }
        }
        Self::new(nx, ny, values)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.ny - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Coordinates of node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    /// Iterates `(x, y)` over all nodes in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (hx, hy) = (self.hx(), self.hy());
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i as f64 * hx, j as f64 * hy)))
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// Applies `f` nodewise, keeping the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridField> {
        GridField::new(self.nx, self.ny, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation at `(x, y) ∈ [0,1]²`.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::arg(format!("point ({x}, {y}) outside the unit square")));
        }
        Ok(self.bilinear_unchecked(x, y))
    }

    pub(crate) fn bilinear_unchecked(&self, x: f64, y: f64) -> f64 {
        let (ci, ti) = cell_coordinate(x, self.nx);
        let (cj, tj) = cell_coordinate(y, self.ny);
        let v00 = self.at(ci, cj);
        let v10 = self.at(ci + 1, cj);
        let v01 = self.at(ci, cj + 1);
        let v11 = self.at(ci + 1, cj + 1);
        let bottom = v00 + ti * (v10 - v00);
        let top = v01 + ti * (v11 - v01);
        bottom + tj * (top - bottom)
    }
}

fn check_shape(nx: usize, ny: usize) -> Result<()> {
    if nx < 2 || ny < 2 {
        return Err(Error::arg(format!("grid must be at least 2x2, got {nx}x{ny}")));
    }
    Ok(())
}

/// Cell index and local offset in `[0, 1]` for a coordinate on an `n`-node axis.
fn cell_coordinate(t: f64, n: usize) -> (usize, f64) {
    let s = t * (n - 1) as f64;
    let cell = (s.floor() as usize).min(n - 2);
    (cell, s - cell as f64)
}

/// Closed axis-aligned rectangle `[x0, x1] × [y0, y1]` inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y0)
            && (0.0..=1.0).contains(&y1)
            && x0 < x1
            && y0 < y1;
        if !ok {
            return Err(Error::arg(format!(
                "degenerate or out-of-range rectangle ({x0}, {x1}, {y0}, {y1})"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn unit() -> Self {
        Self {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        // Nodes whose coordinates round onto the edge count as inside.
        const TIE: f64 = 1e-12;
        x >= self.x0 - TIE && x <= self.x1 + TIE && y >= self.y0 - TIE && y <= self.y1 + TIE
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.x1, self.y0, self.y1)
    }
}

/// Parses `x0,x1,y0,y1`.
impl FromStr for Rect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::arg(format!("rectangle must be x0,x1,y0,y1, got {s:?}")))?;
        match v[..] {
            [x0, x1, y0, y1] => Self::new(x0, x1, y0, y1),
            _ => Err(Error::arg(format!("rectangle must be x0,x1,y0,y1, got {s:?}"))),
        }
    }
}

/// Node mask over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    nx: usize,
    ny: usize,
    inside: Vec<bool>,
}

impl Mask {
    pub fn new(nx: usize, ny: usize, inside: Vec<bool>) -> Result<Self> {
        check_shape(nx, ny)?;
        if inside.len() != nx * ny {
            return Err(Error::arg("mask length does not match grid"));
        }
        Ok(Self { nx, ny, inside })
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            inside: vec![true; nx * ny],
        }
    }

    pub fn from_rect(nx: usize, ny: usize, rect: &Rect) -> Result<Self> {
        let probe = GridField::constant(nx, ny, 0.0)?;
        let inside = probe.nodes().map(|(x, y)| rect.contains(x, y)).collect();
        Ok(Self { nx, ny, inside })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn flags(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn matches(&self, f: &GridField) -> bool {
        self.nx == f.nx && self.ny == f.ny
    }
}

/// A field restricted to a node mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedField {
    pub field: GridField,
    pub mask: Mask,
}

impl MaskedField {
    /// Copy of the field with nodes outside the mask set to `fill`.
    pub fn filled(&self, fill: f64) -> GridField {
        let values = self
            .field
            .values
            .iter()
            .zip(&self.mask.inside)
            .map(|(&v, &m)| if m { v } else { fill })
            .collect();
        GridField {
            nx: self.field.nx,
            ny: self.field.ny,
            values,
        }
    }
}

/// Attaches the mask of `rect` (closed, node-wise containment) to `f`.
pub fn restrict_to_subdomain(f: &GridField, rect: &Rect) -> Result<MaskedField> {
    Ok(MaskedField {
        mask: Mask::from_rect(f.nx, f.ny, rect)?,
        field: f.clone(),
    })
}

/// Discrete relative L² error `‖est − truth‖ / ‖truth‖` over all nodes.
pub fn relative_l2_error(estimate: &GridField, truth: &GridField) -> Result<f64> {
    if !estimate.same_shape(truth) {
        return Err(shape_mismatch(estimate, truth));
    }
    relative_l2(estimate.values(), truth.values(), None)
}

/// Relative L² error summed over masked nodes only.
pub fn relative_l2_error_masked(
    estimate: &GridField,
    truth: &GridField,
    mask: &Mask,
) -> Result<f64> {
    if !estimate.same_shape(truth) {
        return Err(shape_mismatch(estimate, truth));
    }
    if !mask.matches(truth) {
        return Err(Error::arg("mask shape does not match the fields"));
    }
    relative_l2(estimate.values(), truth.values(), Some(mask.flags()))
}

/// Slice-level relative L² error; `mask` selects the entries that count.
pub fn relative_l2(estimate: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if estimate.len() != truth.len() || mask.is_some_and(|m| m.len() != truth.len()) {
        return Err(Error::arg("length mismatch in relative error"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, (&e, &t)) in estimate.iter().zip(truth).enumerate() {
        if mask.is_none_or(|m| m[k]) {
            num += (e - t) * (e - t);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::arg("reference field has zero norm"));
    }
    Ok((num / den).sqrt())
}

fn shape_mismatch(a: &GridField, b: &GridField) -> Error {
    Error::arg(format!(
        "shape mismatch: {}x{} vs {}x{}",
        a.nx, a.ny, b.nx, b.ny
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_tiny_grids() {
        assert!(GridField::constant(1, 3, 1.0).is_err());
        assert!(GridField::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GridField::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let c = GridField::constant(5, 7, 2.0).unwrap();
        assert_eq!(c.bilinear_sample(0.37, 0.91).unwrap(), 2.0);

        let y = GridField::from_fn(4, 4, |_, y| y).unwrap();
        assert!((y.bilinear_sample(0.5, 0.25).unwrap() - 0.25).abs() < 1e-15);

        // Tent function centred on the middle node of a 3×3 grid.
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let tent = GridField::new(3, 3, v).unwrap();
        assert!((tent.bilinear_sample(0.25, 0.5).unwrap() - 0.5).abs() < 1e-15);

        assert!(c.bilinear_sample(1.0 + 1e-9, 0.5).is_err());
        assert!(c.bilinear_sample(0.5, -0.1).is_err());
    }

    #[test]
    fn relative_error_examples() {
        let t = GridField::constant(4, 3, 2.0).unwrap();
        let e = GridField::constant(4, 3, 2.2).unwrap();
        assert_eq!(relative_l2_error(&t, &t).unwrap(), 0.0);
        assert!((relative_l2_error(&e, &t).unwrap() - 0.1).abs() < 1e-14);
        assert!((relative_l2(&[3.0, 0.0], &[3.0, 4.0], None).unwrap() - 0.8).abs() < 1e-15);

        let z = GridField::constant(4, 3, 0.0).unwrap();
        assert!(relative_l2_error(&e, &z).is_err());
        let other = GridField::constant(3, 3, 2.0).unwrap();
        assert!(relative_l2_error(&other, &t).is_err());
    }

    #[test]
    fn subdomain_mask() {
        let f = GridField::from_fn(5, 5, |x, y| x + y).unwrap();
        let full = restrict_to_subdomain(&f, &Rect::unit()).unwrap();
        assert_eq!(full.mask.count(), 25);

        let r = Rect::new(0.25, 0.75, 0.25, 0.75).unwrap();
        let m = restrict_to_subdomain(&f, &r).unwrap().mask;
        let expected: Vec<bool> = (0..25)
            .map(|k| (1..=3).contains(&(k % 5)) && (1..=3).contains(&(k / 5)))
            .collect();
        assert_eq!(m.flags(), &expected[..]);

        // Equal on the mask, different outside.
        let g = GridField::from_fn(5, 5, |x, y| if r.contains(x, y) { x + y } else { 9.0 }).unwrap();
        assert_eq!(relative_l2_error_masked(&g, &f, &m).unwrap(), 0.0);
        assert!(relative_l2_error(&g, &f).unwrap() > 0.0);

        assert!(Rect::new(0.5, 0.5, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 1.2, 0.0, 1.0).is_err());
    }

    #[test]
    fn full_rect_leaves_metric_unchanged() {
        let t = GridField::from_fn(6, 6, |x, y| 1.0 + x * y).unwrap();
        let e = GridField::from_fn(6, 6, |x, y| 1.1 + x * y).unwrap();
        let m = Mask::from_rect(6, 6, &Rect::unit()).unwrap();
        assert_eq!(
            relative_l2_error(&e, &t).unwrap(),
            relative_l2_error_masked(&e, &t, &m).unwrap()
        );
    }

    proptest! {
        #[test]
        fn bilinear_exact_on_affine(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64,
            nx in 2usize..20, ny in 2usize..20,
            x in 0.0..=1.0f64, y in 0.0..=1.0f64,
        ) {
            let f = GridField::from_fn(nx, ny, |x, y| a + b * x + c * y).unwrap();
            let v = f.bilinear_sample(x, y).unwrap();
            prop_assert!((v - (a + b * x + c * y)).abs() < 1e-12);
        }

        #[test]
        fn bilinear_reproduces_nodes(
            values in proptest::collection::vec(-5.0..5.0f64, 12),
            k in 0usize..12,
        ) {
            let f = GridField::new(4, 3, values.clone()).unwrap();
            let (x, y) = f.node(k % 4, k / 4);
            prop_assert!((f.bilinear_sample(x, y).unwrap() - values[k]).abs() < 1e-14);
        }

        #[test]
        fn relative_error_scale_invariant(
            t in proptest::collection::vec(0.5..2.0f64, 9),
            e in proptest::collection::vec(0.5..2.0f64, 9),
            c in prop_oneof![-4.0..-0.25f64, 0.25..4.0f64],
        ) {
            let r1 = relative_l2(&e, &t, None).unwrap();
            let es: Vec<f64> = e.iter().map(|v| c * v).collect();
            let ts: Vec<f64> = t.iter().map(|v| c * v).collect();
            let r2 = relative_l2(&es, &ts, None).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1.max(1.0));
        }
    }
}
