use std::fmt;
use std::str::FromStr;

use super::GridField;
use crate::error::{Error, Result};

/// Analytic conductivity phantoms on the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// Homogeneous medium `σ ≡ c`, `c > 0`.
    Constant(f64),
    /// Smooth four-mode field built from shifted Gaussian bumps.
    FourMode,
    /// `1 + χ{x > 0.5} · exp(−2((x−0.5)² + (y−0.5)²))`, discontinuous at `x = 0.5`.
    DiscontinuousBump,
    /// Modified 10-ellipse Shepp–Logan head, rescaled to `[1.0, 1.8]`.
    SheppLogan,
}

impl PhantomKind {
    /// Pointwise value for the analytic phantoms. Shepp–Logan returns the raw
    /// (unscaled) ellipse intensity; [`make_phantom`] rescales it per grid.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            PhantomKind::Constant(c) => c,
            PhantomKind::FourMode => four_mode(x, y),
            PhantomKind::DiscontinuousBump => {
                if x > 0.5 {
                    1.0 + (-2.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
                } else {
                    1.0
                }
            }
            PhantomKind::SheppLogan => shepp_logan_raw(2.0 * x - 1.0, 2.0 * y - 1.0),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhantomKind::Constant(c) => write!(f, "constant:{c}"),
            PhantomKind::FourMode => f.write_str("fourmode"),
            PhantomKind::DiscontinuousBump => f.write_str("bump"),
            PhantomKind::SheppLogan => f.write_str("shepplogan"),
        }
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(c) = s.strip_prefix("constant:") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::arg(format!("bad constant phantom value {c:?}")))?;
            return Ok(PhantomKind::Constant(c));
        }
        match s {
            "constant" => Ok(PhantomKind::Constant(1.0)),
            "fourmode" => Ok(PhantomKind::FourMode),
            "bump" | "discontinuous" => Ok(PhantomKind::DiscontinuousBump),
            "shepplogan" | "shepp-logan" => Ok(PhantomKind::SheppLogan),
            _ => Err(Error::arg(format!("unknown phantom {s:?}"))),
        }
    }
}

/// Samples the phantom at the nodes of an `nx × ny` grid.
pub fn make_phantom(kind: PhantomKind, nx: usize, ny: usize) -> Result<GridField> {
    if let PhantomKind::Constant(c) = kind {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::arg(format!("constant phantom needs c > 0, got {c}")));
        }
    }
    let raw = GridField::from_fn(nx, ny, |x, y| kind.eval(x, y))?;
    if kind != PhantomKind::SheppLogan {
        return Ok(raw);
    }
    // Affine map of the sampled intensities onto [1.0, 1.8].
    let (lo, hi) = (raw.min(), raw.max());
    if hi - lo <= 0.0 {
        return GridField::constant(nx, ny, 1.0);
    }
    raw.map(|v| (1.0 + 0.8 * (v - lo) / (hi - lo)).clamp(1.0, 1.8))
}

fn four_mode(x: f64, y: f64) -> f64 {
    let s = 2.0 * x - 1.0;
    let t = 2.0 * y - 1.0;
    let alpha = 0.3 * (1.0 - 3.0 * s).powi(2) * (-9.0 * s * s - (6.0 * y - 2.0).powi(2)).exp();
    let beta = (3.0 * s / 5.0 - 27.0 * s.powi(3) - (3.0 * t).powi(5)) * (-9.0 * s * s - 9.0 * t * t).exp();
    let gamma = (-(3.0 * s + 1.0).powi(2) - 9.0 * t * t).exp();
    1.1 + 0.3 * (alpha - beta - gamma)
}

/// Intensity, semi-axes `(a, b)`, centre `(x0, y0)`, rotation in degrees.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Raw phantom intensity at `(x, y) ∈ [−1,1]²`.
fn shepp_logan_raw(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|&&(_, a, b, x0, y0, deg)| {
            let (sin, cos) = deg.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .map(|e| e.0)
        .sum()
}
