//! Lorentz-model hyperbolic geometry.
//!
//! Points live on the upper sheet of the hyperboloid
//! `c * (|space|^2 - time^2) = -1` with `c = |kappa| > 0`. Only the space
//! components are free; the time component is always recomputed from the
//! constraint, so every [`HyperbolicPoint`] lies on the manifold up to
//! rounding.
//!
//! Besides the forward maps, this module exposes analytic gradients of the
//! exponential map, geodesic distance, cone half-aperture and exterior angle
//! with respect to space components and `c`. Gradients with respect to `c`
//! treat `time` as the dependent quantity `sqrt(1/c + |space|^2)`.

use thiserror::Error;

/// Entailment cone constant used when none is configured.
pub const DEFAULT_CONE_K: f64 = 0.1;

/// Below this `sqrt(c)*|u|` the exponential map switches to a Taylor series.
const SERIES_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("curvature magnitude must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("entailment cone undefined at the origin")]
    ConeAtOrigin,
    #[error("exterior angle undefined for coincident points")]
    CoincidentPoints,
}

/// Curvature of the hyperboloid, stored as `ln |kappa|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    log_c: f64,
}

impl Curvature {
    pub const MIN_ABS: f64 = 0.05;
    pub const MAX_ABS: f64 = 20.0;

    /// From the magnitude `c = |kappa|`.
    pub fn new(c: f64) -> Result<Self, GeometryError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(GeometryError::InvalidCurvature(c));
        }
        Ok(Self { log_c: c.ln() })
    }

    /// From the signed curvature `kappa < 0`.
    pub fn from_kappa(kappa: f64) -> Result<Self, GeometryError> {
        if !(kappa.is_finite() && kappa < 0.0) {
            return Err(GeometryError::InvalidCurvature(kappa));
        }
        Self::new(-kappa)
    }

    pub fn from_log(log_c: f64) -> Result<Self, GeometryError> {
        Self::new(log_c.exp())
    }

    pub fn c(self) -> f64 {
        self.log_c.exp()
    }

    pub fn kappa(self) -> f64 {
        -self.c()
    }

    pub fn log_c(self) -> f64 {
        self.log_c
    }

    /// Clamp a raw log-curvature into `[ln MIN_ABS, ln MAX_ABS]`.
    pub fn clamp_log(log_c: f64) -> f64 {
        log_c.clamp(Self::MIN_ABS.ln(), Self::MAX_ABS.ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicPoint {
    space: Vec<f64>,
    time: f64,
}

impl HyperbolicPoint {
    /// Lift space components onto the hyperboloid of curvature `c`.
    pub fn from_space(space: Vec<f64>, c: Curvature) -> Self {
        let time = lift_time(&space, c.c());
        Self { space, time }
    }

    pub fn origin(dim: usize, c: Curvature) -> Self {
        Self::from_space(vec![0.0; dim], c)
    }

    pub fn space(&self) -> &[f64] {
        &self.space
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn space_norm(&self) -> f64 {
        norm(&self.space)
    }

    /// `c * <x, x>_L + 1`; zero on the manifold.
    pub fn constraint_residual(&self, c: Curvature) -> f64 {
        c.c() * (dot(&self.space, &self.space) - self.time * self.time) + 1.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn lift_time(space: &[f64], c: f64) -> f64 {
    (1.0 / c + dot(space, space)).sqrt()
}

/// `sinh(z)/z` and `(z cosh z - sinh z)/z^3`, the latter being `f'(z)/z`.
fn sinhc_and_slope(z: f64) -> (f64, f64) {
    if z < SERIES_THRESHOLD {
        let z2 = z * z;
        let f = 1.0 + z2 / 6.0 + z2 * z2 / 120.0 + z2 * z2 * z2 / 5040.0;
        let h = 1.0 / 3.0 + z2 / 30.0 + z2 * z2 / 840.0 + z2 * z2 * z2 / 45360.0;
        (f, h)
    } else {
        let (s, ch) = (z.sinh(), z.cosh());
        (s / z, (z * ch - s) / (z * z * z))
    }
}

/// Exponential map at the hyperboloid origin.
///
/// `space = sinh(sqrt(c)|u|) * u / (sqrt(c)|u|)`; the zero vector maps to the
/// origin exactly.
pub fn exp_map0(u: &[f64], c: Curvature) -> HyperbolicPoint {
    let cv = c.c();
    let z = cv.sqrt() * norm(u);
    let (f, _) = sinhc_and_slope(z);
    HyperbolicPoint::from_space(u.iter().map(|x| f * x).collect(), c)
}

/// Pull a gradient on the space components of `exp_map0(u, c)` back to `u`.
///
/// Returns `(dL/du, dL/dc)`.
pub fn exp_map0_backward(u: &[f64], c: Curvature, grad_space: &[f64]) -> (Vec<f64>, f64) {
    let cv = c.c();
    let r2 = dot(u, u);
    let z = (cv * r2).sqrt();
    let (f, h) = sinhc_and_slope(z);
    let ug = dot(u, grad_space);
    let grad_u = u
        .iter()
        .zip(grad_space)
        .map(|(ui, gi)| f * gi + cv * h * ug * ui)
        .collect();
    (grad_u, 0.5 * h * r2 * ug)
}

/// Lorentzian inner product `space.space - time*time`.
pub fn lorentz_inner(x: &HyperbolicPoint, y: &HyperbolicPoint) -> Result<f64, GeometryError> {
    if x.dim() != y.dim() {
        return Err(GeometryError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(dot(&x.space, &y.space) - x.time * y.time)
}

/// `-c<x,y> - 1`, computed without cancellation for nearby points.
fn cosh_excess(x: &HyperbolicPoint, y: &HyperbolicPoint, c: f64) -> f64 {
    let direct = c * (x.time * y.time - dot(&x.space, &y.space)) - 1.0;
    if direct > 1.0 {
        return direct;
    }
    // -c<x,y> - 1 = (c/2) <x-y, x-y>_L
    let mut diff2 = 0.0;
    let mut cross = 0.0;
    for (a, b) in x.space.iter().zip(&y.space) {
        diff2 += (a - b) * (a - b);
        cross += (a - b) * (a + b);
    }
    let dt = cross / (x.time + y.time);
    (0.5 * c * (diff2 - dt * dt)).max(0.0)
}

/// Partials of `a = -c<x,y>` with respect to `x.space`, `y.space` and `c`.
struct InnerPartials {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dc: f64,
}

fn neg_inner_partials(x: &HyperbolicPoint, y: &HyperbolicPoint, c: f64, a: f64) -> InnerPartials {
    let (tx, ty) = (x.time, y.time);
    let dx = x
        .space
        .iter()
        .zip(&y.space)
        .map(|(sx, sy)| c * (ty * sx / tx - sy))
        .collect();
    let dy = x
        .space
        .iter()
        .zip(&y.space)
        .map(|(sx, sy)| c * (tx * sy / ty - sx))
        .collect();
    let dc = a / c - (ty / tx + tx / ty) / (2.0 * c);
    InnerPartials { dx, dy, dc }
}

/// Geodesic distance `(1/sqrt(c)) * arccosh(-c<x,y>)`.
pub fn geodesic_distance(x: &HyperbolicPoint, y: &HyperbolicPoint, c: Curvature) -> f64 {
    let m = cosh_excess(x, y, c.c());
    acosh1p(m) / c.c().sqrt()
}

/// `arccosh(1 + m)` for `m >= 0`.
fn acosh1p(m: f64) -> f64 {
    (m + (m * (m + 2.0)).sqrt()).ln_1p()
}

/// Value and gradient of a scalar function of two points and the curvature.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub value: f64,
    pub d_first: Vec<f64>,
    pub d_second: Vec<f64>,
    pub d_c: f64,
}

/// Geodesic distance with gradients. At coincident points the gradient is
/// taken as zero.
pub fn geodesic_distance_grad(x: &HyperbolicPoint, y: &HyperbolicPoint, c: Curvature) -> PairGrad {
    let cv = c.c();
    let sqrt_c = cv.sqrt();
    let m = cosh_excess(x, y, cv);
    let value = acosh1p(m) / sqrt_c;
    let s = (m * (m + 2.0)).sqrt();
    if s == 0.0 {
        return PairGrad {
            value,
            d_first: vec![0.0; x.dim()],
            d_second: vec![0.0; y.dim()],
            d_c: -value / (2.0 * cv),
        };
    }
    let p = neg_inner_partials(x, y, cv, 1.0 + m);
    let k = 1.0 / (sqrt_c * s);
    PairGrad {
        value,
        d_first: p.dx.iter().map(|v| k * v).collect(),
        d_second: p.dy.iter().map(|v| k * v).collect(),
        d_c: -value / (2.0 * cv) + k * p.dc,
    }
}

/// Half-aperture of the entailment cone rooted at `x`:
/// `arcsin(min(1, 2K / (sqrt(c)|space(x)|)))`.
pub fn half_aperture(x: &HyperbolicPoint, c: Curvature, k: f64) -> Result<f64, GeometryError> {
    half_aperture_grad(x, c, k).map(|(v, _, _)| v)
}

/// Half-aperture with `(value, d/dspace, d/dc)`; zero gradient inside the clamp.
pub fn half_aperture_grad(
    x: &HyperbolicPoint,
    c: Curvature,
    k: f64,
) -> Result<(f64, Vec<f64>, f64), GeometryError> {
    let n = x.space_norm();
    if n == 0.0 {
        return Err(GeometryError::ConeAtOrigin);
    }
    let cv = c.c();
    let q = 2.0 * k / (cv.sqrt() * n);
    if q >= 1.0 {
        return Ok((std::f64::consts::FRAC_PI_2, vec![0.0; x.dim()], 0.0));
    }
    let dq = 1.0 / (1.0 - q * q).sqrt();
    let ds = x.space.iter().map(|s| -dq * q * s / (n * n)).collect();
    Ok((q.asin(), ds, -dq * q / (2.0 * cv)))
}

/// Angle at `parent` between the ray from the origin and the geodesic to
/// `child`, in `[0, pi]`.
pub fn exterior_angle(
    parent: &HyperbolicPoint,
    child: &HyperbolicPoint,
    c: Curvature,
) -> Result<f64, GeometryError> {
    exterior_angle_grad(parent, child, c).map(|g| g.value)
}

/// Exterior angle with gradients with respect to parent space, child space
/// and `c`. Gradients are zero where the arccos argument is clamped.
pub fn exterior_angle_grad(
    parent: &HyperbolicPoint,
    child: &HyperbolicPoint,
    c: Curvature,
) -> Result<PairGrad, GeometryError> {
    if parent.dim() != child.dim() {
        return Err(GeometryError::DimensionMismatch(parent.dim(), child.dim()));
    }
    let cv = c.c();
    let n = parent.space_norm();
    let m = cosh_excess(parent, child, cv);
    let s = (m * (m + 2.0)).sqrt();
    if n == 0.0 || s == 0.0 {
        return Err(GeometryError::CoincidentPoints);
    }
    let a = 1.0 + m;
    let (tp, tc) = (parent.time, child.time);
    let num = tc - tp * a;
    let den = n * s;
    let r = num / den;
    let value = r.clamp(-1.0, 1.0).acos();
    if r.abs() >= 1.0 {
        return Ok(PairGrad {
            value,
            d_first: vec![0.0; parent.dim()],
            d_second: vec![0.0; child.dim()],
            d_c: 0.0,
        });
    }
    let p = neg_inner_partials(parent, child, cv, a);
    let dtheta = -1.0 / (1.0 - r * r).sqrt();
    let ds_da = a / s;

    // d(num), d(den) with respect to parent space
    let d_first = parent
        .space
        .iter()
        .zip(&p.dx)
        .map(|(sp, da)| {
            let dnum = -(sp / tp) * a - tp * da;
            let dden = (sp / n) * s + n * ds_da * da;
            dtheta * (dnum - r * dden) / den
        })
        .collect();
    let d_second = child
        .space
        .iter()
        .zip(&p.dy)
        .map(|(sc, da)| {
            let dnum = sc / tc - tp * da;
            let dden = n * ds_da * da;
            dtheta * (dnum - r * dden) / den
        })
        .collect();
    let dtp_dc = -1.0 / (2.0 * cv * cv * tp);
    let dtc_dc = -1.0 / (2.0 * cv * cv * tc);
    let dnum_dc = dtc_dc - dtp_dc * a - tp * p.dc;
    let dden_dc = n * ds_da * p.dc;
    Ok(PairGrad {
        value,
        d_first,
        d_second,
        d_c: dtheta * (dnum_dc - r * dden_dc) / den,
    })
}
