//! Lorentz (hyperboloid) model of hyperbolic space with curvature `-kappa`.
//!
//! Points live in `R^{n+1}` with the time-like coordinate first and satisfy
//! `<x, x>_L = -1/kappa`, `x_0 > 0`, where
//! `<x, y>_L = -x_0 y_0 + sum_i x_i y_i`. The origin is `(1/sqrt(kappa), 0, ..., 0)`.
//!
//! The [`kernels`] submodule holds the arithmetic, generic over [`Real`] so the
//! same code runs on plain floats and on the differentiation tape. The typed
//! API on top ([`LorentzPoint`], [`TangentVector`], free functions) validates
//! inputs and is what the rest of the crate calls outside of loss evaluation.

use crate::error::{HfmError, Result};

/// Absolute tolerance on `|<x,x>_L + 1/kappa|` for points we hand out.
pub const MANIFOLD_TOL: f64 = 1e-9;

/// Tangency violations above this (relative to operand scale) are rejected.
pub const TANGENCY_TOL: f64 = 1e-6;

/// Arithmetic on raw ambient coordinates, generic over the scalar type.
pub mod kernels {
    use crate::autodiff::{dot, Real};

    pub fn inner<T: Real>(x: &[T], y: &[T]) -> T {
        let space = if x.len() > 1 {
            dot(&x[1..], &y[1..])
        } else {
            x[0].lift(0.0)
        };
        space - x[0] * y[0]
    }

    /// `a + kappa <base, a>_L base`.
    pub fn project<T: Real>(base: &[T], a: &[T], kappa: T) -> Vec<T> {
        let c = kappa * inner(base, a);
        base.iter().zip(a).map(|(&b, &ai)| ai + c * b).collect()
    }

    /// Point with the given space part and the time coordinate that puts it
    /// on the hyperboloid.
    pub fn reproject<T: Real>(space: &[T], kappa: T) -> Vec<T> {
        let norm_sq = dot(space, space);
        let time = (norm_sq + kappa.lift(1.0) / kappa).sqrt();
        let mut out = Vec::with_capacity(space.len() + 1);
        out.push(time);
        out.extend_from_slice(space);
        out
    }

    /// Exponential map at `base`, followed by reprojection of the result.
    pub fn exp_map<T: Real>(base: &[T], v: &[T], kappa: T) -> Vec<T> {
        let q = kappa * inner(v, v);
        let c = q.cosh_sqrt();
        let s = q.sinhc_sqrt();
        let space: Vec<T> = base[1..]
            .iter()
            .zip(&v[1..])
            .map(|(&b, &vi)| c * b + s * vi)
            .collect();
        reproject(&space, kappa)
    }

    /// `kappa <x - y, x - y>_L / 2`, which equals `-kappa <x,y>_L - 1` for
    /// on-manifold points but keeps full precision as `x -> y`.
    pub fn acosh_excess<T: Real>(x: &[T], y: &[T], kappa: T) -> T {
        let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
        kappa * inner(&diff, &diff) * 0.5
    }

    pub fn distance<T: Real>(x: &[T], y: &[T], kappa: T) -> T {
        acosh_excess(x, y, kappa).acosh1p() / kappa.sqrt()
    }

    pub fn distance_sq<T: Real>(x: &[T], y: &[T], kappa: T) -> T {
        acosh_excess(x, y, kappa).acosh1p_sq() / kappa
    }

    pub fn origin<T: Real>(n: usize, kappa: T) -> Vec<T> {
        let zero = kappa.lift(0.0);
        let mut out = vec![zero; n + 1];
        out[0] = kappa.lift(1.0) / kappa.sqrt();
        out
    }

    /// Lift a Euclidean vector to the tangent space at the origin and map
    /// it onto the manifold.
    pub fn embed_at_origin<T: Real>(space: &[T], kappa: T) -> Vec<T> {
        let mut v = Vec::with_capacity(space.len() + 1);
        v.push(kappa.lift(0.0));
        v.extend_from_slice(space);
        exp_map(&origin(space.len(), kappa), &v, kappa)
    }

    /// Logarithmic map, plain floats only.
    pub fn log_map(base: &[f64], x: &[f64], kappa: f64) -> Vec<f64> {
        let pi = project(base, x, kappa);
        let norm_sq = inner(&pi, &pi).max(0.0);
        let d = distance(base, x, kappa);
        if norm_sq == 0.0 || d == 0.0 {
            return vec![0.0; base.len()];
        }
        let c = d / norm_sq.sqrt();
        pi.iter().map(|p| c * p).collect()
    }
}

/// Positive curvature magnitude; the manifold has sectional curvature `-kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    kappa: f64,
    learnable: bool,
}

impl Curvature {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(HfmError::invalid(format!(
                "curvature must be positive and finite, got {kappa}"
            )));
        }
        Ok(Curvature {
            kappa,
            learnable: false,
        })
    }

    pub fn learnable(kappa: f64) -> Result<Self> {
        Ok(Curvature {
            learnable: true,
            ..Self::new(kappa)?
        })
    }

    /// Same value, no longer flagged as learnable.
    pub fn frozen(self) -> Self {
        Curvature {
            learnable: false,
            ..self
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature {
            kappa: 1.0,
            learnable: false,
        }
    }
}

/// A point on the hyperboloid, stored as ambient coordinates `(time, space..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
}

impl LorentzPoint {
    /// Origin of `L^{n,kappa}`.
    pub fn origin(n: usize, k: Curvature) -> Self {
        LorentzPoint {
            coords: kernels::origin(n, k.kappa),
        }
    }

    /// Point with the given space part; the time coordinate is solved for.
    pub fn from_space(space: &[f64], k: Curvature) -> Result<Self> {
        if space.is_empty() {
            return Err(HfmError::invalid("space part must have dimension >= 1"));
        }
        if space.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::invalid("space part has non-finite entries"));
        }
        Ok(reproject_to_manifold_unchecked(space, k))
    }

    /// Validate ambient coordinates against the manifold constraint.
    pub fn from_ambient(coords: Vec<f64>, k: Curvature) -> Result<Self> {
        if coords.len() < 2 {
            return Err(HfmError::invalid("ambient dimension must be >= 2"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(HfmError::invalid("ambient vector has non-finite entries"));
        }
        if coords[0] <= 0.0 {
            return Err(HfmError::invalid("time coordinate must be positive"));
        }
        let p = LorentzPoint { coords };
        if !p.is_on_manifold(k) {
            return Err(HfmError::invalid(format!(
                "point is off the manifold (residual {:e})",
                p.residual(k)
            )));
        }
        Ok(p)
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Manifold dimension `n` (ambient dimension minus one).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// `|<x,x>_L + 1/kappa|`.
    pub fn residual(&self, k: Curvature) -> f64 {
        (kernels::inner(&self.coords, &self.coords) + 1.0 / k.kappa).abs()
    }

    /// Residual within [`MANIFOLD_TOL`], loosened only for very large points
    /// where the squares themselves carry more rounding than that.
    pub fn is_on_manifold(&self, k: Curvature) -> bool {
        let scale = (self.coords[0] * self.coords[0] * f64::EPSILON * 8.0).max(MANIFOLD_TOL);
        self.coords[0] > 0.0 && self.residual(k) <= scale
    }

    /// Euclidean norm of the space-like part.
    pub fn space_norm(&self) -> f64 {
        self.space().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ambient vector attached to a base point, Lorentz-orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: LorentzPoint,
    ambient: Vec<f64>,
}

impl TangentVector {
    /// Attach `ambient` to `base`, checking tangency.
    pub fn new(base: LorentzPoint, ambient: Vec<f64>) -> Result<Self> {
        check_tangent(&base, &ambient)?;
        Ok(TangentVector { base, ambient })
    }

    pub fn zero(base: LorentzPoint) -> Self {
        let ambient = vec![0.0; base.coords.len()];
        TangentVector { base, ambient }
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    /// `sqrt(<v,v>_L)`, non-negative for tangent vectors.
    pub fn lorentz_norm(&self) -> f64 {
        kernels::inner(&self.ambient, &self.ambient).max(0.0).sqrt()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            ambient: self.ambient.iter().map(|a| a * s).collect(),
        }
    }

    /// `|<base, v>_L|`.
    pub fn tangency_residual(&self) -> f64 {
        kernels::inner(&self.base.coords, &self.ambient).abs()
    }
}

fn check_tangent(base: &LorentzPoint, ambient: &[f64]) -> Result<()> {
    if ambient.len() != base.coords.len() {
        return Err(HfmError::invalid(format!(
            "tangent vector has dimension {}, base has {}",
            ambient.len(),
            base.coords.len()
        )));
    }
    if ambient.iter().any(|v| !v.is_finite()) {
        return Err(HfmError::invalid("tangent vector has non-finite entries"));
    }
    let scale = euclid_norm(&base.coords) * euclid_norm(ambient);
    let violation = kernels::inner(&base.coords, ambient).abs();
    if violation > TANGENCY_TOL * scale.max(1.0) {
        return Err(HfmError::invalid(format!(
            "vector is not tangent at base (|<base,v>_L| = {violation:e})"
        )));
    }
    Ok(())
}

fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lorentzian inner product `-x_0 y_0 + <x~, y~>_E`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HfmError::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(HfmError::invalid("ambient dimension must be >= 2"));
    }
    Ok(kernels::inner(x, y))
}

/// Geodesic distance `arcosh(-kappa <x,y>_L) / sqrt(kappa)`.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint, k: Curvature) -> f64 {
    kernels::distance(&x.coords, &y.coords, k.kappa)
}

/// `(0, scale * feature)` attached to the origin.
pub fn lift_to_tangent_at_origin(feature: &[f64], scale: f64, k: Curvature) -> Result<TangentVector> {
    if feature.is_empty() {
        return Err(HfmError::invalid("feature must be non-empty"));
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(HfmError::invalid(format!("scale must be positive, got {scale}")));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(HfmError::invalid("feature has non-finite entries"));
    }
    let mut ambient = Vec::with_capacity(feature.len() + 1);
    ambient.push(0.0);
    ambient.extend(feature.iter().map(|f| f * scale));
    Ok(TangentVector {
        base: LorentzPoint::origin(feature.len(), k),
        ambient,
    })
}

/// Exponential map of `v` at `base`; the result is reprojected.
pub fn exp_map(base: &LorentzPoint, v: &TangentVector, k: Curvature) -> Result<LorentzPoint> {
    check_tangent(base, &v.ambient)?;
    Ok(exp_map_unchecked(base, &v.ambient, k))
}

pub(crate) fn exp_map_unchecked(base: &LorentzPoint, v: &[f64], k: Curvature) -> LorentzPoint {
    LorentzPoint {
        coords: kernels::exp_map(&base.coords, v, k.kappa),
    }
}

/// Logarithmic map: the tangent vector at `base` whose exponential is `x`.
pub fn log_map(base: &LorentzPoint, x: &LorentzPoint, k: Curvature) -> Result<TangentVector> {
    for (name, p) in [("base", base), ("target", x)] {
        if !p.is_on_manifold(k) {
            return Err(HfmError::invalid(format!(
                "{name} is off the manifold for kappa={} (residual {:e})",
                k.kappa,
                p.residual(k)
            )));
        }
    }
    if base.coords.len() != x.coords.len() {
        return Err(HfmError::invalid("dimension mismatch"));
    }
    Ok(TangentVector {
        base: base.clone(),
        ambient: kernels::log_map(&base.coords, &x.coords, k.kappa),
    })
}

/// Orthogonal projection of an ambient vector onto the tangent space at `base`.
pub fn tangent_project(base: &LorentzPoint, a: &[f64], k: Curvature) -> TangentVector {
    assert_eq!(a.len(), base.coords.len(), "ambient dimension mismatch");
    TangentVector {
        base: base.clone(),
        ambient: kernels::project(&base.coords, a, k.kappa),
    }
}

/// Point at fraction `t` of the way along the geodesic from `x0` to `x1`.
pub fn geodesic_interpolate(
    x0: &LorentzPoint,
    x1: &LorentzPoint,
    t: f64,
    k: Curvature,
) -> Result<LorentzPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HfmError::invalid(format!("t must lie in [0, 1], got {t}")));
    }
    let dir = log_map(x0, x1, k)?;
    let v: Vec<f64> = dir.ambient.iter().map(|a| a * t).collect();
    Ok(exp_map_unchecked(x0, &v, k))
}

/// Keep the space part, recompute the time coordinate.
pub fn reproject_to_manifold(a: &[f64], k: Curvature) -> Result<LorentzPoint> {
    if a.len() < 2 {
        return Err(HfmError::invalid("ambient dimension must be >= 2"));
    }
    LorentzPoint::from_space(&a[1..], k)
}

fn reproject_to_manifold_unchecked(space: &[f64], k: Curvature) -> LorentzPoint {
    LorentzPoint {
        coords: kernels::reproject(space, k.kappa),
    }
}

/// Tangent vectors at the origin lifted from a Euclidean feature, then mapped
/// onto the manifold. Shorthand for `exp_0(lift(feature, scale))`.
pub fn embed_feature(feature: &[f64], scale: f64, k: Curvature) -> Result<LorentzPoint> {
    let v = lift_to_tangent_at_origin(feature, scale, k)?;
    Ok(exp_map_unchecked(v.base(), v.ambient(), k))
}
