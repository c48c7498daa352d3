//! Scalar potentials `u` with gradient and Laplacian.
//!
//! A [`PotentialField`] is immutable once built and cheap to clone; every
//! evaluation is a pure function of the point, so fields can be shared across
//! threads freely.

use std::sync::Arc;

use thiserror::Error;

use crate::expr::{DomainError, Expr, ParseError};
use crate::fans::{FanField, SeparatedPotential};
use crate::geom::{kronecker_lattice, Aabb};
use crate::grid::GridSamples;
use crate::piecewise::Region;
use crate::scalar::{lit, norm, to_f64, Real};

/// `u`, `∇u` and `Δu` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval<T> {
    pub u: T,
    pub grad: Vec<T>,
    pub lap: T,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("point {point:?} lies outside the field's domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("point {point:?} lies on face {face} where the gradient jumps")]
    FacePoint { face: usize, point: Vec<f64> },
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid mollifier: {0}")]
    InvalidMollifier(String),
    #[error("mollifier stencil leaves the evaluable region: {0}")]
    StencilOutside(String),
    #[error("invalid field definition: {0}")]
    Invalid(String),
}

/// How gradients and Laplacians of an expression field are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Symbolic,
    /// Central differences with step `1e-5 (1 + |x|)` for the gradient and
    /// `1e-4 (1 + |x|)` for second differences.
    FiniteDifference,
}

#[derive(Debug, Clone)]
struct ExprField {
    u: Expr,
    grad: Vec<Expr>,
    lap: Expr,
    mode: DerivativeMode,
}

#[derive(Debug, Clone)]
enum Form<T> {
    Expression(Arc<ExprField>),
    Affine { slope: Vec<T>, offset: T },
    Separated(Arc<SeparatedPotential>),
    Fan(Arc<FanField<T>>),
    Mollified(Arc<Mollified<T>>),
    Sampled(Arc<GridSamples<T>>),
    Cells(Arc<Vec<(Region<T>, PotentialField<T>)>>),
}

#[derive(Debug, Clone)]
struct Mollified<T> {
    base: PotentialField<T>,
    width: T,
    offsets: Vec<Vec<T>>,
    weights: Vec<T>,
    dweights: Vec<Vec<T>>,
}

/// Witness that `|∇u| >= m` held at every point of a sampling plan over a region.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBound<T> {
    pub m: T,
    pub argmin: Vec<T>,
    pub region: Aabb<T>,
    pub samples: usize,
}

/// A scalar potential on a box (or all of space when no domain is set).
#[derive(Debug, Clone)]
pub struct PotentialField<T> {
    dim: usize,
    domain: Option<Aabb<T>>,
    form: Form<T>,
    certificate: Option<GradientBound<T>>,
}

impl<T: Real> PotentialField<T> {
    /// Parses an expression over `x1..x{dim}` with symbolic derivatives.
    pub fn parse(src: &str, dim: usize) -> Result<Self, FieldError> {
        let e = Expr::parse(src, dim)?;
        Ok(Self::from_expr(e, dim, DerivativeMode::Symbolic))
    }

    pub fn from_expr(u: Expr, dim: usize, mode: DerivativeMode) -> Self {
        let (grad, lap) = match mode {
            DerivativeMode::Symbolic => {
                let grad: Vec<Expr> = (0..dim).map(|i| u.derivative(i)).collect();
                (grad, u.laplacian(dim))
            }
            DerivativeMode::FiniteDifference => (Vec::new(), Expr::Const(0.0)),
        };
        PotentialField {
            dim,
            domain: None,
            form: Form::Expression(Arc::new(ExprField { u, grad, lap, mode })),
            certificate: None,
        }
    }

    /// `u(x) = slope . x + offset`.
    pub fn affine(slope: Vec<T>, offset: T) -> Self {
        PotentialField {
            dim: slope.len(),
            domain: None,
            form: Form::Affine { slope, offset },
            certificate: None,
        }
    }

    pub fn separated(sp: SeparatedPotential) -> Self {
        PotentialField {
            dim: sp.dim(),
            domain: None,
            form: Form::Separated(Arc::new(sp)),
            certificate: None,
        }
    }

    pub fn fan(fan: FanField<T>) -> Self {
        PotentialField {
            dim: 2,
            domain: None,
            form: Form::Fan(Arc::new(fan)),
            certificate: None,
        }
    }

    /// Piecewise potential over disjoint planar regions. Points within
    /// `1e-12 (1 + |x|)` of a region boundary are reported as face points.
    pub fn cells(cells: Vec<(Region<T>, PotentialField<T>)>) -> Self {
        PotentialField {
            dim: 2,
            domain: None,
            form: Form::Cells(Arc::new(cells)),
            certificate: None,
        }
    }

    /// Samples this field's `u` on a grid of spacing `h` over `bbox` and
    /// returns the interpolating field.
    pub fn sampled(&self, bbox: Aabb<T>, h: T) -> Result<Self, FieldError> {
        if bbox.dim() != self.dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim,
                got: bbox.dim(),
            });
        }
        let grid = GridSamples::sample(bbox.clone(), h, |x| self.eval(x).map(|e| e.u))?;
        Ok(PotentialField {
            dim: self.dim,
            domain: Some(bbox),
            form: Form::Sampled(Arc::new(grid)),
            certificate: None,
        })
    }

    /// Restricts evaluation to `domain`.
    pub fn with_domain(mut self, domain: Aabb<T>) -> Self {
        assert_eq!(domain.dim(), self.dim, "domain dimension mismatch");
        self.domain = Some(domain);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Option<&Aabb<T>> {
        self.domain.as_ref()
    }

    pub fn certificate(&self) -> Option<&GradientBound<T>> {
        self.certificate.as_ref()
    }

    /// Short human-readable name of the field's form.
    pub fn kind(&self) -> &'static str {
        match &self.form {
            Form::Expression(e) if e.mode == DerivativeMode::Symbolic => "expression",
            Form::Expression(_) => "expression (finite differences)",
            Form::Affine { .. } => "affine",
            Form::Separated(_) => "separated",
            Form::Fan(_) => "fan",
            Form::Mollified(_) => "mollified",
            Form::Sampled(_) => "sampled",
            Form::Cells(_) => "piecewise",
        }
    }

    /// The symbolic expression behind an expression field.
    pub fn expression(&self) -> Option<&Expr> {
        match &self.form {
            Form::Expression(e) => Some(&e.u),
            _ => None,
        }
    }

    /// The constant gradient of an affine field, including expressions whose
    /// first derivatives are all constant.
    pub fn affine_gradient(&self) -> Option<Vec<T>> {
        match &self.form {
            Form::Affine { slope, .. } => Some(slope.clone()),
            Form::Expression(e) if e.mode == DerivativeMode::Symbolic => e
                .grad
                .iter()
                .map(|g| {
                    if g.is_constant() {
                        g.eval(&[]).ok()
                    } else {
                        None
                    }
                })
                .collect(),
            _ => None,
        }
    }

    /// Regions on which the field is smooth, for piecewise and fan fields.
    pub fn pieces(&self) -> Option<Vec<Region<T>>> {
        match &self.form {
            Form::Cells(c) => Some(c.iter().map(|(r, _)| r.clone()).collect()),
            Form::Fan(f) => Some(f.regions().into_iter().map(Region::Convex).collect()),
            Form::Separated(sp) if sp.dim() == 2 => {
                Some(sp.regions().into_iter().map(Region::Convex).collect())
            }
            _ => None,
        }
    }

    /// `true` when `Δu` is identically zero by construction (affine and fan
    /// fields, and expressions whose symbolic Laplacian folds to 0).
    pub fn is_harmonic_by_construction(&self) -> bool {
        match &self.form {
            Form::Affine { .. } | Form::Fan(_) => true,
            Form::Expression(e) => {
                e.mode == DerivativeMode::Symbolic && e.lap.as_const() == Some(0.0)
            }
            _ => false,
        }
    }

    pub fn contains(&self, x: &[T]) -> bool {
        self.domain.as_ref().is_none_or(|d| d.contains(x))
    }

    /// Evaluates `(u, ∇u, Δu)` at `x`.
    pub fn eval(&self, x: &[T]) -> Result<Eval<T>, FieldError> {
        if x.len() != self.dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(FieldError::OutsideDomain {
                point: x.iter().map(|&v| to_f64(v)).collect(),
            });
        }
        match &self.form {
            Form::Expression(ef) => eval_expression(ef, self.dim, x),
            Form::Affine { slope, offset } => Ok(Eval {
                u: crate::scalar::dot(slope, x) + *offset,
                grad: slope.clone(),
                lap: T::zero(),
            }),
            Form::Separated(sp) => sp.eval(x),
            Form::Fan(fan) => fan.eval(x),
            Form::Mollified(m) => {
                let mut out = Eval {
                    u: T::zero(),
                    grad: vec![T::zero(); self.dim],
                    lap: T::zero(),
                };
                let mut y = vec![T::zero(); self.dim];
                // one derivative sits on the kernel, so ∇u_n stays Lipschitz
                // and Δu_n keeps the singular part of Δu on kinks
                for ((off, &w), d) in m.offsets.iter().zip(&m.weights).zip(&m.dweights) {
                    for i in 0..self.dim {
                        y[i] = x[i] - off[i];
                    }
                    let e = m.base.eval(&y)?;
                    out.u += w * e.u;
                    for i in 0..self.dim {
                        out.grad[i] += d[i] * e.u;
                        out.lap += d[i] * e.grad[i];
                    }
                }
                Ok(out)
            }
            Form::Sampled(g) => {
                let r = g.interpolate(x).ok_or_else(|| FieldError::OutsideDomain {
                    point: x.iter().map(|&v| to_f64(v)).collect(),
                })?;
                Ok(Eval {
                    u: r.value,
                    grad: r.grad,
                    lap: r.lap,
                })
            }
            Form::Cells(cells) => {
                let p = [x[0], x[1]];
                let mut best: Option<(usize, T)> = None;
                for (i, (r, _)) in cells.iter().enumerate() {
                    let d = r.depth(p)?;
                    if best.is_none_or(|(_, b)| d > b) {
                        best = Some((i, d));
                    }
                }
                let tol = lit::<T>(1e-12) * (T::one() + norm(x));
                let point = || x.iter().map(|&v| to_f64(v)).collect();
                match best {
                    Some((i, d)) if d > tol => cells[i].1.eval(x),
                    Some((i, d)) if d >= -tol => Err(FieldError::FacePoint {
                        face: i,
                        point: point(),
                    }),
                    _ => Err(FieldError::OutsideDomain { point: point() }),
                }
            }
        }
    }

    /// Discrete convolution with a smooth unit-mass bump of radius
    /// `spec.width`. The result is defined on the base domain shrunk by the
    /// width.
    pub fn mollify(&self, spec: &MollifierSpec) -> Result<Self, FieldError> {
        let width: T = lit(spec.width);
        let (offsets, weights, dweights) = spec.stencil::<T>(self.dim)?;
        let domain = match &self.domain {
            Some(d) => {
                let inner = d.inflate(-width);
                if !inner.is_valid() {
                    return Err(FieldError::StencilOutside(format!(
                        "domain is thinner than twice the mollifier width {}",
                        spec.width
                    )));
                }
                Some(inner)
            }
            None => None,
        };
        Ok(PotentialField {
            dim: self.dim,
            domain,
            form: Form::Mollified(Arc::new(Mollified {
                base: self.clone(),
                width,
                offsets,
                weights,
                dweights,
            })),
            certificate: None,
        })
    }

    /// Mollifier width if this is a mollified field.
    pub fn mollifier_width(&self) -> Option<T> {
        match &self.form {
            Form::Mollified(m) => Some(m.width),
            _ => None,
        }
    }

    /// Checks `|∇u| >= plan.threshold` over `region` and records the witness.
    pub fn certify(mut self, region: &Aabb<T>, plan: &SamplingPlan) -> Result<Self, BoundError<T>> {
        let bound = check_gradient_bound(&self, region, plan)?;
        self.certificate = Some(bound);
        Ok(self)
    }
}

fn eval_expression<T: Real>(ef: &ExprField, dim: usize, x: &[T]) -> Result<Eval<T>, FieldError> {
    let u = ef.u.eval(x)?;
    match ef.mode {
        DerivativeMode::Symbolic => {
            let mut grad = Vec::with_capacity(dim);
            for g in &ef.grad {
                grad.push(g.eval(x)?);
            }
            Ok(Eval {
                u,
                grad,
                lap: ef.lap.eval(x)?,
            })
        }
        DerivativeMode::FiniteDifference => {
            let scale = T::one() + norm(x);
            let h1 = lit::<T>(1e-5) * scale;
            let h2 = lit::<T>(1e-4) * scale;
            let mut y = x.to_vec();
            let mut grad = Vec::with_capacity(dim);
            let mut lap = T::zero();
            for i in 0..dim {
                y[i] = x[i] + h1;
                let up = ef.u.eval(&y)?;
                y[i] = x[i] - h1;
                let dn = ef.u.eval(&y)?;
                grad.push((up - dn) / (h1 + h1));
                y[i] = x[i] + h2;
                let up2 = ef.u.eval(&y)?;
                y[i] = x[i] - h2;
                let dn2 = ef.u.eval(&y)?;
                lap += (up2 - u - u + dn2) / (h2 * h2);
                y[i] = x[i];
            }
            Ok(Eval { u, grad, lap })
        }
    }
}

/// Smooth bump `exp(-1/(1 - |y/w|^2))` on the ball of radius `w`,
/// discretized at the midpoints of a 9-per-axis tensor stencil over
/// `[-w, w]^d` and normalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    pub width: f64,
}

impl MollifierSpec {
    pub const NODES_PER_AXIS: usize = 9;

    pub fn new(width: f64) -> Result<Self, FieldError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(FieldError::InvalidMollifier(format!(
                "width must be positive and finite, got {width}"
            )));
        }
        Ok(MollifierSpec { width })
    }

    /// Stencil offsets and nonnegative weights summing to one.
    pub fn kernel<T: Real>(&self, dim: usize) -> Result<(Vec<Vec<T>>, Vec<T>), FieldError> {
        let (offsets, weights, _) = self.stencil(dim)?;
        Ok((offsets, weights))
    }

    /// Offsets, weights, and per-node weights of the kernel gradient. The
    /// gradient weights are scaled so that `Σ d_i u(x − y_i)` reproduces the
    /// gradient of any affine `u` exactly.
    pub fn stencil<T: Real>(
        &self,
        dim: usize,
    ) -> Result<(Vec<Vec<T>>, Vec<T>, Vec<Vec<T>>), FieldError> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(FieldError::InvalidMollifier(format!(
                "width must be positive and finite, got {}",
                self.width
            )));
        }
        let k = Self::NODES_PER_AXIS;
        let axis: Vec<f64> = (0..k)
            .map(|i| -1.0 + (2 * i + 1) as f64 / k as f64)
            .collect();
        let total = k.pow(dim as u32);
        let mut nodes: Vec<Vec<f64>> = Vec::new();
        let mut raw = Vec::new();
        let mut slope = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let s: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            let r2: f64 = s.iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                let rho = (-1.0 / (1.0 - r2)).exp();
                raw.push(rho);
                // ∇ρ up to a positive factor
                slope.push(
                    s.iter()
                        .map(|&v| -v * rho / ((1.0 - r2) * (1.0 - r2)))
                        .collect::<Vec<f64>>(),
                );
                nodes.push(s.iter().map(|&v| v * self.width).collect());
            }
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < k {
                    break;
                }
                idx[a] = 0;
            }
        }
        let mass: f64 = raw.iter().sum();
        let norms: Vec<f64> = (0..dim)
            .map(|a| {
                -nodes
                    .iter()
                    .zip(&slope)
                    .map(|(y, g)| g[a] * y[a])
                    .sum::<f64>()
            })
            .collect();
        let weights = raw.into_iter().map(|w| lit::<T>(w / mass)).collect();
        let dweights = slope
            .iter()
            .map(|g| (0..dim).map(|a| lit::<T>(g[a] / norms[a])).collect())
            .collect();
        let offsets = nodes
            .iter()
            .map(|y| y.iter().map(|&v| lit::<T>(v)).collect())
            .collect();
        Ok((offsets, weights, dweights))
    }
}

/// Where `|∇u|` is sampled when certifying a lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// Number of low-discrepancy lattice points.
    pub count: usize,
    /// Refine the smallest lattice values with a bounded pattern search.
    pub polish: bool,
    /// Minimum acceptable bound.
    pub threshold: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            count: 10_000,
            polish: true,
            threshold: 1e-6,
        }
    }
}

/// Offending point when `|∇u|` drops below the plan's threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundFailure<T> {
    pub point: Vec<T>,
    pub value: T,
    pub threshold: T,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError<T: std::fmt::Debug + std::fmt::LowerExp> {
    #[error("|grad u| = {:e} below threshold {:e} at {:?}", .0.value, .0.threshold, .0.point)]
    BelowThreshold(GradientBoundFailure<T>),
    #[error(transparent)]
    Eval(#[from] FieldError),
    #[error("region does not match the field (dimension or extent)")]
    BadRegion,
}

/// Minimum of `|∇u|` over a deterministic lattice on `region`, optionally
/// polished by a local search. Points on faces of piecewise fields are skipped.
pub fn check_gradient_bound<T: Real>(
    field: &PotentialField<T>,
    region: &Aabb<T>,
    plan: &SamplingPlan,
) -> Result<GradientBound<T>, BoundError<T>> {
    if region.dim() != field.dim() || !region.is_valid() {
        return Err(BoundError::BadRegion);
    }
    let grad_norm = |x: &[T]| -> Result<Option<T>, FieldError> {
        match field.eval(x) {
            Ok(e) => Ok(Some(norm(&e.grad))),
            Err(FieldError::FacePoint { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut scored: Vec<(T, Vec<T>)> = Vec::new();
    let lattice = kronecker_lattice(field.dim(), plan.count.max(1));
    let mut corners = Vec::new();
    for mask in 0..(1usize << field.dim()) {
        corners.push(
            (0..field.dim())
                .map(|a| {
                    if mask >> a & 1 == 1 {
                        region.hi[a]
                    } else {
                        region.lo[a]
                    }
                })
                .collect::<Vec<T>>(),
        );
    }
    let points = lattice
        .iter()
        .map(|u| region.from_unit(&u.iter().map(|&v| lit::<T>(v)).collect::<Vec<_>>()))
        .chain(corners);
    for p in points {
        if let Some(g) = grad_norm(&p)? {
            scored.push((g, p));
        }
    }
    if scored.is_empty() {
        return Err(BoundError::BadRegion);
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut best = scored[0].clone();
    if plan.polish {
        for (g0, p0) in scored.iter().take(4) {
            let (g, p) = polish_min(&grad_norm, region, *g0, p0.clone(), plan.count)?;
            if g < best.0 {
                best = (g, p);
            }
        }
    }
    let threshold: T = lit(plan.threshold);
    if best.0 < threshold {
        return Err(BoundError::BelowThreshold(GradientBoundFailure {
            point: best.1,
            value: best.0,
            threshold,
        }));
    }
    Ok(GradientBound {
        m: best.0,
        argmin: best.1,
        region: region.clone(),
        samples: plan.count,
    })
}

fn polish_min<T: Real>(
    f: &dyn Fn(&[T]) -> Result<Option<T>, FieldError>,
    region: &Aabb<T>,
    mut best: T,
    mut x: Vec<T>,
    count: usize,
) -> Result<(T, Vec<T>), FieldError> {
    let d = x.len();
    let spacing = lit::<T>(1.0 / (count as f64).powf(1.0 / d as f64));
    let mut step: Vec<T> = (0..d)
        .map(|a| (region.hi[a] - region.lo[a]) * spacing)
        .collect();
    let floor: Vec<T> = (0..d)
        .map(|a| (region.hi[a] - region.lo[a]) * lit(1e-13))
        .collect();
    let mut iters = 0;
    while step.iter().zip(&floor).any(|(s, f)| s > f) && iters < 2000 {
        iters += 1;
        let mut improved = false;
        for a in 0..d {
            for sgn in [T::one(), -T::one()] {
                let mut y = x.clone();
                y[a] += sgn * step[a];
                region.clamp(&mut y);
                if let Some(v) = f(&y)? {
                    if v < best {
                        best = v;
                        x = y;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            for s in step.iter_mut() {
                *s *= lit(0.5);
            }
        }
    }
    Ok((best, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(src: &str, d: usize) -> PotentialField<f64> {
        PotentialField::parse(src, d).unwrap()
    }

    #[test]
    fn affine_eval() {
        let f = PotentialField::affine(vec![2.0, 1.0], 0.0);
        let e = f.eval(&[1.0, 1.0]).unwrap();
        assert_eq!((e.u, e.grad.clone(), e.lap), (3.0, vec![2.0, 1.0], 0.0));
    }

    #[test]
    fn quadratic_eval() {
        let e = field("x1 + x2^2/4", 2).eval(&[0.0, 2.0]).unwrap();
        assert_eq!(e.u, 1.0);
        assert_eq!(e.grad, vec![1.0, 1.0]);
        assert_eq!(e.lap, 0.5);
    }

    #[test]
    fn sampled_wrapper_matches_symbolic() {
        let f = field("x1 + 0.5*sin(x2)", 2);
        let s = f.sampled(Aabb::cube(2, 1.0), 0.01).unwrap();
        let x = [0.3, 0.7];
        let (a, b) = (f.eval(&x).unwrap(), s.eval(&x).unwrap());
        assert!((a.u - b.u).abs() < 1e-3);
        assert!(a
            .grad
            .iter()
            .zip(&b.grad)
            .all(|(p, q)| (p - q).abs() < 1e-3));
        assert!((a.lap - b.lap).abs() < 1e-3);
    }

    #[test]
    fn finite_difference_mode_tracks_symbolic() {
        let e = Expr::parse("exp(x1)*cos(x2) + x1^3", 2).unwrap();
        let sym = PotentialField::<f64>::from_expr(e.clone(), 2, DerivativeMode::Symbolic);
        let fd = PotentialField::<f64>::from_expr(e, 2, DerivativeMode::FiniteDifference);
        let x = [0.4, -0.3];
        let (a, b) = (sym.eval(&x).unwrap(), fd.eval(&x).unwrap());
        assert!(a
            .grad
            .iter()
            .zip(&b.grad)
            .all(|(p, q)| (p - q).abs() < 1e-8));
        assert!((a.lap - b.lap).abs() < 1e-6);
    }

    #[test]
    fn domain_is_enforced() {
        let f = field("x1", 1).with_domain(Aabb::cube(1, 1.0));
        assert!(matches!(
            f.eval(&[2.0]),
            Err(FieldError::OutsideDomain { .. })
        ));
        assert!(matches!(
            f.eval(&[0.0, 0.0]),
            Err(FieldError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_weights_are_a_probability() {
        for d in 1..=3 {
            let (off, w) = MollifierSpec::new(0.1).unwrap().kernel::<f64>(d).unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(off.iter().all(|o| norm(o) < 0.1));
        }
        assert!(MollifierSpec::new(0.0).is_err());
        assert!(MollifierSpec::new(-1.0).is_err());
    }

    #[test]
    fn mollified_affine_is_exact() {
        let f = field("3*x1 - 2*x2 + 1", 2).with_domain(Aabb::cube(2, 2.0));
        let m = f.mollify(&MollifierSpec::new(0.3).unwrap()).unwrap();
        let e = m.eval(&[0.2, -0.4]).unwrap();
        assert!((e.grad[0] - 3.0).abs() < 1e-10 && (e.grad[1] + 2.0).abs() < 1e-10);
        assert!((e.u - (0.6 + 0.8 + 1.0)).abs() < 1e-10);
        assert!(e.lap.abs() < 1e-10);
    }

    #[test]
    fn mollified_abs_away_from_kink() {
        let f = field("abs(x1)", 1).with_domain(Aabb::cube(1, 3.0));
        let m = f.mollify(&MollifierSpec::new(0.1).unwrap()).unwrap();
        assert!((m.eval(&[1.0]).unwrap().grad[0] - 1.0).abs() < 1e-10);
        // at the kink the mollified slope is an average of -1 and 1
        assert!(m.eval(&[0.0]).unwrap().grad[0].abs() < 1e-12);
    }

    #[test]
    fn mollified_abs_slope_is_continuous() {
        let m = field("abs(x1)", 1)
            .mollify(&MollifierSpec::new(0.1).unwrap())
            .unwrap();
        let mut prev = m.eval(&[-0.15]).unwrap().grad[0];
        let mut mass = 0.0;
        let n = 3000;
        let h = 0.3 / n as f64;
        for i in 1..=n {
            let x = -0.15 + h * i as f64;
            let e = m.eval(&[x]).unwrap();
            assert!((e.grad[0] - prev).abs() < 0.02, "jump at {x}");
            prev = e.grad[0];
            mass += e.lap * h;
        }
        // the kink carries Δ|x| = 2δ
        assert!((mass - 2.0).abs() < 1e-2, "mass {mass}");
    }

    #[test]
    fn mollified_quadratic_is_exact() {
        let m = field("x1^2 + 3*x1*x2", 2)
            .mollify(&MollifierSpec::new(0.2).unwrap())
            .unwrap();
        let e = m.eval(&[0.3, -0.7]).unwrap();
        assert!((e.grad[0] - (0.6 - 2.1)).abs() < 1e-12);
        assert!((e.grad[1] - 0.9).abs() < 1e-12);
        assert!((e.lap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_domain_errors() {
        let f = field("x1", 1).with_domain(Aabb::cube(1, 0.05));
        assert!(matches!(
            f.mollify(&MollifierSpec::new(0.1).unwrap()),
            Err(FieldError::StencilOutside(_))
        ));
        let g = field("x1", 1).with_domain(Aabb::cube(1, 1.0));
        let m = g.mollify(&MollifierSpec::new(0.1).unwrap()).unwrap();
        assert!(m.eval(&[0.95]).is_err());
    }

    #[test]
    fn gradient_bound_examples() {
        let plan = SamplingPlan::default();
        let lin = PotentialField::affine(vec![1.0, 1.0], 0.0);
        let b = check_gradient_bound(&lin, &Aabb::cube(2, 3.0), &plan).unwrap();
        assert!((b.m - 2f64.sqrt()).abs() < 1e-15);

        let s = field("x1 + 0.5*sin(x2)", 2);
        let b = check_gradient_bound(&s, &Aabb::cube(2, 2.0), &plan).unwrap();
        assert!((b.m - 1.0).abs() < 1e-9, "m = {}", b.m);

        let q = field("x1^2 + x2^2", 2);
        match check_gradient_bound(&q, &Aabb::cube(2, 1.0), &plan) {
            Err(BoundError::BelowThreshold(f)) => assert!(norm(&f.point) < 1e-5),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn mollified_sine_keeps_positive_bound() {
        let f = field("x1 + 0.5*sin(x2)", 2).with_domain(Aabb::cube(2, 3.0));
        let m = f.mollify(&MollifierSpec::new(0.1).unwrap()).unwrap();
        let plan = SamplingPlan {
            count: 2000,
            ..SamplingPlan::default()
        };
        let b = check_gradient_bound(&m, &Aabb::cube(2, 2.0), &plan).unwrap();
        assert!(b.m >= 0.8);
    }
}
