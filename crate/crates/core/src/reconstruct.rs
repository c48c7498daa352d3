//! Flow-based conductivity `σ(x) = exp(∫₀^τ(x) Δu(X(s, x)) ds)` and the
//! conductivity fields consumed by verification.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{DomainError, Expr, ParseError};
use crate::fans::{SeparatedError, SeparatedPotential};
use crate::field::{FieldError, PotentialField};
use crate::flow::{integrate_flow, trajectory_to_level_set, FlowError, FlowOptions};
use crate::geom::Aabb;
use crate::grid::GridSamples;
use crate::piecewise::{PiecewiseSigma, Region, TransportError};
use crate::scalar::{lit, norm, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Separated(#[from] SeparatedError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("σ = {value} is not positive at {point:?}")]
    NonPositive { point: Vec<f64>, value: f64 },
    #[error("no σ value at {point:?}")]
    Hole { point: Vec<f64> },
    #[error("bad table: {0}")]
    Table(String),
}

type SigmaFn<T> = dyn Fn(&[T]) -> Option<T> + Send + Sync;

#[derive(Clone)]
enum Form<T> {
    Flow {
        field: PotentialField<T>,
        options: FlowOptions,
    },
    Constant(T),
    Expression(Arc<Expr>),
    Function(Arc<SigmaFn<T>>),
    Sampled(Arc<GridSamples<T>>),
    Piecewise(Arc<PiecewiseSigma<T>>),
    Separated {
        sp: Arc<SeparatedPotential>,
        options: FlowOptions,
    },
    Scaled {
        inner: Arc<ConductivityField<T>>,
        factor: T,
    },
}

impl<T: fmt::Debug> fmt::Debug for Form<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Form::Flow { .. } => f.write_str("Flow"),
            Form::Constant(c) => write!(f, "Constant({c:?})"),
            Form::Expression(e) => write!(f, "Expression({e})"),
            Form::Function(_) => f.write_str("Function"),
            Form::Sampled(_) => f.write_str("Sampled"),
            Form::Piecewise(_) => f.write_str("Piecewise"),
            Form::Separated { .. } => f.write_str("Separated"),
            Form::Scaled { inner, factor } => write!(f, "Scaled({inner:?}, {factor:?})"),
        }
    }
}

/// A positive conductivity `σ` in one of several representations, with an
/// optional `(σ_min, σ_max)` witness over the region it was built on.
#[derive(Debug, Clone)]
pub struct ConductivityField<T> {
    form: Form<T>,
    witness: Option<(T, T)>,
}

impl<T: Real> ConductivityField<T> {
    /// `σ` from the flow of `field` to its zero level set.
    pub fn flow(field: PotentialField<T>, options: FlowOptions) -> Self {
        Self::from_form(Form::Flow { field, options })
    }

    pub fn constant(c: T) -> Self {
        ConductivityField {
            form: Form::Constant(c),
            witness: Some((c, c)),
        }
    }

    pub fn expression(e: Expr) -> Self {
        Self::from_form(Form::Expression(Arc::new(e)))
    }

    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(Self::expression(Expr::parse(src, dim)?))
    }

    /// Any closure; `None` marks a point where `σ` is unavailable.
    pub fn function<F: Fn(&[T]) -> Option<T> + Send + Sync + 'static>(f: F) -> Self {
        Self::from_form(Form::Function(Arc::new(f)))
    }

    pub fn sampled(grid: GridSamples<T>) -> Self {
        let lo = grid.values().iter().copied().fold(T::infinity(), T::min);
        let hi = grid
            .values()
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        ConductivityField {
            form: Form::Sampled(Arc::new(grid)),
            witness: Some((lo, hi)),
        }
    }

    pub fn piecewise(sigma: PiecewiseSigma<T>) -> Self {
        Self::from_form(Form::Piecewise(Arc::new(sigma)))
    }

    pub fn separated(sp: SeparatedPotential, options: FlowOptions) -> Self {
        Self::from_form(Form::Separated {
            sp: Arc::new(sp),
            options,
        })
    }

    /// `factor · σ`.
    pub fn scaled(&self, factor: T) -> Self {
        ConductivityField {
            witness: self.witness.map(|(a, b)| (a * factor, b * factor)),
            form: Form::Scaled {
                inner: Arc::new(self.clone()),
                factor,
            },
        }
    }

    fn from_form(form: Form<T>) -> Self {
        ConductivityField {
            form,
            witness: None,
        }
    }

    pub fn with_witness(mut self, lo: T, hi: T) -> Self {
        self.witness = Some((lo, hi));
        self
    }

    pub fn witness(&self) -> Option<(T, T)> {
        self.witness
    }

    pub fn kind(&self) -> &'static str {
        match &self.form {
            Form::Flow { .. } => "flow",
            Form::Constant(_) => "constant",
            Form::Expression(_) => "expression",
            Form::Function(_) => "function",
            Form::Sampled(_) => "sampled",
            Form::Piecewise(_) => "piecewise",
            Form::Separated { .. } => "separated",
            Form::Scaled { inner, .. } => inner.kind(),
        }
    }

    pub fn as_piecewise(&self) -> Option<&PiecewiseSigma<T>> {
        match &self.form {
            Form::Piecewise(p) => Some(p),
            Form::Scaled { inner, .. } => inner.as_piecewise(),
            _ => None,
        }
    }

    /// Regions on which `σ` is smooth, when it jumps across known faces.
    pub fn pieces(&self) -> Option<Vec<Region<T>>> {
        match &self.form {
            Form::Piecewise(p) => {
                Some(p.decomposition().cells.iter().map(|c| c.region()).collect())
            }
            Form::Separated { sp, .. } if sp.dim() == 2 => {
                Some(sp.regions().into_iter().map(Region::Convex).collect())
            }
            Form::Scaled { inner, .. } => inner.pieces(),
            _ => None,
        }
    }

    /// `σ(x)`; fails on non-positive values.
    pub fn eval(&self, x: &[T]) -> Result<T, ReconstructError> {
        let v = match &self.form {
            Form::Flow { field, options } => reconstruct_sigma(field, x, options)?,
            Form::Constant(c) => *c,
            Form::Expression(e) => e.eval(x)?,
            Form::Function(f) => {
                f(x).ok_or_else(|| ReconstructError::Hole { point: to_vec64(x) })?
            }
            Form::Sampled(g) => {
                g.interpolate(x)
                    .ok_or_else(|| ReconstructError::Hole { point: to_vec64(x) })?
                    .value
            }
            Form::Piecewise(p) => p.eval([x[0], x[1]])?,
            Form::Separated { sp, options } => sp.sigma(x, options)?,
            Form::Scaled { inner, factor } => inner.eval(x)? * *factor,
        };
        if !(v > T::zero()) {
            return Err(ReconstructError::NonPositive {
                point: to_vec64(x),
                value: to_f64(v),
            });
        }
        Ok(v)
    }

    /// `σ` at `x` taken from piece `i` of [`Self::pieces`], so that points on
    /// a face get the one-sided value.
    pub fn eval_in_piece(&self, i: usize, x: &[T]) -> Result<T, ReconstructError> {
        match &self.form {
            Form::Piecewise(p) => Ok(p.eval_in_cell(i, [x[0], x[1]])?),
            Form::Separated { sp, options } => {
                // nudge off the interface toward the requested side
                let mut y = x.to_vec();
                if y[0] == T::zero() {
                    y[0] = if i == 0 {
                        T::min_positive_value()
                    } else {
                        -T::min_positive_value()
                    };
                }
                Ok(sp.sigma(&y, options)?)
            }
            Form::Scaled { inner, factor } => Ok(inner.eval_in_piece(i, x)? * *factor),
            _ => self.eval(x),
        }
    }
}

fn to_vec64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|&v| to_f64(v)).collect()
}

/// `σ(x) = exp(I(τ(x)))`, normalized to 1 on `{u = 0}`.
pub fn reconstruct_sigma<T: Real>(
    field: &PotentialField<T>,
    x: &[T],
    opts: &FlowOptions,
) -> Result<T, FlowError> {
    let tr = trajectory_to_level_set(field, x, opts)?;
    Ok(tr.last().integral.exp())
}

/// `γ(X(τ)) exp(I(τ(x)))` for positive data `γ` on `{u = 0}`.
pub fn reconstruct_sigma_with_data<T: Real>(
    field: &PotentialField<T>,
    x: &[T],
    gamma: &dyn Fn(&[T]) -> T,
    opts: &FlowOptions,
) -> Result<T, FlowError> {
    let tr = trajectory_to_level_set(field, x, opts)?;
    let end = tr.last();
    Ok(gamma(&end.x) * end.integral.exp())
}

/// `|ln σ(x) − ln σ(X(t, x)) − ∫₀ᵗ Δu(X(s, x)) ds|`.
pub fn flow_relation_residual<T: Real>(
    field: &PotentialField<T>,
    sigma: &ConductivityField<T>,
    x: &[T],
    t: T,
    opts: &FlowOptions,
) -> Result<T, ReconstructError> {
    let tr = integrate_flow(field, x, t, opts)?;
    let end = tr.last();
    let a = sigma.eval(x)?.ln();
    let b = sigma.eval(&end.x)?.ln();
    Ok((a - b - end.integral).abs())
}

/// A grid point where reconstruction failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hole {
    pub index: usize,
    pub point: Vec<f64>,
    pub reason: String,
}

/// σ on a tensor grid with per-point diagnostics.
#[derive(Debug, Clone)]
pub struct GridReconstruction<T> {
    pub bbox: Aabb<T>,
    pub shape: Vec<usize>,
    pub points: Vec<Vec<T>>,
    /// `None` at holes.
    pub sigma: Vec<Option<T>>,
    pub u: Vec<Option<T>>,
    pub grad_norm: Vec<Option<T>>,
    pub holes: Vec<Hole>,
}

impl<T: Real> GridReconstruction<T> {
    pub fn is_clean(&self) -> bool {
        self.holes.is_empty()
    }

    /// `(σ_min, σ_max)` over the successful points.
    pub fn range(&self) -> Option<(T, T)> {
        let mut it = self.sigma.iter().flatten().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(a, b), v| (a.min(v), b.max(v))))
    }

    /// Largest `|σ − exact|` over the successful points.
    pub fn max_error<F: Fn(&[T]) -> T>(&self, exact: F) -> T {
        self.points
            .iter()
            .zip(&self.sigma)
            .filter_map(|(p, s)| s.map(|s| (s - exact(p)).abs()))
            .fold(T::zero(), T::max)
    }

    /// Interpolating conductivity; refuses grids with holes.
    pub fn conductivity(&self) -> Result<ConductivityField<T>, ReconstructError> {
        if let Some(h) = self.holes.first() {
            return Err(ReconstructError::Hole {
                point: h.point.clone(),
            });
        }
        let values = self.sigma.iter().map(|s| s.expect("no holes")).collect();
        let grid = GridSamples::new(self.bbox.clone(), self.shape.clone(), values)
            .map_err(ReconstructError::Table)?;
        Ok(ConductivityField::sampled(grid))
    }

    /// Tab-separated table with header `x1..xd u |grad_u| sigma`; holes are
    /// written as `nan`.
    pub fn to_table(&self) -> String {
        let d = self.bbox.dim();
        let mut out = String::new();
        let head: Vec<String> = (1..=d)
            .map(|i| format!("x{i}"))
            .chain(["u".into(), "|grad_u|".into(), "sigma".into()])
            .collect();
        out.push_str(&head.join("\t"));
        out.push('\n');
        let cell = |v: Option<T>| v.map_or("nan".to_string(), |v| format!("{:.17e}", to_f64(v)));
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|&v| format!("{:.17e}", to_f64(v))).collect();
            row.push(cell(self.u[i]));
            row.push(cell(self.grad_norm[i]));
            row.push(cell(self.sigma[i]));
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Evaluates `σ` at every node of the `shape` grid over `bbox` in parallel.
/// Failures become holes; nothing is extrapolated.
pub fn reconstruct_on_grid<T: Real>(
    field: &PotentialField<T>,
    bbox: &Aabb<T>,
    shape: &[usize],
    opts: &FlowOptions,
) -> GridReconstruction<T> {
    reconstruct_on_grid_with_data(field, bbox, shape, None, opts)
}

/// [`reconstruct_on_grid`] with optional level-set data `γ` (1 if absent).
pub fn reconstruct_on_grid_with_data<T: Real>(
    field: &PotentialField<T>,
    bbox: &Aabb<T>,
    shape: &[usize],
    gamma: Option<&(dyn Fn(&[T]) -> T + Sync)>,
    opts: &FlowOptions,
) -> GridReconstruction<T> {
    let points = bbox.grid(shape);
    let results: Vec<_> = points
        .par_iter()
        .map(|p| {
            let e = field.eval(p);
            let s = match gamma {
                Some(g) => reconstruct_sigma_with_data(field, p, g, opts),
                None => reconstruct_sigma(field, p, opts),
            };
            (e, s)
        })
        .collect();
    let mut out = GridReconstruction {
        bbox: bbox.clone(),
        shape: shape.to_vec(),
        points: Vec::with_capacity(points.len()),
        sigma: Vec::with_capacity(points.len()),
        u: Vec::with_capacity(points.len()),
        grad_norm: Vec::with_capacity(points.len()),
        holes: Vec::new(),
    };
    for (i, (p, (e, s))) in points.into_iter().zip(results).enumerate() {
        match &e {
            Ok(ev) => {
                out.u.push(Some(ev.u));
                out.grad_norm.push(Some(norm(&ev.grad)));
            }
            Err(_) => {
                out.u.push(None);
                out.grad_norm.push(None);
            }
        }
        match s {
            Ok(v) => out.sigma.push(Some(v)),
            Err(err) => {
                out.holes.push(Hole {
                    index: i,
                    point: to_vec64(&p),
                    reason: err.to_string(),
                });
                out.sigma.push(None);
            }
        }
        out.points.push(p);
    }
    out
}

/// Reads a table written by [`GridReconstruction::to_table`] back as a
/// sampled conductivity. The points must form a full tensor grid.
pub fn read_sigma_table<T: Real>(text: &str) -> Result<ConductivityField<T>, ReconstructError> {
    let bad = |m: String| ReconstructError::Table(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty table".into()))?
        .split('\t')
        .collect();
    let d = header.iter().take_while(|h| h.starts_with('x')).count();
    let col = header
        .iter()
        .position(|h| *h == "sigma")
        .ok_or_else(|| bad("no sigma column".into()))?;
    if d == 0 {
        return Err(bad("no coordinate columns".into()));
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} columns", k + 1, cells.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: bad number {s:?}", k + 1)))
        };
        let x = cells[..d]
            .iter()
            .map(|s| num(s))
            .collect::<Result<Vec<_>, _>>()?;
        let s = num(cells[col])?;
        if !(s > 0.0) {
            return Err(bad(format!("row {}: sigma is not positive", k + 1)));
        }
        rows.push((x, s));
    }
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (x, _) in &rows {
        for a in 0..d {
            if !axes[a].iter().any(|&v| v == x[a]) {
                axes[a].push(x[a]);
            }
        }
    }
    for a in axes.iter_mut() {
        a.sort_by(|p, q| p.total_cmp(q));
    }
    let shape: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    if shape.iter().product::<usize>() != rows.len() {
        return Err(bad("points do not form a tensor grid".into()));
    }
    let mut values = vec![T::zero(); rows.len()];
    for (x, s) in &rows {
        let mut flat = 0;
        for a in 0..d {
            let i = axes[a]
                .iter()
                .position(|&v| v == x[a])
                .expect("collected above");
            flat = flat * shape[a] + i;
        }
        values[flat] = lit(*s);
    }
    let bbox = Aabb::new(
        axes.iter().map(|a| lit(a[0])).collect(),
        axes.iter().map(|a| lit(a[a.len() - 1])).collect(),
    );
    Ok(ConductivityField::sampled(
        GridSamples::new(bbox, shape, values).map_err(bad)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> FlowOptions {
        FlowOptions::default()
    }

    #[test]
    fn affine_gives_one() {
        let u = PotentialField::affine(vec![0.3f64, -1.2], 0.1);
        assert!((reconstruct_sigma(&u, &[0.7, 0.4], &opts()).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let u = PotentialField::<f64>::parse("x + x^3/3", 1).unwrap();
        for x in [-1.5f64, -0.2, 0.0, 0.9, 2.0] {
            let s = reconstruct_sigma(&u, &[x], &opts()).unwrap();
            assert!((s - 1.0 / (1.0 + x * x)).abs() < 1e-8, "{x}: {s}");
        }
    }

    // X(t) = (x1 + t, x2 e^{t/2}), so τ solves x1 + τ + x2² e^τ / 4 = 0 and
    // σ = e^{τ/2} (Newton on a monotone scalar equation).
    fn parabola_sigma(x: &[f64]) -> f64 {
        let mut t = -x[0];
        for _ in 0..60 {
            let e = t.exp();
            t -= (x[0] + t + x[1] * x[1] * e / 4.0) / (1.0 + x[1] * x[1] * e / 4.0);
        }
        (t / 2.0).exp()
    }

    #[test]
    fn two_dimensional_closed_form() {
        let u = PotentialField::parse("x1 + x2^2/4", 2).unwrap();
        for x in [[0.5, 0.5], [-0.8, 0.9], [0.0, -0.3]] {
            let s = reconstruct_sigma(&u, &x, &opts()).unwrap();
            assert!((s - parabola_sigma(&x)).abs() < 1e-8, "{s}");
            // level-set data equal to the trace of e^{-x1/2} reproduce it
            let g = reconstruct_sigma_with_data(&u, &x, &|y: &[f64]| (-y[0] / 2.0).exp(), &opts())
                .unwrap();
            assert!((g - (-x[0] / 2.0f64).exp()).abs() < 1e-8);
        }
        // normalization on the level set
        assert_eq!(reconstruct_sigma(&u, &[-0.25, 1.0], &opts()).unwrap(), 1.0);
    }

    #[test]
    fn flow_relation_examples() {
        let u = PotentialField::<f64>::parse("x1 + x2^2/4", 2).unwrap();
        let good = ConductivityField::parse("exp(-x1/2)", 2).unwrap();
        let bad = ConductivityField::parse("exp(x1/2)", 2).unwrap();
        let r = flow_relation_residual(&u, &good, &[0.0, 1.0], 1.0, &opts()).unwrap();
        assert!(r <= 1e-7);
        let r = flow_relation_residual(&u, &bad, &[0.0, 1.0], 1.0, &opts()).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
        let a = PotentialField::affine(vec![1.0, 2.0], 0.0);
        let r = flow_relation_residual(
            &a,
            &ConductivityField::constant(3.0),
            &[0.1, 0.2],
            0.5,
            &opts(),
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn grid_reconstruction_and_table_round_trip() {
        let u = PotentialField::<f64>::parse("x1 + x2^2/4", 2).unwrap();
        let b = Aabb::cube(2, 1.0);
        let g = reconstruct_on_grid(&u, &b, &[7, 5], &opts());
        assert!(g.is_clean());
        assert!(g.max_error(parabola_sigma) < 1e-7);
        let table = g.to_table();
        assert!(table.starts_with("x1\tx2\tu\t|grad_u|\tsigma\n"));
        let back: ConductivityField<f64> = read_sigma_table(&table).unwrap();
        let p = [0.3, -0.2];
        assert!(
            (back.eval(&p).unwrap() - g.conductivity().unwrap().eval(&p).unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn holes_are_reported() {
        let u = PotentialField::parse("x1 + x2^2/4", 2)
            .unwrap()
            .with_domain(Aabb::new(vec![0.5, -1.0], vec![2.0, 1.0]));
        let g = reconstruct_on_grid(
            &u,
            &Aabb::new(vec![0.5, -1.0], vec![1.0, 1.0]),
            &[4, 4],
            &opts(),
        );
        assert_eq!(g.holes.len(), 16);
        assert!(g.conductivity().is_err());
        assert!(g.to_table().contains("nan"));
    }

    #[test]
    fn scaling_and_positivity() {
        let s = ConductivityField::parse("x1", 1).unwrap();
        assert!(matches!(
            s.eval(&[-1.0]),
            Err(ReconstructError::NonPositive { .. })
        ));
        let c = ConductivityField::constant(2.0).scaled(10.0);
        assert_eq!(c.eval(&[0.0]).unwrap(), 20.0);
        assert_eq!(c.witness(), Some((20.0, 20.0)));
    }
}
