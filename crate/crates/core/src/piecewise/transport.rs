//! Transport of boundary data along the flow inside one cell, and the
//! piecewise conductivity assembled from it.

use std::sync::Arc;

use thiserror::Error;

use super::cells::{Cell, CellGeometry, Decomposition, FaceClass};
use super::flux::{flux_match_real, FluxError};
use crate::field::FieldError;
use crate::flow::{march, FlowError, FlowOptions};
use crate::geom::P2;
use crate::scalar::{lit, norm, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("point ({x}, {y}) is not in cell {cell}")]
    NotInCell { cell: usize, x: f64, y: f64 },
    #[error("trajectory from ({x}, {y}) in cell {cell} left through {face}, which carries no {class} data")]
    MissedDataFace {
        cell: usize,
        face: String,
        class: FaceClass,
        x: f64,
        y: f64,
    },
    #[error("flux matching failed on {face}: {reason}")]
    Flux { face: String, reason: FluxError },
    #[error("trajectory from ({x}, {y}) in cell {cell}: {source}")]
    Flow {
        cell: usize,
        x: f64,
        y: f64,
        #[source]
        source: FlowError,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("point ({x}, {y}) lies in no cell")]
    Outside { x: f64, y: f64 },
}

/// Where a data face of a cell gets its boundary values.
#[derive(Debug, Clone, PartialEq)]
pub enum Source<T> {
    /// Constant seed on a head cell's inflow face.
    Seed(T),
    /// Flux matched against the neighbor across the face.
    Matched { neighbor: usize },
    /// Value at the nearest point of another data face of the same cell.
    Extended { parent_edge: usize },
}

/// Per-cell transport data.
#[derive(Debug, Clone, PartialEq)]
pub struct CellData<T> {
    /// Which boundary portion carries the data.
    pub data: FaceClass,
    /// One entry per edge; `Some` on data faces.
    pub sources: Vec<Option<Source<T>>>,
    /// Set when σ is constant on the cell.
    pub constant: Option<T>,
}

/// Conductivity built cell by cell; evaluation transports boundary data
/// along the flow of each cell's potential.
#[derive(Debug, Clone)]
pub struct PiecewiseSigma<T> {
    pub(crate) decomposition: Arc<Decomposition<T>>,
    pub(crate) data: Vec<CellData<T>>,
    pub(crate) options: FlowOptions,
}

impl<T: Real> PiecewiseSigma<T> {
    pub fn decomposition(&self) -> &Decomposition<T> {
        &self.decomposition
    }

    pub fn cell_data(&self, cell: usize) -> &CellData<T> {
        &self.data[cell]
    }

    pub fn options(&self) -> &FlowOptions {
        &self.options
    }

    /// Replaces the integrator options used during evaluation.
    pub fn with_options(mut self, options: FlowOptions) -> Self {
        self.options = options;
        self
    }

    /// The cell containing `x` (largest depth); boundary points go to the
    /// lowest-id cell among those within tolerance.
    pub fn locate(&self, x: P2<T>) -> Result<usize, TransportError> {
        let tol = lit::<T>(1e-9) * (T::one() + norm(&x));
        let mut best: Option<(usize, T)> = None;
        for (i, c) in self.decomposition.cells.iter().enumerate() {
            let d = c.region().depth(x)?;
            if d >= -tol && best.is_none_or(|(_, b)| d > b + tol) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i).ok_or(TransportError::Outside {
            x: to_f64(x[0]),
            y: to_f64(x[1]),
        })
    }

    /// σ at `x`.
    pub fn eval(&self, x: P2<T>) -> Result<T, TransportError> {
        let c = self.locate(x)?;
        self.eval_in_cell(c, x)
    }

    /// σ at `x` using the data of `cell` (the point may lie on its boundary).
    pub fn eval_in_cell(&self, cell: usize, x: P2<T>) -> Result<T, TransportError> {
        if let Some(v) = self.data[cell].constant {
            return Ok(v);
        }
        let c = &self.decomposition.cells[cell];
        let data = &self.data[cell];
        transport(
            c,
            data.data,
            &|e| data.sources[e].is_some(),
            &|e, p| self.gamma(cell, e, p),
            &|e| self.decomposition.face_of(cell, e).name(),
            x,
            &self.options,
        )
    }

    /// Boundary value on data edge `edge` of `cell` at `p`.
    pub fn gamma(&self, cell: usize, edge: usize, p: P2<T>) -> Result<T, TransportError> {
        match &self.data[cell].sources[edge] {
            Some(Source::Seed(v)) => Ok(*v),
            Some(Source::Matched { neighbor }) => {
                let c = &self.decomposition.cells[cell];
                let nb = &self.decomposition.cells[*neighbor];
                let s = c.nearest_on_edge(edge, p)?;
                let nu = c.edge_normal(edge, s)?;
                let sigma_nb = self.eval_in_cell(*neighbor, p)?;
                let dn_c = dn(c, p, nu)?;
                let dn_nb = dn(nb, p, nu)?;
                flux_match_real(sigma_nb, dn_nb, dn_c).map_err(|reason| TransportError::Flux {
                    face: self.decomposition.face_of(cell, edge).name(),
                    reason,
                })
            }
            Some(Source::Extended { parent_edge }) => {
                let c = &self.decomposition.cells[cell];
                let s = c.nearest_on_edge(*parent_edge, p)?;
                let q = c.edge_point(*parent_edge, s)?;
                self.gamma(cell, *parent_edge, q)
            }
            None => Err(TransportError::MissedDataFace {
                cell,
                face: self.decomposition.face_of(cell, edge).name(),
                class: self.data[cell].data,
                x: to_f64(p[0]),
                y: to_f64(p[1]),
            }),
        }
    }

    /// Normal flux `σ ∂u/∂ν` from each side of internal face `face` at its
    /// Gauss points, with the owner's normal. Returns `(max mismatch, scale)`.
    pub fn flux_mismatch(&self, face: usize) -> Result<(T, T), TransportError> {
        let d = &self.decomposition;
        let f = &d.faces[face];
        let Some((nb, _)) = f.neighbor else {
            return Ok((T::zero(), T::zero()));
        };
        let owner = &d.cells[f.owner];
        let other = &d.cells[nb];
        let mut worst = T::zero();
        let mut scale = T::zero();
        for s in super::cells::face_parameters::<T>(d.settings.face_order) {
            let p = owner.edge_point(f.owner_edge, s)?;
            let nu = owner.edge_normal(f.owner_edge, s)?;
            let a = self.eval_in_cell(f.owner, p)? * dn(owner, p, nu)?;
            let b = self.eval_in_cell(nb, p)? * dn(other, p, nu)?;
            worst = worst.max((a - b).abs());
            scale = scale.max(a.abs()).max(b.abs());
        }
        Ok((worst, scale))
    }
}

pub(crate) fn dn<T: Real>(cell: &Cell<T>, p: P2<T>, nu: P2<T>) -> Result<T, FieldError> {
    let g = cell.potential.eval(&p)?.grad;
    Ok(g[0] * nu[0] + g[1] * nu[1])
}

/// `γ(X(τ, y)) exp(∫₀^τ Δu)` where `τ` is the first time the trajectory
/// through `y` meets the data portion of the cell boundary: backward in time
/// for inflow data, forward for outflow data.
pub fn transport<T: Real>(
    cell: &Cell<T>,
    data: FaceClass,
    is_data: &dyn Fn(usize) -> bool,
    gamma: &dyn Fn(usize, P2<T>) -> Result<T, TransportError>,
    name: &dyn Fn(usize) -> String,
    y: P2<T>,
    opts: &FlowOptions,
) -> Result<T, TransportError> {
    let n = cell.edge_count();
    let scale = cell.scale();
    let on_tol = lit::<T>(1e-12) * (T::one() + norm(&y)) * scale;
    let mut dist = Vec::with_capacity(n);
    for e in 0..n {
        dist.push(cell.edge_distance(e, y)?);
    }
    let depth = dist.iter().copied().fold(T::infinity(), T::min);
    if depth < -lit::<T>(1e-9) * scale {
        return Err(TransportError::NotInCell {
            cell: cell.id,
            x: to_f64(y[0]),
            y: to_f64(y[1]),
        });
    }
    let start: Vec<bool> = dist.iter().map(|d| d.abs() <= on_tol).collect();
    if let Some(e) = (0..n).find(|&e| start[e] && is_data(e)) {
        return gamma(e, y);
    }
    let dir = match data {
        FaceClass::Inflow => -T::one(),
        _ => T::one(),
    };
    let event = |x: &[T], _u: T| -> T {
        let p = [x[0], x[1]];
        let mut m = T::infinity();
        for e in 0..n {
            if !start[e] {
                // mapped cells fall back to a large value if the inverse fails
                m = m.min(cell.edge_distance(e, p).unwrap_or(-T::one()));
            }
        }
        m
    };
    let flow_err = |source: FlowError| TransportError::Flow {
        cell: cell.id,
        x: to_f64(y[0]),
        y: to_f64(y[1]),
        source,
    };
    let m = march(
        &cell.potential,
        &y,
        dir * T::infinity(),
        opts,
        Some(&event),
        lit(opts.tol_root * 1e-2),
    )
    .map_err(flow_err)?;
    let last = m.trajectory.last();
    if !m.hit {
        return Err(flow_err(FlowError::NotReached {
            time: to_f64(last.t),
            u: to_f64(last.u),
        }));
    }
    let p = [last.x[0], last.x[1]];
    let mut hit = None;
    let mut best = T::infinity();
    for e in (0..n).filter(|&e| !start[e]) {
        let d = cell.edge_distance(e, p)?.abs();
        if d < best {
            best = d;
            hit = Some(e);
        }
    }
    let mut hit = hit.expect("event fired on some edge");
    if !is_data(hit) {
        // corner: accept a data face through the same point
        let corner = lit::<T>(1e-7) * scale;
        match (0..n).filter(|&e| !start[e] && is_data(e)).find(|&e| {
            cell.edge_distance(e, p)
                .map(|d| d.abs() <= corner)
                .unwrap_or(false)
        }) {
            Some(e) => hit = e,
            None => {
                return Err(TransportError::MissedDataFace {
                    cell: cell.id,
                    face: name(hit),
                    class: data,
                    x: to_f64(y[0]),
                    y: to_f64(y[1]),
                })
            }
        }
    }
    Ok(gamma(hit, p)? * last.integral.exp())
}

/// Whether σ can be constant on the cell: affine potential on a polygon.
pub(crate) fn is_affine_polygon<T: Real>(cell: &Cell<T>) -> bool {
    matches!(cell.geometry, CellGeometry::Polygon(_)) && cell.potential.affine_gradient().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PotentialField;

    fn square() -> Vec<P2<f64>> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    #[test]
    fn transport_reproduces_closed_form() {
        // u = x1 + x2^2/4, data γ = 1 on x1 = 0 (edge 3)
        let cell = Cell::polygon(
            0,
            square(),
            PotentialField::parse("x1 + x2^2/4", 2).unwrap(),
        );
        let opts = FlowOptions::default();
        let y = [0.6, 0.4];
        let s = transport(
            &cell,
            FaceClass::Inflow,
            &|e| e == 3,
            &|_, _| Ok(1.0),
            &|e| format!("edge {e}"),
            y,
            &opts,
        )
        .unwrap();
        assert!((s - (-0.6f64 / 2.0).exp()).abs() < 1e-7, "{s}");
        // a point on the data face returns γ
        let s0 = transport(
            &cell,
            FaceClass::Inflow,
            &|e| e == 3,
            &|_, _| Ok(2.5),
            &|e| format!("edge {e}"),
            [0.0, 0.5],
            &opts,
        )
        .unwrap();
        assert_eq!(s0, 2.5);
    }

    #[test]
    fn outflow_data_marches_forward() {
        let cell = Cell::polygon(
            0,
            square(),
            PotentialField::parse("x1 + x2^2/4", 2).unwrap(),
        );
        // data on x1 = 1 (edge 1): σ(y) = γ exp((1 - y1)/2)
        let y = [0.3, 0.2];
        let s = transport(
            &cell,
            FaceClass::Outflow,
            &|e| e == 1,
            &|_, _| Ok(1.0),
            &|e| format!("edge {e}"),
            y,
            &FlowOptions::default(),
        )
        .unwrap();
        assert!((s - (0.7f64 / 2.0).exp()).abs() < 1e-7, "{s}");
    }

    #[test]
    fn reports_missed_face() {
        let cell = Cell::polygon(0, square(), PotentialField::affine(vec![1.0, 1.0], 0.0));
        // backward from (0.2, 0.8) exits through y = 0? no: through x = 0 first
        let err = transport(
            &cell,
            FaceClass::Inflow,
            &|e| e == 0,
            &|_, _| Ok(1.0),
            &|e| format!("edge {e}"),
            [0.2, 0.8],
            &FlowOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TransportError::MissedDataFace { ref face, .. } if face == "edge 3"));
    }
}
