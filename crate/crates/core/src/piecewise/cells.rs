//! Cells, faces and decompositions of a planar domain.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, ParseError};
use crate::fans::{ConeFan, SplitFan};
use crate::field::{FieldError, PotentialField};
use crate::geom::{cross2, edge_normal, is_convex_ccw, polygon_area, sub2, ConvexRegion, P2};
use crate::quadrature::{gauss_legendre, polygon_rule, Rule};
use crate::scalar::{lit, norm, to_f64, Real, Scalar};

/// A smooth map from a reference polygon onto a curved cell, given by
/// expressions for the forward map `p -> x` and its inverse `x -> p`.
#[derive(Debug, Clone)]
pub struct CellMap {
    forward: [Expr; 2],
    inverse: [Expr; 2],
    jacobian: [[Expr; 2]; 2],
}

impl CellMap {
    pub fn new(forward: [Expr; 2], inverse: [Expr; 2]) -> Self {
        let jacobian = [
            [forward[0].derivative(0), forward[0].derivative(1)],
            [forward[1].derivative(0), forward[1].derivative(1)],
        ];
        CellMap {
            forward,
            inverse,
            jacobian,
        }
    }

    /// Parses the four component expressions over `x1, x2`.
    pub fn parse(forward: [&str; 2], inverse: [&str; 2]) -> Result<Self, ParseError> {
        Ok(CellMap::new(
            [Expr::parse(forward[0], 2)?, Expr::parse(forward[1], 2)?],
            [Expr::parse(inverse[0], 2)?, Expr::parse(inverse[1], 2)?],
        ))
    }

    pub fn forward<T: Real>(&self, p: P2<T>) -> Result<P2<T>, FieldError> {
        Ok([self.forward[0].eval(&p)?, self.forward[1].eval(&p)?])
    }

    pub fn inverse<T: Real>(&self, x: P2<T>) -> Result<P2<T>, FieldError> {
        Ok([self.inverse[0].eval(&x)?, self.inverse[1].eval(&x)?])
    }

    pub fn jacobian<T: Real>(&self, p: P2<T>) -> Result<[[T; 2]; 2], FieldError> {
        let j = &self.jacobian;
        Ok([
            [j[0][0].eval(&p)?, j[0][1].eval(&p)?],
            [j[1][0].eval(&p)?, j[1][1].eval(&p)?],
        ])
    }

    /// Checks `inverse(forward(p)) = p` and `det J > 0` at sample points of
    /// the reference polygon.
    pub fn check_on<T: Real>(&self, reference: &[P2<T>]) -> Result<(), String> {
        let rule = polygon_rule(reference, 3, 2);
        for p in rule
            .nodes
            .iter()
            .map(|n| [n[0], n[1]])
            .chain(reference.iter().copied())
        {
            let x = self.forward(p).map_err(|e| e.to_string())?;
            let q = self.inverse(x).map_err(|e| e.to_string())?;
            let err = norm(&sub2(p, q));
            if err > lit::<T>(1e-9) * (T::one() + norm(&p)) {
                return Err(format!(
                    "inverse map does not undo the forward map at ({}, {})",
                    to_f64(p[0]),
                    to_f64(p[1])
                ));
            }
            let j = self.jacobian(p).map_err(|e| e.to_string())?;
            if j[0][0] * j[1][1] - j[0][1] * j[1][0] <= T::zero() {
                return Err("map is not orientation preserving".into());
            }
        }
        Ok(())
    }
}

/// Where a cell lives, as used for point location and quadrature.
#[derive(Debug, Clone)]
pub enum Region<T> {
    Convex(ConvexRegion<T>),
    Mapped {
        reference: Vec<P2<T>>,
        map: Arc<CellMap>,
    },
}

impl<T: Real> Region<T> {
    /// Positive inside, negative outside. For mapped cells the value is the
    /// depth of the preimage in the reference polygon.
    pub fn depth(&self, x: P2<T>) -> Result<T, FieldError> {
        match self {
            Region::Convex(r) => Ok(r.depth(x)),
            Region::Mapped { reference, map } => {
                Ok(ConvexRegion::from_polygon(reference).depth(map.inverse(x)?))
            }
        }
    }

    /// Quadrature rule for the part of the region inside the square
    /// `[lo, hi]`. Mapped regions integrate the whole cell and drop nodes
    /// outside the square.
    pub fn rule_in_square(
        &self,
        lo: P2<T>,
        hi: P2<T>,
        order: usize,
        subdiv: usize,
    ) -> Result<Rule<T>, FieldError> {
        let square = vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
        match self {
            Region::Convex(r) => Ok(polygon_rule(&r.clip(&square), order, subdiv)),
            Region::Mapped { reference, map } => {
                let base = polygon_rule(reference, order, subdiv);
                let mut rule = Rule {
                    nodes: Vec::new(),
                    weights: Vec::new(),
                };
                for (p, w) in base.nodes.iter().zip(&base.weights) {
                    let p = [p[0], p[1]];
                    let x = map.forward(p)?;
                    if x[0] < lo[0] || x[0] > hi[0] || x[1] < lo[1] || x[1] > hi[1] {
                        continue;
                    }
                    let j = map.jacobian(p)?;
                    let det = (j[0][0] * j[1][1] - j[0][1] * j[1][0]).abs();
                    rule.nodes.push(x.to_vec());
                    rule.weights.push(*w * det);
                }
                Ok(rule)
            }
        }
    }
}

/// Cell shape: a convex counter-clockwise polygon, or the image of one.
#[derive(Debug, Clone)]
pub enum CellGeometry<T> {
    Polygon(Vec<P2<T>>),
    Mapped {
        reference: Vec<P2<T>>,
        map: Arc<CellMap>,
    },
}

/// One piece of a decomposition with its own smooth potential.
#[derive(Debug, Clone)]
pub struct Cell<T> {
    pub id: usize,
    pub geometry: CellGeometry<T>,
    pub potential: PotentialField<T>,
}

impl<T: Real> Cell<T> {
    pub fn polygon(id: usize, vertices: Vec<P2<T>>, potential: PotentialField<T>) -> Self {
        Cell {
            id,
            geometry: CellGeometry::Polygon(vertices),
            potential,
        }
    }

    pub fn mapped(
        id: usize,
        reference: Vec<P2<T>>,
        map: CellMap,
        potential: PotentialField<T>,
    ) -> Self {
        Cell {
            id,
            geometry: CellGeometry::Mapped {
                reference,
                map: Arc::new(map),
            },
            potential,
        }
    }

    fn reference(&self) -> &[P2<T>] {
        match &self.geometry {
            CellGeometry::Polygon(v) => v,
            CellGeometry::Mapped { reference, .. } => reference,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.reference().len()
    }

    pub fn region(&self) -> Region<T> {
        match &self.geometry {
            CellGeometry::Polygon(v) => Region::Convex(ConvexRegion::from_polygon(v)),
            CellGeometry::Mapped { reference, map } => Region::Mapped {
                reference: reference.clone(),
                map: map.clone(),
            },
        }
    }

    /// Physical endpoints of edge `e`.
    pub fn edge_endpoints(&self, e: usize) -> Result<(P2<T>, P2<T>), FieldError> {
        let r = self.reference();
        let (a, b) = (r[e], r[(e + 1) % r.len()]);
        match &self.geometry {
            CellGeometry::Polygon(_) => Ok((a, b)),
            CellGeometry::Mapped { map, .. } => Ok((map.forward(a)?, map.forward(b)?)),
        }
    }

    /// Point at parameter `s ∈ [0, 1]` along edge `e`.
    pub fn edge_point(&self, e: usize, s: T) -> Result<P2<T>, FieldError> {
        let r = self.reference();
        let (a, b) = (r[e], r[(e + 1) % r.len()]);
        let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        match &self.geometry {
            CellGeometry::Polygon(_) => Ok(p),
            CellGeometry::Mapped { map, .. } => map.forward(p),
        }
    }

    /// Outward unit normal on edge `e` at parameter `s`.
    pub fn edge_normal(&self, e: usize, s: T) -> Result<P2<T>, FieldError> {
        match &self.geometry {
            CellGeometry::Polygon(v) => Ok(edge_normal(v, e)),
            CellGeometry::Mapped { reference, map } => {
                let (a, b) = (reference[e], reference[(e + 1) % reference.len()]);
                let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let j = map.jacobian(p)?;
                let d = sub2(b, a);
                let t = [
                    j[0][0] * d[0] + j[0][1] * d[1],
                    j[1][0] * d[0] + j[1][1] * d[1],
                ];
                let len = norm(&t);
                Ok([t[1] / len, -t[0] / len])
            }
        }
    }

    /// Signed distance-like value of `x` to edge `e` (positive on the cell
    /// side); reference coordinates for mapped cells.
    pub fn edge_distance(&self, e: usize, x: P2<T>) -> Result<T, FieldError> {
        let r = self.reference();
        let p = match &self.geometry {
            CellGeometry::Polygon(_) => x,
            CellGeometry::Mapped { map, .. } => map.inverse(x)?,
        };
        Ok(crate::geom::edge_distance(r, e, p))
    }

    /// Parameter of the point of edge `e` nearest to `x` (reference
    /// coordinates for mapped cells).
    pub fn nearest_on_edge(&self, e: usize, x: P2<T>) -> Result<T, FieldError> {
        let r = self.reference();
        let (a, b) = (r[e], r[(e + 1) % r.len()]);
        let p = match &self.geometry {
            CellGeometry::Polygon(_) => x,
            CellGeometry::Mapped { map, .. } => map.inverse(x)?,
        };
        let d = sub2(b, a);
        let s = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
        Ok(s.max(T::zero()).min(T::one()))
    }

    /// Length scale used for point tolerances.
    pub fn scale(&self) -> T {
        self.reference()
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(T::one(), T::max)
    }

    /// Interior sample points (quadrature nodes) for per-cell checks.
    pub fn interior_samples(&self) -> Result<Vec<P2<T>>, FieldError> {
        let rule = polygon_rule(self.reference(), 3, 2);
        rule.nodes
            .iter()
            .map(|n| {
                let p = [n[0], n[1]];
                match &self.geometry {
                    CellGeometry::Polygon(_) => Ok(p),
                    CellGeometry::Mapped { map, .. } => map.forward(p),
                }
            })
            .collect()
    }

    fn check_shape(&self) -> Result<(), TopologyError> {
        let r = self.reference();
        if !is_convex_ccw(r) || polygon_area(r) <= T::zero() {
            return Err(TopologyError::BadCell {
                cell: self.id,
                reason: "polygon must be convex, counter-clockwise and of positive area".into(),
            });
        }
        if let CellGeometry::Mapped { map, reference } = &self.geometry {
            map.check_on(reference)
                .map_err(|reason| TopologyError::BadCell {
                    cell: self.id,
                    reason,
                })?;
        }
        if self.potential.dim() != 2 {
            return Err(TopologyError::BadCell {
                cell: self.id,
                reason: "cell potentials must be two-dimensional".into(),
            });
        }
        Ok(())
    }
}

/// A cell edge, shared with a neighbor or on the domain boundary. The normal
/// is outward from `owner`.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub id: usize,
    pub owner: usize,
    pub owner_edge: usize,
    /// `(cell, edge)` on the other side, or `None` on the domain boundary.
    pub neighbor: Option<(usize, usize)>,
    pub label: Option<String>,
}

impl Face {
    pub fn name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("face {}", self.id),
        }
    }
}

/// Sign of `∂u/∂ν` along a face, from one cell's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaceClass {
    Inflow,
    Outflow,
    Tangential,
    Mixed,
}

impl fmt::Display for FaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaceClass::Inflow => "inflow",
            FaceClass::Outflow => "outflow",
            FaceClass::Tangential => "tangential",
            FaceClass::Mixed => "mixed",
        })
    }
}

/// Classification with the sampled range of `∂u/∂ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classified<T> {
    pub class: FaceClass,
    pub min: T,
    pub max: T,
    pub threshold: T,
}

/// Gauss parameters in `[0, 1]` used for face samples.
pub fn face_parameters<T: Real>(order: usize) -> Vec<T> {
    let (x, _) = gauss_legendre::<T>(order);
    x.into_iter().map(|v| (v + T::one()) * lit(0.5)).collect()
}

/// Classifies edge `e` of `cell` from `∂u/∂ν` at `samples` Gauss points with
/// tangential threshold `eps_tan · max|∇u|`.
pub fn classify_face<T: Real>(
    cell: &Cell<T>,
    e: usize,
    samples: usize,
    eps_tan: f64,
) -> Result<Classified<T>, FieldError> {
    let mut dns = Vec::with_capacity(samples);
    let mut scale = T::zero();
    for s in face_parameters::<T>(samples) {
        let p = cell.edge_point(e, s)?;
        let nu = cell.edge_normal(e, s)?;
        let g = cell.potential.eval(&p)?.grad;
        scale = scale.max(norm(&g));
        dns.push(g[0] * nu[0] + g[1] * nu[1]);
    }
    let threshold = lit::<T>(eps_tan) * scale;
    let min = dns.iter().copied().fold(T::infinity(), T::min);
    let max = dns.iter().copied().fold(T::neg_infinity(), T::max);
    let class = if max < -threshold {
        FaceClass::Inflow
    } else if min > threshold {
        FaceClass::Outflow
    } else if min >= -threshold && max <= threshold {
        FaceClass::Tangential
    } else {
        FaceClass::Mixed
    };
    Ok(Classified {
        class,
        min,
        max,
        threshold,
    })
}

/// Tunables for classification and checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseSettings {
    /// Relative tangential threshold.
    pub eps_tan: f64,
    /// Gauss points per face.
    pub face_order: usize,
    /// Minimum `|∇u|` inside every cell.
    pub m_min: f64,
}

impl Default for PiecewiseSettings {
    fn default() -> Self {
        PiecewiseSettings {
            eps_tan: 1e-10,
            face_order: 8,
            m_min: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("cell {cell}: {reason}")]
    BadCell { cell: usize, reason: String },
    #[error("cell ids must be 0..n in order (found {found} at position {index})")]
    BadIds { index: usize, found: usize },
    #[error("edge {edge} of cell {cell} is listed in {count} faces")]
    EdgeCount {
        cell: usize,
        edge: usize,
        count: usize,
    },
    #[error("face {face} joins edges whose endpoints do not coincide")]
    Mismatch { face: usize },
    #[error("edge {edge} of cell {cell} partially overlaps another cell's edge")]
    NonConforming { cell: usize, edge: usize },
    #[error("face {face} refers to a missing cell or edge")]
    Dangling { face: usize },
    #[error("head cell {0} does not exist")]
    BadHead(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Cells, faces and designated head cells.
#[derive(Debug, Clone)]
pub struct Decomposition<T> {
    pub cells: Vec<Cell<T>>,
    pub faces: Vec<Face>,
    /// Head cells; empty means "lowest id of each connected group".
    pub heads: Vec<usize>,
    pub settings: PiecewiseSettings,
    /// `face_index[cell][edge]`.
    face_index: Vec<Vec<usize>>,
}

fn points_close<T: Real>(a: P2<T>, b: P2<T>, tol: T) -> bool {
    (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
}

impl<T: Real> Decomposition<T> {
    /// Checks an explicit face list against the cell geometry.
    pub fn new(
        cells: Vec<Cell<T>>,
        faces: Vec<Face>,
        heads: Vec<usize>,
    ) -> Result<Self, TopologyError> {
        for (i, c) in cells.iter().enumerate() {
            if c.id != i {
                return Err(TopologyError::BadIds {
                    index: i,
                    found: c.id,
                });
            }
            c.check_shape()?;
        }
        let mut face_index: Vec<Vec<usize>> = cells
            .iter()
            .map(|c| vec![usize::MAX; c.edge_count()])
            .collect();
        let mut claim = |cell: usize, edge: usize, face: usize| -> Result<(), TopologyError> {
            let slot = face_index
                .get_mut(cell)
                .and_then(|v| v.get_mut(edge))
                .ok_or(TopologyError::Dangling { face })?;
            if *slot != usize::MAX {
                return Err(TopologyError::EdgeCount {
                    cell,
                    edge,
                    count: 2,
                });
            }
            *slot = face;
            Ok(())
        };
        for (i, f) in faces.iter().enumerate() {
            if f.id != i {
                return Err(TopologyError::Dangling { face: f.id });
            }
            claim(f.owner, f.owner_edge, i)?;
            if let Some((c, e)) = f.neighbor {
                claim(c, e, i)?;
            }
        }
        for (c, edges) in face_index.iter().enumerate() {
            for (e, &f) in edges.iter().enumerate() {
                if f == usize::MAX {
                    return Err(TopologyError::EdgeCount {
                        cell: c,
                        edge: e,
                        count: 0,
                    });
                }
            }
        }
        let scale = cells.iter().map(|c| c.scale()).fold(T::one(), T::max);
        let tol = lit::<T>(1e-9) * scale;
        for f in &faces {
            if let Some((c, e)) = f.neighbor {
                let (a, b) = cells[f.owner].edge_endpoints(f.owner_edge)?;
                let (p, q) = cells[c].edge_endpoints(e)?;
                if !(points_close(a, q, tol) && points_close(b, p, tol)) {
                    return Err(TopologyError::Mismatch { face: f.id });
                }
            }
        }
        for &h in &heads {
            if h >= cells.len() {
                return Err(TopologyError::BadHead(h));
            }
        }
        Ok(Decomposition {
            cells,
            faces,
            heads,
            settings: PiecewiseSettings::default(),
            face_index,
        })
    }

    /// Builds the face list by matching edges with reversed endpoints.
    pub fn auto(cells: Vec<Cell<T>>, heads: Vec<usize>) -> Result<Self, TopologyError> {
        Self::auto_labelled(cells, heads, &|_, _| None)
    }

    fn auto_labelled(
        cells: Vec<Cell<T>>,
        heads: Vec<usize>,
        label: &dyn Fn(usize, usize) -> Option<String>,
    ) -> Result<Self, TopologyError> {
        let scale = cells.iter().map(|c| c.scale()).fold(T::one(), T::max);
        let tol = lit::<T>(1e-9) * scale;
        let mut ends = Vec::new();
        for c in &cells {
            let mut v = Vec::new();
            for e in 0..c.edge_count() {
                v.push(c.edge_endpoints(e)?);
            }
            ends.push(v);
        }
        let mut used: Vec<Vec<bool>> = cells.iter().map(|c| vec![false; c.edge_count()]).collect();
        let mut faces = Vec::new();
        for c in 0..cells.len() {
            for e in 0..cells[c].edge_count() {
                if used[c][e] {
                    continue;
                }
                used[c][e] = true;
                let (a, b) = ends[c][e];
                let mut neighbor = None;
                'search: for d in (c + 1)..cells.len() {
                    for f in 0..cells[d].edge_count() {
                        let (p, q) = ends[d][f];
                        if !used[d][f] && points_close(a, q, tol) && points_close(b, p, tol) {
                            neighbor = Some((d, f));
                            used[d][f] = true;
                            break 'search;
                        }
                    }
                }
                if neighbor.is_none() {
                    // a boundary edge must not run along another cell's edge
                    for d in 0..cells.len() {
                        if d == c {
                            continue;
                        }
                        for f in 0..cells[d].edge_count() {
                            let (p, q) = ends[d][f];
                            if segments_overlap(a, b, p, q, tol) {
                                return Err(TopologyError::NonConforming { cell: c, edge: e });
                            }
                        }
                    }
                }
                faces.push(Face {
                    id: faces.len(),
                    owner: c,
                    owner_edge: e,
                    neighbor,
                    label: label(c, e),
                });
            }
        }
        Self::new(cells, faces, heads)
    }

    pub fn with_settings(mut self, settings: PiecewiseSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn face_of(&self, cell: usize, edge: usize) -> &Face {
        &self.faces[self.face_index[cell][edge]]
    }

    /// The cell and edge across `edge` of `cell`, if internal.
    pub fn across(&self, cell: usize, edge: usize) -> Option<(usize, usize)> {
        let f = self.face_of(cell, edge);
        if f.owner == cell && f.owner_edge == edge {
            f.neighbor
        } else {
            Some((f.owner, f.owner_edge))
        }
    }

    /// The piecewise potential as a single field (faces report face points).
    pub fn field(&self) -> PotentialField<T> {
        PotentialField::cells(
            self.cells
                .iter()
                .map(|c| (c.region(), c.potential.clone()))
                .collect(),
        )
    }

    /// Cells of a split fan clipped to `[-half, half]^2`, in chain order,
    /// each with the affine potential of its cone. The head is the first
    /// piece of the chain.
    pub fn from_split_fan<S: Scalar>(split: &SplitFan<S>, half: T) -> Result<Self, TopologyError> {
        let pieces = split.chain();
        let fan = &split.fan;
        let mut cells = Vec::new();
        for (i, &piece) in pieces.iter().enumerate() {
            let (a, b) = split.rays(piece);
            let g = split.gradient(piece);
            let lam = vec![lit::<T>(g[0].to_f64_lossy()), lit::<T>(g[1].to_f64_lossy())];
            let a = [lit::<T>(a[0].to_f64_lossy()), lit::<T>(a[1].to_f64_lossy())];
            let b = [lit::<T>(b[0].to_f64_lossy()), lit::<T>(b[1].to_f64_lossy())];
            cells.push(Cell::polygon(
                i,
                cone_in_square(a, b, half),
                PotentialField::affine(lam, T::zero()),
            ));
        }
        let spokes: Vec<P2<T>> = fan
            .spokes()
            .iter()
            .map(|s| [lit(s[0].to_f64_lossy()), lit(s[1].to_f64_lossy())])
            .collect();
        let dir = [
            lit::<T>(split.direction[0].to_f64_lossy()),
            lit::<T>(split.direction[1].to_f64_lossy()),
        ];
        let cells_ref = cells.clone();
        let label = move |c: usize, e: usize| -> Option<String> {
            let (a, b) = cells_ref[c].edge_endpoints(e).ok()?;
            // edges through the origin lie on a ray
            let tiny = lit::<T>(1e-12) * half;
            let far = if norm(&a) <= tiny {
                b
            } else if norm(&b) <= tiny {
                a
            } else {
                return None;
            };
            for (k, s) in spokes.iter().enumerate() {
                if cross2(*s, far).abs() <= tiny * norm(s)
                    && s[0] * far[0] + s[1] * far[1] > T::zero()
                {
                    return Some(format!("spoke ξ{}", k + 1));
                }
            }
            if cross2(dir, far).abs() <= tiny * norm(&dir) {
                return Some("split ray".into());
            }
            None
        };
        Self::auto_labelled(cells, vec![0], &label)
    }

    /// Cells of an unsplit fan (one per cone) with `head` as the head cone.
    pub fn from_fan<S: Scalar>(
        fan: &ConeFan<S>,
        half: T,
        head: usize,
    ) -> Result<Self, TopologyError> {
        let n = fan.len();
        let conv = |v: &[S; 2]| [lit::<T>(v[0].to_f64_lossy()), lit::<T>(v[1].to_f64_lossy())];
        let spokes: Vec<P2<T>> = fan.spokes().iter().map(conv).collect();
        let cells = (0..n)
            .map(|k| {
                let l = conv(&fan.gradients()[k]);
                Cell::polygon(
                    k,
                    cone_in_square(spokes[k], spokes[(k + 1) % n], half),
                    PotentialField::affine(l.to_vec(), T::zero()),
                )
            })
            .collect::<Vec<_>>();
        let cells_ref = cells.clone();
        let label = move |c: usize, e: usize| -> Option<String> {
            let (a, b) = cells_ref[c].edge_endpoints(e).ok()?;
            let tiny = lit::<T>(1e-12) * half;
            let far = if norm(&a) <= tiny {
                b
            } else if norm(&b) <= tiny {
                a
            } else {
                return None;
            };
            spokes
                .iter()
                .position(|s| {
                    cross2(*s, far).abs() <= tiny * norm(s)
                        && s[0] * far[0] + s[1] * far[1] > T::zero()
                })
                .map(|k| format!("spoke ξ{}", k + 1))
        };
        Self::auto_labelled(cells, vec![head], &label)
    }
}

fn segments_overlap<T: Real>(a: P2<T>, b: P2<T>, p: P2<T>, q: P2<T>, tol: T) -> bool {
    let d = sub2(b, a);
    let len = norm(&d);
    if len <= tol {
        return false;
    }
    let off = |x: P2<T>| cross2(d, sub2(x, a)).abs() / len;
    if off(p) > tol || off(q) > tol {
        return false;
    }
    let proj = |x: P2<T>| ((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / len;
    let (s0, s1) = (proj(p).min(proj(q)), proj(p).max(proj(q)));
    s1.min(len) - s0.max(T::zero()) > tol
}

/// Polygon `{s a + t b : s, t ≥ 0} ∩ [-half, half]^2`, counter-clockwise,
/// starting at the origin.
pub fn cone_in_square<T: Real>(a: P2<T>, b: P2<T>, half: T) -> Vec<P2<T>> {
    let hit = |v: P2<T>| {
        let t = half / v[0].abs().max(v[1].abs());
        [v[0] * t, v[1] * t]
    };
    let mut poly = vec![[T::zero(), T::zero()], hit(a)];
    let corners = [[half, half], [-half, half], [-half, -half], [half, -half]];
    let mut inner: Vec<P2<T>> = corners
        .iter()
        .copied()
        .filter(|&c| cross2(a, c) > T::zero() && cross2(c, b) > T::zero())
        .collect();
    // sort by angle measured from a
    let ang = |c: P2<T>| {
        let x = a[0] * c[0] + a[1] * c[1];
        let y = cross2(a, c);
        y.atan2(x)
    };
    inner.sort_by(|p, q| {
        ang(*p)
            .partial_cmp(&ang(*q))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    poly.extend(inner);
    poly.push(hit(b));
    poly
}
