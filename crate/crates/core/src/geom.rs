//! Boxes, sampling lattices and 2D convex-polygon utilities.

use crate::scalar::{lit, Real};

/// Axis-aligned box `[lo, hi]` in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Aabb<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box corners differ in dimension");
        Aabb { lo, hi }
    }

    /// The cube `[-half, half]^dim`.
    pub fn cube(dim: usize, half: T) -> Self {
        Aabb::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| l < h)
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn contains_box(&self, other: &Aabb<T>) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Grows (or shrinks, for negative `by`) every side by `by`.
    pub fn inflate(&self, by: T) -> Aabb<T> {
        Aabb::new(
            self.lo.iter().map(|&l| l - by).collect(),
            self.hi.iter().map(|&h| h + by).collect(),
        )
    }

    pub fn center(&self) -> Vec<T> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| (l + h) * lit(0.5))
            .collect()
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[T]) -> Vec<T> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&s, (&l, &h))| l + s * (h - l))
            .collect()
    }

    /// Clamps `x` into the box.
    pub fn clamp(&self, x: &mut [T]) {
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.max(l).min(h);
        }
    }

    /// Regular grid with `n[i]` nodes along axis `i` (endpoints included),
    /// in row-major order with the last axis varying fastest.
    pub fn grid(&self, n: &[usize]) -> Vec<Vec<T>> {
        assert_eq!(n.len(), self.dim());
        let total: usize = n.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n.len()];
        for _ in 0..total {
            let p = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| {
                    if n[a] == 1 {
                        (self.lo[a] + self.hi[a]) * lit(0.5)
                    } else {
                        let s = T::from_usize(i).unwrap() / T::from_usize(n[a] - 1).unwrap();
                        self.lo[a] + s * (self.hi[a] - self.lo[a])
                    }
                })
                .collect();
            out.push(p);
            for a in (0..n.len()).rev() {
                idx[a] += 1;
                if idx[a] < n[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Deterministic low-discrepancy points in the unit cube (Kronecker sequence
/// with the generalized golden ratio).
pub fn kronecker_lattice(dim: usize, count: usize) -> Vec<Vec<f64>> {
    // phi_d is the unique positive root of x^(d+1) = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=dim)
        .map(|k| (1.0 / phi.powi(k as i32)).fract())
        .collect();
    (0..count)
        .map(|n| {
            alpha
                .iter()
                .map(|a| (0.5 + a * (n as f64 + 1.0)).fract())
                .collect()
        })
        .collect()
}

/// A 2D point.
pub type P2<T> = [T; 2];

#[inline]
pub fn cross2<T: Real>(a: P2<T>, b: P2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn sub2<T: Real>(a: P2<T>, b: P2<T>) -> P2<T> {
    [a[0] - b[0], a[1] - b[1]]
}

/// Signed area of a polygon (positive for counter-clockwise vertex order).
pub fn polygon_area<T: Real>(poly: &[P2<T>]) -> T {
    let n = poly.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc += cross2(poly[i], poly[(i + 1) % n]);
    }
    acc * lit(0.5)
}

/// Outward unit normal of edge `i` (from vertex `i` to `i+1`) of a
/// counter-clockwise polygon.
pub fn edge_normal<T: Real>(poly: &[P2<T>], i: usize) -> P2<T> {
    let a = poly[i];
    let b = poly[(i + 1) % poly.len()];
    let e = sub2(b, a);
    let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
    [e[1] / len, -e[0] / len]
}

/// Signed distance from `p` to the supporting line of edge `i`, positive on
/// the interior side.
pub fn edge_distance<T: Real>(poly: &[P2<T>], i: usize, p: P2<T>) -> T {
    let nrm = edge_normal(poly, i);
    let a = poly[i];
    -(nrm[0] * (p[0] - a[0]) + nrm[1] * (p[1] - a[1]))
}

/// Minimum over edges of [`edge_distance`]; positive strictly inside a convex
/// counter-clockwise polygon.
pub fn convex_depth<T: Real>(poly: &[P2<T>], p: P2<T>) -> (T, usize) {
    let mut best = (T::infinity(), 0);
    for i in 0..poly.len() {
        let d = edge_distance(poly, i, p);
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

/// Whether the polygon is convex with counter-clockwise orientation.
pub fn is_convex_ccw<T: Real>(poly: &[P2<T>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        cross2(sub2(b, a), sub2(c, b)) > T::zero()
    })
}

/// Sutherland-Hodgman clip of a convex polygon by the half-plane
/// `{p : n . p <= offset}`.
pub fn clip_halfplane<T: Real>(poly: &[P2<T>], n: P2<T>, offset: T) -> Vec<P2<T>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % m];
        let da = n[0] * a[0] + n[1] * a[1] - offset;
        let db = n[0] * b[0] + n[1] * b[1] - offset;
        if da <= T::zero() {
            out.push(a);
        }
        if (da < T::zero() && db > T::zero()) || (da > T::zero() && db < T::zero()) {
            let s = da / (da - db);
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    dedup_polygon(out)
}

fn dedup_polygon<T: Real>(mut poly: Vec<P2<T>>) -> Vec<P2<T>> {
    let tiny = lit::<T>(1e-15);
    poly.dedup_by(|a, b| (a[0] - b[0]).abs() <= tiny && (a[1] - b[1]).abs() <= tiny);
    while poly.len() > 1 {
        let (f, l) = (poly[0], poly[poly.len() - 1]);
        if (f[0] - l[0]).abs() <= tiny && (f[1] - l[1]).abs() <= tiny {
            poly.pop();
        } else {
            break;
        }
    }
    poly
}

/// Intersection of a convex polygon with an axis-aligned rectangle.
pub fn clip_to_rect<T: Real>(poly: &[P2<T>], lo: P2<T>, hi: P2<T>) -> Vec<P2<T>> {
    let one = T::one();
    let mut p = clip_halfplane(poly, [one, T::zero()], hi[0]);
    p = clip_halfplane(&p, [-one, T::zero()], -lo[0]);
    p = clip_halfplane(&p, [T::zero(), one], hi[1]);
    clip_halfplane(&p, [T::zero(), -one], -lo[1])
}

/// Possibly unbounded convex region `{p : n_i . p <= c_i for all i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexRegion<T> {
    pub halfplanes: Vec<(P2<T>, T)>,
}

impl<T: Real> ConvexRegion<T> {
    /// Region bounded by the edges of a counter-clockwise convex polygon.
    pub fn from_polygon(poly: &[P2<T>]) -> Self {
        let halfplanes = (0..poly.len())
            .map(|i| {
                let n = edge_normal(poly, i);
                (n, n[0] * poly[i][0] + n[1] * poly[i][1])
            })
            .collect();
        ConvexRegion { halfplanes }
    }

    /// Open cone `{s a + t b : s, t > 0}` for `cross(a, b) > 0`.
    pub fn cone(a: P2<T>, b: P2<T>) -> Self {
        // cross(a, p) >= 0 and cross(p, b) >= 0
        ConvexRegion {
            halfplanes: vec![([a[1], -a[0]], T::zero()), ([-b[1], b[0]], T::zero())],
        }
    }

    pub fn with(mut self, n: P2<T>, c: T) -> Self {
        self.halfplanes.push((n, c));
        self
    }

    /// Smallest slack `c_i - n_i . p` over unit-normalized constraints;
    /// positive strictly inside.
    pub fn depth(&self, p: P2<T>) -> T {
        self.halfplanes
            .iter()
            .map(|(n, c)| {
                let len = (n[0] * n[0] + n[1] * n[1]).sqrt();
                (*c - n[0] * p[0] - n[1] * p[1]) / len
            })
            .fold(T::infinity(), T::min)
    }

    /// Intersection with the convex polygon `poly`.
    pub fn clip(&self, poly: &[P2<T>]) -> Vec<P2<T>> {
        let mut out = poly.to_vec();
        for (n, c) in &self.halfplanes {
            if out.len() < 3 {
                return Vec::new();
            }
            out = clip_halfplane(&out, *n, *c);
        }
        if out.len() < 3 {
            Vec::new()
        } else {
            out
        }
    }
}
