//! Tensor grids of samples with local cubic interpolation.

use crate::geom::Aabb;
use crate::scalar::{lit, Real};

/// Values on a regular tensor grid over a box, interpolated with 4-point
/// Lagrange stencils per axis (exact for cubics; value, gradient and
/// Laplacian of the interpolant are available).
#[derive(Debug, Clone)]
pub struct GridSamples<T> {
    bbox: Aabb<T>,
    n: Vec<usize>,
    values: Vec<T>,
}

/// Value, gradient and Laplacian of an interpolant at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub lap: T,
}

impl<T: Real> GridSamples<T> {
    /// `values` in row-major order with the last axis fastest, matching
    /// [`Aabb::grid`].
    pub fn new(bbox: Aabb<T>, n: Vec<usize>, values: Vec<T>) -> Result<Self, String> {
        if n.len() != bbox.dim() {
            return Err("grid shape does not match box dimension".into());
        }
        if n.iter().any(|&k| k < 4) {
            return Err("cubic interpolation needs at least 4 nodes per axis".into());
        }
        if n.iter().product::<usize>() != values.len() {
            return Err(format!(
                "expected {} samples, got {}",
                n.iter().product::<usize>(),
                values.len()
            ));
        }
        if !bbox.is_valid() {
            return Err("grid box has non-positive extent".into());
        }
        Ok(GridSamples { bbox, n, values })
    }

    /// Samples `f` on a grid with spacing close to `h` (rounded so the nodes
    /// hit both ends of every axis).
    pub fn sample<E, F: FnMut(&[T]) -> Result<T, E>>(
        bbox: Aabb<T>,
        h: T,
        mut f: F,
    ) -> Result<Self, E> {
        let n: Vec<usize> = bbox
            .lo
            .iter()
            .zip(&bbox.hi)
            .map(|(&l, &hi)| ((hi - l) / h).round().to_usize().unwrap_or(0).max(3) + 1)
            .collect();
        let pts = bbox.grid(&n);
        let mut values = Vec::with_capacity(pts.len());
        for p in &pts {
            values.push(f(p)?);
        }
        Ok(GridSamples { bbox, n, values })
    }

    pub fn bbox(&self) -> &Aabb<T> {
        &self.bbox
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn spacing(&self, axis: usize) -> T {
        (self.bbox.hi[axis] - self.bbox.lo[axis]) / T::from_usize(self.n[axis] - 1).unwrap()
    }

    /// Interpolates at `x`; `None` outside the grid box.
    pub fn interpolate(&self, x: &[T]) -> Option<Interpolated<T>> {
        if !self.bbox.contains(x) {
            return None;
        }
        let d = self.n.len();
        // per-axis stencil start and basis (value, d1, d2) weights
        let mut starts = Vec::with_capacity(d);
        let mut basis: Vec<[[T; 4]; 3]> = Vec::with_capacity(d);
        for a in 0..d {
            let h = self.spacing(a);
            let s = (x[a] - self.bbox.lo[a]) / h;
            let cell = s.floor().to_isize().unwrap_or(0);
            let start = (cell - 1).clamp(0, self.n[a] as isize - 4) as usize;
            let local = s - T::from_usize(start).unwrap();
            basis.push(lagrange4(local, h));
            starts.push(start);
        }
        let mut value = T::zero();
        let mut grad = vec![T::zero(); d];
        let mut lap = T::zero();
        let total = 4usize.pow(d as u32);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut flat = 0usize;
            for a in 0..d {
                flat = flat * self.n[a] + starts[a] + idx[a];
            }
            let v = self.values[flat];
            let mut w0 = T::one();
            for a in 0..d {
                w0 *= basis[a][0][idx[a]];
            }
            value += w0 * v;
            for k in 0..d {
                let mut w1 = T::one();
                let mut w2 = T::one();
                for a in 0..d {
                    let b = &basis[a];
                    w1 *= if a == k { b[1][idx[a]] } else { b[0][idx[a]] };
                    w2 *= if a == k { b[2][idx[a]] } else { b[0][idx[a]] };
                }
                grad[k] += w1 * v;
                lap += w2 * v;
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < 4 {
                    break;
                }
                idx[a] = 0;
            }
        }
        Some(Interpolated { value, grad, lap })
    }
}

/// Lagrange basis on nodes 0,1,2,3 evaluated at `s` (in node units), with
/// first and second derivatives scaled to physical spacing `h`.
fn lagrange4<T: Real>(s: T, h: T) -> [[T; 4]; 3] {
    let nodes = [T::zero(), T::one(), lit(2.0), lit(3.0)];
    let mut out = [[T::zero(); 4]; 3];
    for j in 0..4 {
        let others: Vec<T> = (0..4).filter(|&m| m != j).map(|m| nodes[m]).collect();
        let denom = others.iter().fold(T::one(), |acc, &o| acc * (nodes[j] - o));
        let (a, b, c) = (s - others[0], s - others[1], s - others[2]);
        out[0][j] = a * b * c / denom;
        out[1][j] = (b * c + a * c + a * b) / denom / h;
        out[2][j] = (a + b + c) * lit(2.0) / denom / (h * h);
    }
    out
}
