//! Quadrature rules: Gauss-Legendre, tensor and polar products, triangles,
//! and adaptive 1D integration.

use crate::geom::P2;
use crate::scalar::{lit, Real};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "Gauss rule needs at least one node");
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (
        nodes.into_iter().map(lit).collect(),
        weights.into_iter().map(lit).collect(),
    )
}

/// A list of weighted nodes.
#[derive(Debug, Clone)]
pub struct Rule<T> {
    pub nodes: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

impl<T: Real> Rule<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate<F: FnMut(&[T]) -> T>(&self, mut f: F) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, &w)| w * f(x))
            .sum()
    }
}

/// Composite tensor-product Gauss rule over `[center - half, center + half]^d`
/// with `pieces` sub-intervals per axis and `order` nodes per sub-interval.
pub fn tensor_rule<T: Real>(center: &[T], half: T, order: usize, pieces: usize) -> Rule<T> {
    let (gx, gw) = gauss_legendre::<T>(order);
    let h = half * lit(2.0) / T::from_usize(pieces).unwrap();
    let mut xs = Vec::with_capacity(order * pieces);
    let mut ws = Vec::with_capacity(order * pieces);
    for p in 0..pieces {
        let a = -half + h * T::from_usize(p).unwrap();
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(a + (*x + T::one()) * h * lit(0.5));
            ws.push(*w * h * lit(0.5));
        }
    }
    let d = center.len();
    let m = xs.len();
    let total = m.pow(d as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        nodes.push((0..d).map(|a| center[a] + xs[idx[a]]).collect());
        weights.push(idx.iter().map(|&i| ws[i]).fold(T::one(), |acc, w| acc * w));
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
        }
    }
    Rule { nodes, weights }
}

/// Polar rule on the disk of radius `radius` around `center`: Gauss in the
/// radius, trapezoid (spectrally accurate for periodic integrands) in angle.
pub fn polar_rule<T: Real>(center: P2<T>, radius: T, radial: usize, angular: usize) -> Rule<T> {
    let (gx, gw) = gauss_legendre::<T>(radial);
    let dtheta = T::TAU() / T::from_usize(angular).unwrap();
    let mut nodes = Vec::with_capacity(radial * angular);
    let mut weights = Vec::with_capacity(radial * angular);
    for (x, w) in gx.iter().zip(&gw) {
        let r = (*x + T::one()) * radius * lit(0.5);
        let wr = *w * radius * lit(0.5) * r * dtheta;
        for k in 0..angular {
            // half-step offset keeps nodes off the axes
            let th = dtheta * (T::from_usize(k).unwrap() + lit(0.5));
            nodes.push(vec![center[0] + r * th.cos(), center[1] + r * th.sin()]);
            weights.push(wr);
        }
    }
    Rule { nodes, weights }
}

/// Collapsed (Duffy) Gauss rule on the triangle `abc`, with the triangle
/// uniformly subdivided into `subdiv^2` congruent pieces.
pub fn triangle_rule<T: Real>(
    a: P2<T>,
    b: P2<T>,
    c: P2<T>,
    order: usize,
    subdiv: usize,
) -> Rule<T> {
    let (gx, gw) = gauss_legendre::<T>(order);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let s = T::from_usize(subdiv).unwrap();
    let bary = |i: T, j: T| -> P2<T> {
        // point a + (i/s)(b-a) + (j/s)(c-a)
        [
            a[0] + (b[0] - a[0]) * i / s + (c[0] - a[0]) * j / s,
            a[1] + (b[1] - a[1]) * i / s + (c[1] - a[1]) * j / s,
        ]
    };
    let mut push_tri = |p: P2<T>, q: P2<T>, r: P2<T>| {
        let area2 = ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])).abs();
        for (xu, wu) in gx.iter().zip(&gw) {
            let u = (*xu + T::one()) * lit(0.5);
            for (xv, wv) in gx.iter().zip(&gw) {
                let v = (*xv + T::one()) * lit(0.5);
                // (u, v) in unit square -> (u, (1-u) v) in reference triangle
                let s1 = u;
                let s2 = (T::one() - u) * v;
                nodes.push(vec![
                    p[0] + s1 * (q[0] - p[0]) + s2 * (r[0] - p[0]),
                    p[1] + s1 * (q[1] - p[1]) + s2 * (r[1] - p[1]),
                ]);
                weights.push(*wu * *wv * lit(0.25) * (T::one() - u) * area2);
            }
        }
    };
    for i in 0..subdiv {
        for j in 0..(subdiv - i) {
            let (fi, fj) = (T::from_usize(i).unwrap(), T::from_usize(j).unwrap());
            push_tri(
                bary(fi, fj),
                bary(fi + T::one(), fj),
                bary(fi, fj + T::one()),
            );
            if i + j + 1 < subdiv {
                push_tri(
                    bary(fi + T::one(), fj),
                    bary(fi + T::one(), fj + T::one()),
                    bary(fi, fj + T::one()),
                );
            }
        }
    }
    Rule { nodes, weights }
}

/// Rule over a convex polygon: fan triangulation from vertex 0.
pub fn polygon_rule<T: Real>(poly: &[P2<T>], order: usize, subdiv: usize) -> Rule<T> {
    let mut rule = Rule {
        nodes: Vec::new(),
        weights: Vec::new(),
    };
    for i in 1..poly.len().saturating_sub(1) {
        let r = triangle_rule(poly[0], poly[i], poly[i + 1], order, subdiv);
        rule.nodes.extend(r.nodes);
        rule.weights.extend(r.weights);
    }
    rule
}

/// Adaptive Gauss-Kronrod (7-15) integration of `f` over `[a, b]` to absolute
/// tolerance `tol`. Works for `a > b` (returns the signed integral).
pub fn adaptive_integrate<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    if a == b {
        return T::zero();
    }
    fn gk15<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
        const XK: [f64; 8] = [
            0.991_455_371_120_812_6,
            0.949_107_912_342_758_5,
            0.864_864_423_359_769_1,
            0.741_531_185_599_394_4,
            0.586_087_235_467_691_1,
            0.405_845_151_377_397_2,
            0.207_784_955_007_898_5,
            0.0,
        ];
        const WK: [f64; 8] = [
            0.022_935_322_010_529_22,
            0.063_092_092_629_978_55,
            0.104_790_010_322_250_2,
            0.140_653_259_715_525_9,
            0.169_004_726_639_267_9,
            0.190_350_578_064_785_4,
            0.204_432_940_075_298_9,
            0.209_482_141_084_727_8,
        ];
        const WG: [f64; 4] = [
            0.129_484_966_168_869_7,
            0.279_705_391_489_276_7,
            0.381_830_050_505_118_9,
            0.417_959_183_673_469_4,
        ];
        let c = (a + b) * lit(0.5);
        let h = (b - a) * lit(0.5);
        let fc = f(c);
        let mut k = fc * lit(WK[7]);
        let mut g = fc * lit(WG[3]);
        for j in 0..7 {
            let x = h * lit(XK[j]);
            let s = f(c - x) + f(c + x);
            k += s * lit(WK[j]);
            if j % 2 == 1 {
                g += s * lit(WG[j / 2]);
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    let mut stack = vec![(a, b, tol)];
    let mut total = T::zero();
    let mut depth_guard = 0usize;
    while let Some((lo, hi, t)) = stack.pop() {
        let (val, err) = gk15(f, lo, hi);
        depth_guard += 1;
        if err <= t
            || depth_guard > 20_000
            || (hi - lo).abs() < lit::<T>(1e-14) * (T::one() + lo.abs())
        {
            total += val;
        } else {
            let mid = (lo + hi) * lit(0.5);
            let half = t * lit(0.5);
            stack.push((mid, hi, half));
            stack.push((lo, mid, half));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre::<f64>(n);
            let wsum: f64 = w.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n={n}");
            assert!(w.iter().all(|&wi| wi > 0.0));
            // degree 2n-1 monomial
            let k = 2 * n - 2;
            let val: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * xi.powi(k as i32))
                .sum();
            assert!((val - 2.0 / (k as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn tensor_and_polar_areas() {
        let t = tensor_rule(&[0.0f64, 0.0], 1.0, 3, 2);
        assert_eq!(t.len(), 36);
        assert!((t.integrate(|_| 1.0) - 4.0).abs() < 1e-13);
        assert!((t.integrate(|x| x[0] * x[0] * x[1] * x[1]) - 4.0 / 9.0).abs() < 1e-13);
        let p = polar_rule([1.0, 2.0], 0.5, 8, 16);
        assert!((p.integrate(|_| 1.0) - std::f64::consts::PI * 0.25).abs() < 1e-13);
    }

    #[test]
    fn triangle_and_polygon_rules() {
        let r = triangle_rule([0.0f64, 0.0], [2.0, 0.0], [0.0, 1.0], 4, 3);
        assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-13);
        // int over triangle of x = area * centroid_x = 1 * 2/3
        assert!((r.integrate(|p| p[0]) - 2.0 / 3.0).abs() < 1e-13);
        let sq = [[0.0f64, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let pr = polygon_rule(&sq, 5, 2);
        assert!((pr.integrate(|p| p[0] * p[1]) - 0.25).abs() < 1e-13);
    }

    #[test]
    fn adaptive_arctan_primitive() {
        let v = adaptive_integrate(&|t: f64| 1.0 / (1.0 + t * t), 0.0, 1.7, 1e-12);
        assert!((v - 1.7f64.atan()).abs() < 1e-12);
        let back = adaptive_integrate(&|t: f64| 1.0 / (1.0 + t * t), 0.0, -0.3, 1e-12);
        assert!((back - (-0.3f64).atan()).abs() < 1e-12);
    }
}
