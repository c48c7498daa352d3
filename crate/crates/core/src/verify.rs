//! Weak-form check of `div(σ∇u) = 0`: the integrals `∫ σ ∇u · ∇ψ` against
//! smooth compactly supported bumps `ψ`.

use rayon::prelude::*;

use crate::field::PotentialField;
use crate::geom::{Aabb, P2};
use crate::piecewise::Region;
use crate::quadrature::{polar_rule, tensor_rule, Rule};
use crate::reconstruct::ConductivityField;
use crate::scalar::{lit, to_f64, Real};

/// Default pass threshold on the normalized residual.
pub const TOL_WEAK: f64 = 1e-5;

/// `ψ(x) = exp(−1 / (1 − |x − c|² / R²))` inside the ball, 0 outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump<T> {
    pub center: Vec<T>,
    pub radius: T,
}

impl<T: Real> Bump<T> {
    pub fn new(center: Vec<T>, radius: T) -> Self {
        assert!(radius > T::zero(), "bump radius must be positive");
        Bump { center, radius }
    }

    fn s(&self, x: &[T]) -> T {
        let r2: T = x
            .iter()
            .zip(&self.center)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        r2 / (self.radius * self.radius)
    }

    pub fn value(&self, x: &[T]) -> T {
        let s = self.s(x);
        if s >= T::one() {
            T::zero()
        } else {
            (-T::one() / (T::one() - s)).exp()
        }
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let s = self.s(x);
        if s >= T::one() {
            return vec![T::zero(); x.len()];
        }
        let q = T::one() - s;
        let f = -(-T::one() / q).exp() * lit(2.0) / (self.radius * self.radius * q * q);
        x.iter()
            .zip(&self.center)
            .map(|(&a, &c)| f * (a - c))
            .collect()
    }
}

/// Quadrature resolution per bump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakQuadrature {
    /// Gauss points in the radius (smooth 2D integrands).
    pub radial: usize,
    /// Trapezoid points in the angle (smooth 2D integrands).
    pub angular: usize,
    /// Gauss order per axis (dimensions other than 2).
    pub order: usize,
    /// Subdivisions per axis (dimensions other than 2).
    pub subdiv: usize,
    /// Gauss order per axis on bumps split along faces.
    pub split_order: usize,
    /// Subdivisions per axis on bumps split along faces.
    pub split_subdiv: usize,
}

impl Default for WeakQuadrature {
    fn default() -> Self {
        WeakQuadrature {
            radial: 16,
            angular: 32,
            order: 8,
            subdiv: 4,
            split_order: 16,
            split_subdiv: 8,
        }
    }
}

impl WeakQuadrature {
    /// Twice the points in every direction.
    pub fn refined(self) -> Self {
        WeakQuadrature {
            radial: self.radial * 2,
            angular: self.angular * 2,
            order: self.order * 2,
            subdiv: self.subdiv,
            split_order: self.split_order * 2,
            split_subdiv: self.split_subdiv,
        }
    }
}

/// Bumps plus the quadrature used on each.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSet<T> {
    pub bumps: Vec<Bump<T>>,
    pub quadrature: WeakQuadrature,
}

impl<T: Real> TestFunctionSet<T> {
    pub fn new(bumps: Vec<Bump<T>>) -> Self {
        TestFunctionSet {
            bumps,
            quadrature: WeakQuadrature::default(),
        }
    }

    /// `n` bumps per axis of radius `radius`, centers spread evenly so every
    /// ball lies inside `bbox`.
    pub fn grid(bbox: &Aabb<T>, n: usize, radius: T) -> Self {
        let d = bbox.dim();
        let axes: Vec<Vec<T>> = (0..d)
            .map(|a| {
                let lo = bbox.lo[a] + radius;
                let hi = bbox.hi[a] - radius;
                (0..n)
                    .map(|i| {
                        if n == 1 {
                            (lo + hi) * lit(0.5)
                        } else {
                            lo + (hi - lo) * lit::<T>(i as f64 / (n - 1) as f64)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut bumps = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            bumps.push(Bump::new((0..d).map(|a| axes[a][idx[a]]).collect(), radius));
            let mut a = d;
            loop {
                if a == 0 {
                    return Self::new(bumps);
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    pub fn with_quadrature(mut self, q: WeakQuadrature) -> Self {
        self.quadrature = q;
        self
    }

    pub fn len(&self) -> usize {
        self.bumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }
}

/// Residual on one bump.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpResidual<T> {
    pub center: Vec<T>,
    pub radius: T,
    /// `∫ σ ∇u · ∇ψ`.
    pub residual: T,
    /// `|residual| / (‖σ∇u‖₂ ‖∇ψ‖₂)` over the ball.
    pub normalized: T,
    /// Why the bump was excluded, if it was.
    pub flagged: Option<String>,
}

/// Per-bump residuals with summary statistics over unflagged bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakResidualReport<T> {
    pub entries: Vec<BumpResidual<T>>,
    pub max_normalized: T,
    pub mean_normalized: T,
    pub max_abs: T,
}

impl<T: Real> WeakResidualReport<T> {
    pub fn flagged(&self) -> usize {
        self.entries.iter().filter(|e| e.flagged.is_some()).count()
    }

    pub fn passes(&self, tol: T) -> bool {
        self.flagged() == 0 && self.max_normalized <= tol
    }

    /// Tab-separated table `c1..cd radius residual normalized` followed by a
    /// `#` summary line.
    pub fn to_table(&self) -> String {
        let d = self.entries.first().map_or(0, |e| e.center.len());
        let mut out: String = (1..=d).map(|i| format!("c{i}\t")).collect();
        out.push_str("radius\tresidual\tnormalized\n");
        for e in &self.entries {
            for &c in &e.center {
                out.push_str(&format!("{:.17e}\t", to_f64(c)));
            }
            let (r, n) = match e.flagged {
                Some(_) => ("nan".to_string(), "nan".to_string()),
                None => (
                    format!("{:.6e}", to_f64(e.residual)),
                    format!("{:.6e}", to_f64(e.normalized)),
                ),
            };
            out.push_str(&format!("{:.17e}\t{r}\t{n}\n", to_f64(e.radius)));
        }
        out.push_str(&self.summary());
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "# bumps={} flagged={} max_normalized={:.6e} mean_normalized={:.6e} max_abs={:.6e}",
            self.entries.len(),
            self.flagged(),
            to_f64(self.max_normalized),
            to_f64(self.mean_normalized),
            to_f64(self.max_abs)
        )
    }
}

/// Integration nodes for one bump: `(piece, rule)` pairs. Piece `None`
/// means the integrand is smooth across the whole ball.
fn bump_rules<T: Real>(
    b: &Bump<T>,
    pieces: Option<&[Region<T>]>,
    q: &WeakQuadrature,
) -> Result<Vec<(Option<usize>, Rule<T>)>, String> {
    let d = b.center.len();
    match pieces {
        Some(regions) if d == 2 => {
            let c: P2<T> = [b.center[0], b.center[1]];
            let lo = [c[0] - b.radius, c[1] - b.radius];
            let hi = [c[0] + b.radius, c[1] + b.radius];
            let mut out = Vec::new();
            for (i, r) in regions.iter().enumerate() {
                let rule = r
                    .rule_in_square(lo, hi, q.split_order, q.split_subdiv)
                    .map_err(|e| e.to_string())?;
                if !rule.is_empty() {
                    out.push((Some(i), rule));
                }
            }
            Ok(out)
        }
        None if d == 2 => Ok(vec![(
            None,
            polar_rule([b.center[0], b.center[1]], b.radius, q.radial, q.angular),
        )]),
        _ => Ok(vec![(
            None,
            tensor_rule(&b.center, b.radius, q.order, q.subdiv),
        )]),
    }
}

fn one_bump<T: Real>(
    sigma: &ConductivityField<T>,
    field: &PotentialField<T>,
    b: &Bump<T>,
    pieces: Option<&[Region<T>]>,
    sigma_pieces: bool,
    q: &WeakQuadrature,
) -> BumpResidual<T> {
    let mut out = BumpResidual {
        center: b.center.clone(),
        radius: b.radius,
        residual: T::zero(),
        normalized: T::zero(),
        flagged: None,
    };
    let rules = match bump_rules(b, pieces, q) {
        Ok(r) => r,
        Err(e) => {
            out.flagged = Some(e);
            return out;
        }
    };
    let mut res = T::zero();
    let mut flux2 = T::zero();
    let mut psi2 = T::zero();
    for (piece, rule) in &rules {
        for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
            if b.s(x) >= T::one() {
                continue;
            }
            let g = match field.eval(x) {
                Ok(e) => e.grad,
                Err(e) => {
                    out.flagged = Some(format!("∇u unavailable: {e}"));
                    return out;
                }
            };
            let s = match piece {
                Some(i) if sigma_pieces => sigma.eval_in_piece(*i, x),
                _ => sigma.eval(x),
            };
            let s = match s {
                Ok(s) => s,
                Err(e) => {
                    out.flagged = Some(format!("σ unavailable: {e}"));
                    return out;
                }
            };
            let dpsi = b.gradient(x);
            let mut dot = T::zero();
            let mut f2 = T::zero();
            let mut p2 = T::zero();
            for k in 0..g.len() {
                dot += g[k] * dpsi[k];
                f2 += g[k] * g[k];
                p2 += dpsi[k] * dpsi[k];
            }
            res += w * s * dot;
            flux2 += w * s * s * f2;
            psi2 += w * p2;
        }
    }
    out.residual = res;
    let denom = (flux2 * psi2).sqrt();
    out.normalized = if denom > T::zero() {
        res.abs() / denom
    } else {
        res.abs()
    };
    out
}

/// Integrates `σ ∇u · ∇ψ` over every bump. Balls crossing a face of a
/// piecewise `σ` (or `u`) are split along the faces and each part uses its
/// own one-sided values.
pub fn weak_residual<T: Real>(
    sigma: &ConductivityField<T>,
    field: &PotentialField<T>,
    tests: &TestFunctionSet<T>,
) -> WeakResidualReport<T> {
    let sigma_regions = sigma.pieces();
    let sigma_pieces = sigma_regions.is_some();
    let regions = sigma_regions.or_else(|| field.pieces());
    let entries: Vec<BumpResidual<T>> = tests
        .bumps
        .par_iter()
        .map(|b| {
            one_bump(
                sigma,
                field,
                b,
                regions.as_deref(),
                sigma_pieces,
                &tests.quadrature,
            )
        })
        .collect();
    let ok: Vec<&BumpResidual<T>> = entries.iter().filter(|e| e.flagged.is_none()).collect();
    let max_normalized = ok.iter().map(|e| e.normalized).fold(T::zero(), T::max);
    let max_abs = ok.iter().map(|e| e.residual.abs()).fold(T::zero(), T::max);
    let mean_normalized = if ok.is_empty() {
        T::zero()
    } else {
        ok.iter().map(|e| e.normalized).sum::<T>() / lit(ok.len() as f64)
    };
    WeakResidualReport {
        entries,
        max_normalized,
        mean_normalized,
        max_abs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Aabb<f64> {
        Aabb::cube(2, 1.0)
    }

    #[test]
    fn bump_gradient_matches_differences() {
        let b = Bump::new(vec![0.1f64, -0.2], 0.7);
        let x = [0.3, 0.1];
        let g = b.gradient(&x);
        let h = 1e-6;
        for k in 0..2 {
            let mut p = x;
            let mut m = x;
            p[k] += h;
            m[k] -= h;
            let fd = (b.value(&p) - b.value(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
        assert_eq!(b.value(&[0.8, -0.2]), 0.0);
        assert_eq!(b.gradient(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn grid_bumps_stay_inside() {
        let t = TestFunctionSet::grid(&square(), 4, 0.5);
        assert_eq!(t.len(), 16);
        for b in &t.bumps {
            for &c in &b.center {
                assert!(c - 0.5 >= -1.0 - 1e-15 && c + 0.5 <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn affine_pair_has_zero_residual() {
        let u = PotentialField::affine(vec![0.4, -1.3], 0.0);
        let r = weak_residual(
            &ConductivityField::constant(1.0),
            &u,
            &TestFunctionSet::grid(&square(), 4, 0.5),
        );
        assert!(r.max_abs < 1e-12, "{}", r.max_abs);
    }

    #[test]
    fn closed_form_pair_and_detection() {
        let u = PotentialField::parse("x1 + x2^2/4", 2).unwrap();
        let tests = TestFunctionSet::grid(&square(), 4, 0.5);
        let good = weak_residual(
            &ConductivityField::parse("exp(-x1/2)", 2).unwrap(),
            &u,
            &tests,
        );
        assert!(good.max_normalized < 1e-6, "{}", good.max_normalized);
        let bad = weak_residual(&ConductivityField::constant(1.0), &u, &tests);
        assert!(bad.max_normalized >= 0.05, "{}", bad.max_normalized);
        let scaled = weak_residual(
            &ConductivityField::parse("exp(-x1/2)", 2)
                .unwrap()
                .scaled(10.0),
            &u,
            &tests,
        );
        for (a, b) in good.entries.iter().zip(&scaled.entries) {
            assert!((a.normalized - b.normalized).abs() < 1e-12);
        }
    }

    #[test]
    fn holes_flag_bumps() {
        let u = PotentialField::affine(vec![1.0, 0.0], 0.0);
        let sigma =
            ConductivityField::function(|x: &[f64]| if x[0] > 0.5 { None } else { Some(1.0) });
        let r = weak_residual(&sigma, &u, &TestFunctionSet::grid(&square(), 2, 0.4));
        assert_eq!(r.flagged(), 2);
        assert!(!r.passes(1e-5));
        assert!(r.to_table().contains("flagged=2"));
    }
}
