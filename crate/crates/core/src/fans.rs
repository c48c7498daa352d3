//! Two explicit families: cone fans (2D piecewise-linear potentials with one
//! constant gradient per cone) and separated potentials
//! `u = g(x1) + f(x')` for `x1 > 0`, `h(x1) + f(x')` for `x1 < 0`.
//!
//! Fans are generic over [`Scalar`], so validation, the loop constraint and
//! the conductivity values can be computed exactly with `Rational64`.

use std::fmt;

use num_rational::Rational64;
use thiserror::Error;

use crate::expr::{Expr, ParseError};
use crate::field::{Eval, FieldError, PotentialField};
use crate::flow::{integrate_flow, FlowError, FlowOptions};
use crate::geom::{Aabb, ConvexRegion, P2};
use crate::piecewise::flux::{flux_match_value, FluxError};
use crate::quadrature::adaptive_integrate;
use crate::scalar::{lit, norm, to_f64, Real, Scalar};

/// `det(u, v) = u_x v_y − u_y v_x`.
pub fn det<S: Scalar>(u: &[S; 2], v: &[S; 2]) -> S {
    S::det2(&u[0], &v[0], &u[1], &v[1])
}

fn sabs<S: Scalar>(x: &S) -> S {
    if *x < S::zero() {
        S::zero() - x.clone()
    } else {
        x.clone()
    }
}

fn is_zero_vec<S: Scalar>(v: &[S; 2]) -> bool {
    v[0].is_zero() && v[1].is_zero()
}

/// Parses `"3"`, `"-0.25"`, `"1e-3"` or `"2/3"` as an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational64, String> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d == Rational64::from_integer(0) {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(n / d);
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (
            &s[..i],
            s[i + 1..]
                .parse::<i32>()
                .map_err(|_| format!("bad exponent in {s:?}"))?,
        ),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(format!("not a number: {s:?}"));
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(format!("not a number: {s:?}"));
    }
    let digits = format!("{int}{frac}");
    let mut num: i64 = digits
        .parse()
        .map_err(|_| format!("too many digits in {s:?}"))?;
    if neg {
        num = -num;
    }
    let scale = exp - frac.len() as i32;
    let ten = Rational64::from_integer(10);
    let mut r = Rational64::from_integer(num);
    for _ in 0..scale.unsigned_abs() {
        r = if scale > 0 { r * ten } else { r / ten };
    }
    Ok(r)
}

/// A violated fan invariant. Indices are 0-based; `Display` prints them
/// 1-based to match the usual `ξ_1..ξ_n` labelling.
#[derive(Debug, Clone, PartialEq)]
pub enum FanViolation {
    TooFewSpokes {
        n: usize,
    },
    ZeroSpoke {
        spoke: usize,
    },
    ZeroGradient {
        cone: usize,
    },
    /// The cone between `ξ_k` and `ξ_{k+1}` is not a proper convex cone in
    /// counter-clockwise order.
    NotConvex {
        cone: usize,
    },
    ConeContainsSpoke {
        cone: usize,
        spoke: usize,
    },
    /// `(λ_k − λ_{k−1}) . ξ_k ≠ 0`.
    Discontinuous {
        spoke: usize,
        jump: f64,
    },
    /// `λ_k = λ_{k−1}`.
    Degenerate {
        spoke: usize,
    },
}

impl fmt::Display for FanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FanViolation::TooFewSpokes { n } => write!(f, "a fan needs at least 2 spokes, got {n}"),
            FanViolation::ZeroSpoke { spoke } => {
                write!(f, "spoke ξ{} is the zero vector", spoke + 1)
            }
            FanViolation::ZeroGradient { cone } => {
                write!(f, "gradient λ{} is the zero vector", cone + 1)
            }
            FanViolation::NotConvex { cone } => write!(
                f,
                "cone {} (from ξ{} to the next spoke) is not a convex counter-clockwise cone",
                cone + 1,
                cone + 1
            ),
            FanViolation::ConeContainsSpoke { cone, spoke } => {
                write!(f, "cone {} contains spoke ξ{}", cone + 1, spoke + 1)
            }
            FanViolation::Discontinuous { spoke, jump } => write!(
                f,
                "u jumps across spoke ξ{}: (λ{} − λ{}) . ξ{} = {jump}",
                spoke + 1,
                spoke + 1,
                if *spoke == 0 { 0 } else { *spoke },
                spoke + 1
            ),
            FanViolation::Degenerate { spoke } => write!(
                f,
                "gradients on both sides of spoke ξ{} coincide",
                spoke + 1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FanError {
    #[error("spokes and gradients differ in number ({spokes} vs {gradients})")]
    Shape { spokes: usize, gradients: usize },
    #[error("invalid fan: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FanViolation>),
    #[error("no cone contains a direction parallel to its own gradient")]
    NoSplit,
    #[error("cone {} has no interior direction parallel to its gradient", .cone + 1)]
    SplitUnavailable { cone: usize },
    /// `det(ξ_k, λ_k) · det(ξ_k, λ_{k−1}) ≤ 0` at a spoke crossed by the chain.
    #[error(
        "sign condition fails at spoke ξ{}: det(ξ{k}, λ{k}) · det(ξ{k}, λ{p}) = {product} is not positive",
        .spoke + 1, k = .spoke + 1, p = if *.spoke == 0 { *.n } else { *.spoke }
    )]
    SignCondition {
        spoke: usize,
        n: usize,
        product: f64,
    },
}

/// Loop-constraint products `∏ det(ξ_k, λ_k)` and
/// `det(ξ_1, λ_n) · ∏_{k≥2} det(ξ_k, λ_{k−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopCheck<S> {
    pub lhs: S,
    pub rhs: S,
    pub holds: bool,
}

/// Circularly ordered spokes `ξ_k` with gradient `λ_k` on the cone between
/// `ξ_k` and `ξ_{k+1}` (indices mod n).
#[derive(Debug, Clone, PartialEq)]
pub struct ConeFan<S> {
    spokes: Vec<[S; 2]>,
    gradients: Vec<[S; 2]>,
}

impl<S: Scalar> ConeFan<S> {
    pub fn new(spokes: Vec<[S; 2]>, gradients: Vec<[S; 2]>) -> Result<Self, FanError> {
        if spokes.len() != gradients.len() {
            return Err(FanError::Shape {
                spokes: spokes.len(),
                gradients: gradients.len(),
            });
        }
        Ok(ConeFan { spokes, gradients })
    }

    pub fn len(&self) -> usize {
        self.spokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spokes.is_empty()
    }

    pub fn spokes(&self) -> &[[S; 2]] {
        &self.spokes
    }

    pub fn gradients(&self) -> &[[S; 2]] {
        &self.gradients
    }

    fn next(&self, k: usize) -> usize {
        (k + 1) % self.len()
    }

    fn prev(&self, k: usize) -> usize {
        (k + self.len() - 1) % self.len()
    }

    /// Converts every coordinate with `f`.
    pub fn map<U, F: Fn(&S) -> U>(&self, f: F) -> ConeFan<U> {
        let conv = |v: &[S; 2]| [f(&v[0]), f(&v[1])];
        ConeFan {
            spokes: self.spokes.iter().map(conv).collect(),
            gradients: self.gradients.iter().map(conv).collect(),
        }
    }

    /// Whether `v` lies in the open cone `k`.
    pub fn strictly_inside(&self, k: usize, v: &[S; 2]) -> bool {
        let a = &self.spokes[k];
        let b = &self.spokes[self.next(k)];
        det(a, v) > S::zero() && det(v, b) > S::zero()
    }

    /// Checks the geometric, continuity and nondegeneracy invariants and
    /// reports every violation.
    pub fn validate(&self) -> Result<(), Vec<FanViolation>> {
        let n = self.len();
        let mut out = Vec::new();
        if n < 2 {
            out.push(FanViolation::TooFewSpokes { n });
            return Err(out);
        }
        for k in 0..n {
            if is_zero_vec(&self.spokes[k]) {
                out.push(FanViolation::ZeroSpoke { spoke: k });
            }
            if is_zero_vec(&self.gradients[k]) {
                out.push(FanViolation::ZeroGradient { cone: k });
            }
        }
        if !out.is_empty() {
            return Err(out);
        }
        for k in 0..n {
            let a = &self.spokes[k];
            let b = &self.spokes[self.next(k)];
            if det(a, b) <= S::zero() {
                out.push(FanViolation::NotConvex { cone: k });
                continue;
            }
            for j in 0..n {
                if j == k || j == self.next(k) {
                    continue;
                }
                let v = &self.spokes[j];
                if det(a, v) >= S::zero() && det(v, b) >= S::zero() {
                    out.push(FanViolation::ConeContainsSpoke { cone: k, spoke: j });
                }
            }
        }
        for k in 0..n {
            let p = self.prev(k);
            let dl = [
                self.gradients[k][0].clone() - self.gradients[p][0].clone(),
                self.gradients[k][1].clone() - self.gradients[p][1].clone(),
            ];
            let xi = &self.spokes[k];
            let jump = dl[0].clone() * xi[0].clone() + dl[1].clone() * xi[1].clone();
            let scale = (sabs(&self.gradients[k][0])
                + sabs(&self.gradients[k][1])
                + sabs(&self.gradients[p][0])
                + sabs(&self.gradients[p][1]))
                * (sabs(&xi[0]) + sabs(&xi[1]));
            if !S::negligible(&jump, &scale) {
                out.push(FanViolation::Discontinuous {
                    spoke: k,
                    jump: jump.to_f64_lossy(),
                });
            }
            if is_zero_vec(&dl) {
                out.push(FanViolation::Degenerate { spoke: k });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Both loop products and whether they agree (exactly for exact scalars,
    /// within 1e-12 relative otherwise).
    pub fn loop_constraint(&self) -> LoopCheck<S> {
        let n = self.len();
        let mut lhs = S::one();
        let mut rhs = S::one();
        for k in 0..n {
            lhs = lhs * det(&self.spokes[k], &self.gradients[k]);
            rhs = rhs * det(&self.spokes[k], &self.gradients[self.prev(k)]);
        }
        let holds = if S::EXACT {
            lhs == rhs
        } else {
            let diff = sabs(&(lhs.clone() - rhs.clone())).to_f64_lossy();
            let scale = sabs(&lhs).to_f64_lossy().max(sabs(&rhs).to_f64_lossy());
            diff <= 1e-12 * scale
        };
        LoopCheck { lhs, rhs, holds }
    }

    /// Direction `±λ_k` strictly inside cone `k`, preferring `+λ_k`.
    pub fn split_direction(&self, k: usize) -> Option<[S; 2]> {
        let l = &self.gradients[k];
        let neg = [S::zero() - l[0].clone(), S::zero() - l[1].clone()];
        if self.strictly_inside(k, l) {
            Some(l.clone())
        } else if self.strictly_inside(k, &neg) {
            Some(neg)
        } else {
            None
        }
    }

    /// Splits the first cone (lowest index) containing its own gradient
    /// direction `+λ_k`; if none does, the first containing `−λ_k`.
    pub fn split(&self) -> Result<SplitFan<S>, FanError> {
        self.validate().map_err(FanError::Invalid)?;
        let n = self.len();
        for k in 0..n {
            if self.strictly_inside(k, &self.gradients[k]) {
                return self.split_at(k);
            }
        }
        for k in 0..n {
            if self.split_direction(k).is_some() {
                return self.split_at(k);
            }
        }
        Err(FanError::NoSplit)
    }

    /// Splits cone `k` explicitly.
    pub fn split_at(&self, k: usize) -> Result<SplitFan<S>, FanError> {
        self.validate().map_err(FanError::Invalid)?;
        let direction = self
            .split_direction(k)
            .ok_or(FanError::SplitUnavailable { cone: k })?;
        Ok(SplitFan {
            fan: self.clone(),
            cone: k,
            direction,
        })
    }
}

impl ConeFan<Rational64> {
    /// Parses spoke and gradient coordinates given as decimal or `p/q` text.
    pub fn parse(spokes: &[[&str; 2]], gradients: &[[&str; 2]]) -> Result<Self, String> {
        let conv = |v: &[&str; 2]| -> Result<[Rational64; 2], String> {
            Ok([parse_rational(v[0])?, parse_rational(v[1])?])
        };
        let s = spokes.iter().map(conv).collect::<Result<Vec<_>, _>>()?;
        let g = gradients.iter().map(conv).collect::<Result<Vec<_>, _>>()?;
        ConeFan::new(s, g).map_err(|e| e.to_string())
    }
}

/// One piece of a split fan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FanPiece {
    /// A whole, unsplit cone.
    Cone(usize),
    /// The part of the split cone between the split ray and `ξ_{k+1}`; the
    /// chain starts here.
    SplitStart(usize),
    /// The part of the split cone between `ξ_k` and the split ray; the chain
    /// ends here.
    SplitEnd(usize),
}

impl fmt::Display for FanPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FanPiece::Cone(k) => write!(f, "cone {}", k + 1),
            FanPiece::SplitStart(k) => write!(f, "cone {} (second part)", k + 1),
            FanPiece::SplitEnd(k) => write!(f, "cone {} (first part)", k + 1),
        }
    }
}

/// A valid fan with one cone divided along a ray parallel to its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFan<S> {
    pub fan: ConeFan<S>,
    pub cone: usize,
    pub direction: [S; 2],
}

/// One crossing of the chain: from `up` to `down` across spoke `spoke`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    pub spoke: usize,
    pub up: FanPiece,
    pub down: FanPiece,
}

impl<S: Scalar> SplitFan<S> {
    /// Pieces in chain order, starting and ending in the split cone.
    pub fn chain(&self) -> Vec<FanPiece> {
        let n = self.fan.len();
        let k = self.cone;
        let mut out = vec![FanPiece::SplitStart(k)];
        for m in 1..n {
            out.push(FanPiece::Cone((k + m) % n));
        }
        out.push(FanPiece::SplitEnd(k));
        out
    }

    /// Spoke crossings in chain order.
    pub fn crossings(&self) -> Vec<Crossing> {
        let n = self.fan.len();
        let chain = self.chain();
        (0..n)
            .map(|m| Crossing {
                spoke: (self.cone + m + 1) % n,
                up: chain[m],
                down: chain[m + 1],
            })
            .collect()
    }

    pub fn gradient(&self, piece: FanPiece) -> &[S; 2] {
        match piece {
            FanPiece::Cone(k) | FanPiece::SplitStart(k) | FanPiece::SplitEnd(k) => {
                &self.fan.gradients[k]
            }
        }
    }

    /// Bounding rays `(from, to)` of a piece in counter-clockwise order.
    pub fn rays(&self, piece: FanPiece) -> ([S; 2], [S; 2]) {
        let n = self.fan.len();
        match piece {
            FanPiece::Cone(k) => (
                self.fan.spokes[k].clone(),
                self.fan.spokes[(k + 1) % n].clone(),
            ),
            FanPiece::SplitStart(k) => {
                (self.direction.clone(), self.fan.spokes[(k + 1) % n].clone())
            }
            FanPiece::SplitEnd(k) => (self.fan.spokes[k].clone(), self.direction.clone()),
        }
    }

    /// `λ_k . ν` for the split ray's normal; zero by construction.
    pub fn split_normal_derivative(&self) -> S {
        let l = &self.fan.gradients[self.cone];
        let nu = [
            S::zero() - self.direction[1].clone(),
            self.direction[0].clone(),
        ];
        l[0].clone() * nu[0].clone() + l[1].clone() * nu[1].clone()
    }

    fn sign_check(&self) -> Result<(), FanError> {
        let n = self.fan.len();
        for c in self.crossings() {
            let xi = &self.fan.spokes[c.spoke];
            let product = det(xi, self.gradient(c.down)) * det(xi, self.gradient(c.up));
            if product <= S::zero() {
                return Err(FanError::SignCondition {
                    spoke: c.spoke,
                    n,
                    product: product.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant conductivity on the pieces of a split fan.
#[derive(Debug, Clone, PartialEq)]
pub struct FanSigma<S> {
    /// `(piece, σ)` in chain order.
    pub values: Vec<(FanPiece, S)>,
}

impl<S: Scalar> FanSigma<S> {
    pub fn get(&self, piece: FanPiece) -> Option<&S> {
        self.values
            .iter()
            .find(|(p, _)| *p == piece)
            .map(|(_, v)| v)
    }

    pub fn chain_values(&self) -> Vec<S> {
        self.values.iter().map(|(_, v)| v.clone()).collect()
    }

    /// `σ` on the first and the last piece (both inside the split cone).
    pub fn split_pair(&self) -> (S, S) {
        (
            self.values[0].1.clone(),
            self.values[self.values.len() - 1].1.clone(),
        )
    }
}

/// Cumulative products of `det(ξ_j, λ_{j−1}) / det(ξ_j, λ_j)` around the chain,
/// starting from `seed` on the first split piece.
pub fn fan_sigma_closed_form<S: Scalar>(
    split: &SplitFan<S>,
    seed: S,
) -> Result<FanSigma<S>, FanError> {
    split.sign_check()?;
    let fan = &split.fan;
    let n = fan.len();
    let ratio = |j: usize| -> S {
        let xi = &fan.spokes[j];
        det(xi, &fan.gradients[(j + n - 1) % n]) / det(xi, &fan.gradients[j])
    };
    let chain = split.chain();
    let mut values = Vec::with_capacity(chain.len());
    let mut acc = seed;
    values.push((chain[0], acc.clone()));
    for m in 1..=n {
        acc = acc * ratio((split.cone + m) % n);
        values.push((chain[m], acc.clone()));
    }
    Ok(FanSigma { values })
}

/// Same values obtained by matching fluxes across each spoke in turn, with
/// the normal `ν = rot90(ξ)`.
pub fn fan_propagation_oracle<S: Scalar>(
    split: &SplitFan<S>,
    seed: S,
) -> Result<FanSigma<S>, FanError> {
    let n = split.fan.len();
    let mut values = vec![(split.chain()[0], seed.clone())];
    let mut sigma = seed;
    for c in split.crossings() {
        let xi = &split.fan.spokes[c.spoke];
        let nu = [S::zero() - xi[1].clone(), xi[0].clone()];
        let dn = |l: &[S; 2]| l[0].clone() * nu[0].clone() + l[1].clone() * nu[1].clone();
        let up = dn(split.gradient(c.up));
        let down = dn(split.gradient(c.down));
        sigma = flux_match_value(sigma, up.clone(), down.clone()).map_err(|e| match e {
            FluxError::OppositeSigns { .. } | FluxError::Tangential | FluxError::NonPositive => {
                FanError::SignCondition {
                    spoke: c.spoke,
                    n,
                    product: (up * down).to_f64_lossy(),
                }
            }
        })?;
        values.push((c.down, sigma.clone()));
    }
    Ok(FanSigma { values })
}

/// Float evaluator for the continuous piecewise-linear potential
/// `u(x) = λ_k . x` on cone `k`.
#[derive(Debug, Clone)]
pub struct FanField<T> {
    spokes: Vec<P2<T>>,
    gradients: Vec<P2<T>>,
}

impl<T: Real> FanField<T> {
    pub fn new<S: Scalar>(fan: &ConeFan<S>) -> Result<Self, FanError> {
        fan.validate().map_err(FanError::Invalid)?;
        let c = |v: &[S; 2]| [lit::<T>(v[0].to_f64_lossy()), lit::<T>(v[1].to_f64_lossy())];
        Ok(FanField {
            spokes: fan.spokes.iter().map(c).collect(),
            gradients: fan.gradients.iter().map(c).collect(),
        })
    }

    /// Index of the open cone containing `x`, or the spoke `x` lies on
    /// (within `1e-12 (1 + |x|)`). The origin reports spoke 0.
    pub fn locate(&self, x: P2<T>) -> Result<usize, usize> {
        let tol = lit::<T>(1e-12) * (T::one() + norm(&x));
        if norm(&x) <= tol {
            return Err(0);
        }
        let n = self.spokes.len();
        for (k, s) in self.spokes.iter().enumerate() {
            let len = norm(s);
            let cr = (s[0] * x[1] - s[1] * x[0]) / len;
            if cr.abs() <= tol && s[0] * x[0] + s[1] * x[1] > T::zero() {
                return Err(k);
            }
        }
        for k in 0..n {
            let a = self.spokes[k];
            let b = self.spokes[(k + 1) % n];
            if a[0] * x[1] - a[1] * x[0] > T::zero() && x[0] * b[1] - x[1] * b[0] > T::zero() {
                return Ok(k);
            }
        }
        Err(0)
    }

    pub fn eval(&self, x: &[T]) -> Result<Eval<T>, FieldError> {
        let p = [x[0], x[1]];
        match self.locate(p) {
            Ok(k) => {
                let l = self.gradients[k];
                Ok(Eval {
                    u: l[0] * p[0] + l[1] * p[1],
                    grad: l.to_vec(),
                    lap: T::zero(),
                })
            }
            Err(face) => Err(FieldError::FacePoint {
                face,
                point: vec![to_f64(p[0]), to_f64(p[1])],
            }),
        }
    }

    /// Open cone `k` as a convex region.
    pub fn cone_region(&self, k: usize) -> ConvexRegion<T> {
        let n = self.spokes.len();
        ConvexRegion::cone(self.spokes[k], self.spokes[(k + 1) % n])
    }

    pub fn regions(&self) -> Vec<ConvexRegion<T>> {
        (0..self.spokes.len())
            .map(|k| self.cone_region(k))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Separated potentials

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeparatedError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid separated potential: {0}")]
    Invalid(String),
    #[error("not realizable across the interface x1 = 0: g'(0) h'(0) = {product} is not positive")]
    NotRealizable { product: f64 },
    #[error("g' h' vanishes at x1 = {at}")]
    VanishingDerivative { at: f64 },
    #[error("point lies on the interface x1 = 0; use the one-sided values")]
    OnInterface,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// How a primitive of `1/p'` is computed.
#[derive(Debug, Clone, PartialEq)]
enum Primitive {
    /// `1/p'(t) = 1/(a + b t + c t^2)`.
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    Numeric,
}

/// `u = g(x1) + f(x2..xd)` for `x1 > 0` and `h(x1) + f` for `x1 < 0`.
#[derive(Debug, Clone)]
pub struct SeparatedPotential {
    dim: usize,
    g: [Expr; 3],
    h: [Expr; 3],
    f: Expr,
    f_grad: Vec<Expr>,
    f_lap: Expr,
    g_prim: Primitive,
    h_prim: Primitive,
    transverse: Option<(Vec<f64>, Vec<f64>)>,
}

fn one_dim_derivatives(e: Expr) -> [Expr; 3] {
    let d1 = e.derivative(0);
    let d2 = d1.derivative(0);
    [e, d1, d2]
}

fn detect_primitive(dp: &Expr) -> Primitive {
    let at = |t: f64| dp.eval(&[t]).ok();
    let (Some(m), Some(z), Some(p)) = (at(-1.0), at(0.0), at(1.0)) else {
        return Primitive::Numeric;
    };
    let a = z;
    let b = (p - m) / 2.0;
    let c = (p + m) / 2.0 - z;
    let fits = [0.5, 2.0, -3.0, 7.0, -0.25].iter().all(|&t| match at(t) {
        Some(v) => (v - (a + b * t + c * t * t)).abs() <= 1e-13 * (1.0 + v.abs()),
        None => false,
    });
    if fits {
        Primitive::Quadratic { a, b, c }
    } else {
        Primitive::Numeric
    }
}

/// `∫₀ˣ dt / (a + b t + c t²)` in closed form.
fn quadratic_primitive(a: f64, b: f64, c: f64, x: f64) -> f64 {
    if c == 0.0 {
        if b == 0.0 {
            return x / a;
        }
        return ((a + b * x) / a).abs().ln() / b;
    }
    let disc = 4.0 * a * c - b * b;
    if disc > 0.0 {
        let s = disc.sqrt();
        2.0 / s * (((2.0 * c * x + b) / s).atan() - (b / s).atan())
    } else if disc < 0.0 {
        let s = (-disc).sqrt();
        let f = |t: f64| ((2.0 * c * t + b - s) / (2.0 * c * t + b + s)).abs().ln() / s;
        f(x) - f(0.0)
    } else {
        let f = |t: f64| -2.0 / (2.0 * c * t + b);
        f(x) - f(0.0)
    }
}

impl SeparatedPotential {
    /// `g` and `h` are expressions in one variable (`x`, `t` or `x1`); `f` is
    /// an expression over `x1..x{dim}` that must not use `x1`.
    pub fn parse(g: &str, h: &str, f: &str, dim: usize) -> Result<Self, SeparatedError> {
        let g = Expr::parse(g, 1)?;
        let h = Expr::parse(h, 1)?;
        let f = Expr::parse(f, dim)?;
        Self::new(g, h, f, dim)
    }

    pub fn new(g: Expr, h: Expr, f: Expr, dim: usize) -> Result<Self, SeparatedError> {
        if dim == 0 {
            return Err(SeparatedError::Invalid("dimension must be positive".into()));
        }
        if g.arity() > 1 || h.arity() > 1 {
            return Err(SeparatedError::Invalid(
                "g and h must depend on x1 only".into(),
            ));
        }
        if f.uses_var(0) {
            return Err(SeparatedError::Invalid("f must not depend on x1".into()));
        }
        let (g0, h0) = (g.eval::<f64>(&[0.0]), h.eval::<f64>(&[0.0]));
        match (g0, h0) {
            (Ok(a), Ok(b)) if (a - b).abs() <= 1e-12 * (1.0 + a.abs()) => {}
            (Ok(a), Ok(b)) => {
                return Err(SeparatedError::Invalid(format!(
                    "g(0) = {a} differs from h(0) = {b}"
                )))
            }
            (Err(e), _) | (_, Err(e)) => return Err(SeparatedError::Field(e.into())),
        }
        let g = one_dim_derivatives(g);
        let h = one_dim_derivatives(h);
        let f_grad = (0..dim).map(|i| f.derivative(i)).collect();
        let f_lap = f.laplacian(dim);
        let g_prim = detect_primitive(&g[1]);
        let h_prim = detect_primitive(&h[1]);
        Ok(SeparatedPotential {
            dim,
            g,
            h,
            f,
            f_grad,
            f_lap,
            g_prim,
            h_prim,
            transverse: None,
        })
    }

    /// Box in `(x2..xd)` that the transverse flow must stay inside.
    pub fn with_transverse_domain(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.transverse = Some((lo, hi));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn g_prime<T: Real>(&self, t: T) -> Result<T, FieldError> {
        Ok(self.g[1].eval(&[t])?)
    }

    pub fn h_prime<T: Real>(&self, t: T) -> Result<T, FieldError> {
        Ok(self.h[1].eval(&[t])?)
    }

    /// `h'(0)/g'(0)`, the conductivity ratio across the interface.
    pub fn interface_ratio(&self) -> Result<f64, SeparatedError> {
        Ok(self.h_prime(0.0f64)? / self.g_prime(0.0f64)?)
    }

    /// `g'(0) h'(0) > 0`.
    pub fn check_realizable(&self) -> Result<(), SeparatedError> {
        let product = self.g_prime(0.0f64)? * self.h_prime(0.0f64)?;
        if product > 0.0 {
            Ok(())
        } else {
            Err(SeparatedError::NotRealizable { product })
        }
    }

    /// Samples `g'` on `[0, hi]` and `h'` on `[lo, 0]` for zeros.
    pub fn check_nonvanishing(
        &self,
        lo: f64,
        hi: f64,
        samples: usize,
    ) -> Result<(), SeparatedError> {
        let n = samples.max(2);
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let (tg, th) = (s * hi, s * lo);
            if self.g_prime(tg)? == 0.0 {
                return Err(SeparatedError::VanishingDerivative { at: tg });
            }
            if self.h_prime(th)? == 0.0 {
                return Err(SeparatedError::VanishingDerivative { at: th });
            }
            if self.g_prime(tg)?.signum() != self.g_prime(0.0f64)?.signum() {
                return Err(SeparatedError::VanishingDerivative { at: tg });
            }
            if self.h_prime(th)?.signum() != self.h_prime(0.0f64)?.signum() {
                return Err(SeparatedError::VanishingDerivative { at: th });
            }
        }
        Ok(())
    }

    fn primitive<T: Real>(
        &self,
        which: &[Expr; 3],
        kind: &Primitive,
        x: T,
    ) -> Result<T, SeparatedError> {
        match kind {
            Primitive::Quadratic { a, b, c } => Ok(lit(quadratic_primitive(*a, *b, *c, to_f64(x)))),
            Primitive::Numeric => {
                let dp = &which[1];
                let bad = std::cell::Cell::new(None);
                let v = adaptive_integrate(
                    &|t: T| match dp.eval(&[t]) {
                        Ok(d) if d != T::zero() => T::one() / d,
                        _ => {
                            bad.set(Some(to_f64(t)));
                            T::zero()
                        }
                    },
                    T::zero(),
                    x,
                    lit(1e-11),
                );
                match bad.get() {
                    Some(at) => Err(SeparatedError::VanishingDerivative { at }),
                    None => Ok(v),
                }
            }
        }
    }

    /// `G(x1) = ∫₀^{x1} dt / g'(t)`.
    pub fn primitive_g<T: Real>(&self, x1: T) -> Result<T, SeparatedError> {
        self.primitive(&self.g, &self.g_prim, x1)
    }

    /// `H(x1) = ∫₀^{x1} dt / h'(t)`.
    pub fn primitive_h<T: Real>(&self, x1: T) -> Result<T, SeparatedError> {
        self.primitive(&self.h, &self.h_prim, x1)
    }

    fn interface_tol<T: Real>(x: &[T]) -> T {
        lit::<T>(1e-12) * (T::one() + norm(x))
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> Result<Eval<T>, FieldError> {
        let x1 = x[0];
        if x1.abs() <= Self::interface_tol(x) {
            return Err(FieldError::FacePoint {
                face: 0,
                point: x.iter().map(|&v| to_f64(v)).collect(),
            });
        }
        let side = if x1 > T::zero() { &self.g } else { &self.h };
        let mut grad = Vec::with_capacity(self.dim);
        grad.push(side[1].eval(&[x1])?);
        for i in 1..self.dim {
            grad.push(self.f_grad[i].eval(x)?);
        }
        Ok(Eval {
            u: side[0].eval(&[x1])? + self.f.eval(x)?,
            grad,
            lap: side[2].eval(&[x1])? + self.f_lap.eval(x)?,
        })
    }

    /// `∫₀ᵀ Δf(X'(s, x')) ds` along the transverse flow of `f`.
    fn transverse_integral<T: Real>(
        &self,
        xp: &[T],
        t: T,
        opts: &FlowOptions,
    ) -> Result<T, SeparatedError> {
        if self.dim == 1 || t == T::zero() {
            return Ok(T::zero());
        }
        if let Some(c) = self.f_lap.as_const() {
            return Ok(lit::<T>(c) * t);
        }
        let shifted = self.f.map_vars(&|i| i - 1);
        let mut field = PotentialField::<T>::from_expr(
            shifted,
            self.dim - 1,
            crate::field::DerivativeMode::Symbolic,
        );
        if let Some((lo, hi)) = &self.transverse {
            field = field.with_domain(Aabb::new(
                lo.iter().map(|&v| lit(v)).collect(),
                hi.iter().map(|&v| lit(v)).collect(),
            ));
        }
        Ok(integrate_flow(&field, xp, t, opts)?.last().integral)
    }

    /// Conductivity at `x` with `x1 ≠ 0`: `h'(0)/g'(x1) · exp(∫₀^{−G(x1)} Δf)`
    /// for `x1 > 0`, and the `h`, `H` analogue for `x1 < 0`.
    pub fn sigma<T: Real>(&self, x: &[T], opts: &FlowOptions) -> Result<T, SeparatedError> {
        self.check_realizable()?;
        let x1 = x[0];
        if x1.abs() <= Self::interface_tol(x) {
            return Err(SeparatedError::OnInterface);
        }
        let h0: T = lit(self.h_prime(0.0f64)?);
        let (dp, prim) = if x1 > T::zero() {
            (self.g_prime(x1)?, self.primitive_g(x1)?)
        } else {
            (self.h_prime(x1)?, self.primitive_h(x1)?)
        };
        let expo = self.transverse_integral(&x[1..], -prim, opts)?;
        Ok(h0 / dp * expo.exp())
    }

    /// One-sided limits `(σ(0⁺, x'), σ(0⁻, x'))`.
    pub fn interface_sigmas<T: Real>(&self, _xp: &[T]) -> Result<(T, T), SeparatedError> {
        self.check_realizable()?;
        let h0: T = lit(self.h_prime(0.0f64)?);
        Ok((h0 / lit(self.g_prime(0.0f64)?), T::one()))
    }

    /// Half-spaces `x1 > 0` and `x1 < 0` (2D only).
    pub fn regions<T: Real>(&self) -> Vec<ConvexRegion<T>> {
        vec![
            ConvexRegion {
                halfplanes: vec![([-T::one(), T::zero()], T::zero())],
            },
            ConvexRegion {
                halfplanes: vec![([T::one(), T::zero()], T::zero())],
            },
        ]
    }
}

/// Free-function form of [`SeparatedPotential::sigma`].
pub fn separated_sigma<T: Real>(
    sp: &SeparatedPotential,
    x: &[T],
    opts: &FlowOptions,
) -> Result<T, SeparatedError> {
    sp.sigma(x, opts)
}
