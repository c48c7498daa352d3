//! Gradient flow `dX/dt = ∇u(X)` with the running integral
//! `I(t) = ∫₀ᵗ Δu(X(s)) ds`.
//!
//! The integrator is Dormand-Prince 5(4) on the augmented state `(X, I)`, so
//! `I` is advanced with exactly the same stages as the path. Events (level-set
//! crossing, leaving a cell or the domain box) are located by bisection on a
//! fresh step from the left end of the bracketing step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{FieldError, PotentialField};
use crate::geom::Aabb;
use crate::scalar::{distance, lit, to_f64, Real};

/// Step control for the flow integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Per-step mixed tolerance: local error ≤ `tol_ode · (1 + |y|)`.
    pub tol_ode: f64,
    /// Event location tolerance (on `u` for hit times).
    pub tol_root: f64,
    pub initial_step: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol_ode: 1e-10,
            tol_root: 1e-10,
            initial_step: 1e-2,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("trajectory left the domain at t = {time:e}, X = {point:?}")]
    LeftDomain { time: f64, point: Vec<f64> },
    #[error("step limit {steps} reached at t = {time:e}")]
    StepLimit { steps: usize, time: f64 },
    #[error("step size underflow at t = {time:e}")]
    StepUnderflow { time: f64 },
    #[error("target level set not reached (last t = {time:e}, u = {u:e})")]
    NotReached { time: f64, u: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// One stored point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub t: T,
    pub x: Vec<T>,
    /// `∫₀ᵗ Δu(X(s)) ds`.
    pub integral: T,
    pub u: T,
}

/// A discretized flow path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub start: Vec<T>,
    pub samples: Vec<Sample<T>>,
    pub options: FlowOptions,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &Sample<T> {
        self.samples
            .last()
            .expect("trajectory always holds its start")
    }

    /// Consecutive sample pairs along which `u` fails to increase in the
    /// direction of increasing `t`.
    pub fn monotonicity_violations(&self) -> usize {
        self.samples
            .windows(2)
            .filter(|w| (w[1].u - w[0].u) * (w[1].t - w[0].t) <= T::zero())
            .count()
    }

    /// Tab-separated table with columns `t, x1..xd, I`.
    pub fn to_table(&self) -> String {
        let d = self.start.len();
        let mut out = String::from("t");
        for i in 1..=d {
            out.push_str(&format!("\tx{i}"));
        }
        out.push_str("\tI\n");
        for s in &self.samples {
            out.push_str(&format!("{:.17e}", to_f64(s.t)));
            for &v in &s.x {
                out.push_str(&format!("\t{:.17e}", to_f64(v)));
            }
            out.push_str(&format!("\t{:.17e}\n", to_f64(s.integral)));
        }
        out
    }
}

/// Entry/exit times of a trajectory through a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitTimes<T> {
    pub tau_minus: T,
    pub tau_plus: T,
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Right-hand side at one state: `(∇u, Δu)` plus `u` itself.
#[derive(Debug, Clone)]
struct Stage<T> {
    u: T,
    rhs: Vec<T>,
}

fn stage<T: Real>(field: &PotentialField<T>, y: &[T]) -> Result<Stage<T>, FieldError> {
    let d = y.len() - 1;
    let e = field.eval(&y[..d])?;
    let mut rhs = e.grad;
    rhs.push(e.lap);
    Ok(Stage { u: e.u, rhs })
}

/// One Dormand-Prince step of size `h` from `y` (with `k1 = f(y)`). Returns the
/// fifth-order state, the stage at that state, and the scaled error norm.
fn dp_step<T: Real>(
    field: &PotentialField<T>,
    y: &[T],
    k1: &Stage<T>,
    h: T,
    tol: T,
) -> Result<(Vec<T>, Stage<T>, T), FieldError> {
    let n = y.len();
    let mut ks: Vec<Vec<T>> = Vec::with_capacity(7);
    ks.push(k1.rhs.clone());
    let mut tmp = vec![T::zero(); n];
    let mut last = None;
    for s in 1..7 {
        for i in 0..n {
            let mut acc = T::zero();
            for (j, k) in ks.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    acc += lit::<T>(a) * k[i];
                }
            }
            tmp[i] = y[i] + h * acc;
        }
        let st = stage(field, &tmp)?;
        ks.push(st.rhs.clone());
        last = Some(st);
    }
    // stage 7 is evaluated at the fifth-order solution
    let y5 = tmp;
    let mut err = T::zero();
    for i in 0..n {
        let mut e = T::zero();
        for (j, k) in ks.iter().enumerate() {
            e += lit::<T>(E[j]) * k[i];
        }
        let scale = tol * (T::one() + y[i].abs().max(y5[i].abs()));
        err = err.max((h * e).abs() / scale);
    }
    Ok((y5, last.expect("seven stages"), err))
}

/// Outcome of [`march`].
#[derive(Debug, Clone)]
pub(crate) struct March<T> {
    pub trajectory: Trajectory<T>,
    /// Whether the event fired (the last sample is the event point).
    pub hit: bool,
}

/// Signed event function of `(X, u)`; the march stops when it changes sign.
pub(crate) type Event<'a, T> = &'a (dyn Fn(&[T], T) -> T + Sync);

fn box_margin<T: Real>(b: &Aabb<T>, x: &[T]) -> T {
    let mut m = T::infinity();
    for i in 0..x.len() {
        m = m.min(x[i] - b.lo[i]).min(b.hi[i] - x[i]);
    }
    m
}

fn to_vec64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|&v| to_f64(v)).collect()
}

/// Integrates from `x0` toward `t_end` (which may be infinite) until the event
/// changes sign, the target time is reached, or an error occurs.
pub(crate) fn march<T: Real>(
    field: &PotentialField<T>,
    x0: &[T],
    t_end: T,
    opts: &FlowOptions,
    event: Option<Event<'_, T>>,
    event_tol: T,
) -> Result<March<T>, FlowError> {
    let d = x0.len();
    let mut y: Vec<T> = x0.to_vec();
    y.push(T::zero());
    let mut k1 = stage(field, &y)?;
    let mut traj = Trajectory {
        start: x0.to_vec(),
        samples: vec![Sample {
            t: T::zero(),
            x: x0.to_vec(),
            integral: T::zero(),
            u: k1.u,
        }],
        options: *opts,
    };
    let g0 = event.map(|g| g(x0, k1.u));
    if let Some(g0) = g0 {
        if g0 == T::zero() {
            return Ok(March {
                trajectory: traj,
                hit: true,
            });
        }
    }
    if t_end == T::zero() {
        return Ok(March {
            trajectory: traj,
            hit: false,
        });
    }
    let dir = t_end.signum();
    let tol: T = lit(opts.tol_ode);
    let mut t = T::zero();
    let mut h = lit::<T>(opts.initial_step) * dir;
    let mut steps = 0usize;
    loop {
        if (t - t_end).abs() == T::zero() {
            return Ok(March {
                trajectory: traj,
                hit: false,
            });
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(FlowError::StepLimit {
                steps: opts.max_steps,
                time: to_f64(t),
            });
        }
        let mut hit_end = false;
        if t_end.is_finite() && (t + h - t_end) * dir >= T::zero() {
            h = t_end - t;
            hit_end = true;
        }
        let floor = lit::<T>(1e-14) * (T::one() + t.abs());
        let attempt = dp_step(field, &y, &k1, h, tol);
        let (y5, k7, err) = match attempt {
            Ok(r) => r,
            Err(FieldError::OutsideDomain { .. }) | Err(FieldError::FacePoint { .. }) => {
                if h.abs() < floor {
                    return Err(FlowError::LeftDomain {
                        time: to_f64(t),
                        point: to_vec64(&y[..d]),
                    });
                }
                h *= lit(0.25);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if !(err <= T::one()) {
            if h.abs() < floor {
                return Err(FlowError::StepUnderflow { time: to_f64(t) });
            }
            let fac = if err.is_finite() {
                (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.1))
            } else {
                lit(0.1)
            };
            h *= fac;
            continue;
        }
        // domain exit inside this step?
        if let Some(b) = field.domain() {
            if box_margin(b, &y5[..d]) < T::zero() {
                let (tt, ys) = locate(
                    field,
                    &y,
                    &k1,
                    h,
                    tol,
                    &|x: &[T], _u: T| box_margin(b, x),
                    T::zero(),
                )?;
                return Err(FlowError::LeftDomain {
                    time: to_f64(t + tt),
                    point: to_vec64(&ys[..d]),
                });
            }
        }
        if let (Some(g), Some(g0)) = (event, g0) {
            let g1 = g(&y5[..d], k7.u);
            if g1 == T::zero() || g1.signum() != g0.signum() {
                let (tt, ys) = locate(field, &y, &k1, h, tol, g, event_tol)?;
                let st = stage(field, &ys)?;
                traj.samples.push(Sample {
                    t: t + tt,
                    x: ys[..d].to_vec(),
                    integral: ys[d],
                    u: st.u,
                });
                return Ok(March {
                    trajectory: traj,
                    hit: true,
                });
            }
        }
        t = if hit_end { t_end } else { t + h };
        y = y5;
        k1 = k7;
        traj.samples.push(Sample {
            t,
            x: y[..d].to_vec(),
            integral: y[d],
            u: k1.u,
        });
        if hit_end {
            return Ok(March {
                trajectory: traj,
                hit: false,
            });
        }
        let fac = if err > T::zero() {
            (lit::<T>(0.9) * err.powf(lit(-0.2)))
                .min(lit(5.0))
                .max(lit(0.2))
        } else {
            lit(5.0)
        };
        h *= fac;
    }
}

/// Bisection for the sign change of `g` inside the step `[0, h]` from `y`.
/// Returns the elapsed time and state on the far side of (or at) the root.
fn locate<T: Real>(
    field: &PotentialField<T>,
    y: &[T],
    k1: &Stage<T>,
    h: T,
    tol: T,
    g: &dyn Fn(&[T], T) -> T,
    gtol: T,
) -> Result<(T, Vec<T>), FlowError> {
    let d = y.len() - 1;
    let g_left = g(&y[..d], k1.u);
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut best: Option<(T, Vec<T>)> = None;
    let width_floor = lit::<T>(4.0) * T::epsilon();
    for _ in 0..200 {
        let mid = (lo + hi) * lit(0.5);
        let (ym, km, _) = match dp_step(field, y, k1, h * mid, tol) {
            Ok(r) => r,
            // stages past the exit point: the root is closer
            Err(FieldError::OutsideDomain { .. }) | Err(FieldError::FacePoint { .. }) => {
                hi = mid;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let gm = g(&ym[..d], km.u);
        if gm.abs() <= gtol || gm == T::zero() {
            return Ok((h * mid, ym));
        }
        if gm.signum() == g_left.signum() {
            lo = mid;
        } else {
            hi = mid;
            best = Some((h * mid, ym));
        }
        if hi - lo <= width_floor {
            break;
        }
    }
    match best {
        Some(b) => Ok(b),
        None => {
            let (yh, _, _) = dp_step(field, y, k1, h * hi, tol)?;
            Ok((h * hi, yh))
        }
    }
}

/// Integrates the flow from `x0` to `t_target` (forward or backward).
pub fn integrate_flow<T: Real>(
    field: &PotentialField<T>,
    x0: &[T],
    t_target: T,
    opts: &FlowOptions,
) -> Result<Trajectory<T>, FlowError> {
    if !t_target.is_finite() {
        return Err(FlowError::NotReached {
            time: to_f64(t_target),
            u: f64::NAN,
        });
    }
    Ok(march(field, x0, t_target, opts, None, T::zero())?.trajectory)
}

/// Flow position `X(t, x)` only.
pub fn flow_map<T: Real>(
    field: &PotentialField<T>,
    x0: &[T],
    t: T,
    opts: &FlowOptions,
) -> Result<Vec<T>, FlowError> {
    Ok(integrate_flow(field, x0, t, opts)?.last().x.clone())
}

/// Trajectory from `x` to the zero level set; the last sample is the hit.
pub fn trajectory_to_level_set<T: Real>(
    field: &PotentialField<T>,
    x: &[T],
    opts: &FlowOptions,
) -> Result<Trajectory<T>, FlowError> {
    let u0 = field.eval(x)?.u;
    let dir = if u0 > T::zero() { -T::one() } else { T::one() };
    let level = |_x: &[T], u: T| u;
    let m = march(
        field,
        x,
        dir * T::infinity(),
        opts,
        Some(&level),
        lit(opts.tol_root * 1e-2),
    )?;
    if !m.hit {
        let last = m.trajectory.last();
        return Err(FlowError::NotReached {
            time: to_f64(last.t),
            u: to_f64(last.u),
        });
    }
    Ok(m.trajectory)
}

/// `τ(x)` with `u(X(τ, x)) = 0`.
pub fn hit_time<T: Real>(
    field: &PotentialField<T>,
    x: &[T],
    opts: &FlowOptions,
) -> Result<T, FlowError> {
    Ok(trajectory_to_level_set(field, x, opts)?.last().t)
}

/// `|X(s+t, x) − X(s, X(t, x))|`.
pub fn semigroup_defect<T: Real>(
    field: &PotentialField<T>,
    x: &[T],
    s: T,
    t: T,
    opts: &FlowOptions,
) -> Result<T, FlowError> {
    let direct = flow_map(field, x, s + t, opts)?;
    let mid = flow_map(field, x, t, opts)?;
    let composed = flow_map(field, &mid, s, opts)?;
    Ok(distance(&direct, &composed))
}

/// Monte-Carlo summary of the flow density `r(t, ·) = exp(−∫₀ᵗ Δu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate<T> {
    pub r_min: T,
    pub r_max: T,
    pub r_mean: T,
    /// Largest `|Δu|` seen at the sampled start points and along every path.
    pub lap_sup: T,
    /// `exp(−|t|·lap_sup)` and `exp(|t|·lap_sup)`.
    pub lower_bound: T,
    pub upper_bound: T,
    pub samples: usize,
}

impl<T: Real> DensityEstimate<T> {
    /// Whether the observed range lies within the exponential bounds widened
    /// by a relative `slack`.
    pub fn within_bounds(&self, slack: T) -> bool {
        self.r_min >= self.lower_bound * (T::one() - slack)
            && self.r_max <= self.upper_bound * (T::one() + slack)
    }
}

/// Samples `mc_samples` uniform start points in `region` (seeded) and records
/// the reciprocal Jacobian factor of the time-`t` flow map along each.
pub fn estimate_flow_density<T: Real>(
    field: &PotentialField<T>,
    t: T,
    region: &Aabb<T>,
    mc_samples: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<DensityEstimate<T>, FlowError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<T>> = (0..mc_samples)
        .map(|_| {
            (0..region.dim())
                .map(|i| region.lo[i] + lit::<T>(rng.gen::<f64>()) * (region.hi[i] - region.lo[i]))
                .collect()
        })
        .collect();
    let results: Vec<Result<(T, T), FlowError>> = starts
        .par_iter()
        .map(|x| {
            let tr = integrate_flow(field, x, t, opts)?;
            let mut lap_sup = T::zero();
            for s in &tr.samples {
                lap_sup = lap_sup.max(field.eval(&s.x)?.lap.abs());
            }
            Ok(((-tr.last().integral).exp(), lap_sup))
        })
        .collect();
    let mut r_min = T::infinity();
    let mut r_max = T::neg_infinity();
    let mut sum = T::zero();
    let mut lap_sup = T::zero();
    for r in results {
        let (r, l) = r?;
        r_min = r_min.min(r);
        r_max = r_max.max(r);
        sum += r;
        lap_sup = lap_sup.max(l);
    }
    let n = T::from_usize(mc_samples.max(1)).unwrap();
    Ok(DensityEstimate {
        r_min,
        r_max,
        r_mean: sum / n,
        lap_sup,
        lower_bound: (-t.abs() * lap_sup).exp(),
        upper_bound: (t.abs() * lap_sup).exp(),
        samples: mc_samples,
    })
}
