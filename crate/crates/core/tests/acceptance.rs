//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Lines marked `expected` are known, recorded disagreements and do not fail
//! the run; every other FAIL exits non-zero.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use isoreal::piecewise::Violation;
use isoreal::reconstruct::reconstruct_on_grid_with_data;
use isoreal::{
    build_piecewise_sigma, check_admissible, fan_propagation_oracle, fan_sigma_closed_form,
    flow_relation_residual, integrate_flow, reconstruct_on_grid, reconstruct_sigma,
    semigroup_defect, weak_residual, Aabb, Cells, ConductivityField, ExactFan, FanError, Field,
    FlowOptions, MollifierSpec, SeparatedPotential, TestFunctionSet, TOL_WEAK,
};
use num_rational::Rational64;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: &'static str,
    pass: bool,
    expected_fail: bool,
    detail: String,
}

struct Run {
    lines: Vec<Line>,
}

impl Run {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        println!("[{status}] {id}: {detail}");
        self.lines.push(Line {
            id,
            pass,
            expected_fail: false,
            detail,
        });
    }

    fn record_expected_fail(&mut self, id: &'static str, pass: bool, detail: String) {
        let status = if pass {
            "PASS"
        } else {
            "FAIL (expected, see decisions ledger)"
        };
        println!("[{status}] {id}: {detail}");
        self.lines.push(Line {
            id,
            pass,
            expected_fail: true,
            detail,
        });
    }
}

fn square() -> Aabb<f64> {
    Aabb::new(vec![-1.0, -1.0], vec![1.0, 1.0])
}

fn within(elapsed: Duration, limit: u64) -> bool {
    elapsed < Duration::from_secs(limit)
}

fn secs(elapsed: Duration) -> String {
    format!("{:.2}s", elapsed.as_secs_f64())
}

/// `σ = e^{τ/2}` for `u = x1 + x2²/4`, with `τ` solving
/// `x1 + τ + x2² e^τ / 4 = 0` by Newton's method.
fn parabola_sigma(x: &[f64]) -> f64 {
    let q = x[1] * x[1] / 4.0;
    let mut t = -x[0];
    for _ in 0..100 {
        let f = x[0] + t + q * t.exp();
        let step = f / (1.0 + q * t.exp());
        t -= step;
        if step.abs() < 1e-15 * (1.0 + t.abs()) {
            break;
        }
    }
    (t / 2.0).exp()
}

fn ratio(v: &Rational64) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

fn criterion_1(run: &mut Run) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = FlowOptions::default();
    let tests = TestFunctionSet::grid(&square(), 4, 0.5);
    let mut grid_err = 0.0f64;
    let mut weak = 0.0f64;
    let mut clean = true;
    for _ in 0..5 {
        let a = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let u = Field::affine(a, 0.0);
        let grid = reconstruct_on_grid(&u, &square(), &[21, 21], &opts);
        clean &= grid.is_clean();
        grid_err = grid_err.max(grid.max_error(|_| 1.0));
        match grid.conductivity() {
            Ok(sigma) => {
                let report = weak_residual(&sigma, &u, &tests);
                clean &= report.flagged() == 0;
                weak = weak.max(report.max_normalized);
            }
            Err(_) => clean = false,
        }
    }
    let t = start.elapsed();
    run.record(
        "1 affine suite",
        clean && grid_err <= 1e-10 && weak <= 1e-12 && within(t, 5),
        format!("5 random slopes, max |σ−1| = {grid_err:.2e} (≤ 1e-10), weak residual {weak:.2e} (≤ 1e-12), {}", secs(t)),
    );
}

fn criterion_2(run: &mut Run) {
    let start = Instant::now();
    let opts = FlowOptions::default();
    let u = Field::parse("x1 + x2^2/4", 2).unwrap();
    let closed = |x: &[f64]| (-x[0] / 2.0).exp();

    let grid = reconstruct_on_grid(&u, &square(), &[21, 21], &opts);
    let literal = grid.max_error(closed);
    run.record_expected_fail(
        "2 closed-form pair, level-set normalized σ vs e^{−x1/2}",
        grid.is_clean() && literal <= 1e-6,
        format!("max |σ − e^(−x1/2)| = {literal:.3e} (≤ 1e-6); σ = 1 on {{u = 0}} differs from e^(−x1/2) by a factor constant on streamlines"),
    );

    let oracle = grid.max_error(parabola_sigma);
    let gamma = |y: &[f64]| (-y[0] / 2.0).exp();
    let data = reconstruct_on_grid_with_data(&u, &square(), &[21, 21], Some(&gamma), &opts);
    let with_data = data.max_error(closed);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let flow_sigma = ConductivityField::flow(u.clone(), opts);
    let closed_sigma = ConductivityField::parse("exp(-x1/2)", 2).unwrap();
    let mut relation = 0.0f64;
    let mut relation_ok = true;
    for _ in 0..100 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let t = rng.gen_range(-1.0..1.0);
        for s in [&flow_sigma, &closed_sigma] {
            match flow_relation_residual(&u, s, &x, t, &opts) {
                Ok(r) => relation = relation.max(r),
                Err(_) => relation_ok = false,
            }
        }
    }

    let tests = TestFunctionSet::grid(&square(), 4, 0.5);
    let weak_flow = weak_residual(&flow_sigma, &u, &tests);
    let weak_closed = weak_residual(&closed_sigma, &u, &tests);
    let weak = weak_flow.max_normalized.max(weak_closed.max_normalized);
    let flagged = weak_flow.flagged() + weak_closed.flagged();

    let t = start.elapsed();
    run.record(
        "2 closed-form pair",
        grid.is_clean()
            && data.is_clean()
            && oracle <= 1e-6
            && with_data <= 1e-6
            && relation_ok
            && relation <= 1e-6
            && flagged == 0
            && weak <= 1e-6
            && within(t, 30),
        format!(
            "21x21 grid: vs level-set oracle {oracle:.2e}, with data e^(−y1/2) vs e^(−x1/2) {with_data:.2e} (≤ 1e-6); \
             flow relation {relation:.2e} at 100 (x,t) (≤ 1e-6); weak residual {weak:.2e} on {} bumps (≤ 1e-6); {}",
            tests.len(),
            secs(t)
        ),
    );
}

fn criterion_3(run: &mut Run) {
    let start = Instant::now();
    let opts = FlowOptions::default();
    let u = Field::parse("x + x^3/3", 1).unwrap();
    let mut worst = 0.0f64;
    let mut ok = true;
    for i in 0..200 {
        let x = -2.0 + 4.0 * i as f64 / 199.0;
        let du = 1.0 + x * x;
        match reconstruct_sigma(&u, &[x], &opts) {
            Ok(s) => worst = worst.max((s * du - 1.0).abs()),
            Err(_) => ok = false,
        }
    }
    let t = start.elapsed();
    run.record(
        "3 1D conservation",
        ok && worst <= 1e-7 && within(t, 5),
        format!(
            "max |σ u′ − 1| = {worst:.2e} at 200 points (≤ 1e-7), {}",
            secs(t)
        ),
    );
}

fn criterion_4(run: &mut Run) {
    let start = Instant::now();
    let opts = FlowOptions::default();
    let kinked = Field::parse("x1 + 0.5*abs(sin(x2))", 2)
        .unwrap()
        .mollify(&MollifierSpec::new(0.1).unwrap())
        .unwrap();
    let fields = [
        ("x1 + x2^2/4", Field::parse("x1 + x2^2/4", 2).unwrap()),
        (
            "x1 + 0.3 sin x1 cos x2",
            Field::parse("x1 + 0.3*sin(x1)*cos(x2)", 2).unwrap(),
        ),
        ("mollified x1 + 0.5|sin x2|, width 0.1", kinked),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, u) in &fields {
        let mut defect = 0.0f64;
        let mut violations = 0usize;
        let mut ok = true;
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = rng.gen_range(-1.0..1.0);
            let t = rng.gen_range(-1.0..1.0);
            match semigroup_defect(u, &x, s, t, &opts) {
                Ok(d) => defect = defect.max(d),
                Err(_) => ok = false,
            }
            for end in [s, t] {
                match integrate_flow(u, &x, end, &opts) {
                    Ok(tr) => violations += tr.monotonicity_violations(),
                    Err(_) => ok = false,
                }
            }
        }
        pass &= ok && defect <= 1e-6 && violations == 0;
        details.push(format!(
            "{name}: defect {defect:.2e}, {violations} violations"
        ));
    }
    let t = start.elapsed();
    run.record(
        "4 flow properties",
        pass && within(t, 60),
        format!(
            "{} (defect ≤ 1e-6, 0 violations), {}",
            details.join("; "),
            secs(t)
        ),
    );
}

fn criterion_5(run: &mut Run) {
    let start = Instant::now();
    let opts = FlowOptions::default();
    let u = Field::parse("x1 + x2^2/4", 2).unwrap();
    let want = (-0.5f64).exp();
    let (pass, detail) = match isoreal::estimate_flow_density(&u, 1.0, &square(), 400, 5, &opts) {
        Ok(est) => {
            let rel = (est.r_mean - want).abs() / want;
            let spread = ((est.r_min - want).abs()).max((est.r_max - want).abs()) / want;
            let bounded = est.within_bounds(1e-12);
            (
                rel <= 0.01 && spread <= 0.01 && bounded,
                format!(
                    "mean r(1) = {:.10} vs e^(−1/2) = {want:.10} (rel {rel:.1e} ≤ 1e-2), range [{:.10}, {:.10}] within [{:.10}, {:.10}]",
                    est.r_mean, est.r_min, est.r_max, est.lower_bound, est.upper_bound
                ),
            )
        }
        Err(e) => (false, format!("estimate failed: {e}")),
    };
    let t = start.elapsed();
    run.record(
        "5 density bounds",
        pass && within(t, 30),
        format!("{detail}, {}", secs(t)),
    );
}

fn exact_fan(spokes: &[[&str; 2]], gradients: &[[&str; 2]]) -> ExactFan {
    ExactFan::parse(spokes, gradients).unwrap()
}

fn criterion_6(run: &mut Run) {
    let start = Instant::now();
    let one = Rational64::one();

    // (a) worked split fan
    let fan = exact_fan(
        &[["1", "0"], ["0", "1"], ["-1", "-1"]],
        &[["2", "-1"], ["1", "-1"], ["2", "-2"]],
    );
    let split = fan.split().unwrap();
    let closed = fan_sigma_closed_form(&split, one).unwrap();
    let oracle = fan_propagation_oracle(&split, one).unwrap();
    let expected: Vec<Rational64> = [1, 2, 4, 2]
        .iter()
        .map(|&v| Rational64::from_integer(v))
        .collect();
    let values_ok = closed.chain_values() == expected && oracle.chain_values() == expected;
    let mut flux_ok = split.split_normal_derivative().is_zero();
    for c in split.crossings() {
        let xi = split.fan.spokes()[c.spoke];
        let nu = [-xi[1], xi[0]];
        let dn = |l: &[Rational64; 2]| l[0] * nu[0] + l[1] * nu[1];
        let up = *closed.get(c.up).unwrap() * dn(split.gradient(c.up));
        let down = *closed.get(c.down).unwrap() * dn(split.gradient(c.down));
        flux_ok &= up == down;
    }
    let cells = Cells::from_split_fan(&split, 1.0).unwrap();
    let (admissible, weak, built_ok) = match check_admissible(&cells) {
        Ok(plan) => match build_piecewise_sigma(&cells, &plan, &[], FlowOptions::default()) {
            Ok((sigma, _)) => {
                let built_ok = (0..expected.len())
                    .all(|i| sigma.cell_data(i).constant == Some(ratio(&expected[i])));
                let sigma = ConductivityField::piecewise(sigma);
                let report = weak_residual(
                    &sigma,
                    &cells.field(),
                    &TestFunctionSet::grid(&square(), 4, 0.5),
                );
                let w = if report.flagged() == 0 {
                    report.max_normalized
                } else {
                    f64::INFINITY
                };
                (true, w, built_ok)
            }
            Err(_) => (true, f64::INFINITY, false),
        },
        Err(_) => (false, f64::INFINITY, false),
    };
    let pass_a = values_ok && flux_ok && admissible && built_ok && weak <= 1e-6;

    // (b) three-spoke fan with a failing sign condition
    let bad = exact_fan(
        &[["1", "0"], ["-1", "2"], ["-1", "-2"]],
        &[["1", "1"], ["3", "2"], ["1", "3"]],
    );
    let bad_split = bad.split().unwrap();
    let exact_reject = fan_sigma_closed_form(&bad_split, one);
    let pass_b_exact = matches!(
        &exact_reject,
        Err(e @ FanError::SignCondition { spoke: 2, product, .. }) if *product == -4.0 && e.to_string().contains("ξ3")
    );
    let bad_cells = Cells::from_split_fan(&bad_split, 1.0).unwrap();
    let pass_b_cells = match check_admissible(&bad_cells) {
        Err(report) => report.violations.iter().any(|v| {
            matches!(v, Violation::SignCondition { product, .. } if *product < 0.0)
                && v.to_string().contains("ξ3")
        }),
        Ok(_) => false,
    };
    let b_message = exact_reject
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();

    // (c) quadrant fan
    let quad = exact_fan(
        &[["1", "0"], ["0", "1"], ["-1", "0"], ["0", "-1"]],
        &[["1", "1"], ["2", "1"], ["2", "3"], ["1", "3"]],
    );
    let lc = quad.loop_constraint();
    let six = Rational64::from_integer(6);
    let quad_split = quad.split().unwrap();
    let quad_sigma = fan_sigma_closed_form(&quad_split, one).unwrap();
    let (first, last) = quad_sigma.split_pair();
    let pass_c = lc.holds && lc.lhs == six && lc.rhs == six && first == last;

    let t = start.elapsed();
    run.record(
        "6 fan dichotomy",
        pass_a && pass_b_exact && pass_b_cells && pass_c && within(t, 10),
        format!(
            "(a) values {:?}, oracle agrees {}, exact flux continuity {flux_ok}, admissible {admissible}, weak residual {weak:.2e} (≤ 1e-6); \
             (b) rejected: \"{b_message}\"; (c) loop {} = {}, split pair {} / {}; {}",
            closed.chain_values().iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            oracle.chain_values() == closed.chain_values(),
            lc.lhs,
            lc.rhs,
            first,
            last,
            secs(t)
        ),
    );
}

fn criterion_7(run: &mut Run) {
    let start = Instant::now();
    let opts = FlowOptions::default();

    // jump: σ = 2 for x1 > 0 and 1 for x1 < 0
    let jump = SeparatedPotential::parse("x", "2*x", "0", 2).unwrap();
    let u = Field::separated(jump.clone());
    let sigma = ConductivityField::separated(jump.clone(), opts);
    let mut pair_ok = true;
    for y in [-0.7, 0.0, 0.4] {
        for x in [1e-9, 0.3, 0.9] {
            pair_ok &= sigma
                .eval(&[x, y])
                .is_ok_and(|s: f64| (s - 2.0).abs() <= 1e-12);
            pair_ok &= sigma
                .eval(&[-x, y])
                .is_ok_and(|s: f64| (s - 1.0).abs() <= 1e-12);
        }
    }
    let (sp, sm) = jump.interface_sigmas(&[0.0f64]).unwrap();
    let h0 = jump.h_prime(0.0f64).unwrap();
    let eps = 1e-9;
    let flux_plus = sigma.eval(&[eps, 0.2]).unwrap() * u.eval(&[eps, 0.2]).unwrap().grad[0];
    let flux_minus = sigma.eval(&[-eps, 0.2]).unwrap() * u.eval(&[-eps, 0.2]).unwrap().grad[0];
    let flux_gap = (flux_plus - h0).abs().max((flux_minus - h0).abs());
    let pass_a = pair_ok && sp == 2.0 && sm == 1.0 && flux_gap <= 1e-9;

    // continuous: reproduces e^{−x1/2}
    let smooth = SeparatedPotential::parse("x", "x", "x2^2/4", 2).unwrap();
    let sigma = ConductivityField::separated(smooth, opts);
    let mut err = 0.0f64;
    let mut ok = true;
    for i in 0..21 {
        for j in 0..21 {
            let mut x = [-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64];
            if x[0].abs() < 1e-12 {
                x[0] = 1e-9;
            }
            match sigma.eval(&x) {
                Ok(s) => err = err.max((s - (-x[0] / 2.0).exp()).abs()),
                Err(_) => ok = false,
            }
        }
    }
    let across = (sigma.eval(&[1e-9, 0.5]).unwrap() - sigma.eval(&[-1e-9, 0.5]).unwrap()).abs();
    let pass_b = ok && err <= 1e-6 && across <= 1e-6;

    // opposite slopes
    let opposite = SeparatedPotential::parse("x", "-x", "0", 2).unwrap();
    let pass_c = opposite.check_realizable().is_err();

    let t = start.elapsed();
    run.record(
        "7 separated interface",
        pass_a && pass_b && pass_c && within(t, 10),
        format!(
            "σ = ({sp}, {sm}), fluxes {flux_plus} / {flux_minus} vs h′(0) = {h0} (gap {flux_gap:.1e} ≤ 1e-9); \
             g = h = id, f = x2²/4: max |σ − e^(−x1/2)| = {err:.2e}, jump {across:.1e} (≤ 1e-6); g′(0)h′(0) < 0 rejected {pass_c}; {}",
            secs(t)
        ),
    );
}

fn criterion_8(run: &mut Run) {
    let start = Instant::now();
    let u = Field::parse("x1 + x2^2/4", 2).unwrap();
    let report = weak_residual(
        &ConductivityField::constant(1.0),
        &u,
        &TestFunctionSet::grid(&square(), 4, 0.5),
    );
    let r = report.max_normalized;
    let t = start.elapsed();
    run.record(
        "8 detection power",
        report.flagged() == 0 && r >= 0.05 && r >= 1e3 * TOL_WEAK && within(t, 10),
        format!(
            "σ ≡ 1 with u = x1 + x2²/4: normalized residual {r:.3e} (≥ 0.05 and ≥ {:.0e}), {}",
            1e3 * TOL_WEAK,
            secs(t)
        ),
    );
}

fn main() -> ExitCode {
    let mut run = Run { lines: Vec::new() };
    criterion_1(&mut run);
    criterion_2(&mut run);
    criterion_3(&mut run);
    criterion_4(&mut run);
    criterion_5(&mut run);
    criterion_6(&mut run);
    criterion_7(&mut run);
    criterion_8(&mut run);

    let unexpected: Vec<&Line> = run
        .lines
        .iter()
        .filter(|l| !l.pass && !l.expected_fail)
        .collect();
    let expected = run
        .lines
        .iter()
        .filter(|l| !l.pass && l.expected_fail)
        .count();
    println!(
        "acceptance: {} lines, {} passed, {} expected failures, {} unexpected failures",
        run.lines.len(),
        run.lines.iter().filter(|l| l.pass).count(),
        expected,
        unexpected.len()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for l in unexpected {
            eprintln!("unexpected failure: {} ({})", l.id, l.detail);
        }
        ExitCode::FAILURE
    }
}
