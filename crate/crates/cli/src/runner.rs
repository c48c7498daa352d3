//! Sequential task execution and the summary report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use isoreal::flow::Trajectory;
use isoreal::reconstruct::{reconstruct_on_grid_with_data, reconstruct_sigma_with_data, Hole};
use isoreal::{
    build_piecewise_sigma, check_admissible, check_gradient_bound, fan_propagation_oracle,
    fan_sigma_closed_form, integrate_flow, read_sigma_table, reconstruct_on_grid,
    trajectory_to_level_set, weak_residual, Aabb, Cells, ConductivityField, ExactFan, Expr, Field,
    FlowOptions, GridReconstruction, SamplingPlan, TestFunctionSet, WeakResidualReport,
};
use num_rational::Rational64;
use num_traits::One;

use crate::scenario::{ExportKind, FieldModel, Scenario, Task, TaskSpec};

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: String,
    pub ok: bool,
}

#[derive(Default)]
struct FieldState {
    sigma: Option<ConductivityField<f64>>,
    grid: Option<GridReconstruction<f64>>,
    report: Option<WeakResidualReport<f64>>,
    reference: Option<f64>,
    trajectory: Option<Trajectory<f64>>,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    out: &'a Path,
    opts: FlowOptions,
    state: BTreeMap<String, FieldState>,
}

fn e6(v: f64) -> String {
    format!("{v:.6e}")
}

fn point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn rationals(v: &[Rational64]) -> String {
    let parts: Vec<String> = v.iter().map(|r| r.to_string()).collect();
    format!("({})", parts.join(", "))
}

/// Runs every task in order, stopping at the first failure, and writes
/// `summary.txt` to `out`.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> RunOutcome {
    let t = &scenario.tolerances;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario: {}", scenario.name);
    let _ = writeln!(
        summary,
        "tolerances: profile={} tol_ode={:e} tol_root={:e} tol_weak={:e} eps_tan={:e}",
        t.profile, t.tol_ode, t.tol_root, t.tol_weak, t.eps_tan
    );
    let _ = writeln!(
        summary,
        "domain: {} to {}, grid {:?}",
        point(&scenario.domain.lo),
        point(&scenario.domain.hi),
        scenario.grid
    );
    for (name, f) in &scenario.fields {
        let _ = writeln!(summary, "field {name}: {}", f.kind());
    }

    let mut runner = Runner {
        scenario,
        out,
        opts: FlowOptions {
            tol_ode: t.tol_ode,
            tol_root: t.tol_root,
            ..FlowOptions::default()
        },
        state: scenario
            .fields
            .keys()
            .map(|k| (k.clone(), FieldState::default()))
            .collect(),
    };

    let mut ok = true;
    let n = scenario.tasks.len();
    for (i, task) in scenario.tasks.iter().enumerate() {
        let head = format!("[{}/{n}] {} {}", i + 1, task.label(), task.field);
        match runner.run(task) {
            Ok(msg) => {
                let _ = writeln!(summary, "{head}: ok: {msg}");
            }
            Err(msg) => {
                let _ = writeln!(summary, "{head}: FAILED: {msg}");
                for (j, rest) in scenario.tasks.iter().enumerate().skip(i + 1) {
                    let _ = writeln!(
                        summary,
                        "[{}/{n}] {} {}: skipped",
                        j + 1,
                        rest.label(),
                        rest.field
                    );
                }
                ok = false;
                break;
            }
        }
    }
    let _ = writeln!(summary, "result: {}", if ok { "ok" } else { "failed" });
    if let Err(e) =
        fs::create_dir_all(out).and_then(|_| fs::write(out.join("summary.txt"), &summary))
    {
        let _ = writeln!(summary, "could not write summary.txt: {e}");
        ok = false;
    }
    RunOutcome { summary, ok }
}

impl Runner<'_> {
    fn model(&self, task: &Task) -> &FieldModel {
        &self.scenario.fields[&task.field]
    }

    fn state(&mut self, task: &Task) -> &mut FieldState {
        self.state.get_mut(&task.field).expect("validated field")
    }

    fn run(&mut self, task: &Task) -> Result<String, String> {
        match &task.spec {
            TaskSpec::Reconstruct {
                grid,
                data,
                expect,
                expect_tol,
                ..
            } => {
                let shape = grid.clone().unwrap_or_else(|| self.scenario.grid.clone());
                self.reconstruct(
                    task,
                    &shape,
                    data.as_deref(),
                    expect.as_deref(),
                    expect_tol.unwrap_or(1e-6),
                )
            }
            TaskSpec::Admissible { .. } => self.admissible(task),
            TaskSpec::Verify {
                bumps,
                radius,
                sigma,
                table,
                expect_fail,
                ..
            } => self.verify(
                task,
                *bumps,
                *radius,
                sigma.as_deref(),
                table.as_deref(),
                *expect_fail,
            ),
            TaskSpec::Trace { point, tmax, .. } => {
                let tr = trace(&self.model(task).potential(), point, *tmax, &self.opts)?;
                let last = tr.last();
                let msg = format!(
                    "{} samples, end t = {} at {}, u = {}, I = {}, monotonicity violations {}",
                    tr.samples.len(),
                    e6(last.t),
                    crate::runner::point(&last.x),
                    e6(last.u),
                    e6(last.integral),
                    tr.monotonicity_violations()
                );
                self.state(task).trajectory = Some(tr);
                Ok(msg)
            }
            TaskSpec::Export { what, file, .. } => self.export(task, *what, file),
        }
    }

    fn reconstruct(
        &mut self,
        task: &Task,
        shape: &[usize],
        data: Option<&str>,
        expect: Option<&str>,
        expect_tol: f64,
    ) -> Result<String, String> {
        let domain = &self.scenario.domain;
        let model = self.model(task).clone();
        let potential = model.potential();
        let mut msg = String::new();
        let (sigma, grid) = match &model {
            FieldModel::Flow(u) => match data {
                None => (
                    ConductivityField::flow(u.clone(), self.opts),
                    reconstruct_on_grid(u, domain, shape, &self.opts),
                ),
                Some(src) => {
                    let gamma = Expr::parse(src, u.dim()).map_err(|e| e.to_string())?;
                    let g = gamma.clone();
                    let eval = move |y: &[f64]| g.eval(y).unwrap_or(f64::NAN);
                    let grid =
                        reconstruct_on_grid_with_data(u, domain, shape, Some(&eval), &self.opts);
                    let (field, opts) = (u.clone(), self.opts);
                    let sigma = ConductivityField::function(move |x: &[f64]| {
                        let g = |y: &[f64]| gamma.eval(y).unwrap_or(f64::NAN);
                        reconstruct_sigma_with_data(&field, x, &g, &opts).ok()
                    });
                    msg.push_str(&format!("level-set data {src}, "));
                    (sigma, grid)
                }
            },
            FieldModel::Separated(sp) => {
                sp.check_realizable().map_err(|e| e.to_string())?;
                let sigma = ConductivityField::separated(sp.clone(), self.opts);
                let mut grid = sample_sigma(&sigma, &potential, domain, shape);
                // interface points take the x1 > 0 limit
                let mut left = Vec::new();
                for hole in std::mem::take(&mut grid.holes) {
                    match sp.interface_sigmas(&hole.point[1..]) {
                        Ok((plus, _)) if hole.point[0] == 0.0 => {
                            grid.sigma[hole.index] = Some(plus)
                        }
                        _ => left.push(hole),
                    }
                }
                grid.holes = left;
                (sigma, grid)
            }
            FieldModel::Fan {
                fan, split, cells, ..
            } => {
                if *split {
                    let sf = fan.split().map_err(|e| e.to_string())?;
                    let closed =
                        fan_sigma_closed_form(&sf, Rational64::one()).map_err(|e| e.to_string())?;
                    let oracle = fan_propagation_oracle(&sf, Rational64::one())
                        .map_err(|e| e.to_string())?;
                    if closed != oracle {
                        return Err(format!(
                            "closed form {} disagrees with flux propagation {}",
                            rationals(&closed.chain_values()),
                            rationals(&oracle.chain_values())
                        ));
                    }
                    msg.push_str(&format!(
                        "split cone {}, exact σ {} in chain order, ",
                        sf.cone + 1,
                        rationals(&closed.chain_values())
                    ));
                }
                let sigma = build_cells(cells, &[], self.opts, &mut msg)?;
                let grid = sample_sigma(&sigma, &potential, domain, shape);
                (sigma, grid)
            }
            FieldModel::Piecewise { cells, seeds } => {
                let sigma = build_cells(cells, seeds, self.opts, &mut msg)?;
                let grid = sample_sigma(&sigma, &potential, domain, shape);
                (sigma, grid)
            }
        };
        let points = grid.points.len();
        msg.push_str(&format!("{points} grid points"));
        if let Some((lo, hi)) = grid.range() {
            msg.push_str(&format!(", σ in [{}, {}]", e6(lo), e6(hi)));
        }
        let holes = grid.holes.len();
        let first_hole = grid.holes.first().cloned();
        let err = match expect {
            Some(src) => {
                let e = Expr::parse(src, potential.dim()).map_err(|e| e.to_string())?;
                Some(grid.max_error(|x| e.eval(x).unwrap_or(f64::NAN)))
            }
            None => None,
        };
        let st = self.state(task);
        st.sigma = Some(sigma);
        st.grid = Some(grid);
        if let Some(Hole {
            point: p, reason, ..
        }) = first_hole
        {
            return Err(format!(
                "{msg}; {holes} grid points failed, first at {}: {reason}",
                point(&p)
            ));
        }
        if let (Some(err), Some(src)) = (err, expect) {
            msg.push_str(&format!(
                ", max |σ − ({src})| = {} (tol {})",
                e6(err),
                e6(expect_tol)
            ));
            if err.is_nan() || err > expect_tol {
                return Err(msg);
            }
        }
        Ok(msg)
    }

    fn admissible(&mut self, task: &Task) -> Result<String, String> {
        let domain = &self.scenario.domain;
        match self.model(task) {
            FieldModel::Flow(u) => {
                let b = check_gradient_bound(u, domain, &SamplingPlan::default())
                    .map_err(|e| e.to_string())?;
                Ok(format!(
                    "min |∇u| = {} at {} over {} samples",
                    e6(b.m),
                    point(&b.argmin),
                    b.samples
                ))
            }
            FieldModel::Separated(sp) => {
                sp.check_realizable().map_err(|e| e.to_string())?;
                sp.check_nonvanishing(domain.lo[0], domain.hi[0], 1000)
                    .map_err(|e| e.to_string())?;
                let ratio = sp.interface_ratio().map_err(|e| e.to_string())?;
                Ok(format!("g′(0) h′(0) > 0, g′ h′ nonvanishing on the domain, interface ratio h′(0)/g′(0) = {}", e6(ratio)))
            }
            FieldModel::Fan {
                fan,
                split,
                head,
                cells,
            } => fan_admissible(fan, *split, *head, cells),
            FieldModel::Piecewise { cells, .. } => {
                let plan = check_admissible(cells).map_err(|e| e.to_string())?;
                Ok(format!(
                    "{} cells in {} chain(s) from heads {:?}",
                    cells.cells.len(),
                    plan.chains.len(),
                    plan.heads
                ))
            }
        }
    }

    fn verify(
        &mut self,
        task: &Task,
        bumps: Option<usize>,
        radius: Option<f64>,
        sigma_src: Option<&str>,
        table: Option<&str>,
        expect_fail: bool,
    ) -> Result<String, String> {
        let domain = self.scenario.domain.clone();
        let tol = self.scenario.tolerances.tol_weak;
        let model = self.model(task).clone();
        let potential = model.potential();
        let (sigma, source) = match (sigma_src, table) {
            (Some(src), _) => (
                ConductivityField::parse(src, potential.dim()).map_err(|e| e.to_string())?,
                format!("σ = {src}"),
            ),
            (None, Some(file)) => {
                let text = fs::read_to_string(self.out.join(file))
                    .map_err(|e| format!("cannot read {file}: {e}"))?;
                (
                    read_sigma_table(&text).map_err(|e| e.to_string())?,
                    format!("σ from {file}"),
                )
            }
            (None, None) => match (&self.state[&task.field].sigma, &model) {
                (Some(s), _) => (s.clone(), "reconstructed σ".to_string()),
                (None, FieldModel::Flow(u)) => (
                    ConductivityField::flow(u.clone(), self.opts),
                    "flow σ".to_string(),
                ),
                (None, FieldModel::Separated(sp)) => (
                    ConductivityField::separated(sp.clone(), self.opts),
                    "separated σ".to_string(),
                ),
                (None, _) => return Err("no σ yet: run reconstruct (or build) first".into()),
            },
        };
        let n = bumps.unwrap_or(4);
        let min_side = (0..domain.dim())
            .map(|a| domain.hi[a] - domain.lo[a])
            .fold(f64::INFINITY, f64::min);
        let r = radius.unwrap_or(min_side / 4.0);
        if 2.0 * r > min_side {
            return Err(format!("bump radius {r} does not fit the domain"));
        }
        let tests = TestFunctionSet::grid(&domain, n, r);
        let report = weak_residual(&sigma, &potential, &tests);
        let max = report.max_normalized;
        let flagged = report.flagged();
        let mut msg = format!(
            "{source}, {} bumps of radius {}, max normalized residual {}, mean {}",
            tests.len(),
            e6(r),
            e6(max),
            e6(report.mean_normalized)
        );
        let st = self.state(task);
        let reference = st.reference;
        let gate_ok = if flagged > 0 {
            let why = report
                .entries
                .iter()
                .find_map(|e| e.flagged.clone())
                .unwrap_or_default();
            msg.push_str(&format!(", {flagged} bump(s) flagged: {why}"));
            false
        } else if expect_fail {
            msg.push_str(&format!(
                " (must exceed {} to detect a non-solution)",
                e6(1e3 * tol)
            ));
            max >= 1e3 * tol
        } else if table.is_some() {
            let gate = reference.map_or(tol, |r| (2.0 * r).max(tol));
            msg.push_str(&format!(" (gate {})", e6(gate)));
            max <= gate
        } else {
            msg.push_str(&format!(" (tol_weak {})", e6(tol)));
            max <= tol
        };
        if sigma_src.is_none() && table.is_none() {
            st.reference = Some(max);
        }
        st.report = Some(report);
        if gate_ok {
            Ok(msg)
        } else {
            Err(msg)
        }
    }

    fn export(&mut self, task: &Task, what: ExportKind, file: &str) -> Result<String, String> {
        let st = &self.state[&task.field];
        let text = match what {
            ExportKind::Sigma => st.grid.as_ref().map(|g| g.to_table()),
            ExportKind::Report => st.report.as_ref().map(|r| r.to_table()),
            ExportKind::Trajectory => st.trajectory.as_ref().map(|t| t.to_table()),
        }
        .ok_or_else(|| format!("nothing to export: no {what} has been computed for this field"))?;
        let path = self.out.join(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        }
        fs::write(&path, &text).map_err(|e| format!("cannot write {file}: {e}"))?;
        Ok(format!(
            "{what} written to {file} ({} lines)",
            text.lines().count()
        ))
    }
}

fn build_cells(
    cells: &Cells,
    seeds: &[(usize, f64)],
    opts: FlowOptions,
    msg: &mut String,
) -> Result<ConductivityField<f64>, String> {
    let plan = check_admissible(cells).map_err(|e| e.to_string())?;
    let (sigma, report) =
        build_piecewise_sigma(cells, &plan, seeds, opts).map_err(|e| e.to_string())?;
    let ranges: Vec<String> = report
        .ranges
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                format!("{lo}")
            } else {
                format!("[{}, {}]", e6(lo), e6(hi))
            }
        })
        .collect();
    msg.push_str(&format!(
        "cell σ ({}), worst relative flux mismatch {}, ",
        ranges.join(", "),
        e6(report.worst_flux())
    ));
    Ok(ConductivityField::piecewise(sigma))
}

fn fan_admissible(
    fan: &ExactFan,
    split: bool,
    head: usize,
    cells: &Cells,
) -> Result<String, String> {
    fan.validate().map_err(|v| {
        let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        parts.join("; ")
    })?;
    let lc = fan.loop_constraint();
    let mut msg = format!(
        "loop products {} and {} {}",
        lc.lhs,
        lc.rhs,
        if lc.holds { "agree" } else { "differ" }
    );
    if split {
        let sf = fan.split().map_err(|e| e.to_string())?;
        fan_sigma_closed_form(&sf, Rational64::one()).map_err(|e| e.to_string())?;
        msg.push_str(&format!(
            ", split cone {}, sign condition holds at every spoke",
            sf.cone + 1
        ));
    } else {
        msg.push_str(&format!(", unsplit with head cone {}", head + 1));
    }
    let plan = check_admissible(cells).map_err(|e| e.to_string())?;
    msg.push_str(&format!(
        ", {} piece(s) in {} chain(s)",
        cells.cells.len(),
        plan.chains.len()
    ));
    Ok(msg)
}

/// Evaluates `sigma`, `u` and `|∇u|` on a grid. Points on a face take the
/// value of the first piece containing them.
fn sample_sigma(
    sigma: &ConductivityField<f64>,
    potential: &Field,
    bbox: &Aabb<f64>,
    shape: &[usize],
) -> GridReconstruction<f64> {
    let points = bbox.grid(shape);
    let pieces = sigma.pieces().unwrap_or_default();
    let mut out = GridReconstruction {
        bbox: bbox.clone(),
        shape: shape.to_vec(),
        points: Vec::with_capacity(points.len()),
        sigma: Vec::with_capacity(points.len()),
        u: Vec::with_capacity(points.len()),
        grad_norm: Vec::with_capacity(points.len()),
        holes: Vec::new(),
    };
    for (i, p) in points.into_iter().enumerate() {
        let s = sigma.eval(&p).or_else(|e| {
            (0..pieces.len())
                .filter(|&k| pieces[k].depth([p[0], p[1]]).is_ok_and(|d| d >= -1e-12))
                .find_map(|k| sigma.eval_in_piece(k, &p).ok())
                .ok_or(e)
        });
        match s {
            Ok(v) => out.sigma.push(Some(v)),
            Err(e) => {
                out.holes.push(Hole {
                    index: i,
                    point: p.clone(),
                    reason: e.to_string(),
                });
                out.sigma.push(None);
            }
        }
        match potential.eval(&p) {
            Ok(e) => {
                out.u.push(Some(e.u));
                out.grad_norm
                    .push(Some(e.grad.iter().map(|g| g * g).sum::<f64>().sqrt()));
            }
            Err(_) => {
                out.u.push(None);
                out.grad_norm.push(None);
            }
        }
        out.points.push(p);
    }
    out
}

/// Trajectory from `x` for time `tmax`, or to `{u = 0}` when `tmax` is `None`.
pub fn trace(
    field: &Field,
    x: &[f64],
    tmax: Option<f64>,
    opts: &FlowOptions,
) -> Result<Trajectory<f64>, String> {
    match tmax {
        Some(t) => integrate_flow(field, x, t, opts),
        None => trajectory_to_level_set(field, x, opts),
    }
    .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{parse, validate};
    use crate::Tolerances;

    fn scenario(tasks: &str) -> Scenario {
        let text = format!(
            r#"{{"name": "t", "domain": {{"lo": [0, 0], "hi": [1, 1]}}, "grid": [3, 3],
                "fields": {{"u": {{"kind": "expression", "expr": "2*x1 + x2", "dim": 2}}}},
                "tasks": {tasks}}}"#
        );
        validate(
            parse(&text).unwrap(),
            Tolerances::profile("default").unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn affine_field_has_unit_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario(
            r#"[{"task": "reconstruct", "expect": "1", "expect_tol": 1e-12}, {"task": "verify"}]"#,
        );
        let out = run_scenario(&s, dir.path());
        assert!(out.ok, "{}", out.summary);
        assert!(out.summary.ends_with("result: ok\n"));
    }

    #[test]
    fn export_before_compute_fails_and_skips_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario(
            r#"[{"task": "export", "what": "report", "file": "r.tsv"}, {"task": "verify"}]"#,
        );
        let out = run_scenario(&s, dir.path());
        assert!(!out.ok);
        assert!(out.summary.contains("nothing to export"));
        assert!(out.summary.contains("[2/2] verify u: skipped"));
    }

    #[test]
    fn sampled_grid_reports_potential() {
        let u = Field::parse("x1 - x2", 2).unwrap();
        let sigma = ConductivityField::parse("1 + x1", 2).unwrap();
        let bbox = Aabb::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let g = sample_sigma(&sigma, &u, &bbox, &[2, 2]);
        assert!(g.holes.is_empty());
        assert_eq!(g.sigma.iter().flatten().copied().fold(0.0, f64::max), 2.0);
        assert!((g.grad_norm[0].unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
