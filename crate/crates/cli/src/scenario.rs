//! Scenario files: schema, parsing and validation.
//!
//! A scenario is a JSON object:
//!
//! ```json
//! {
//!   "name": "closed-form pair",
//!   "domain": { "lo": [-1, -1], "hi": [1, 1] },
//!   "grid": [21, 21],
//!   "tolerances": { "tol_ode": 1e-10, "tol_root": 1e-10, "tol_weak": 1e-6, "eps_tan": 1e-10 },
//!   "fields": {
//!     "u": { "kind": "expression", "expr": "x1 + x2^2/4", "dim": 2 }
//!   },
//!   "tasks": [
//!     { "task": "reconstruct", "field": "u" },
//!     { "task": "verify", "field": "u" },
//!     { "task": "export", "field": "u", "what": "sigma", "file": "sigma.tsv" }
//!   ]
//! }
//! ```
//!
//! Field kinds:
//!
//! - `expression`: `expr`, `dim`, optional `derivatives` (`symbolic` or
//!   `finite-difference`) and `mollify` (kernel width).
//! - `separated`: `g`, `h` (one variable), `f` (over `x1..xd`, not using
//!   `x1`), `dim`.
//! - `fan`: `spokes` and `gradients` as pairs of integers or `"p/q"`
//!   strings, optional `split` (default `true`) and `head` (default 0, used
//!   when not split). The fan is cut to the scenario's centered square.
//! - `piecewise`: `cells` (each with `vertices` or `reference` plus `map`,
//!   and a `potential` expression), `heads`, optional `seeds` as
//!   `[cell, value]` pairs.
//!
//! Tasks (each names a declared field; `field` may be omitted when exactly one
//! is declared):
//!
//! - `reconstruct` (alias `build`): σ on the grid for flow-based kinds, or the
//!   cell-by-cell construction for fans and piecewise fields. Optional
//!   `data` (level-set values of σ as an expression), `expect` (closed form
//!   to compare against) with `expect_tol`.
//! - `admissible`: realizability preconditions for the field kind.
//! - `verify`: weak residual over `bumps` per axis of radius `radius`.
//!   Optional `sigma` (an expression to test instead of the reconstruction),
//!   `table` (a previously exported σ table, relative to the output
//!   directory) and `expect_fail` (gate inverted: residual must exceed
//!   1000 × tol_weak).
//! - `trace`: trajectory from `point` for time `tmax`, or to `{u = 0}` when
//!   `tmax` is absent.
//! - `export`: `what` is `sigma`, `report` or `trajectory`; written to `file`
//!   inside the output directory.

use std::collections::BTreeMap;
use std::fmt;

use isoreal::fans::parse_rational;
use isoreal::piecewise::cells::{Cell, PiecewiseSettings};
use isoreal::{
    Aabb, CellMap, Cells, ConeFan, DerivativeMode, ExactFan, Expr, Field, MollifierSpec,
    SeparatedPotential,
};
use num_rational::Rational64;
use serde::Deserialize;

/// Environment variable naming the default tolerance profile.
pub const PROFILE_ENV: &str = "ISOREAL_PROFILE";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub domain: DomainSpec,
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    pub fields: BTreeMap<String, FieldSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub tol_ode: Option<f64>,
    pub tol_root: Option<f64>,
    pub tol_weak: Option<f64>,
    pub eps_tan: Option<f64>,
}

/// A rational entry of a fan: an integer or a `"p/q"` string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Exact {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Expression {
        expr: String,
        dim: usize,
        #[serde(default)]
        derivatives: Option<String>,
        #[serde(default)]
        mollify: Option<f64>,
    },
    Separated {
        g: String,
        h: String,
        f: String,
        dim: usize,
    },
    Fan {
        spokes: Vec<[Exact; 2]>,
        gradients: Vec<[Exact; 2]>,
        #[serde(default = "yes")]
        split: bool,
        #[serde(default)]
        head: usize,
    },
    Piecewise {
        cells: Vec<CellSpec>,
        heads: Vec<usize>,
        #[serde(default)]
        seeds: Vec<(usize, f64)>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(default)]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub reference: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub map: Option<MapSpec>,
    pub potential: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub forward: [String; 2],
    pub inverse: [String; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    #[serde(alias = "build")]
    Reconstruct {
        #[serde(default)]
        field: Option<String>,
        #[serde(default)]
        grid: Option<Vec<usize>>,
        #[serde(default)]
        data: Option<String>,
        #[serde(default)]
        expect: Option<String>,
        #[serde(default)]
        expect_tol: Option<f64>,
    },
    Admissible {
        #[serde(default)]
        field: Option<String>,
    },
    Verify {
        #[serde(default)]
        field: Option<String>,
        #[serde(default)]
        bumps: Option<usize>,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        sigma: Option<String>,
        #[serde(default)]
        table: Option<String>,
        #[serde(default)]
        expect_fail: bool,
    },
    Trace {
        #[serde(default)]
        field: Option<String>,
        point: Vec<f64>,
        #[serde(default)]
        tmax: Option<f64>,
    },
    Export {
        #[serde(default)]
        field: Option<String>,
        what: ExportKind,
        file: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportKind {
    Sigma,
    Report,
    Trajectory,
}

impl fmt::Display for ExportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportKind::Sigma => "sigma",
            ExportKind::Report => "report",
            ExportKind::Trajectory => "trajectory",
        })
    }
}

/// Named tolerance defaults, selected with [`PROFILE_ENV`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub profile: &'static str,
    pub tol_ode: f64,
    pub tol_root: f64,
    pub tol_weak: f64,
    pub eps_tan: f64,
}

impl Tolerances {
    pub fn profile(name: &str) -> Option<Self> {
        let (profile, tol_ode, tol_root, tol_weak) = match name {
            "default" => ("default", 1e-10, 1e-10, isoreal::TOL_WEAK),
            "strict" => ("strict", 1e-12, 1e-12, 1e-6),
            "fast" => ("fast", 1e-8, 1e-8, 1e-4),
            _ => return None,
        };
        Some(Tolerances {
            profile,
            tol_ode,
            tol_root,
            tol_weak,
            eps_tan: 1e-10,
        })
    }

    /// Profile from the environment, `default` when unset.
    pub fn from_env() -> Result<Self, ValidationError> {
        let name = std::env::var(PROFILE_ENV).unwrap_or_else(|_| "default".into());
        Self::profile(&name).ok_or_else(|| {
            ValidationError(format!(
                "{PROFILE_ENV}={name:?} is not a tolerance profile (default, strict, fast)"
            ))
        })
    }
}

/// Malformed JSON or a schema mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError(pub String);

/// A well-formed scenario that cannot be run as written.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error: {}", self.0)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl std::error::Error for ParseError {}
impl std::error::Error for ValidationError {}

pub fn parse(text: &str) -> Result<ScenarioFile, ParseError> {
    serde_json::from_str(text).map_err(|e| ParseError(e.to_string()))
}

/// A field ready to run.
#[derive(Debug, Clone)]
pub enum FieldModel {
    Flow(Field),
    Separated(SeparatedPotential),
    Fan {
        fan: ExactFan,
        split: bool,
        head: usize,
        cells: Cells,
    },
    Piecewise {
        cells: Cells,
        seeds: Vec<(usize, f64)>,
    },
}

impl FieldModel {
    pub fn dim(&self) -> usize {
        match self {
            FieldModel::Flow(f) => f.dim(),
            FieldModel::Separated(sp) => sp.dim(),
            FieldModel::Fan { .. } | FieldModel::Piecewise { .. } => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FieldModel::Flow(f) => f.kind(),
            FieldModel::Separated(_) => "separated",
            FieldModel::Fan { .. } => "fan",
            FieldModel::Piecewise { .. } => "piecewise",
        }
    }

    /// The potential as an evaluable field.
    pub fn potential(&self) -> Field {
        match self {
            FieldModel::Flow(f) => f.clone(),
            FieldModel::Separated(sp) => Field::separated(sp.clone()),
            FieldModel::Fan { cells, .. } | FieldModel::Piecewise { cells, .. } => cells.field(),
        }
    }
}

/// Validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub domain: Aabb<f64>,
    pub grid: Vec<usize>,
    pub tolerances: Tolerances,
    pub fields: BTreeMap<String, FieldModel>,
    pub tasks: Vec<Task>,
}

/// A task with its field resolved.
#[derive(Debug, Clone)]
pub struct Task {
    pub field: String,
    pub spec: TaskSpec,
}

impl Task {
    pub fn label(&self) -> &'static str {
        match self.spec {
            TaskSpec::Reconstruct { .. } => "reconstruct",
            TaskSpec::Admissible { .. } => "admissible",
            TaskSpec::Verify { .. } => "verify",
            TaskSpec::Trace { .. } => "trace",
            TaskSpec::Export { .. } => "export",
        }
    }
}

fn invalid(msg: impl Into<String>) -> ValidationError {
    ValidationError(msg.into())
}

fn exact(v: &Exact) -> Result<Rational64, String> {
    match v {
        Exact::Int(i) => Ok(Rational64::from_integer(*i)),
        Exact::Text(s) => parse_rational(s),
    }
}

fn exact_pairs(
    name: &str,
    what: &str,
    v: &[[Exact; 2]],
) -> Result<Vec<[Rational64; 2]>, ValidationError> {
    v.iter()
        .map(|[a, b]| Ok([exact(a)?, exact(b)?]))
        .collect::<Result<_, String>>()
        .map_err(|e| invalid(format!("field {name:?}: bad {what} entry: {e}")))
}

fn positive(name: &str, v: Option<f64>) -> Result<(), ValidationError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(invalid(format!("{name} must be positive, got {x}")))
        }
        _ => Ok(()),
    }
}

fn build_field(
    name: &str,
    spec: &FieldSpec,
    domain: &Aabb<f64>,
    tol: &Tolerances,
) -> Result<FieldModel, ValidationError> {
    let ctx = |e: &dyn fmt::Display| invalid(format!("field {name:?}: {e}"));
    match spec {
        FieldSpec::Expression {
            expr,
            dim,
            derivatives,
            mollify,
        } => {
            let mode = match derivatives.as_deref() {
                None | Some("symbolic") => DerivativeMode::Symbolic,
                Some("finite-difference") => DerivativeMode::FiniteDifference,
                Some(other) => return Err(ctx(&format!("unknown derivative mode {other:?}"))),
            };
            let e = Expr::parse(expr, *dim).map_err(|e| ctx(&e))?;
            let mut f = Field::from_expr(e, *dim, mode);
            if let Some(w) = mollify {
                let spec = MollifierSpec::new(*w).map_err(|e| ctx(&e))?;
                f = f.mollify(&spec).map_err(|e| ctx(&e))?;
            }
            Ok(FieldModel::Flow(f))
        }
        FieldSpec::Separated { g, h, f, dim } => {
            let sp = SeparatedPotential::parse(g, h, f, *dim).map_err(|e| ctx(&e))?;
            Ok(FieldModel::Separated(sp))
        }
        FieldSpec::Fan {
            spokes,
            gradients,
            split,
            head,
        } => {
            let s = exact_pairs(name, "spoke", spokes)?;
            let g = exact_pairs(name, "gradient", gradients)?;
            let fan = ConeFan::new(s, g).map_err(|e| ctx(&e))?;
            let half = centered_half(domain)
                .ok_or_else(|| ctx(&"a fan needs a square domain centered at the origin"))?;
            if !split && *head >= fan.len() {
                return Err(ctx(&format!("head {head} is not a cone of the fan")));
            }
            let cells = if *split {
                // an unsplittable fan is reported by the admissible task
                match fan.split() {
                    Ok(sf) => Cells::from_split_fan(&sf, half),
                    Err(_) => Cells::from_fan(&fan, half, 0),
                }
            } else {
                Cells::from_fan(&fan, half, *head)
            }
            .map_err(|e| ctx(&e))?
            .with_settings(settings(tol));
            Ok(FieldModel::Fan {
                fan,
                split: *split,
                head: *head,
                cells,
            })
        }
        FieldSpec::Piecewise {
            cells,
            heads,
            seeds,
        } => {
            let mut out = Vec::with_capacity(cells.len());
            for (i, c) in cells.iter().enumerate() {
                let u =
                    Field::parse(&c.potential, 2).map_err(|e| ctx(&format!("cell {i}: {e}")))?;
                let cell = match (&c.vertices, &c.reference, &c.map) {
                    (Some(v), None, None) => Cell::polygon(i, v.clone(), u),
                    (None, Some(r), Some(m)) => {
                        let map = CellMap::parse(
                            [&m.forward[0], &m.forward[1]],
                            [&m.inverse[0], &m.inverse[1]],
                        )
                        .map_err(|e| ctx(&format!("cell {i}: {e}")))?;
                        Cell::mapped(i, r.clone(), map, u)
                    }
                    _ => {
                        return Err(ctx(&format!(
                            "cell {i}: give either `vertices` or both `reference` and `map`"
                        )))
                    }
                };
                out.push(cell);
            }
            for &(c, v) in seeds {
                if !heads.contains(&c) {
                    return Err(ctx(&format!("seed for cell {c}, which is not a head")));
                }
                positive("seed", Some(v))?;
            }
            let d = Cells::auto(out, heads.clone())
                .map_err(|e| ctx(&e))?
                .with_settings(settings(tol));
            Ok(FieldModel::Piecewise {
                cells: d,
                seeds: seeds.clone(),
            })
        }
    }
}

fn settings(tol: &Tolerances) -> PiecewiseSettings {
    PiecewiseSettings {
        eps_tan: tol.eps_tan,
        ..PiecewiseSettings::default()
    }
}

fn centered_half(d: &Aabb<f64>) -> Option<f64> {
    let h = d.hi[0];
    let ok = d.dim() == 2
        && h > 0.0
        && d.lo
            .iter()
            .chain(&d.hi)
            .all(|v| (v.abs() - h).abs() <= 1e-12 * h);
    ok.then_some(h)
}

/// Checks references, dimensions and tolerances, and builds every field.
pub fn validate(file: ScenarioFile, defaults: Tolerances) -> Result<Scenario, ValidationError> {
    let t = &file.tolerances;
    positive("tol_ode", t.tol_ode)?;
    positive("tol_root", t.tol_root)?;
    positive("tol_weak", t.tol_weak)?;
    positive("eps_tan", t.eps_tan)?;
    let tolerances = Tolerances {
        profile: defaults.profile,
        tol_ode: t.tol_ode.unwrap_or(defaults.tol_ode),
        tol_root: t.tol_root.unwrap_or(defaults.tol_root),
        tol_weak: t.tol_weak.unwrap_or(defaults.tol_weak),
        eps_tan: t.eps_tan.unwrap_or(defaults.eps_tan),
    };

    let domain = Aabb::new(file.domain.lo.clone(), file.domain.hi.clone());
    if file.domain.lo.len() != file.domain.hi.len()
        || file.domain.lo.is_empty()
        || !domain.is_valid()
    {
        return Err(invalid(
            "domain needs matching non-empty `lo` and `hi` with lo < hi",
        ));
    }
    let dim = domain.dim();
    let grid = file.grid.clone().unwrap_or_else(|| vec![21; dim]);
    check_grid(&grid, dim)?;

    if file.fields.is_empty() {
        return Err(invalid("no fields declared"));
    }
    let mut fields = BTreeMap::new();
    for (name, spec) in &file.fields {
        let model = build_field(name, spec, &domain, &tolerances)?;
        if model.dim() != dim {
            return Err(invalid(format!(
                "field {name:?} has dimension {} but the domain has {dim}",
                model.dim()
            )));
        }
        fields.insert(name.clone(), model);
    }

    let only = (fields.len() == 1)
        .then(|| fields.keys().next().cloned())
        .flatten();
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for (i, spec) in file.tasks.iter().enumerate() {
        let named = match spec {
            TaskSpec::Reconstruct { field, .. }
            | TaskSpec::Admissible { field }
            | TaskSpec::Verify { field, .. }
            | TaskSpec::Trace { field, .. }
            | TaskSpec::Export { field, .. } => field.clone(),
        };
        let field = match named.or_else(|| only.clone()) {
            Some(f) if fields.contains_key(&f) => f,
            Some(f) => {
                return Err(invalid(format!(
                    "task {} refers to undeclared field {f:?}",
                    i + 1
                )))
            }
            None => return Err(invalid(format!("task {} must name a field", i + 1))),
        };
        check_task(i + 1, spec, dim)?;
        tasks.push(Task {
            field,
            spec: spec.clone(),
        });
    }

    Ok(Scenario {
        name: file.name.unwrap_or_else(|| "unnamed".into()),
        domain,
        grid,
        tolerances,
        fields,
        tasks,
    })
}

fn check_grid(grid: &[usize], dim: usize) -> Result<(), ValidationError> {
    if grid.len() != dim || grid.iter().any(|&n| n < 2) {
        return Err(invalid(format!(
            "grid must list {dim} axis sizes of at least 2, got {grid:?}"
        )));
    }
    Ok(())
}

fn check_task(i: usize, spec: &TaskSpec, dim: usize) -> Result<(), ValidationError> {
    let parse = |src: &str| {
        Expr::parse(src, dim)
            .map(|_| ())
            .map_err(|e| invalid(format!("task {i}: {e}")))
    };
    match spec {
        TaskSpec::Reconstruct {
            grid,
            data,
            expect,
            expect_tol,
            ..
        } => {
            if let Some(g) = grid {
                check_grid(g, dim)?;
            }
            if let Some(d) = data {
                parse(d)?;
            }
            if let Some(e) = expect {
                parse(e)?;
            }
            positive("expect_tol", *expect_tol)
        }
        TaskSpec::Verify {
            bumps,
            radius,
            sigma,
            table,
            ..
        } => {
            if bumps == &Some(0) {
                return Err(invalid(format!("task {i}: bumps must be at least 1")));
            }
            positive("radius", *radius)?;
            if let Some(s) = sigma {
                parse(s)?;
            }
            if sigma.is_some() && table.is_some() {
                return Err(invalid(format!(
                    "task {i}: give at most one of `sigma` and `table`"
                )));
            }
            Ok(())
        }
        TaskSpec::Trace { point, tmax, .. } => {
            if point.len() != dim {
                return Err(invalid(format!(
                    "task {i}: point has dimension {}, expected {dim}",
                    point.len()
                )));
            }
            match tmax {
                Some(t) if !t.is_finite() => Err(invalid(format!("task {i}: tmax must be finite"))),
                _ => Ok(()),
            }
        }
        TaskSpec::Export { file, .. } => {
            let p = std::path::Path::new(file);
            if file.is_empty()
                || p.is_absolute()
                || p.components()
                    .any(|c| matches!(c, std::path::Component::ParentDir))
            {
                return Err(invalid(format!(
                    "task {i}: export file must be a relative path inside the output directory"
                )));
            }
            Ok(())
        }
        TaskSpec::Admissible { .. } => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Scenario, String> {
        let file = parse(text).map_err(|e| e.to_string())?;
        validate(file, Tolerances::profile("default").unwrap()).map_err(|e| e.to_string())
    }

    const BASE: &str = r#"{
        "domain": { "lo": [-1, -1], "hi": [1, 1] },
        "fields": { "u": { "kind": "expression", "expr": "x1 + x2^2/4", "dim": 2 } },
        "tasks": [ { "task": "reconstruct" }, { "task": "verify", "field": "u" } ]
    }"#;

    #[test]
    fn minimal_scenario_validates() {
        let s = load(BASE).unwrap();
        assert_eq!(s.grid, vec![21, 21]);
        assert_eq!(s.tasks.len(), 2);
        assert!(s.tasks.iter().all(|t| t.field == "u"));
        assert_eq!(s.tolerances.tol_weak, isoreal::TOL_WEAK);
    }

    #[test]
    fn schema_errors_are_parse_errors() {
        assert!(parse("{").is_err());
        assert!(parse(&BASE.replace("\"tasks\"", "\"chores\"")).is_err());
        assert!(parse(&BASE.replace("reconstruct", "paint")).is_err());
    }

    #[test]
    fn bad_references_and_tolerances_are_rejected() {
        let e = load(&BASE.replace(r#""field": "u""#, r#""field": "v""#)).unwrap_err();
        assert!(e.contains("undeclared field \"v\""), "{e}");
        let e = load(&BASE.replace(r#""tasks""#, r#""tolerances": { "tol_ode": -1 }, "tasks""#))
            .unwrap_err();
        assert!(e.contains("tol_ode must be positive"), "{e}");
        let e = load(&BASE.replace("x1 + x2^2/4", "x1 +")).unwrap_err();
        assert!(e.starts_with("invalid scenario"), "{e}");
        let e = load(&BASE.replace(r#""dim": 2"#, r#""dim": 3"#)).unwrap_err();
        assert!(e.contains("dimension 3"), "{e}");
    }

    #[test]
    fn fan_needs_centered_square() {
        let fan = r#"{
            "domain": { "lo": [0, -1], "hi": [1, 1] },
            "fields": { "f": { "kind": "fan", "spokes": [[1,0],[0,1],[-1,-1]], "gradients": [[2,-1],[1,-1],[2,-2]] } }
        }"#;
        assert!(load(fan).unwrap_err().contains("centered"));
        let ok = fan.replace("[0, -1]", "[-1, -1]");
        assert!(matches!(
            load(&ok).unwrap().fields["f"],
            FieldModel::Fan { split: true, .. }
        ));
    }

    #[test]
    fn profiles() {
        assert_eq!(Tolerances::profile("strict").unwrap().tol_weak, 1e-6);
        assert!(Tolerances::profile("sloppy").is_none());
    }
}
