//! Admissibility of a decomposition: face classes, sign and continuity
//! conditions across faces, reachability from the heads, and consistency
//! of the flux around closed loops of cells.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use super::build::assemble;
use super::cells::{classify_face, face_parameters, Classified, Decomposition, FaceClass};
use crate::scalar::{lit, norm, to_f64, Real};

/// One reason a decomposition is not admissible.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `∂u/∂ν` changes sign along a face.
    MixedFace {
        cell: usize,
        face: String,
        min: f64,
        max: f64,
    },
    /// Normal derivatives from the two sides do not share a sign.
    SignCondition { face: String, product: f64 },
    /// Tangential from one side only.
    OneSidedTangential { face: String, cell: usize },
    /// `u` jumps across a face.
    Discontinuous { face: String, jump: f64 },
    /// `|∇u|` falls below the threshold inside a cell.
    SmallGradient { cell: usize, value: f64 },
    /// A head cell without inflow faces has nothing to seed.
    HeadWithoutInflow { cell: usize },
    /// No head reaches the cell through non-tangential faces.
    Unreached { cell: usize },
    /// Flux across a face closing a loop of cells does not balance.
    CycleClosure {
        face: String,
        mismatch: f64,
        scale: f64,
    },
    /// Geometry or evaluation failure while checking.
    Evaluation { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MixedFace { cell, face, min, max } => write!(
                f,
                "{face} of cell {cell} is neither inflow nor outflow: ∂u/∂ν ranges over [{min:e}, {max:e}]"
            ),
            Violation::SignCondition { face, product } => write!(
                f,
                "sign condition fails on {face}: product of normal derivatives {product:e} is not positive"
            ),
            Violation::OneSidedTangential { face, cell } => {
                write!(f, "{face} is tangential from cell {cell} only")
            }
            Violation::Discontinuous { face, jump } => write!(f, "u jumps by {jump:e} across {face}"),
            Violation::SmallGradient { cell, value } => {
                write!(f, "|∇u| drops to {value:e} inside cell {cell}")
            }
            Violation::HeadWithoutInflow { cell } => write!(f, "head cell {cell} has no inflow face"),
            Violation::Unreached { cell } => write!(f, "cell {cell} is not reached from any head"),
            Violation::CycleClosure { face, mismatch, scale } => write!(
                f,
                "flux does not close across {face}: mismatch {mismatch:e} against flux {scale:e}"
            ),
            Violation::Evaluation { detail } => f.write_str(detail),
        }
    }
}

/// All violations found.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "decomposition is not admissible ({} violations)",
            self.violations.len()
        )?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

/// How a cell was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parent {
    pub face: usize,
    pub from: usize,
    /// The edge of the reached cell on that face.
    pub edge: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanStep {
    pub cell: usize,
    pub head: usize,
    pub parent: Option<Parent>,
    /// Boundary portion carrying the cell's data.
    pub data: FaceClass,
}

/// Propagation order accepted by [`check_admissible`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPlan {
    pub heads: Vec<usize>,
    /// Breadth-first order; each parent precedes its children.
    pub steps: Vec<PlanStep>,
    /// Head-to-leaf paths of cells.
    pub chains: Vec<Vec<usize>>,
    /// `classes[cell][edge]`.
    pub classes: Vec<Vec<FaceClass>>,
    /// Internal faces not used for propagation whose flux balance was checked.
    pub closing_faces: Vec<usize>,
    pub(crate) cells: usize,
}

impl ChainPlan {
    pub fn step(&self, cell: usize) -> &PlanStep {
        self.steps
            .iter()
            .find(|s| s.cell == cell)
            .expect("every cell has a step")
    }

    /// Cells whose data derive from `head`.
    pub fn hub(&self, head: usize) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.head == head)
            .map(|s| s.cell)
            .collect()
    }

    pub fn is_parent_face(&self, face: usize) -> bool {
        self.steps
            .iter()
            .any(|s| s.parent.is_some_and(|p| p.face == face))
    }
}

/// Per-edge classification of every cell.
pub fn classify_all<T: Real>(
    d: &Decomposition<T>,
) -> Result<Vec<Vec<Classified<T>>>, ViolationReport> {
    let eval_err = |e: crate::field::FieldError| ViolationReport {
        violations: vec![Violation::Evaluation {
            detail: e.to_string(),
        }],
    };
    d.cells
        .iter()
        .map(|c| {
            (0..c.edge_count())
                .map(|e| classify_face(c, e, d.settings.face_order, d.settings.eps_tan))
                .collect::<Result<Vec<_>, _>>()
                .map_err(eval_err)
        })
        .collect()
}

/// Checks every condition and returns the propagation plan, or the full
/// list of violations.
pub fn check_admissible<T: Real>(d: &Decomposition<T>) -> Result<ChainPlan, ViolationReport> {
    let classified = classify_all(d)?;
    let classes: Vec<Vec<FaceClass>> = classified
        .iter()
        .map(|v| v.iter().map(|c| c.class).collect())
        .collect();
    let mut violations = Vec::new();
    let eval_fail = |e: &dyn fmt::Display| Violation::Evaluation {
        detail: e.to_string(),
    };

    for (c, cls) in classified.iter().enumerate() {
        for (e, k) in cls.iter().enumerate() {
            if k.class == FaceClass::Mixed {
                violations.push(Violation::MixedFace {
                    cell: c,
                    face: d.face_of(c, e).name(),
                    min: to_f64(k.min),
                    max: to_f64(k.max),
                });
            }
        }
    }

    for f in &d.faces {
        let Some((nb, nb_edge)) = f.neighbor else {
            continue;
        };
        let a = classes[f.owner][f.owner_edge];
        let b = classes[nb][nb_edge];
        if a == FaceClass::Mixed || b == FaceClass::Mixed {
            continue;
        }
        let owner = &d.cells[f.owner];
        let other = &d.cells[nb];
        let mut jump = T::zero();
        let mut ulevel = T::zero();
        let mut product = T::infinity();
        for s in face_parameters::<T>(d.settings.face_order) {
            let p = match owner.edge_point(f.owner_edge, s) {
                Ok(p) => p,
                Err(e) => {
                    violations.push(eval_fail(&e));
                    break;
                }
            };
            let nu = owner
                .edge_normal(f.owner_edge, s)
                .unwrap_or([T::zero(), T::zero()]);
            match (owner.potential.eval(&p), other.potential.eval(&p)) {
                (Ok(ea), Ok(eb)) => {
                    jump = jump.max((ea.u - eb.u).abs());
                    ulevel = ulevel.max(ea.u.abs());
                    let da = ea.grad[0] * nu[0] + ea.grad[1] * nu[1];
                    let db = eb.grad[0] * nu[0] + eb.grad[1] * nu[1];
                    product = product.min(da * db);
                }
                (Err(e), _) | (_, Err(e)) => {
                    violations.push(eval_fail(&e));
                    break;
                }
            }
        }
        if jump > lit::<T>(1e-8) * (T::one() + ulevel) {
            violations.push(Violation::Discontinuous {
                face: f.name(),
                jump: to_f64(jump),
            });
        }
        match (a == FaceClass::Tangential, b == FaceClass::Tangential) {
            (true, true) => {}
            (true, false) => violations.push(Violation::OneSidedTangential {
                face: f.name(),
                cell: f.owner,
            }),
            (false, true) => violations.push(Violation::OneSidedTangential {
                face: f.name(),
                cell: nb,
            }),
            (false, false) => {
                // same sign with a common normal means opposite classes
                if a == b || product <= T::zero() {
                    violations.push(Violation::SignCondition {
                        face: f.name(),
                        product: to_f64(product),
                    });
                }
            }
        }
    }

    let m_min: T = lit(d.settings.m_min);
    for c in &d.cells {
        let mut pts = match c.interior_samples() {
            Ok(p) => p,
            Err(e) => {
                violations.push(eval_fail(&e));
                continue;
            }
        };
        for e in 0..c.edge_count() {
            if let Ok(p) = c.edge_point(e, lit(0.5)) {
                pts.push(p);
            }
        }
        let mut low = T::infinity();
        for p in pts {
            match c.potential.eval(&p) {
                Ok(ev) => low = low.min(norm(&ev.grad)),
                Err(e) => violations.push(eval_fail(&e)),
            }
        }
        if low < m_min {
            violations.push(Violation::SmallGradient {
                cell: c.id,
                value: to_f64(low),
            });
        }
    }
    if !violations.is_empty() {
        return Err(ViolationReport { violations });
    }

    // breadth-first propagation over non-tangential internal faces
    let n = d.cells.len();
    let mut reached: Vec<Option<PlanStep>> = vec![None; n];
    let mut steps = Vec::new();
    let mut heads = d.heads.clone();
    let auto = heads.is_empty();
    let mut queue = VecDeque::new();
    let seed_head = |h: usize, reached: &mut Vec<Option<PlanStep>>, queue: &mut VecDeque<usize>| {
        if reached[h].is_none() {
            reached[h] = Some(PlanStep {
                cell: h,
                head: h,
                parent: None,
                data: FaceClass::Inflow,
            });
            queue.push_back(h);
        }
    };
    for &h in &heads {
        seed_head(h, &mut reached, &mut queue);
    }
    let mut next_auto = 0;
    loop {
        while let Some(c) = queue.pop_front() {
            let step = reached[c].expect("queued cells are reached");
            steps.push(step);
            for e in 0..d.cells[c].edge_count() {
                let Some((nb, nb_edge)) = d.across(c, e) else {
                    continue;
                };
                if classes[c][e] == FaceClass::Tangential || reached[nb].is_some() {
                    continue;
                }
                reached[nb] = Some(PlanStep {
                    cell: nb,
                    head: step.head,
                    parent: Some(Parent {
                        face: d.face_of(c, e).id,
                        from: c,
                        edge: nb_edge,
                    }),
                    data: classes[nb][nb_edge],
                });
                queue.push_back(nb);
            }
        }
        if !auto {
            break;
        }
        while next_auto < n && reached[next_auto].is_some() {
            next_auto += 1;
        }
        if next_auto == n {
            break;
        }
        heads.push(next_auto);
        seed_head(next_auto, &mut reached, &mut queue);
    }
    for (c, r) in reached.iter().enumerate() {
        if r.is_none() {
            violations.push(Violation::Unreached { cell: c });
        }
    }
    for &h in &heads {
        if !classes[h].contains(&FaceClass::Inflow) {
            violations.push(Violation::HeadWithoutInflow { cell: h });
        }
    }
    if !violations.is_empty() {
        return Err(ViolationReport { violations });
    }

    let chains = chains_of(&steps);
    let mut plan = ChainPlan {
        heads,
        steps,
        chains,
        classes,
        closing_faces: Vec::new(),
        cells: n,
    };

    // trial build with unit seeds, then check flux balance on closing faces
    let sigma = assemble(d, &plan, &|_| T::one(), crate::flow::FlowOptions::default());
    for f in &d.faces {
        let Some((nb, nb_edge)) = f.neighbor else {
            continue;
        };
        if plan.classes[f.owner][f.owner_edge] == FaceClass::Tangential
            || plan.classes[nb][nb_edge] == FaceClass::Tangential
            || plan.is_parent_face(f.id)
        {
            continue;
        }
        plan.closing_faces.push(f.id);
        match sigma.flux_mismatch(f.id) {
            Ok((mismatch, scale)) => {
                if mismatch > lit::<T>(1e-6) * scale.max(T::min_positive_value()) {
                    violations.push(Violation::CycleClosure {
                        face: f.name(),
                        mismatch: to_f64(mismatch),
                        scale: to_f64(scale),
                    });
                }
            }
            Err(e) => violations.push(eval_fail(&e)),
        }
    }
    if !violations.is_empty() {
        return Err(ViolationReport { violations });
    }
    Ok(plan)
}

fn chains_of(steps: &[PlanStep]) -> Vec<Vec<usize>> {
    let is_parent = |c: usize| steps.iter().any(|s| s.parent.is_some_and(|p| p.from == c));
    let parent_of = |c: usize| {
        steps
            .iter()
            .find(|s| s.cell == c)
            .and_then(|s| s.parent)
            .map(|p| p.from)
    };
    let mut chains = Vec::new();
    for s in steps {
        if is_parent(s.cell) {
            continue;
        }
        let mut path = vec![s.cell];
        let mut c = s.cell;
        while let Some(p) = parent_of(c) {
            path.push(p);
            c = p;
        }
        path.reverse();
        chains.push(path);
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fans::ConeFan;
    use crate::field::PotentialField;
    use crate::piecewise::cells::Cell;
    use num_rational::Rational64;

    fn worked_fan() -> ConeFan<Rational64> {
        ConeFan::parse(
            &[["1", "0"], ["0", "1"], ["-1", "-1"]],
            &[["2", "-1"], ["1", "-1"], ["2", "-2"]],
        )
        .unwrap()
    }

    #[test]
    fn split_fan_is_admissible_with_one_chain() {
        let split = worked_fan().split().unwrap();
        let d = Decomposition::<f64>::from_split_fan(&split, 1.0).unwrap();
        let plan = check_admissible(&d).unwrap();
        assert_eq!(plan.heads, vec![0]);
        assert_eq!(plan.chains, vec![vec![0, 1, 2, 3]]);
        assert!(plan.closing_faces.is_empty());
    }

    #[test]
    fn unsplit_fan_fails_to_close() {
        let d = Decomposition::<f64>::from_fan(&worked_fan(), 1.0, 2).unwrap();
        let err = check_admissible(&d).unwrap_err();
        assert!(
            err.violations
                .iter()
                .any(|v| matches!(v, Violation::CycleClosure { face, .. } if face == "spoke ξ2")),
            "{err}"
        );
    }

    #[test]
    fn sign_condition_names_the_spoke() {
        let fan = ConeFan::parse(
            &[["1", "0"], ["-1", "2"], ["-1", "-2"]],
            &[["1", "1"], ["3", "2"], ["1", "3"]],
        )
        .unwrap();
        let d = Decomposition::<f64>::from_split_fan(&fan.split().unwrap(), 1.0).unwrap();
        let err = check_admissible(&d).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("spoke ξ3"), "{text}");
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SignCondition { product, .. } if *product < 0.0)));
    }

    #[test]
    fn mixed_and_discontinuous_faces_are_reported() {
        let sq = |x0: f64| vec![[x0, 0.0], [x0 + 1.0, 0.0], [x0 + 1.0, 1.0], [x0, 1.0]];
        let bent = Cell::polygon(0, sq(0.0), PotentialField::parse("x1 + x2^2/4", 2).unwrap());
        let d = Decomposition::auto(vec![bent], vec![]).unwrap();
        assert!(check_admissible(&d).is_ok());
        let a = Cell::polygon(0, sq(0.0), PotentialField::affine(vec![1.0, 0.0], 0.0));
        let b = Cell::polygon(1, sq(1.0), PotentialField::affine(vec![1.0, 0.0], 0.5));
        let d = Decomposition::auto(vec![a, b], vec![0]).unwrap();
        let err = check_admissible(&d).unwrap_err();
        assert!(matches!(err.violations[0], Violation::Discontinuous { .. }));
        let m = Cell::polygon(
            0,
            vec![[-1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [-1.0, 1.0]],
            PotentialField::parse("x1*x2 + 2*x1", 2).unwrap(),
        );
        let d = Decomposition::auto(vec![m], vec![]).unwrap();
        let err = check_admissible(&d).unwrap_err();
        assert!(
            err.violations
                .iter()
                .any(|v| matches!(v, Violation::MixedFace { .. })),
            "{err}"
        );
    }

    #[test]
    fn unreached_cell() {
        // two squares joined by a face along which u is tangential
        let a = Cell::polygon(
            0,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            PotentialField::affine(vec![0.0, 1.0], 0.0),
        );
        let b = Cell::polygon(
            1,
            vec![[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]],
            PotentialField::affine(vec![0.0, 1.0], 0.0),
        );
        let d = Decomposition::auto(vec![a, b], vec![0]).unwrap();
        let err = check_admissible(&d).unwrap_err();
        assert_eq!(err.violations, vec![Violation::Unreached { cell: 1 }]);
        // automatic heads cover both
        let d = Decomposition::auto(d.cells.clone(), vec![]).unwrap();
        assert_eq!(check_admissible(&d).unwrap().heads, vec![0, 1]);
    }
}
