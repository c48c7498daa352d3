//! Cell-by-cell construction of a piecewise conductivity.

use std::sync::Arc;

use thiserror::Error;

use super::admissible::ChainPlan;
use super::cells::{Decomposition, FaceClass};
use super::transport::{is_affine_polygon, CellData, PiecewiseSigma, Source, TransportError};
use crate::flow::FlowOptions;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("plan was made for {plan} cells but the decomposition has {cells}")]
    PlanMismatch { plan: usize, cells: usize },
    #[error("seed for head {head} must be positive (got {value})")]
    BadSeed { head: usize, value: f64 },
    #[error("cell {head} is not a head of the plan")]
    NotAHead { head: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("σ is not positive at ({x}, {y}) in cell {cell}")]
    NonPositive { cell: usize, x: f64, y: f64 },
}

/// Range of σ over each cell and flux balance on internal faces.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport<T> {
    /// `(min, max)` of σ at interior sample points, per cell.
    pub ranges: Vec<(T, T)>,
    /// `(face, mismatch, flux scale)` for every non-tangential internal face.
    pub flux: Vec<(usize, T, T)>,
}

impl<T: Real> BuildReport<T> {
    /// Largest flux mismatch relative to its scale.
    pub fn worst_flux(&self) -> T {
        self.flux
            .iter()
            .map(|&(_, m, s)| if s > T::zero() { m / s } else { m })
            .fold(T::zero(), T::max)
    }
}

/// Source data for every cell, assuming the plan is admissible.
pub(crate) fn assemble<T: Real>(
    d: &Decomposition<T>,
    plan: &ChainPlan,
    seed: &dyn Fn(usize) -> T,
    options: FlowOptions,
) -> PiecewiseSigma<T> {
    let n = d.cells.len();
    let mut data: Vec<CellData<T>> = (0..n)
        .map(|c| CellData {
            data: FaceClass::Inflow,
            sources: vec![None; d.cells[c].edge_count()],
            constant: None,
        })
        .collect();
    for step in &plan.steps {
        let c = step.cell;
        let classes = &plan.classes[c];
        let cd = &mut data[c];
        cd.data = step.data;
        match step.parent {
            None => {
                let v = seed(c);
                for (e, &k) in classes.iter().enumerate() {
                    if k == FaceClass::Inflow {
                        cd.sources[e] = Some(Source::Seed(v));
                    }
                }
            }
            Some(p) => {
                for (e, &k) in classes.iter().enumerate() {
                    if e == p.edge {
                        cd.sources[e] = Some(Source::Matched { neighbor: p.from });
                    } else if k == step.data {
                        cd.sources[e] = Some(Source::Extended {
                            parent_edge: p.edge,
                        });
                    }
                }
            }
        }
        data[c].constant = constant_value(d, &data, c);
    }
    PiecewiseSigma {
        decomposition: Arc::new(d.clone()),
        data,
        options,
    }
}

/// σ on an affine polygon cell is constant when all its data are.
fn constant_value<T: Real>(d: &Decomposition<T>, data: &[CellData<T>], c: usize) -> Option<T> {
    let cell = &d.cells[c];
    if !is_affine_polygon(cell) {
        return None;
    }
    let lam = cell.potential.affine_gradient()?;
    let value_of = |e: usize| -> Option<T> {
        let mut e = e;
        loop {
            match data[c].sources[e].as_ref()? {
                Source::Seed(v) => return Some(*v),
                Source::Extended { parent_edge } => e = *parent_edge,
                Source::Matched { neighbor } => {
                    let nb = &d.cells[*neighbor];
                    if !is_affine_polygon(nb) {
                        return None;
                    }
                    let s = data[*neighbor].constant?;
                    let mu = nb.potential.affine_gradient()?;
                    let nu = cell.edge_normal(e, T::zero()).ok()?;
                    let up = mu[0] * nu[0] + mu[1] * nu[1];
                    let down = lam[0] * nu[0] + lam[1] * nu[1];
                    return super::flux::flux_match_real(s, up, down).ok();
                }
            }
        }
    };
    let mut value: Option<T> = None;
    for e in 0..cell.edge_count() {
        if data[c].sources[e].is_none() {
            continue;
        }
        let v = value_of(e)?;
        match value {
            None => value = Some(v),
            Some(w) if (v - w).abs() <= lit::<T>(1e-14) * w.abs() => {}
            Some(_) => return None,
        }
    }
    value
}

/// Builds σ on an admissible decomposition. `seeds` gives the constant on
/// each head's inflow faces; heads not listed get 1.
pub fn build_piecewise_sigma<T: Real>(
    d: &Decomposition<T>,
    plan: &ChainPlan,
    seeds: &[(usize, T)],
    options: FlowOptions,
) -> Result<(PiecewiseSigma<T>, BuildReport<T>), BuildError> {
    if plan.cells != d.cells.len() {
        return Err(BuildError::PlanMismatch {
            plan: plan.cells,
            cells: d.cells.len(),
        });
    }
    for &(h, v) in seeds {
        if !plan.heads.contains(&h) {
            return Err(BuildError::NotAHead { head: h });
        }
        if !(v > T::zero()) {
            return Err(BuildError::BadSeed {
                head: h,
                value: to_f64(v),
            });
        }
    }
    let seed = |h: usize| {
        seeds
            .iter()
            .find(|(k, _)| *k == h)
            .map(|&(_, v)| v)
            .unwrap_or_else(T::one)
    };
    let sigma = assemble(d, plan, &seed, options);
    let mut ranges = Vec::with_capacity(d.cells.len());
    for c in &d.cells {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for p in c.interior_samples().map_err(TransportError::from)? {
            let v = sigma.eval_in_cell(c.id, p)?;
            if !(v > T::zero()) {
                return Err(BuildError::NonPositive {
                    cell: c.id,
                    x: to_f64(p[0]),
                    y: to_f64(p[1]),
                });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        ranges.push((lo, hi));
    }
    let mut flux = Vec::new();
    for f in &d.faces {
        let Some((nb, nb_edge)) = f.neighbor else {
            continue;
        };
        if plan.classes[f.owner][f.owner_edge] == FaceClass::Tangential
            || plan.classes[nb][nb_edge] == FaceClass::Tangential
        {
            continue;
        }
        let (m, s) = sigma.flux_mismatch(f.id)?;
        flux.push((f.id, m, s));
    }
    Ok((sigma, BuildReport { ranges, flux }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fans::{fan_sigma_closed_form, ConeFan};
    use crate::field::PotentialField;
    use crate::piecewise::admissible::check_admissible;
    use crate::piecewise::cells::Cell;
    use num_rational::Rational64;

    #[test]
    fn split_fan_matches_closed_form() {
        let fan = ConeFan::<Rational64>::parse(
            &[["1", "0"], ["0", "1"], ["-1", "-1"]],
            &[["2", "-1"], ["1", "-1"], ["2", "-2"]],
        )
        .unwrap();
        let split = fan.split().unwrap();
        let exact = fan_sigma_closed_form(&split, Rational64::from_integer(1)).unwrap();
        let d = Decomposition::<f64>::from_split_fan(&split, 1.0).unwrap();
        let plan = check_admissible(&d).unwrap();
        let (sigma, report) =
            build_piecewise_sigma(&d, &plan, &[], FlowOptions::default()).unwrap();
        for (i, v) in exact.chain_values().iter().enumerate() {
            let want = *v.numer() as f64 / *v.denom() as f64;
            assert_eq!(sigma.cell_data(i).constant, Some(want));
            assert_eq!(report.ranges[i], (want, want));
        }
        assert!(report.worst_flux() < 1e-12);
    }

    #[test]
    fn curved_potential_is_transported() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let d = Decomposition::auto(
            vec![Cell::polygon(
                0,
                sq,
                PotentialField::parse("x1 + x2^2/4", 2).unwrap(),
            )],
            vec![0],
        )
        .unwrap();
        let plan = check_admissible(&d).unwrap();
        let (sigma, _) =
            build_piecewise_sigma(&d, &plan, &[(0, 2.0)], FlowOptions::default()).unwrap();
        let v = sigma.eval([0.6, 0.4]).unwrap();
        assert!((v - 2.0 * (-0.3f64).exp()).abs() < 1e-7);
        assert!(matches!(
            build_piecewise_sigma(&d, &plan, &[(0, -1.0)], FlowOptions::default()),
            Err(BuildError::BadSeed { .. })
        ));
    }

    #[test]
    fn two_cells_with_refraction() {
        // u = 2 x1 on the left, u = x1 + 1 on the right: σ doubles across x1 = 1
        let l = Cell::polygon(
            0,
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            PotentialField::affine(vec![2.0, 0.0], 0.0),
        );
        let r = Cell::polygon(
            1,
            vec![[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]],
            PotentialField::affine(vec![1.0, 0.0], 1.0),
        );
        let d = Decomposition::auto(vec![l, r], vec![0]).unwrap();
        let plan = check_admissible(&d).unwrap();
        let (sigma, report) =
            build_piecewise_sigma(&d, &plan, &[], FlowOptions::default()).unwrap();
        assert_eq!(sigma.eval([1.5, 0.5]).unwrap(), 2.0);
        assert_eq!(sigma.eval([0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(report.flux.len(), 1);
    }
}
