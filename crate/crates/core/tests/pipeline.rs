use isoreal::piecewise::cells::Cell;
use isoreal::reconstruct::reconstruct_on_grid_with_data;
use isoreal::{
    build_piecewise_sigma, check_admissible, read_sigma_table, reconstruct_on_grid, weak_residual,
    Aabb, Cells, ConductivityField, Field, FlowOptions, TestFunctionSet, ViolationReport, TOL_WEAK,
};

fn square() -> Aabb<f64> {
    Aabb::cube(2, 1.0)
}

#[test]
fn grid_table_round_trip_still_verifies() {
    let u = Field::parse("x1 + x2^2/4", 2).unwrap();
    let opts = FlowOptions::default();
    let grid = reconstruct_on_grid(&u, &square(), &[41, 41], &opts);
    assert!(grid.is_clean());
    let tests = TestFunctionSet::grid(&square(), 4, 0.5);
    let original = weak_residual(&grid.conductivity().unwrap(), &u, &tests);
    let back: ConductivityField<f64> = read_sigma_table(&grid.to_table()).unwrap();
    let again = weak_residual(&back, &u, &tests);
    assert_eq!(again.flagged(), 0);
    assert!(again.max_normalized <= (2.0 * original.max_normalized).max(TOL_WEAK));
}

#[test]
fn level_set_data_reproduces_prescribed_sigma() {
    let u = Field::parse("x1 + x2^2/4", 2).unwrap();
    let gamma = |y: &[f64]| 3.0 * (-y[0] / 2.0).exp();
    let grid = reconstruct_on_grid_with_data(
        &u,
        &square(),
        &[11, 11],
        Some(&gamma),
        &FlowOptions::default(),
    );
    assert!(grid.max_error(|x| 3.0 * (-x[0] / 2.0).exp()) < 1e-8);
}

#[test]
fn piecewise_refraction_passes_weak_check() {
    // u = 2 x1 left of x1 = 0, x1 right of it, bent by a shear in x2
    let left = Cell::polygon(
        0,
        vec![[-1.0, -1.0], [0.0, -1.0], [0.0, 1.0], [-1.0, 1.0]],
        Field::parse("2*x1 + x2/2", 2).unwrap(),
    );
    let right = Cell::polygon(
        1,
        vec![[0.0, -1.0], [1.0, -1.0], [1.0, 1.0], [0.0, 1.0]],
        Field::parse("x1 + x2/2", 2).unwrap(),
    );
    let d = Cells::auto(vec![left, right], vec![0]).unwrap();
    let plan = check_admissible(&d).unwrap();
    let (sigma, report) = build_piecewise_sigma(&d, &plan, &[], FlowOptions::default()).unwrap();
    assert!(report.worst_flux() < 1e-12);
    assert_eq!(sigma.eval([0.5, 0.2]).unwrap(), 2.0);
    let sigma = ConductivityField::piecewise(sigma);
    let r = weak_residual(
        &sigma,
        &d.field(),
        &TestFunctionSet::grid(&square(), 3, 0.5),
    );
    assert!(r.passes(TOL_WEAK), "{}", r.summary());
    // σ ≡ 1 is not a solution on the same cells
    let wrong = weak_residual(
        &ConductivityField::constant(1.0),
        &d.field(),
        &TestFunctionSet::grid(&square(), 3, 0.5),
    );
    assert!(wrong.max_normalized > 1e3 * TOL_WEAK);
}

#[test]
fn inadmissible_fan_report_names_the_spoke() {
    let fan = isoreal::ExactFan::parse(
        &[["1", "0"], ["-1", "2"], ["-1", "-2"]],
        &[["1", "1"], ["3", "2"], ["1", "3"]],
    )
    .unwrap();
    let d = Cells::from_split_fan(&fan.split().unwrap(), 1.0).unwrap();
    let err: ViolationReport = check_admissible(&d).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("ξ3"), "{text}");
    // unit normals here, so the product is det(ξ3, λ3) · det(ξ3, λ2) / |ξ3|²
    assert!(text.contains("-8.0"), "{text}");
}
