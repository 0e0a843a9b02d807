use fpmv_core::coeffs::{CoefficientSet, Mode, RegularizedSet};
use fpmv_core::grid::{assemble, solve_linear, weighted_l1, DensityField, Grid, Scheme};
use proptest::prelude::*;

fn field(g: Grid) -> impl Strategy<Value = DensityField> {
    prop::collection::vec(-2.0f64..2.0, g.len()).prop_map(move |v| DensityField::new(g, v).unwrap())
}

fn nonlinear_2d() -> RegularizedSet {
    RegularizedSet::plain(
        CoefficientSet::parse(2, &["1+u^2/(1+u^2)", "0.1*sin(u)", "1+0.2*x1^2"], &["tanh(u)", "u/(1+u^2)"], Mode::Nondegenerate, 0.5)
            .unwrap(),
    )
}

#[test]
fn two_cell_example() {
    // Two unit cells holding 1 and 2.
    assert_eq!(weighted_l1(&[1.0, 2.0], 1.0), 3.0);
    assert_eq!(weighted_l1(&[0.0; 8], 0.5), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn l1_dist_is_norm_of_difference(
        (f, g) in (field(Grid::new(1, 3.0, 16).unwrap()), field(Grid::new(1, 3.0, 16).unwrap()))
    ) {
        let diff: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a - b).collect();
        let d = DensityField::new(*f.grid(), diff).unwrap();
        prop_assert!((f.l1_dist(&g) - d.l1_norm()).abs() <= 1e-14 * (1.0 + d.l1_norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn operator_is_affine_in_lambda(v in prop::collection::vec(0.0f64..2.0, 100), lambda in 0.0f64..5.0) {
        let g = Grid::new(2, 2.0, 10).unwrap();
        let v = DensityField::new(g, v).unwrap();
        let set = nonlinear_2d();
        let one = assemble(&g, &set, &v, 1.0, Scheme::default()).unwrap().to_dense();
        let op = assemble(&g, &set, &v, lambda, Scheme::default()).unwrap().to_dense();
        for i in 0..g.len() {
            for j in 0..g.len() {
                let id = if i == j { 1.0 } else { 0.0 };
                let expected = id + lambda * (one[i][j] - id);
                prop_assert!((op[i][j] - expected).abs() <= 1e-14 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn interior_columns_conserve(v in prop::collection::vec(0.0f64..2.0, 144)) {
        let g = Grid::new(2, 2.0, 12).unwrap();
        let v = DensityField::new(g, v).unwrap();
        let op = assemble(&g, &nonlinear_2d(), &v, 0.7, Scheme::default()).unwrap();
        let sums = op.column_sums();
        for (c, s) in sums.iter().enumerate() {
            if !g.is_near_boundary(c, 2) {
                prop_assert!((s - 1.0).abs() <= 1e-12, "column {c}: {s}");
            }
        }
    }

    #[test]
    fn solver_residual_below_tolerance(v in prop::collection::vec(0.0f64..2.0, 144), rhs in prop::collection::vec(-1.0f64..1.0, 144)) {
        let g = Grid::new(2, 2.0, 12).unwrap();
        let v = DensityField::new(g, v).unwrap();
        let op = assemble(&g, &nonlinear_2d(), &v, 0.3, Scheme::default()).unwrap();
        let u = solve_linear(&op, &rhs, 1e-12, 2000).unwrap();
        let r: f64 = op.apply(&u).iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        prop_assert!(r <= 1e-10 * scale.max(1e-300), "{r:e}");
    }
}
