use ndarray::Array2;
use proptest::prelude::*;

use mtp2_core::oracle::oracle_project;
use mtp2_core::projection::{dykstra_project, project, InnerMethod};
use mtp2_core::{feasibility_gap, interior_point_project, BoxBounds, ProjectionOptions, WeightGrid};

fn grid(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn instance() -> impl Strategy<Value = (Array2<f64>, WeightGrid)> {
    (2usize..=4, 2usize..=4).prop_flat_map(|(r, c)| {
        (
            grid(r, c, -3.0, 3.0),
            grid(r, c, -3.0, 0.0).prop_map(|e| WeightGrid::new(e.mapv(|v| 10f64.powf(v))).unwrap()),
        )
    })
}

/// `s[i,j] = a i j + b i + c j`, supermodular for `a >= 0`.
fn supermodular(rows: usize, cols: usize, a: f64, b: f64, c: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| a * (i * j) as f64 + b * i as f64 + c * j as f64)
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn weighted_objective(t: &Array2<f64>, y: &Array2<f64>, w: &WeightGrid) -> f64 {
    t.iter()
        .zip(y.iter())
        .zip(w.weights().iter())
        .map(|((a, b), c)| c * (a - b) * (a - b))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_is_feasible((y, w) in instance()) {
        let (theta, diag) = dykstra_project(&y, &w, None, &ProjectionOptions::default()).unwrap();
        prop_assert!(diag.converged);
        prop_assert!(feasibility_gap(theta.view()) <= 1e-5);
    }

    #[test]
    fn feasible_points_are_fixed(
        (rows, cols) in (2usize..=5, 2usize..=5),
        a in 0.0f64..2.0,
        b in -1.0f64..1.0,
        c in -1.0f64..1.0,
    ) {
        let y = supermodular(rows, cols, a, b, c);
        let (theta, diag) = dykstra_project(&y, &WeightGrid::ones(rows, cols), None, &ProjectionOptions::default()).unwrap();
        prop_assert_eq!(diag.sweeps, 1);
        prop_assert!(max_abs(&theta, &y) <= 1e-12);
    }

    #[test]
    fn shifts_commute_with_projection((y, w) in instance(), shift in -5.0f64..5.0) {
        let opts = ProjectionOptions::default();
        let (base, _) = dykstra_project(&y, &w, None, &opts).unwrap();
        let (moved, _) = dykstra_project(&y.mapv(|v| v + shift), &w, None, &opts).unwrap();
        prop_assert!(max_abs(&moved.mapv(|v| v - shift), &base) <= 1e-4);
    }

    #[test]
    fn weight_scale_does_not_matter((y, w) in instance(), scale in 0.01f64..100.0) {
        let opts = ProjectionOptions::default();
        let (base, _) = dykstra_project(&y, &w, None, &opts).unwrap();
        let scaled = WeightGrid::new(w.weights().mapv(|v| v * scale)).unwrap();
        let (other, _) = dykstra_project(&y, &scaled, None, &opts).unwrap();
        prop_assert!(max_abs(&base, &other) <= 1e-4);
    }

    #[test]
    fn no_feasible_point_is_closer((y, w) in instance(), a in 0.0f64..2.0, b in -1.0f64..1.0) {
        let (theta, _) = dykstra_project(&y, &w, None, &ProjectionOptions::default()).unwrap();
        let (rows, cols) = y.dim();
        let other = supermodular(rows, cols, a, b, -b);
        prop_assert!(weighted_objective(&theta, &y, &w) <= weighted_objective(&other, &y, &w) + 1e-6);
    }

    #[test]
    fn interior_point_matches_oracle((y, w) in instance(), width in 0.1f64..2.0) {
        let (rows, cols) = y.dim();
        let center = supermodular(rows, cols, 0.5, 0.1, -0.2);
        let bounds = BoxBounds::new(center.mapv(|v| v - width), center.mapv(|v| v + width)).unwrap();
        for b in [None, Some(&bounds)] {
            let (ip, _) = interior_point_project(&y, &w, b).unwrap();
            let oracle = oracle_project(&y, &w, b).unwrap();
            prop_assert!(max_abs(&ip, &oracle) <= 1e-5, "{}", max_abs(&ip, &oracle));
        }
    }

    #[test]
    fn bounded_projection_stays_in_box((y, w) in instance(), width in 0.1f64..2.0) {
        let (rows, cols) = y.dim();
        let center = supermodular(rows, cols, 0.3, 0.0, 0.0);
        let bounds = BoxBounds::new(center.mapv(|v| v - width), center.mapv(|v| v + width)).unwrap();
        let (theta, _) = project(&y, &w, Some(&bounds), &ProjectionOptions::default()).unwrap();
        prop_assert!(bounds.contains(theta.view(), 1e-9));
        prop_assert!(feasibility_gap(theta.view()) <= 1e-5);
    }
}

#[test]
fn three_routes_agree_on_a_bounded_instance() {
    let y = ndarray::array![[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5], [0.3, -1.2, 1.5]];
    let w = WeightGrid::new(ndarray::array![[1.0, 0.5, 0.01], [0.2, 1.0, 0.3], [0.05, 0.7, 1.0]]).unwrap();
    let bounds = BoxBounds::uniform(3, 3, -1.0, 1.0).unwrap();
    let (dykstra, _) = dykstra_project(&y, &w, Some(&bounds), &ProjectionOptions::default()).unwrap();
    let ip_opts = ProjectionOptions {
        method: InnerMethod::InteriorPoint,
        ..Default::default()
    };
    let (ip, diag) = project(&y, &w, Some(&bounds), &ip_opts).unwrap();
    let oracle = oracle_project(&y, &w, Some(&bounds)).unwrap();
    assert!(diag.interior_iters > 0);
    assert!(max_abs(&dykstra, &oracle) <= 1e-5);
    assert!(max_abs(&ip, &oracle) <= 1e-7, "{}", max_abs(&ip, &oracle));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let y = Array2::zeros((3, 3));
    assert!(dykstra_project(&y, &WeightGrid::ones(2, 3), None, &ProjectionOptions::default()).is_err());
    let bounds = BoxBounds::uniform(3, 2, -1.0, 1.0).unwrap();
    assert!(dykstra_project(&y, &WeightGrid::ones(3, 3), Some(&bounds), &ProjectionOptions::default()).is_err());
}
