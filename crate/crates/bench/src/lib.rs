//! Fixed problem instances shared by the benchmarks.

use ndarray::Array2;

use mtp2_core::{make_supermodular_pmf, sample_multinomial, CountGrid, SeededRng, WeightGrid};

/// Counts drawn from the supermodular grid family with `log L = 2`.
pub fn grid_counts(n: usize, total: u64, seed: u64) -> CountGrid {
    let truth = make_supermodular_pmf(n, 2f64.exp()).expect("n >= 2");
    sample_multinomial(&truth, total, &mut SeededRng::new(seed)).expect("valid pmf")
}

/// A non-supermodular target with log-uniform weights in `[1e-3, 1]`.
pub fn projection_instance(n: usize, seed: u64) -> (Array2<f64>, WeightGrid) {
    let mut rng = SeededRng::new(seed);
    let y = Array2::from_shape_fn((n, n), |_| 4.0 * rng.uniform() - 2.0);
    let w = Array2::from_shape_fn((n, n), |_| 10f64.powf(-3.0 * rng.uniform()));
    (y, WeightGrid::new(w).expect("positive weights"))
}
