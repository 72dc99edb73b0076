//! Densities on the unit square: binning, grid-size rules, piecewise-constant
//! estimates and continuous Hellinger distances.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{empirical_pmf, hellinger_sq, CountGrid, PmfGrid};
use crate::quadrature::{integrate, Rect, DEFAULT_MAX_REGIONS};
use crate::solver::{fit_mle, FitResult, SolverOptions};

/// Absolute tolerance used for normalizing constants.
pub const NORMALIZER_TOL: f64 = 1e-11;

/// Default absolute tolerance for continuous Hellinger integrals.
pub const DEFAULT_QUAD_TOL: f64 = 1e-7;

/// Largest allowed deviation of cell averages from total mass one.
const MASS_TOLERANCE: f64 = 1e-6;

/// Observations in the unit square.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplePoints {
    points: Vec<(f64, f64)>,
}

impl SamplePoints {
    /// Coordinates must lie in `[0, 1]`; exactly 1.0 is accepted and binned
    /// into the last cell.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, y) in &points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::CoordinateOutOfRange { x, y });
            }
        }
        Ok(SamplePoints { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Index of the half-open cell containing `x`.
fn cell_index(x: f64, n: usize) -> usize {
    ((x * n as f64).floor() as usize).min(n - 1)
}

/// Counts of the points in each cell of the `n x n` partition; row index
/// follows the first coordinate.
pub fn histogram(samples: &SamplePoints, n: usize) -> Result<CountGrid> {
    if n == 0 {
        return Err(Error::InvalidParameters("grid size must be >= 1".into()));
    }
    let mut counts = Array2::<u64>::zeros((n, n));
    for &(x, y) in samples.points() {
        counts[(cell_index(x, n), cell_index(y, n))] += 1;
    }
    CountGrid::new(counts)
}

/// Which logarithmic term bounds the grid size in the theoretical rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LogTerm {
    /// `(dmin N / log(dmin N))^(1/2)`.
    #[default]
    Simple,
    /// `(dmin N / (24 log(dmin N / (12 delta))))^(1/2)`.
    Explicit { delta: f64 },
}

fn floor_tolerant(v: f64) -> usize {
    (v * (1.0 + 1e-9)).floor().max(1.0) as usize
}

/// `floor(min((R^2 N / dmin)^(1/(2b+1)), (dmin N / log(dmin N))^(1/2)))` with
/// `b = min(beta, 1)`, at least 1.
pub fn select_grid_size(n_obs: u64, beta: f64, r: f64, dmin: f64) -> Result<usize> {
    select_grid_size_with(n_obs, beta, r, dmin, LogTerm::Simple)
}

pub fn select_grid_size_with(n_obs: u64, beta: f64, r: f64, dmin: f64, log_term: LogTerm) -> Result<usize> {
    let n = n_obs as f64;
    if n_obs < 2 || !(beta > 0.0) || !(r > 0.0) || !(dmin > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need N >= 2 and positive beta, R, dmin; got N = {n_obs}, beta = {beta}, R = {r}, dmin = {dmin}"
        )));
    }
    let b = beta.min(1.0);
    let smooth = (r * r * n / dmin).powf(1.0 / (2.0 * b + 1.0));
    let cap = match log_term {
        LogTerm::Simple => {
            let l = (dmin * n).ln();
            if !(l > 0.0) {
                return Err(Error::InvalidParameters(format!("dmin N = {} must exceed 1", dmin * n)));
            }
            (dmin * n / l).sqrt()
        }
        LogTerm::Explicit { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidParameters(format!("delta must lie in (0, 1), got {delta}")));
            }
            let l = (dmin * n / (12.0 * delta)).ln();
            if !(l > 0.0) {
                return Err(Error::InvalidParameters(format!(
                    "dmin N / (12 delta) = {} must exceed 1",
                    dmin * n / (12.0 * delta)
                )));
            }
            (dmin * n / (24.0 * l)).sqrt()
        }
    };
    Ok(floor_tolerant(smooth.min(cap)))
}

/// `ceil(c N^(1/(2 beta + 1)))`.
pub fn fixed_scaling_grid_size(n_obs: u64, c: f64, beta: f64) -> Result<usize> {
    if n_obs == 0 || !(c > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need N >= 1 and positive C, beta; got N = {n_obs}, C = {c}, beta = {beta}"
        )));
    }
    let v = c * (n_obs as f64).powf(1.0 / (2.0 * beta + 1.0));
    Ok(((v * (1.0 - 1e-9)).ceil() as usize).max(1))
}

/// The constant for which `fixed_scaling_grid_size(n_ref, c, beta) == grid_ref`.
pub fn calibrate_scaling_constant(beta: f64, n_ref: u64, grid_ref: usize) -> f64 {
    grid_ref as f64 / (n_ref as f64).powf(1.0 / (2.0 * beta + 1.0))
}

/// The constant matching 200 cells per side at 10^8 observations.
pub fn default_scaling_constant(beta: f64) -> f64 {
    calibrate_scaling_constant(beta, 100_000_000, 200)
}

/// Density equal to `n^2 p[i, j]` on cell `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantDensity {
    cells: PmfGrid,
}

impl PiecewiseConstantDensity {
    pub fn new(cells: PmfGrid) -> Result<Self> {
        let (r, c) = cells.dim();
        if r != c {
            return Err(Error::InvalidGrid(format!("cell grid must be square, got {r}x{c}")));
        }
        Ok(PiecewiseConstantDensity { cells })
    }

    pub fn n(&self) -> usize {
        self.cells.rows()
    }

    pub fn cells(&self) -> &PmfGrid {
        &self.cells
    }

    pub fn cell_value(&self, i: usize, j: usize) -> f64 {
        let n = self.n() as f64;
        n * n * self.cells.get(i, j)
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let n = self.n();
        self.cell_value(cell_index(x, n), cell_index(y, n))
    }

    /// Cell values `n^2 p`.
    pub fn values(&self) -> Array2<f64> {
        let n = self.n() as f64;
        self.cells.mass().mapv(|p| n * n * p)
    }
}

pub type DensityFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A density on the unit square given by a function, normalized at
/// construction.
#[derive(Clone)]
pub struct AnalyticDensity {
    name: String,
    raw: DensityFn,
    normalizer: f64,
    dmin: Option<f64>,
    dmax: Option<f64>,
    smoothness: Option<(f64, f64)>,
}

impl fmt::Debug for AnalyticDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticDensity")
            .field("name", &self.name)
            .field("normalizer", &self.normalizer)
            .field("dmin", &self.dmin)
            .field("dmax", &self.dmax)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl AnalyticDensity {
    /// Wraps a nonnegative function; its integral over the unit square is
    /// computed here and divided out on evaluation.
    pub fn new(name: impl Into<String>, raw: DensityFn) -> Result<Self> {
        let est = integrate(&|x, y| raw(x, y), Rect::unit(), NORMALIZER_TOL, 1 << 16)?;
        if !(est.value > 0.0) || !est.value.is_finite() {
            return Err(Error::InvalidParameters(format!(
                "density integrates to {}, expected a positive finite value",
                est.value
            )));
        }
        Ok(AnalyticDensity {
            name: name.into(),
            raw,
            normalizer: est.value,
            dmin: None,
            dmax: None,
            smoothness: None,
        })
    }

    pub fn uniform() -> Self {
        AnalyticDensity {
            name: "uniform".into(),
            raw: Arc::new(|_, _| 1.0),
            normalizer: 1.0,
            dmin: Some(1.0),
            dmax: Some(1.0),
            smoothness: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.raw)(x, y) / self.normalizer
    }

    pub fn set_bounds(&mut self, dmin: Option<f64>, dmax: Option<f64>) {
        self.dmin = dmin;
        self.dmax = dmax;
    }

    pub fn bounds(&self) -> (Option<f64>, Option<f64>) {
        (self.dmin, self.dmax)
    }

    /// Hoelder exponent and radius.
    pub fn set_smoothness(&mut self, beta: f64, r: f64) {
        self.smoothness = Some((beta, r));
    }

    pub fn smoothness(&self) -> Option<(f64, f64)> {
        self.smoothness
    }

    /// Integral of the normalized density over `rect`.
    pub fn mass(&self, rect: Rect, abs_tol: f64) -> Result<f64> {
        Ok(integrate(&|x, y| self.eval(x, y), rect, abs_tol, DEFAULT_MAX_REGIONS)?.value)
    }
}

fn check_quad_tol(quad_tol: f64) -> Result<()> {
    if quad_tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!("quad_tol must be > 0, got {quad_tol}")))
    }
}

/// Cell masses of `rho` on the `n x n` partition, each cell integrated to
/// `quad_tol / n^2`.
pub fn cell_average_density(rho: &AnalyticDensity, n: usize, quad_tol: f64) -> Result<PiecewiseConstantDensity> {
    check_quad_tol(quad_tol)?;
    if n == 0 {
        return Err(Error::InvalidParameters("grid size must be >= 1".into()));
    }
    let cell_tol = quad_tol / (n * n) as f64;
    let masses = (0..n * n)
        .into_par_iter()
        .map(|k| rho.mass(Rect::cell(n, k / n, k % n), cell_tol))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::QuadratureFailure(format!(
            "cell masses of {} sum to {total}",
            rho.name()
        )));
    }
    let grid = Array2::from_shape_vec((n, n), masses).expect("n * n entries");
    PiecewiseConstantDensity::new(PmfGrid::from_weights(grid)?)
}

/// Equals the discrete Hellinger distance between the two cell grids.
pub fn hellinger_sq_pc(f: &PiecewiseConstantDensity, g: &PiecewiseConstantDensity) -> Result<f64> {
    hellinger_sq(f.cells(), g.cells())
}

/// `integral (sqrt(f) - sqrt(rho))^2` over the unit square, cell by cell.
pub fn hellinger_sq_continuous(f: &PiecewiseConstantDensity, rho: &AnalyticDensity, quad_tol: f64) -> Result<f64> {
    check_quad_tol(quad_tol)?;
    let n = f.n();
    let cell_tol = quad_tol / (n * n) as f64;
    let parts = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let c = f.cell_value(i, j).sqrt();
            let est = integrate(
                &|x, y| {
                    let d = c - rho.eval(x, y).sqrt();
                    d * d
                },
                Rect::cell(n, i, j),
                cell_tol,
                DEFAULT_MAX_REGIONS,
            )?;
            Ok(est.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}

/// Histogram, solver output and the resulting density.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub counts: CountGrid,
    pub fit: FitResult,
    pub density: PiecewiseConstantDensity,
}

pub fn fit_density(samples: &SamplePoints, n: usize, opts: &SolverOptions) -> Result<DensityFit> {
    let counts = histogram(samples, n)?;
    let fit = fit_mle(&counts, opts)?;
    let density = PiecewiseConstantDensity::new(fit.p_hat.clone())?;
    Ok(DensityFit { counts, fit, density })
}

/// The histogram density `n^2 Y / N`.
pub fn empirical_density(samples: &SamplePoints, n: usize) -> Result<PiecewiseConstantDensity> {
    PiecewiseConstantDensity::new(empirical_pmf(&histogram(samples, n)?)?)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::solver::Variant;

    #[test]
    fn histogram_corners_and_boundary() {
        let pts = SamplePoints::new(vec![(0.0, 0.0), (1.0 - f64::EPSILON, 1.0 - f64::EPSILON), (1.0, 1.0), (0.25, 0.5)]).unwrap();
        let y = histogram(&pts, 4).unwrap();
        assert_eq!(y.get(0, 0), 1);
        assert_eq!(y.get(3, 3), 2);
        assert_eq!(y.get(1, 2), 1);
        assert_eq!(y.total(), 4);
        assert!(matches!(
            SamplePoints::new(vec![(0.5, 1.5)]),
            Err(Error::CoordinateOutOfRange { .. })
        ));
        assert!(SamplePoints::new(vec![(f64::NAN, 0.5)]).is_err());
        assert!(histogram(&pts, 0).is_err());
    }

    #[test]
    fn grid_size_examples() {
        assert_eq!(select_grid_size(1_000_000, 1.0, 1.0, 1.0).unwrap(), 100);
        // small N: the log-term cap binds
        let n = select_grid_size(100, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(n, (100.0f64 / 100f64.ln()).sqrt().floor() as usize);
        // beta above one is capped
        assert_eq!(select_grid_size(1_000_000, 3.0, 1.0, 1.0).unwrap(), 100);
        assert!(select_grid_size(1, 1.0, 1.0, 1.0).is_err());
        assert!(select_grid_size(10, 1.0, 1.0, 0.1).is_err());
        let explicit = select_grid_size_with(1_000_000, 1.0, 1.0, 1.0, LogTerm::Explicit { delta: 0.1 }).unwrap();
        let cap = (1e6 / (24.0 * (1e6f64 / 1.2).ln())).sqrt();
        assert_eq!(explicit, cap.floor() as usize);
    }

    #[test]
    fn fixed_scaling_calibration() {
        for beta in [0.5, 0.75, 1.0] {
            let c = default_scaling_constant(beta);
            assert_eq!(fixed_scaling_grid_size(100_000_000, c, beta).unwrap(), 200);
            assert!(fixed_scaling_grid_size(1000, c, beta).unwrap() < 200);
        }
        assert!(fixed_scaling_grid_size(10, -1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_cell_averages() {
        let pc = cell_average_density(&AnalyticDensity::uniform(), 5, 1e-10).unwrap();
        for v in pc.cells().mass().iter() {
            assert_abs_diff_eq!(*v, 1.0 / 25.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(pc.value(0.3, 0.9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn product_density_factorizes() {
        let rho = AnalyticDensity::new("4xy", Arc::new(|x, y| 4.0 * x * y)).unwrap();
        assert_abs_diff_eq!(rho.normalizer(), 1.0, epsilon = 1e-12);
        let n = 4;
        let pc = cell_average_density(&rho, n, 1e-12).unwrap();
        // one-dimensional cell integrals of 2x
        let marginal = |i: usize| {
            let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            b * b - a * a
        };
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(pc.cells().get(i, j), marginal(i) * marginal(j), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn unnormalized_functions_are_normalized() {
        let rho = AnalyticDensity::new("const", Arc::new(|_, _| 3.0)).unwrap();
        assert_abs_diff_eq!(rho.normalizer(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.eval(0.2, 0.2), 1.0, epsilon = 1e-12);
        assert!(AnalyticDensity::new("zero", Arc::new(|_, _| 0.0)).is_err());
    }

    #[test]
    fn continuous_hellinger_closed_forms() {
        let uniform = AnalyticDensity::uniform();
        let flat = PiecewiseConstantDensity::new(PmfGrid::uniform(4, 4).unwrap()).unwrap();
        assert_abs_diff_eq!(hellinger_sq_continuous(&flat, &uniform, 1e-9).unwrap(), 0.0, epsilon = 1e-12);

        // mass 2/n^2 on the left half of the cells, zero on the rest
        let n = 4;
        let half = Array2::from_shape_fn((n, n), |(i, _)| if i < n / 2 { 2.0 / 16.0 } else { 0.0 });
        let f = PiecewiseConstantDensity::new(PmfGrid::new(half).unwrap()).unwrap();
        let expected = (2f64.sqrt() - 1.0).powi(2) / 2.0 + 0.5;
        assert_abs_diff_eq!(hellinger_sq_continuous(&f, &uniform, 1e-9).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(hellinger_sq_pc(&f, &flat).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn piecewise_constant_truth_has_zero_distance() {
        // a density constant on the cells of the 2x2 partition
        let rho = AnalyticDensity::new(
            "steps",
            Arc::new(|x, y| if (x < 0.5) == (y < 0.5) { 1.5 } else { 0.5 }),
        )
        .unwrap();
        let f = PiecewiseConstantDensity::new(PmfGrid::from_rows(&[vec![0.375, 0.125], vec![0.125, 0.375]]).unwrap()).unwrap();
        assert!(hellinger_sq_continuous(&f, &rho, 1e-9).unwrap() < 1e-9);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let a = PiecewiseConstantDensity::new(PmfGrid::uniform(2, 2).unwrap()).unwrap();
        let b = PiecewiseConstantDensity::new(PmfGrid::uniform(3, 3).unwrap()).unwrap();
        assert!(matches!(hellinger_sq_pc(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(PiecewiseConstantDensity::new(PmfGrid::uniform(2, 3).unwrap()).is_err());
    }

    #[test]
    fn degenerate_samples_fall_back() {
        let pts = SamplePoints::new(vec![(0.1, 0.1); 50]).unwrap();
        let fit = fit_density(&pts, 4, &SolverOptions::new(Variant::BoxConstrained)).unwrap();
        assert!(fit.fit.fell_back());
        assert_abs_diff_eq!(fit.density.cell_value(0, 0), 16.0, epsilon = 1e-12);
        assert_eq!(fit.density.cell_value(2, 1), 0.0);
    }
}
