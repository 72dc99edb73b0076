//! Dense grid types, supermodularity / MTP2 checks and discrete distances.
//!
//! All grids are stored dense and row-major. Index `(i, j)` is zero-based:
//! `i` runs over the `n1` rows and `j` over the `n2` columns.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` used when validating a [`PmfGrid`].
pub const SUM_TOLERANCE: f64 = 1e-8;

/// Observation counts `Y` on an `n1 x n2` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    counts: Array2<u64>,
    total: u64,
}

impl CountGrid {
    pub fn new(counts: Array2<u64>) -> Result<Self> {
        check_shape(counts.dim())?;
        let total = counts.iter().sum();
        Ok(CountGrid { counts, total })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        Self::new(array_from_rows(rows)?)
    }

    pub fn rows(&self) -> usize {
        self.counts.nrows()
    }

    pub fn cols(&self) -> usize {
        self.counts.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.counts.dim()
    }

    /// Total number of observations `N`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[(i, j)]
    }

    /// Cells with a zero count, in row-major order.
    pub fn zero_cells(&self) -> Vec<(usize, usize)> {
        self.counts
            .indexed_iter()
            .filter(|(_, &c)| c == 0)
            .map(|(ij, _)| ij)
            .collect()
    }

    /// `Y / N` as a plain array (no validation).
    pub fn frequencies(&self) -> Array2<f64> {
        let n = self.total as f64;
        self.counts.mapv(|c| c as f64 / n)
    }
}

/// A probability mass function on an `n1 x n2` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfGrid {
    mass: Array2<f64>,
}

impl PmfGrid {
    /// Validates nonnegativity and `|sum - 1| <= 1e-8`. Never renormalizes.
    pub fn new(mass: Array2<f64>) -> Result<Self> {
        check_shape(mass.dim())?;
        if let Some(((i, j), v)) = mass
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidGrid(format!(
                "mass at ({i}, {j}) is {v}, expected a finite nonnegative value"
            )));
        }
        let sum: f64 = mass.sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidGrid(format!("mass sums to {sum}")));
        }
        Ok(PmfGrid { mass })
    }

    /// Divides nonnegative weights by their sum.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        let sum = weights.sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidGrid(format!("weights sum to {sum}")));
        }
        Self::new(weights / sum)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(array_from_rows(rows)?)
    }

    pub fn uniform(rows: usize, cols: usize) -> Result<Self> {
        check_shape((rows, cols))?;
        Self::new(Array2::from_elem((rows, cols), 1.0 / (rows * cols) as f64))
    }

    pub fn rows(&self) -> usize {
        self.mass.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mass.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mass.dim()
    }

    pub fn mass(&self) -> &Array2<f64> {
        &self.mass
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[(i, j)]
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.mass
    }

    /// Entrywise logarithm, flagged normalized. Zero mass maps to `-inf`.
    pub fn to_log(&self) -> LogPmfGrid {
        LogPmfGrid {
            theta: self.mass.mapv(f64::ln),
            normalized: true,
        }
    }
}

/// A log-mass grid `theta`, optionally known to satisfy `sum exp(theta) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPmfGrid {
    theta: Array2<f64>,
    normalized: bool,
}

impl LogPmfGrid {
    /// Wraps an arbitrary log-mass grid; the result is not flagged normalized.
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        check_shape(theta.dim())?;
        Ok(LogPmfGrid {
            theta,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(array_from_rows(rows)?)
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn dim(&self) -> (usize, usize) {
        self.theta.dim()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.theta
    }

    /// `exp(theta)` as a PMF. Fails validation unless the grid sums to one.
    pub fn to_pmf(&self) -> Result<PmfGrid> {
        PmfGrid::new(self.theta.mapv(f64::exp))
    }
}

/// Smallest adjacent 2x2 minor of a grid and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinorReport {
    pub min_minor: f64,
    /// Top-left corner of the minimizing 2x2 window; `None` for grids with a
    /// single row or column.
    pub argmin: Option<(usize, usize)>,
    pub feasible: bool,
}

impl MinorReport {
    fn from_min(min_minor: f64, argmin: Option<(usize, usize)>, tol: f64) -> Self {
        MinorReport {
            min_minor,
            argmin,
            feasible: min_minor >= -tol,
        }
    }
}

/// `theta[i,j] + theta[i+1,j+1] - theta[i,j+1] - theta[i+1,j]`.
#[inline]
pub fn second_difference(theta: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    theta[(i, j)] + theta[(i + 1, j + 1)] - theta[(i, j + 1)] - theta[(i + 1, j)]
}

/// Minimum adjacent second difference over the grid and its location.
/// Returns `(+inf, None)` when the grid has one row or one column.
pub fn min_second_difference(theta: ArrayView2<f64>) -> (f64, Option<(usize, usize)>) {
    let (rows, cols) = theta.dim();
    let mut best = (f64::INFINITY, None);
    for i in 0..rows.saturating_sub(1) {
        for j in 0..cols.saturating_sub(1) {
            let d = second_difference(&theta, i, j);
            // NaN compares false, so a NaN minor is reported as the minimum.
            if !best.0.is_nan() && !(d >= best.0) {
                best = (d, Some((i, j)));
            }
        }
    }
    best
}

/// Checks that all adjacent second differences of `theta` are `>= -tol`.
///
/// Adjacent minors suffice: nonnegativity of every `(i<k, j<l)` minor follows
/// by telescoping sums of adjacent ones.
pub fn is_supermodular(theta: &LogPmfGrid, tol: f64) -> MinorReport {
    supermodularity(theta.theta.view(), tol)
}

/// [`is_supermodular`] on a raw array.
pub fn supermodularity(theta: ArrayView2<f64>, tol: f64) -> MinorReport {
    let (min, at) = min_second_difference(theta);
    MinorReport::from_min(min, at, tol)
}

/// Checks the adjacent minors `p[i,j] p[i+1,j+1] - p[i,j+1] p[i+1,j] >= -tol`
/// in multiplicative form.
pub fn is_mtp2(p: &PmfGrid, tol: f64) -> Result<MinorReport> {
    if let Some(((row, col), &value)) = p.mass.indexed_iter().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NonPositiveEntry { row, col, value });
    }
    let m = &p.mass;
    let (rows, cols) = m.dim();
    let mut min = f64::INFINITY;
    let mut argmin = None;
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let d = m[(i, j)] * m[(i + 1, j + 1)] - m[(i, j + 1)] * m[(i + 1, j)];
            if d < min {
                min = d;
                argmin = Some((i, j));
            }
        }
    }
    Ok(MinorReport::from_min(min, argmin, tol))
}

/// Squared Hellinger distance `sum (sqrt p - sqrt q)^2`, in `[0, 2]`.
pub fn hellinger_sq(p: &PmfGrid, q: &PmfGrid) -> Result<f64> {
    same_dim(p.dim(), q.dim())?;
    Ok(Zip::from(&p.mass)
        .and(&q.mass)
        .fold(0.0, |acc, &a, &b| acc + (a.sqrt() - b.sqrt()).powi(2)))
}

/// Kullback-Leibler divergence `sum p log(p / q)` with `0 log 0 = 0`.
pub fn kl(p: &PmfGrid, q: &PmfGrid) -> Result<f64> {
    same_dim(p.dim(), q.dim())?;
    let mut acc = 0.0;
    for ((i, j), &a) in p.mass.indexed_iter() {
        if a == 0.0 {
            continue;
        }
        let b = q.mass[(i, j)];
        if b == 0.0 {
            return Err(Error::SupportViolation { row: i, col: j });
        }
        acc += a * (a / b).ln();
    }
    Ok(acc)
}

/// `log(p[0,0] p[n1-1,n2-1] / (p[n1-1,0] p[0,n2-1]))`.
pub fn corner_ratio_log(p: &PmfGrid) -> Result<f64> {
    let (rows, cols) = p.dim();
    let corners = [(0, 0), (rows - 1, cols - 1), (rows - 1, 0), (0, cols - 1)];
    for &(row, col) in &corners {
        let value = p.mass[(row, col)];
        if value <= 0.0 {
            return Err(Error::NonPositiveEntry { row, col, value });
        }
    }
    let ln = |ij: (usize, usize)| p.mass[ij].ln();
    Ok(ln(corners[0]) + ln(corners[1]) - ln(corners[2]) - ln(corners[3]))
}

/// Max-shifted `log sum exp` over all entries.
pub fn log_sum_exp(theta: ArrayView2<f64>) -> f64 {
    let max = theta.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + theta.fold(0.0, |acc, &v| acc + (v - max).exp()).ln()
}

/// Subtracts `log sum exp(theta)` from every entry.
pub fn normalize_log(theta: &LogPmfGrid) -> LogPmfGrid {
    let shift = log_sum_exp(theta.theta.view());
    LogPmfGrid {
        theta: theta.theta.mapv(|v| v - shift),
        normalized: true,
    }
}

/// The empirical frequency matrix `Y / N`.
pub fn empirical_pmf(counts: &CountGrid) -> Result<PmfGrid> {
    if counts.total() == 0 {
        return Err(Error::InvalidParameters(
            "empirical frequencies need at least one observation".into(),
        ));
    }
    PmfGrid::new(counts.frequencies())
}

pub(crate) fn same_dim(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_shape((rows, cols): (usize, usize)) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidGrid(format!("empty grid {rows}x{cols}")));
    }
    Ok(())
}

fn array_from_rows<T: Clone>(rows: &[Vec<T>]) -> Result<Array2<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::InvalidGrid(format!(
            "ragged rows: expected {cols} columns, found {}",
            bad.len()
        )));
    }
    let flat: Vec<T> = rows.iter().flatten().cloned().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::InvalidGrid(e.to_string()))
}
