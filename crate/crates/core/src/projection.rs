//! Weighted projection onto the supermodular cone intersected with a box.
//!
//! The cone is the intersection of the half-spaces
//! `theta[i,j] + theta[i+1,j+1] - theta[i,j+1] - theta[i+1,j] >= 0`, one per
//! adjacent 2x2 window. Each half-space (and the box) has a closed-form
//! projection in the norm `||x||_w^2 = sum w x^2`, and cyclic Dykstra with one
//! residual per constraint converges to the exact projection onto the
//! intersection.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{min_second_difference, same_dim};
use crate::interior::interior_point_project;

/// Strictly positive per-entry weights of the projection norm.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid(Array2<f64>);

impl WeightGrid {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if let Some(((row, col), &value)) = weights
            .indexed_iter()
            .find(|(_, w)| !(**w > 0.0 && w.is_finite()))
        {
            return Err(Error::NonPositiveEntry { row, col, value });
        }
        Ok(WeightGrid(weights))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        WeightGrid(Array2::ones((rows, cols)))
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Entrywise interval constraints. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Array2<f64>,
    upper: Array2<f64>,
}

impl BoxBounds {
    pub fn new(lower: Array2<f64>, upper: Array2<f64>) -> Result<Self> {
        same_dim(lower.dim(), upper.dim())?;
        let bad = Zip::indexed(&lower)
            .and(&upper)
            .fold(None, |found, ij, &lo, &hi| {
                found.or_else(|| (lo.is_nan() || hi.is_nan() || lo > hi).then_some(ij))
            });
        if let Some((i, j)) = bad {
            return Err(Error::InvalidParameters(format!(
                "box bound at ({i}, {j}) is [{}, {}]",
                lower[(i, j)],
                upper[(i, j)]
            )));
        }
        Ok(BoxBounds { lower, upper })
    }

    /// The same interval `[lower, upper]` for every entry.
    pub fn uniform(rows: usize, cols: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            Array2::from_elem((rows, cols), lower),
            Array2::from_elem((rows, cols), upper),
        )
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array2<f64> {
        &self.upper
    }

    pub fn dim(&self) -> (usize, usize) {
        self.lower.dim()
    }

    pub fn contains(&self, theta: ArrayView2<f64>, tol: f64) -> bool {
        Zip::from(theta)
            .and(&self.lower)
            .and(&self.upper)
            .all(|&t, &lo, &hi| t >= lo - tol && t <= hi + tol)
    }
}

/// Sweeps over which the violation must halve before [`project`] declares
/// Dykstra stalled.
pub const DEFAULT_STALL_WINDOW: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Stop once the relative Frobenius change between sweeps drops below this.
    pub rel_tol: f64,
    /// A sweep only counts as converged if no cell or bound is violated by more than this.
    pub feas_tol: f64,
    pub max_sweeps: usize,
    /// When false, any bounds passed to [`dykstra_project`] are ignored.
    pub include_box: bool,
    pub schedule: Schedule,
    /// Used by [`project`] only.
    #[serde(default)]
    pub method: InnerMethod,
    /// In [`project`] with bounds, Dykstra is abandoned for
    /// [`interior_point_project`] when the largest violation has not halved
    /// over this many sweeps. `None` keeps Dykstra until `max_sweeps`.
    #[serde(default)]
    pub stall_window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    #[default]
    Dykstra,
    InteriorPoint,
}

/// How the bounds enter the cyclic scheme. The two coincide without bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Each set is one cell half-space intersected with the bounds of its
    /// four entries.
    #[default]
    Coupled,
    /// The box is its own set, projected once per sweep before the cells.
    Separate,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            rel_tol: 1e-6,
            feas_tol: 1e-5,
            max_sweeps: 400_000,
            include_box: true,
            schedule: Schedule::Coupled,
            method: InnerMethod::Dykstra,
            stall_window: Some(DEFAULT_STALL_WINDOW),
        }
    }
}

impl ProjectionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.feas_tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidParameters(format!(
                "projection needs rel_tol > 0, feas_tol > 0 and max_sweeps >= 1, got {}, {} and {}",
                self.rel_tol, self.feas_tol, self.max_sweeps
            )));
        }
        Ok(())
    }
}

/// Outcome of a call to [`dykstra_project`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    pub sweeps: usize,
    pub feasibility_gap: f64,
    pub rel_change: f64,
    /// False when `max_sweeps` was reached before `rel_tol`.
    pub converged: bool,
    /// Interior point iterations spent after a hand-over; 0 if none.
    #[serde(default)]
    pub interior_iters: usize,
}

/// Harmonic combination of the four weights of each 2x2 window:
/// `1 / gamma[i,j] = sum of 1 / w over the window`.
pub fn harmonic_weights(weights: &WeightGrid) -> Array2<f64> {
    let w = &weights.0;
    let (rows, cols) = w.dim();
    Array2::from_shape_fn((rows.saturating_sub(1), cols.saturating_sub(1)), |(i, j)| {
        1.0 / (1.0 / w[(i, j)] + 1.0 / w[(i, j + 1)] + 1.0 / w[(i + 1, j)] + 1.0 / w[(i + 1, j + 1)])
    })
}

/// Projects the window at `cell` onto its half-space, carrying the Dykstra
/// residual `eta_in`. Returns the new residual; only the four window
/// entries of `z` change.
pub fn project_cell(
    z: &mut Array2<f64>,
    weights: &WeightGrid,
    gamma: &Array2<f64>,
    cell: (usize, usize),
    eta_in: f64,
) -> f64 {
    let (i, j) = cell;
    let sd = z[(i, j)] + z[(i + 1, j + 1)] - z[(i, j + 1)] - z[(i + 1, j)];
    let eta_out = (eta_in - gamma[cell] * sd).max(0.0);
    let delta = eta_out - eta_in;
    if delta != 0.0 {
        let w = &weights.0;
        z[(i, j)] += delta / w[(i, j)];
        z[(i + 1, j + 1)] += delta / w[(i + 1, j + 1)];
        z[(i, j + 1)] -= delta / w[(i, j + 1)];
        z[(i + 1, j)] -= delta / w[(i + 1, j)];
    }
    eta_out
}

/// Entrywise clamp into the box.
pub fn project_box(z: &Array2<f64>, bounds: &BoxBounds) -> Array2<f64> {
    let mut out = z.clone();
    Zip::from(&mut out)
        .and(&bounds.lower)
        .and(&bounds.upper)
        .for_each(|v, &lo, &hi| *v = v.max(lo).min(hi));
    out
}

/// `max(0, -min adjacent second difference)`.
pub fn feasibility_gap(theta: ArrayView2<f64>) -> f64 {
    let (min, _) = min_second_difference(theta);
    if min.is_nan() {
        f64::NAN
    } else {
        (-min).max(0.0)
    }
}

/// Iterate and residuals of the cyclic Dykstra scheme.
///
/// With [`Schedule::Separate`] one sweep projects onto the box (when present)
/// and then onto every cell half-space in row-major order. With
/// [`Schedule::Coupled`] and bounds present, each cell projection also
/// enforces the bounds of its window, and the residual of each set is the
/// full four-entry correction. Every projection is applied to the current
/// iterate shifted by that set's residual.
#[derive(Debug, Clone)]
pub struct DykstraState {
    theta: Array2<f64>,
    cell_residual: Array2<f64>,
    box_residual: Option<Array2<f64>>,
    window_residual: Vec<[f64; 4]>,
    gamma: Array2<f64>,
    inv_weights: Array2<f64>,
    bounds: Option<BoxBounds>,
    schedule: Schedule,
    sweeps: usize,
    /// Squared movement of all residuals during the last sweep, in the units of `theta`.
    moved_sq: f64,
}

impl DykstraState {
    /// State for Algorithm 2's schedule: box, then cells.
    pub fn new(y: &Array2<f64>, weights: &WeightGrid, bounds: Option<&BoxBounds>) -> Result<Self> {
        Self::with_schedule(y, weights, bounds, Schedule::Separate)
    }

    pub fn with_schedule(
        y: &Array2<f64>,
        weights: &WeightGrid,
        bounds: Option<&BoxBounds>,
        schedule: Schedule,
    ) -> Result<Self> {
        same_dim(y.dim(), weights.dim())?;
        if let Some(b) = bounds {
            same_dim(y.dim(), b.dim())?;
        }
        let (rows, cols) = y.dim();
        let cells = rows.saturating_sub(1) * cols.saturating_sub(1);
        // a grid without cells still needs the box as a set of its own
        let schedule = if cells == 0 { Schedule::Separate } else { schedule };
        let coupled = schedule == Schedule::Coupled && bounds.is_some();
        Ok(DykstraState {
            theta: y.as_standard_layout().into_owned(),
            cell_residual: Array2::zeros((rows.saturating_sub(1), cols.saturating_sub(1))),
            box_residual: bounds.filter(|_| !coupled).map(|_| Array2::zeros((rows, cols))),
            window_residual: if coupled { vec![[0.0; 4]; cells] } else { Vec::new() },
            gamma: harmonic_weights(weights),
            inv_weights: weights.0.mapv(|w| 1.0 / w).as_standard_layout().into_owned(),
            bounds: bounds.map(|b| BoxBounds {
                lower: b.lower.as_standard_layout().into_owned(),
                upper: b.upper.as_standard_layout().into_owned(),
            }),
            schedule,
            sweeps: 0,
            moved_sq: 0.0,
        })
    }

    pub fn iterate(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn into_iterate(self) -> Array2<f64> {
        self.theta
    }

    /// Scalar residuals of the cell half-spaces (zero under the coupled
    /// schedule with bounds, which keeps four-entry residuals instead).
    /// Four-entry corrections of the coupled sets, row-major by cell;
    /// empty under the separate schedule.
    pub fn window_residuals(&self) -> &[[f64; 4]] {
        &self.window_residual
    }

    pub fn cell_residuals(&self) -> &Array2<f64> {
        &self.cell_residual
    }

    pub fn box_residual(&self) -> Option<&Array2<f64>> {
        self.box_residual.as_ref()
    }

    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Euclidean norm of how far the residuals moved during the last sweep,
    /// measured as displacements of `theta`. The sweep-end iterate can repeat
    /// exactly while this is still large.
    pub fn residual_movement(&self) -> f64 {
        self.moved_sq.sqrt()
    }

    /// One full sweep over the cells in row-major order.
    pub fn sweep(&mut self) {
        self.moved_sq = 0.0;
        self.project_onto_box();
        let (rows, cols) = self.theta.dim();
        for i in 0..rows.saturating_sub(1) {
            for j in 0..cols.saturating_sub(1) {
                self.step(i, j);
            }
        }
        self.sweeps += 1;
    }

    /// A sweep with the cell order reversed (a separate box still first).
    pub fn sweep_reversed(&mut self) {
        self.moved_sq = 0.0;
        self.project_onto_box();
        let (rows, cols) = self.theta.dim();
        for i in (0..rows.saturating_sub(1)).rev() {
            for j in (0..cols.saturating_sub(1)).rev() {
                self.step(i, j);
            }
        }
        self.sweeps += 1;
    }

    fn project_onto_box(&mut self) {
        let (Some(bounds), Some(residual)) = (&self.bounds, &mut self.box_residual) else {
            return;
        };
        let mut moved = 0.0;
        Zip::from(&mut self.theta)
            .and(residual)
            .and(&bounds.lower)
            .and(&bounds.upper)
            .for_each(|t, r, &lo, &hi| {
                let shifted = *t + *r;
                let clamped = shifted.max(lo).min(hi);
                let r_new = shifted - clamped;
                moved += (r_new - *r) * (r_new - *r);
                *r = r_new;
                *t = clamped;
            });
        self.moved_sq += moved;
    }

    #[inline]
    fn step(&mut self, i: usize, j: usize) {
        if self.window_residual.is_empty() {
            self.cell_step(i, j);
        } else {
            self.window_step(i, j);
        }
    }

    #[inline]
    fn cell_step(&mut self, i: usize, j: usize) {
        let cols = self.theta.ncols();
        let t = self.theta.as_slice_mut().expect("standard layout");
        let iw = self.inv_weights.as_slice().expect("standard layout");
        let a = i * cols + j;
        let b = a + 1;
        let c = a + cols;
        let d = c + 1;
        let eta = &mut self.cell_residual[(i, j)];
        let sd = t[a] + t[d] - t[b] - t[c];
        let eta_new = (*eta - self.gamma[(i, j)] * sd).max(0.0);
        let delta = eta_new - *eta;
        if delta != 0.0 {
            t[a] += iw[a] * delta;
            t[d] += iw[d] * delta;
            t[b] -= iw[b] * delta;
            t[c] -= iw[c] * delta;
            self.moved_sq += delta * delta * (iw[a] * iw[a] + iw[b] * iw[b] + iw[c] * iw[c] + iw[d] * iw[d]);
        }
        *eta = eta_new;
    }

    fn window_step(&mut self, i: usize, j: usize) {
        let cols = self.theta.ncols();
        let bounds = self.bounds.as_ref().expect("coupled steps need bounds");
        let t = self.theta.as_slice_mut().expect("standard layout");
        let iw = self.inv_weights.as_slice().expect("standard layout");
        let lo = bounds.lower.as_slice().expect("standard layout");
        let hi = bounds.upper.as_slice().expect("standard layout");
        let a = i * cols + j;
        let idx = [a, a + cols + 1, a + 1, a + cols];
        let residual = &mut self.window_residual[i * (cols - 1) + j];
        let mut window = [WindowEntry::default(); 4];
        for k in 0..4 {
            let e = idx[k];
            window[k] = WindowEntry {
                z: t[e] + residual[k],
                sign: if k < 2 { 1.0 } else { -1.0 },
                inv_weight: iw[e],
                lo: lo[e],
                hi: hi[e],
            };
        }
        let x = project_window(&window);
        let mut moved = 0.0;
        for k in 0..4 {
            let r_new = window[k].z - x[k];
            moved += (r_new - residual[k]) * (r_new - residual[k]);
            residual[k] = r_new;
            t[idx[k]] = x[k];
        }
        self.moved_sq += moved;
    }
}

/// One entry of a 2x2 window: shifted value, sign in the second difference,
/// inverse weight and bounds.
#[derive(Debug, Clone, Copy, Default)]
struct WindowEntry {
    z: f64,
    sign: f64,
    inv_weight: f64,
    lo: f64,
    hi: f64,
}

impl WindowEntry {
    fn at(&self, lambda: f64) -> f64 {
        (self.z + self.sign * lambda * self.inv_weight).max(self.lo).min(self.hi)
    }

    /// Multiplier values where the entry starts and stops moving.
    fn breakpoints(&self) -> [f64; 2] {
        let w = 1.0 / self.inv_weight;
        if self.sign > 0.0 {
            [(self.lo - self.z) * w, (self.hi - self.z) * w]
        } else {
            [(self.z - self.hi) * w, (self.z - self.lo) * w]
        }
    }
}

/// Weighted projection of a window onto `{second difference >= 0} ∩ bounds`.
///
/// The solution is `clamp(z + lambda * sign / w)` for the smallest
/// `lambda >= 0` making the second difference nonnegative; the second
/// difference is nondecreasing and piecewise linear in `lambda`, so the root
/// is found by walking its breakpoints. If no multiplier achieves feasibility
/// every entry is left at the bound nearest to it.
fn project_window(window: &[WindowEntry; 4]) -> [f64; 4] {
    let phi = |lambda: f64| window.iter().map(|e| e.sign * e.at(lambda)).sum::<f64>();
    let solution = |lambda: f64| [0, 1, 2, 3].map(|k| window[k].at(lambda));
    let mut prev = 0.0;
    let mut phi_prev = phi(0.0);
    if phi_prev >= 0.0 {
        return solution(0.0);
    }
    // common case: nothing is clamped on the way to the root
    if window.iter().all(|e| e.lo <= e.z && e.z <= e.hi) {
        let lambda = -phi_prev / window.iter().map(|e| e.inv_weight).sum::<f64>();
        let moved = [0, 1, 2, 3].map(|k| {
            let e = &window[k];
            e.z + e.sign * lambda * e.inv_weight
        });
        if moved.iter().zip(window).all(|(&x, e)| e.lo <= x && x <= e.hi) {
            return moved;
        }
    }
    let mut points = [f64::INFINITY; 8];
    for (k, e) in window.iter().enumerate() {
        let [a, b] = e.breakpoints();
        points[2 * k] = if a > 0.0 { a } else { f64::INFINITY };
        points[2 * k + 1] = if b > 0.0 { b } else { f64::INFINITY };
    }
    points.sort_unstable_by(f64::total_cmp);
    for &bp in points.iter().take_while(|b| b.is_finite()) {
        let phi_bp = phi(bp);
        if phi_bp >= 0.0 {
            let lambda = prev + (bp - prev) * (-phi_prev / (phi_bp - phi_prev));
            return solution(lambda);
        }
        prev = bp;
        phi_prev = phi_bp;
    }
    // linear beyond the last finite breakpoint
    let slope = phi(prev + 1.0) - phi_prev;
    if slope > 0.0 {
        solution(prev - phi_prev / slope)
    } else {
        solution(prev)
    }
}

/// Projects `y` onto `{supermodular} ∩ box` in the `weights`-weighted norm.
///
/// Sweeps until the relative change of a sweep falls below `opts.rel_tol`
/// while every constraint holds to `opts.feas_tol`, or until
/// `opts.max_sweeps`. The change of a sweep is
/// `sqrt(||t_k - t_{k-1}||^2 + m_k^2) / max(||t_{k-1}||, 1e-12)` with `m_k`
/// the [`DykstraState::residual_movement`]. Hitting the sweep cap is not an
/// error; it is reported through [`ProjectionDiagnostics::converged`].
pub fn dykstra_project(
    y: &Array2<f64>,
    weights: &WeightGrid,
    bounds: Option<&BoxBounds>,
    opts: &ProjectionOptions,
) -> Result<(Array2<f64>, ProjectionDiagnostics)> {
    run_dykstra(y, weights, bounds, opts, None).map(|(theta, diag, _)| (theta, diag))
}

/// Dykstra loop; with `stall_window` it also returns early, flagged, once the
/// violation stops halving.
fn run_dykstra(
    y: &Array2<f64>,
    weights: &WeightGrid,
    bounds: Option<&BoxBounds>,
    opts: &ProjectionOptions,
    stall_window: Option<usize>,
) -> Result<(Array2<f64>, ProjectionDiagnostics, bool)> {
    opts.validate()?;
    let bounds = bounds.filter(|_| opts.include_box);
    let mut state = DykstraState::with_schedule(y, weights, bounds, opts.schedule)?;
    let mut previous = state.theta.clone();
    let mut rel_change = f64::INFINITY;
    let mut converged = false;
    let mut stalled = false;
    let mut checkpoint = f64::INFINITY;
    while state.sweeps < opts.max_sweeps {
        state.sweep();
        let (diff_sq, prev_sq) = Zip::from(&state.theta).and(&previous).fold(
            (0.0, 0.0),
            |(d, p), &now, &before| (d + (now - before) * (now - before), p + before * before),
        );
        // a repeating iterate is not enough: the residuals may still be drifting
        rel_change = (diff_sq + state.moved_sq).sqrt() / prev_sq.sqrt().max(1e-12);
        let needs_check = stall_window.is_some_and(|w| state.sweeps % w.max(1) == 0);
        if rel_change < opts.rel_tol || needs_check {
            let v = violation(&state.theta, bounds);
            if rel_change < opts.rel_tol && v <= opts.feas_tol {
                converged = true;
                break;
            }
            if needs_check {
                if v > opts.feas_tol && v > 0.5 * checkpoint {
                    stalled = true;
                    break;
                }
                checkpoint = v;
            }
        }
        if !rel_change.is_finite() {
            break;
        }
        previous.assign(&state.theta);
    }
    let diagnostics = ProjectionDiagnostics {
        sweeps: state.sweeps,
        feasibility_gap: feasibility_gap(state.theta.view()),
        rel_change,
        converged,
        interior_iters: 0,
    };
    Ok((state.into_iterate(), diagnostics, stalled))
}

/// Projection by the method in `opts.method`.
///
/// With [`InnerMethod::Dykstra`], bounds and a `stall_window`, a Dykstra run
/// that stalls or reaches `max_sweeps` unconverged is recomputed from scratch by
/// [`interior_point_project`]; the Dykstra answer is kept if that fails or is
/// not finite. The diagnostics keep the Dykstra sweep count and report the
/// interior point iterations separately.
pub fn project(
    y: &Array2<f64>,
    weights: &WeightGrid,
    bounds: Option<&BoxBounds>,
    opts: &ProjectionOptions,
) -> Result<(Array2<f64>, ProjectionDiagnostics)> {
    opts.validate()?;
    let bounds = bounds.filter(|_| opts.include_box);
    if opts.method == InnerMethod::InteriorPoint {
        return interior_point_project(y, weights, bounds);
    }
    // Without bounds, coordinates whose weight is negligible next to the
    // largest one are only pinned down by the cyclic projections.
    let window = opts.stall_window.filter(|_| bounds.is_some());
    let (theta, diag, _) = run_dykstra(y, weights, bounds, opts, window)?;
    if diag.converged || window.is_none() {
        return Ok((theta, diag));
    }
    match interior_point_project(y, weights, bounds) {
        Ok((x, ipm)) if x.iter().all(|v| v.is_finite()) => Ok((
            x,
            ProjectionDiagnostics {
                sweeps: diag.sweeps,
                interior_iters: ipm.interior_iters.max(1),
                ..ipm
            },
        )),
        _ => Ok((theta, diag)),
    }
}

/// Largest violation of a cell constraint or a bound.
fn violation(theta: &Array2<f64>, bounds: Option<&BoxBounds>) -> f64 {
    let cells = feasibility_gap(theta.view());
    match bounds {
        None => cells,
        Some(b) => Zip::from(theta)
            .and(b.lower())
            .and(b.upper())
            .fold(cells, |m, &t, &lo, &hi| m.max(lo - t).max(t - hi)),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    use super::*;

    #[test]
    fn harmonic_weight_examples() {
        assert!(harmonic_weights(&WeightGrid::ones(3, 3)).iter().all(|&g| g == 0.25));
        let fours = WeightGrid::new(Array2::from_elem((2, 3), 4.0)).unwrap();
        assert!(harmonic_weights(&fours).iter().all(|&g| g == 1.0));
        let mixed = WeightGrid::new(array![[1.0, 2.0], [4.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(harmonic_weights(&mixed)[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(WeightGrid::new(array![[1.0, 0.0]]).is_err());
        assert!(WeightGrid::new(array![[1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn project_cell_closed_form() {
        let w = WeightGrid::ones(2, 2);
        let gamma = harmonic_weights(&w);
        let mut z = array![[0.0, 1.0], [1.0, 0.0]];
        let eta = project_cell(&mut z, &w, &gamma, (0, 0), 0.0);
        assert_eq!(eta, 0.5);
        assert_eq!(z, array![[0.5, 0.5], [0.5, 0.5]]);

        // a second application with the carried residual is a fixed point
        let again = project_cell(&mut z, &w, &gamma, (0, 0), eta);
        assert_eq!(again, eta);
        assert_eq!(z, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn project_cell_leaves_feasible_windows_alone() {
        let w = WeightGrid::ones(3, 3);
        let gamma = harmonic_weights(&w);
        let mut z = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let before = z.clone();
        assert_eq!(project_cell(&mut z, &w, &gamma, (0, 0), 0.0), 0.0);
        assert_eq!(z, before);
    }

    #[test]
    fn project_cell_update_norm_matches_gamma() {
        let w = WeightGrid::new(array![[0.3, 2.0, 1.0], [0.7, 1.5, 0.2], [4.0, 0.1, 1.0]]).unwrap();
        let gamma = harmonic_weights(&w);
        let mut z = array![[0.0, -2.0, 3.0], [3.0, -1.0, 0.5], [0.2, 0.1, 0.0]];
        let before = z.clone();
        let eta = project_cell(&mut z, &w, &gamma, (0, 1), 0.0);
        assert!(eta > 0.0);
        let update = &z - &before;
        let weighted_sq: f64 = Zip::from(&update).and(w.weights()).fold(0.0, |a, &u, &wt| a + wt * u * u);
        assert_abs_diff_eq!(weighted_sq, eta * eta / gamma[(0, 1)], epsilon = 1e-12);
        let window = [(0, 1), (0, 2), (1, 1), (1, 2)];
        for ((i, j), &u) in update.indexed_iter() {
            if !window.contains(&(i, j)) {
                assert_eq!(u, 0.0);
            } else {
                let sign = if (i + j - 1) % 2 == 0 { 1.0 } else { -1.0 };
                assert_abs_diff_eq!(u, sign * eta / w.weights()[(i, j)], epsilon = 1e-14);
            }
        }
        let sd = z[(0, 1)] + z[(1, 2)] - z[(0, 2)] - z[(1, 1)];
        assert!(sd >= -1e-12);
    }

    #[test]
    fn box_projection_examples() {
        let b = BoxBounds::uniform(1, 1, 0.0, 1.0).unwrap();
        assert_eq!(project_box(&array![[5.0]], &b), array![[1.0]]);
        assert_eq!(project_box(&array![[0.5]], &b), array![[0.5]]);
        let open = BoxBounds::uniform(1, 2, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!(project_box(&array![[-1e300, 1e300]], &open), array![[-1e300, 1e300]]);
        assert!(BoxBounds::uniform(1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn feasibility_gap_examples() {
        assert_eq!(feasibility_gap(array![[0.0, 1.0], [1.0, 0.0]].view()), 2.0);
        assert_eq!(feasibility_gap(array![[1.0, 0.0], [0.0, 1.0]].view()), 0.0);
    }

    #[test]
    fn dykstra_two_by_two() {
        let y = array![[0.0, 1.0], [1.0, 0.0]];
        let (x, diag) = dykstra_project(&y, &WeightGrid::ones(2, 2), None, &Default::default()).unwrap();
        assert_eq!(x, array![[0.5, 0.5], [0.5, 0.5]]);
        assert!(diag.converged);
        assert_eq!(diag.feasibility_gap, 0.0);
    }

    #[test]
    fn dykstra_fixed_point_takes_one_sweep() {
        let y = array![[-1.0, -2.0, -3.0], [-2.0, -2.5, -3.0], [-3.0, -3.0, -2.0]];
        assert_eq!(feasibility_gap(y.view()), 0.0);
        let b = BoxBounds::uniform(3, 3, -4.0, 0.0).unwrap();
        let (x, diag) = dykstra_project(&y, &WeightGrid::ones(3, 3), Some(&b), &Default::default()).unwrap();
        assert_eq!(x, y);
        assert_eq!(diag.sweeps, 1);
        assert_eq!(diag.rel_change, 0.0);
    }

    #[test]
    fn sweep_cap_is_soft() {
        let y = array![[0.0, 3.0, 0.0], [3.0, 0.0, 3.0], [0.0, 3.0, 0.0]];
        let opts = ProjectionOptions {
            rel_tol: 1e-300,
            max_sweeps: 3,
            ..Default::default()
        };
        let (_, diag) = dykstra_project(&y, &WeightGrid::ones(3, 3), None, &opts).unwrap();
        assert_eq!(diag.sweeps, 3);
        assert!(!diag.converged);
    }

    #[test]
    fn include_box_false_ignores_bounds() {
        let y = array![[5.0, 5.0], [5.0, 5.0]];
        let b = BoxBounds::uniform(2, 2, 0.0, 1.0).unwrap();
        let opts = ProjectionOptions {
            include_box: false,
            ..Default::default()
        };
        let (x, _) = dykstra_project(&y, &WeightGrid::ones(2, 2), Some(&b), &opts).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn weighted_sum_is_preserved_by_cell_steps() {
        // every cell update has zero weighted sum, so sum(w * theta) is invariant
        let w = WeightGrid::new(array![[0.5, 2.0, 1.0], [0.1, 1.5, 3.0], [1.0, 0.2, 0.7]]).unwrap();
        let y = array![[0.0, 2.0, -1.0], [3.0, -1.0, 0.5], [0.2, 2.1, 0.0]];
        let (x, _) = dykstra_project(&y, &w, None, &Default::default()).unwrap();
        let before: f64 = (&y * w.weights()).sum();
        let after: f64 = (&x * w.weights()).sum();
        assert_abs_diff_eq!(before, after, epsilon = 1e-12);
    }
}
