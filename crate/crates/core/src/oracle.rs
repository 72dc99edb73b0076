//! Dense reference solvers for tiny grids.
//!
//! These solve the same convex programs as [`crate::projection`] and
//! [`crate::solver`] by an unrelated route: a primal-dual interior point
//! method on the full constraint matrix, followed by an equality-constrained
//! Newton polish on the identified active set. They exist to cross-check the
//! Dykstra and proximal Newton paths and are limited to 5x5 grids.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{same_dim, CountGrid};
use crate::projection::{BoxBounds, WeightGrid};

pub const ORACLE_SIZE_LIMIT: usize = 5;

const MAX_IPM_ITERS: usize = 300;

/// Separable convex objectives with diagonal Hessians.
enum Objective {
    /// `1/2 sum w (x - y)^2`
    Distance { target: Vec<f64>, weights: Vec<f64> },
    /// `-sum f x + sum exp(x)`
    NegLogLikelihood { freq: Vec<f64> },
}

impl Objective {
    fn gradient_hessian(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            Objective::Distance { target, weights } => (
                DVector::from_fn(x.len(), |k, _| weights[k] * (x[k] - target[k])),
                DVector::from_column_slice(weights),
            ),
            Objective::NegLogLikelihood { freq } => {
                let e = x.map(f64::exp);
                (DVector::from_fn(x.len(), |k, _| e[k] - freq[k]), e)
            }
        }
    }
}

/// Constraints `G x >= h`: one row per adjacent 2x2 window, plus one row per
/// finite bound.
struct Constraints {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

impl Constraints {
    fn build(rows: usize, cols: usize, bounds: Option<&BoxBounds>) -> Self {
        let n = rows * cols;
        let mut g_rows: Vec<Vec<f64>> = Vec::new();
        let mut h = Vec::new();
        for i in 0..rows.saturating_sub(1) {
            for j in 0..cols.saturating_sub(1) {
                let mut row = vec![0.0; n];
                row[i * cols + j] = 1.0;
                row[(i + 1) * cols + j + 1] = 1.0;
                row[i * cols + j + 1] = -1.0;
                row[(i + 1) * cols + j] = -1.0;
                g_rows.push(row);
                h.push(0.0);
            }
        }
        if let Some(b) = bounds {
            for (k, (&lo, &hi)) in b.lower().iter().zip(b.upper().iter()).enumerate() {
                if lo.is_finite() {
                    let mut row = vec![0.0; n];
                    row[k] = 1.0;
                    g_rows.push(row);
                    h.push(lo);
                }
                if hi.is_finite() {
                    let mut row = vec![0.0; n];
                    row[k] = -1.0;
                    g_rows.push(row);
                    h.push(-hi);
                }
            }
        }
        let m = g_rows.len();
        Constraints {
            g: DMatrix::from_fn(m, n, |r, c| g_rows[r][c]),
            h: DVector::from_vec(h),
        }
    }
}

/// Weighted projection of `y` onto `{supermodular} ∩ box` for grids up to
/// 5x5, accurate to about 1e-9.
pub fn oracle_project(
    y: &Array2<f64>,
    weights: &WeightGrid,
    bounds: Option<&BoxBounds>,
) -> Result<Array2<f64>> {
    check_size(y.dim())?;
    same_dim(y.dim(), weights.dim())?;
    if let Some(b) = bounds {
        same_dim(y.dim(), b.dim())?;
    }
    let objective = Objective::Distance {
        target: y.iter().copied().collect(),
        weights: weights.weights().iter().copied().collect(),
    };
    let start = clamp_start(y.iter().copied().collect(), bounds);
    solve(objective, y.dim(), bounds, start)
}

/// Maximizer of `<Y, theta>/N - sum exp(theta)` over `{supermodular} ∩ box`
/// for grids up to 5x5.
pub fn oracle_mle(counts: &CountGrid, bounds: Option<&BoxBounds>) -> Result<Array2<f64>> {
    check_size(counts.dim())?;
    if let Some(b) = bounds {
        same_dim(counts.dim(), b.dim())?;
    }
    if counts.total() == 0 {
        return Err(Error::InvalidParameters("no observations".into()));
    }
    let freq: Vec<f64> = counts.frequencies().iter().copied().collect();
    let start = freq.iter().map(|&f| f.max(0.5 / counts.total() as f64).ln()).collect();
    let start = clamp_start(start, bounds);
    solve(Objective::NegLogLikelihood { freq }, counts.dim(), bounds, start)
}

fn check_size((rows, cols): (usize, usize)) -> Result<()> {
    if rows > ORACLE_SIZE_LIMIT || cols > ORACLE_SIZE_LIMIT {
        return Err(Error::SizeLimit {
            rows,
            cols,
            limit: ORACLE_SIZE_LIMIT,
        });
    }
    Ok(())
}

fn clamp_start(mut x: Vec<f64>, bounds: Option<&BoxBounds>) -> Vec<f64> {
    if let Some(b) = bounds {
        for (v, (&lo, &hi)) in x.iter_mut().zip(b.lower().iter().zip(b.upper().iter())) {
            *v = v.max(lo).min(hi);
        }
    }
    x
}

fn solve(
    objective: Objective,
    (rows, cols): (usize, usize),
    bounds: Option<&BoxBounds>,
    start: Vec<f64>,
) -> Result<Array2<f64>> {
    let cons = Constraints::build(rows, cols, bounds);
    let x = if cons.h.is_empty() {
        newton_unconstrained(&objective, DVector::from_vec(start))
    } else {
        let x = interior_point(&objective, &cons, DVector::from_vec(start))?;
        polish(&objective, &cons, x)
    };
    Ok(Array2::from_shape_vec((rows, cols), x.iter().copied().collect())
        .expect("shape matches the variable count"))
}

fn newton_unconstrained(objective: &Objective, mut x: DVector<f64>) -> DVector<f64> {
    for _ in 0..100 {
        let (g, h) = objective.gradient_hessian(&x);
        let step = g.component_div(&h);
        x -= &step;
        if step.amax() < 1e-15 {
            break;
        }
    }
    x
}

/// Mehrotra predictor-corrector on `min f(x) s.t. G x - h = s >= 0`.
fn interior_point(
    objective: &Objective,
    cons: &Constraints,
    mut x: DVector<f64>,
) -> Result<DVector<f64>> {
    let (g_mat, h) = (&cons.g, &cons.h);
    let m = h.len() as f64;
    let mut s = (g_mat * &x - h).map(|r| r.max(1.0));
    let mut z = DVector::from_element(h.len(), 1.0);

    for _ in 0..MAX_IPM_ITERS {
        let (grad, hess) = objective.gradient_hessian(&x);
        let r_dual = &grad - g_mat.transpose() * &z;
        let r_primal = g_mat * &x - h - &s;
        let mu = s.dot(&z) / m;
        let scale = 1.0 + grad.amax().max(h.amax());
        if r_dual.amax() < 1e-13 * scale && r_primal.amax() < 1e-13 * scale && mu < 1e-16 {
            return Ok(x);
        }

        let ratio = z.component_div(&s);
        let mut kkt = g_mat.transpose() * DMatrix::from_diagonal(&ratio) * g_mat;
        for k in 0..x.len() {
            kkt[(k, k)] += hess[k];
        }
        let chol = match factor(kkt) {
            Ok(c) => c,
            // barrier terms blew up at an essentially converged point
            Err(_) if mu < 1e-10 * scale => return Ok(x),
            Err(e) => return Err(e),
        };

        let direction = |r_comp: &DVector<f64>| {
            let rhs = -&r_dual - g_mat.transpose() * (r_comp + z.component_mul(&r_primal)).component_div(&s);
            let dx = chol.solve(&rhs);
            let ds = g_mat * &dx + &r_primal;
            let dz = -(r_comp + z.component_mul(&ds)).component_div(&s);
            (dx, ds, dz)
        };

        let (_, ds_aff, dz_aff) = direction(&s.component_mul(&z));
        let alpha_aff = step_to_boundary(&s, &ds_aff).min(step_to_boundary(&z, &dz_aff)).min(1.0);
        let mu_aff = (&s + alpha_aff * &ds_aff).dot(&(&z + alpha_aff * &dz_aff)) / m;
        let sigma = (mu_aff / mu).powi(3);

        let r_comp = s.component_mul(&z) + ds_aff.component_mul(&dz_aff)
            - DVector::from_element(s.len(), sigma * mu);
        let (dx, ds, dz) = direction(&r_comp);
        let mut alpha = (0.995 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0);
        // keep exp(x) finite for the likelihood objective
        while alpha > 1e-12 && !(&x + alpha * &dx).iter().all(|v| v.exp().is_finite()) {
            alpha *= 0.5;
        }
        x += alpha * &dx;
        s += alpha * &ds;
        z += alpha * &dz;
    }
    Ok(x)
}

/// Cholesky factor, retried with a growing diagonal shift when rounding in
/// the barrier terms destroys definiteness near the solution.
fn factor(kkt: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = kkt.diagonal().amax();
    let mut shift = 0.0;
    for _ in 0..8 {
        let mut m = kkt.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += shift;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c);
        }
        shift = if shift == 0.0 { 1e-15 * scale } else { shift * 100.0 };
    }
    Err(Error::InvalidParameters("oracle normal equations are singular".into()))
}

fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&a, &d)| -a / d)
        .fold(f64::INFINITY, f64::min)
}

/// Newton's method on the equality-constrained problem over the constraints
/// the interior point iterate treats as active. Falls back to the interior
/// point solution when the polished point is infeasible or has a negative
/// multiplier.
fn polish(objective: &Objective, cons: &Constraints, x_ipm: DVector<f64>) -> DVector<f64> {
    let slack = &cons.g * &x_ipm - &cons.h;
    let active: Vec<usize> = (0..cons.h.len()).filter(|&r| slack[r] < 1e-7).collect();
    let n = x_ipm.len();
    let a = active.len();
    let g_act = DMatrix::from_fn(a, n, |r, c| cons.g[(active[r], c)]);
    let h_act = DVector::from_fn(a, |r, _| cons.h[active[r]]);

    let mut x = x_ipm.clone();
    let mut multipliers = DVector::zeros(a);
    for _ in 0..50 {
        let (grad, hess) = objective.gradient_hessian(&x);
        let mut kkt = DMatrix::zeros(n + a, n + a);
        for k in 0..n {
            kkt[(k, k)] = hess[k];
        }
        kkt.view_mut((0, n), (n, a)).copy_from(&(-g_act.transpose()));
        kkt.view_mut((n, 0), (a, n)).copy_from(&g_act);
        let mut rhs = DVector::zeros(n + a);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        rhs.rows_mut(n, a).copy_from(&(&h_act - &g_act * &x));
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
            return x_ipm;
        };
        let dx = sol.rows(0, n).into_owned();
        multipliers = sol.rows(n, a).into_owned();
        x += &dx;
        if dx.amax() < 1e-15 {
            break;
        }
    }
    let feasible = (&cons.g * &x - &cons.h).iter().all(|&r| r >= -1e-12);
    let dual_ok = multipliers.iter().all(|&l| l >= -1e-9);
    if feasible && dual_ok && x.iter().all(|v| v.is_finite()) {
        x
    } else {
        x_ipm
    }
}
