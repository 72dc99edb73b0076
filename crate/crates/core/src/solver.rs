//! Proximal Newton computation of the MTP2 maximum-likelihood estimator.
//!
//! The (negated) objective `g(theta) = -<Y, theta>/N + sum exp(theta)` has a
//! diagonal Hessian `exp(theta)`, so each proximal Newton subproblem is the
//! projection of `theta + (Y/N) / exp(theta) - 1` onto the feasible set in the
//! `exp(theta)`-weighted norm. Those projections are computed by Dykstra's
//! algorithm through [`project`], which hands over to an interior point
//! method when Dykstra stalls. Steps are taken in full.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{empirical_pmf, normalize_log, CountGrid, LogPmfGrid, PmfGrid};
use crate::projection::{
    feasibility_gap, project, InnerMethod, BoxBounds, ProjectionDiagnostics, ProjectionOptions,
    WeightGrid,
};

/// Lower clamp applied before exponentiating log-masses into weights. Keeps
/// `1 / exp(theta)` finite.
pub const EXP_FLOOR: f64 = -700.0;

/// A box fit ending with a larger cell violation is taken to have an empty
/// feasible set and reports the empirical frequencies instead.
pub const BOX_INFEASIBLE_GAP: f64 = 1e-4;

/// An unconstrained fit only counts as converged once `|sum exp(theta) - 1|`
/// is below this, or the projection tolerances have reached [`MIN_INNER_TOL`].
pub const UNCONSTRAINED_MASS_TOL: f64 = 1e-7;

pub const MIN_INNER_TOL: f64 = 1e-12;

/// Default floor `exp(-30)` for [`Variant::LowerBounded`].
pub const DEFAULT_EPSILON: f64 = 9.357_622_968_840_175e-14;

/// Which feasible set the likelihood is maximized over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Variant {
    /// The supermodular cone only.
    Unconstrained,
    /// The cone intersected with `log(2Y/3N) <= theta <= min(log(2Y/N), 0)`.
    BoxConstrained,
    /// The cone intersected with `log(epsilon) <= theta <= 0`.
    LowerBounded { epsilon: f64 },
}

impl Variant {
    pub fn lower_bounded() -> Self {
        Variant::LowerBounded {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Unconstrained => "mle",
            Variant::BoxConstrained => "box",
            Variant::LowerBounded { .. } => "lb",
        }
    }
}

/// Starting point of the outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// `log(max(Y, 1) / N)`, clamped into the bounds of the variant.
    #[default]
    LogScale,
    /// `Y / N` taken literally as the log-mass iterate.
    ProbabilityScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub variant: Variant,
    pub outer_rel_tol: f64,
    pub max_outer: usize,
    pub inner: ProjectionOptions,
    pub initialization: Initialization,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            variant: Variant::Unconstrained,
            outer_rel_tol: 1e-5,
            max_outer: 100,
            inner: ProjectionOptions::default(),
            initialization: Initialization::LogScale,
        }
    }
}

impl SolverOptions {
    pub fn new(variant: Variant) -> Self {
        SolverOptions {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if !(self.outer_rel_tol > 0.0) || self.max_outer == 0 {
            return Err(Error::InvalidParameters(format!(
                "outer_rel_tol must be > 0 and max_outer >= 1, got {} and {}",
                self.outer_rel_tol, self.max_outer
            )));
        }
        if let Variant::LowerBounded { epsilon } = self.variant {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(Error::InvalidParameters(format!(
                    "epsilon must lie in (0, 1), got {epsilon}"
                )));
            }
        }
        Ok(())
    }
}

/// Estimator output and run diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: LogPmfGrid,
    pub p_hat: PmfGrid,
    /// The optimizer before normalization.
    pub theta_tilde: Array2<f64>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub variant: Variant,
    pub outer_iters: usize,
    pub converged: bool,
    /// Objective after each accepted Newton step.
    pub objective_trace: Vec<f64>,
    /// Feasibility gap of `theta_hat`.
    pub final_feasibility: f64,
    pub fell_back_to_empirical: bool,
    /// The fallback was taken because the box and the supermodular cone do
    /// not intersect (the fit ended with a cell violated by more than
    /// [`BOX_INFEASIBLE_GAP`]).
    #[serde(default)]
    pub box_infeasible: bool,
    /// `sum exp(theta_tilde)`.
    pub unnormalized_mass: f64,
    pub inner_sweeps: usize,
    /// Newton steps whose projection did not converge.
    pub inner_not_converged: usize,
    /// Newton steps whose projection was handed over to the interior point method.
    #[serde(default)]
    pub inner_fallbacks: usize,
    /// The iteration produced non-finite values and stopped at the last finite iterate.
    pub diverged: bool,
}

impl FitResult {
    pub fn outer_iters(&self) -> usize {
        self.diagnostics.outer_iters
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.diagnostics.objective_trace
    }

    pub fn final_feasibility(&self) -> f64 {
        self.diagnostics.final_feasibility
    }

    pub fn fell_back(&self) -> bool {
        self.diagnostics.fell_back_to_empirical
    }
}

/// Bounds `log(2Y/3N) <= theta <= min(log(2Y/N), 0)`. Requires every count to
/// be positive; otherwise reports all zero cells.
pub fn build_box(counts: &CountGrid) -> Result<BoxBounds> {
    let zeros = counts.zero_cells();
    if !zeros.is_empty() {
        return Err(Error::ZeroCount { cells: zeros });
    }
    let n = counts.total() as f64;
    let lower = counts.counts().mapv(|y| (2.0 * y as f64 / (3.0 * n)).ln());
    let upper = counts.counts().mapv(|y| (2.0 * y as f64 / n).ln().min(0.0));
    BoxBounds::new(lower, upper)
}

/// `<Y, theta>/N - sum exp(theta)`, the concave objective being maximized.
pub fn objective(theta: &Array2<f64>, counts: &CountGrid) -> f64 {
    let n = counts.total() as f64;
    Zip::from(theta)
        .and(counts.counts())
        .fold(0.0, |acc, &t, &y| {
            let linear = if y == 0 { 0.0 } else { y as f64 * t / n };
            acc + linear - t.exp()
        })
}

/// One proximal Newton step: the projection of
/// `theta + (Y/N) / exp(theta) - 1` in the `exp(theta)`-weighted norm.
pub fn newton_step(
    theta: &Array2<f64>,
    counts: &CountGrid,
    bounds: Option<&BoxBounds>,
    inner: &ProjectionOptions,
) -> Result<(Array2<f64>, ProjectionDiagnostics)> {
    let n = counts.total() as f64;
    let weights = theta.mapv(|t| t.max(EXP_FLOOR).exp());
    let mut target = theta.clone();
    Zip::from(&mut target)
        .and(&weights)
        .and(counts.counts())
        .for_each(|t, &w, &y| *t += y as f64 / n / w - 1.0);
    project(&target, &WeightGrid::new(weights)?, bounds, inner)
}

/// Computes the estimator selected by `opts.variant`.
///
/// For [`Variant::BoxConstrained`] with zero counts the box is undefined and
/// the empirical frequencies are returned instead, flagged in the
/// diagnostics.
pub fn fit_mle(counts: &CountGrid, opts: &SolverOptions) -> Result<FitResult> {
    opts.validate()?;
    if counts.total() == 0 {
        return Err(Error::InvalidParameters("no observations".into()));
    }
    let n = counts.total() as f64;
    let (rows, cols) = counts.dim();
    let bounds = match opts.variant {
        Variant::Unconstrained => None,
        Variant::BoxConstrained => match build_box(counts) {
            Ok(b) => Some(b),
            Err(Error::ZeroCount { .. }) => return empirical_fallback(counts, opts.variant, false),
            Err(e) => return Err(e),
        },
        Variant::LowerBounded { epsilon } => Some(BoxBounds::uniform(rows, cols, epsilon.ln(), 0.0)?),
    };

    let mut theta = match opts.initialization {
        Initialization::LogScale => counts.counts().mapv(|y| (y.max(1) as f64 / n).ln()),
        Initialization::ProbabilityScale => counts.frequencies(),
    };
    if let Some(b) = &bounds {
        Zip::from(&mut theta)
            .and(b.lower())
            .and(b.upper())
            .for_each(|t, &lo, &hi| *t = t.max(lo).min(hi));
    }

    let mut trace = Vec::new();
    let mut outer_iters = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut inner_sweeps = 0;
    let mut inner_not_converged = 0;
    let mut inner_fallbacks = 0;
    let mut inner = opts.inner;
    let mut tightened = false;
    while outer_iters < opts.max_outer {
        let (mut next, diag) = newton_step(&theta, counts, bounds.as_ref(), &inner)?;
        // Once Dykstra has stalled on this fit, later steps would too. The
        // previous objective came from a less accurate projection, so neither
        // the hand-over step nor the first step after tightening is guarded.
        let handed_over = diag.interior_iters > 0 && inner.method == InnerMethod::Dykstra;
        if handed_over {
            inner.method = InnerMethod::InteriorPoint;
        }
        let unguarded = handed_over || std::mem::take(&mut tightened);
        outer_iters += 1;
        inner_sweeps += diag.sweeps;
        inner_not_converged += usize::from(!diag.converged);
        inner_fallbacks += usize::from(diag.interior_iters > 0);
        if !next.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        let mut value = objective(&next, counts);
        // The starting point is generally infeasible, so only steps between
        // projected iterates are guarded.
        if let Some(&previous) = trace.last().filter(|_| !unguarded) {
            let mut halvings = 0;
            while value < previous - 1e-8 && halvings < 10 {
                next = (&next + &theta) * 0.5;
                value = objective(&next, counts);
                halvings += 1;
            }
        }
        trace.push(value);
        let change = relative_change(&next, &theta);
        theta = next;
        if change < opts.outer_rel_tol {
            // Without bounds the constant direction is free, so an optimum has
            // unit mass. A small step taken on a loose projection can stop
            // short of that; tighten the projection and keep going.
            let mass: f64 = theta.iter().map(|t| t.exp()).sum();
            if bounds.is_none() && (mass - 1.0).abs() > UNCONSTRAINED_MASS_TOL && inner.rel_tol > MIN_INNER_TOL {
                inner.rel_tol = (inner.rel_tol * 1e-2).max(MIN_INNER_TOL);
                inner.feas_tol = (inner.feas_tol * 1e-2).max(MIN_INNER_TOL);
                tightened = true;
                continue;
            }
            converged = true;
            break;
        }
    }

    if opts.variant == Variant::BoxConstrained && feasibility_gap(theta.view()) > BOX_INFEASIBLE_GAP {
        return empirical_fallback(counts, opts.variant, true);
    }
    let unnormalized_mass = theta.iter().map(|t| t.exp()).sum();
    let theta_hat = normalize_log(&LogPmfGrid::new(theta.clone())?);
    let p_hat = theta_hat.to_pmf()?;
    let final_feasibility = feasibility_gap(theta_hat.theta().view());
    Ok(FitResult {
        theta_hat,
        p_hat,
        theta_tilde: theta,
        diagnostics: FitDiagnostics {
            variant: opts.variant,
            outer_iters,
            converged,
            objective_trace: trace,
            final_feasibility,
            fell_back_to_empirical: false,
            box_infeasible: false,
            unnormalized_mass,
            inner_sweeps,
            inner_not_converged,
            inner_fallbacks,
            diverged,
        },
    })
}

fn empirical_fallback(counts: &CountGrid, variant: Variant, box_infeasible: bool) -> Result<FitResult> {
    let p_hat = empirical_pmf(counts)?;
    let theta_hat = p_hat.to_log();
    let theta_tilde = theta_hat.theta().clone();
    Ok(FitResult {
        diagnostics: FitDiagnostics {
            variant,
            outer_iters: 0,
            converged: false,
            objective_trace: Vec::new(),
            final_feasibility: feasibility_gap(theta_hat.theta().view()),
            fell_back_to_empirical: true,
            box_infeasible,
            unnormalized_mass: 1.0,
            inner_sweeps: 0,
            inner_not_converged: 0,
            inner_fallbacks: 0,
            diverged: false,
        },
        theta_hat,
        p_hat,
        theta_tilde,
    })
}

/// `||a - b||_F / max(||b||_F, 1e-12)`.
pub(crate) fn relative_change(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (diff, base) = Zip::from(a)
        .and(b)
        .fold((0.0, 0.0), |(d, n), &x, &y| (d + (x - y) * (x - y), n + y * y));
    diff.sqrt() / base.sqrt().max(1e-12)
}
