//! Maximum-likelihood estimation of two-dimensional MTP2 distributions.
//!
//! A distribution on an `n1 x n2` grid is MTP2 when its log-PMF is
//! supermodular: every adjacent second difference
//! `theta[i,j] + theta[i+1,j+1] - theta[i,j+1] - theta[i+1,j]` is nonnegative.
//! [`fit_mle`] computes the maximum-likelihood estimator over that cone by a
//! proximal Newton method whose weighted projections are done by Dykstra's
//! algorithm ([`dykstra_project`]). [`fit_density`] lifts this to densities on
//! the unit square through a histogram and a piecewise-constant estimate.

pub mod density;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod interior;
pub mod io;
pub mod oracle;
pub mod projection;
pub mod quadrature;
pub mod solver;
pub mod synth;

pub use density::{
    fit_density, hellinger_sq_continuous, hellinger_sq_pc, histogram, select_grid_size, AnalyticDensity,
    DensityFit, PiecewiseConstantDensity, SamplePoints,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentRecord, Estimator, Metric};
pub use grid::{
    corner_ratio_log, empirical_pmf, hellinger_sq, is_mtp2, is_supermodular, kl, normalize_log, CountGrid,
    LogPmfGrid, MinorReport, PmfGrid,
};
pub use interior::interior_point_project;
pub use projection::{
    dykstra_project, feasibility_gap, project, BoxBounds, InnerMethod, ProjectionDiagnostics, ProjectionOptions,
    Schedule, WeightGrid,
};
pub use solver::{fit_mle, FitDiagnostics, FitResult, SolverOptions, Variant};
pub use synth::{make_supermodular_pmf, sample_multinomial, sample_truncated_gaussian, SeededRng, TruncatedGaussianSpec};
