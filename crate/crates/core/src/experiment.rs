//! Monte-Carlo experiment harness: sweeps, replicates, records, log-log
//! regression and CSV/JSON output.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    cell_average_density, default_scaling_constant, empirical_density, fit_density, fixed_scaling_grid_size,
    hellinger_sq_continuous, hellinger_sq_pc, AnalyticDensity, PiecewiseConstantDensity, DEFAULT_QUAD_TOL,
};
use crate::error::{Error, Result};
use crate::grid::{empirical_pmf, hellinger_sq, CountGrid, PmfGrid};
use crate::solver::{fit_mle, FitResult, SolverOptions, Variant, DEFAULT_EPSILON};
use crate::synth::{
    make_supermodular_pmf, sample_multinomial, sample_truncated_gaussian, SeededRng, TruncatedGaussianSpec,
    RNG_ALGORITHM,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The frequency matrix `Y / N`.
    Empirical,
    Mle,
    Box,
    Lb,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Empirical, Estimator::Mle, Estimator::Box, Estimator::Lb];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Empirical => "empirical",
            Estimator::Mle => "mle",
            Estimator::Box => "box",
            Estimator::Lb => "lb",
        }
    }

    /// Solver variant, or `None` for the frequency matrix.
    pub fn variant(&self, epsilon: f64) -> Option<Variant> {
        match self {
            Estimator::Empirical => None,
            Estimator::Mle => Some(Variant::Unconstrained),
            Estimator::Box => Some(Variant::BoxConstrained),
            Estimator::Lb => Some(Variant::LowerBounded { epsilon }),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    H2Truth,
    H2VariancePart,
    RuntimeSeconds,
    /// Grid size picked by the oracle.
    SelectedN,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::H2Truth, Metric::H2VariancePart, Metric::RuntimeSeconds, Metric::SelectedN];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::H2Truth => "h2_truth",
            Metric::H2VariancePart => "h2_variance_part",
            Metric::RuntimeSeconds => "runtime_seconds",
            Metric::SelectedN => "selected_n",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Grid estimation with the sample size swept.
    GridVaryN,
    /// Grid estimation with the grid size swept.
    GridVaryGridSize,
    /// Continuous estimation, best grid size chosen against the truth.
    DensityOracle,
    /// Continuous estimation with `n = ceil(C N^(1/(2 beta + 1)))`.
    DensityFixedScaling,
    Runtime,
}

/// What a runtime experiment sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeAxis {
    SampleSize,
    GridSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Sample sizes, or grid sizes for `GridVaryGridSize` and grid-size runtime sweeps.
    pub sweep: Vec<f64>,
    pub replicates: usize,
    pub seed_base: u64,
    pub estimators: Vec<Estimator>,
    pub solver: SolverOptions,
    pub epsilon: f64,
    /// Grid size when it is not swept.
    pub grid_size: usize,
    /// Sample size when it is not swept.
    pub sample_size: u64,
    pub log_l: f64,
    pub oracle_grid_sizes: Vec<usize>,
    pub beta: f64,
    /// `None` selects the constant giving n = 200 at N = 10^8.
    pub scaling_constant: Option<f64>,
    pub runtime_axis: RuntimeAxis,
    pub quad_tol: f64,
    /// Inclusive x-range for slope fits; `None` means the upper half of the sweep.
    pub regression_range: Option<(f64, f64)>,
}

fn powers_of_ten(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 10f64.powi(k)).collect()
}

impl ExperimentConfig {
    /// Small sweeps suited to a workstation, or the published settings when
    /// `paper_scale` is set.
    pub fn preset(kind: ExperimentKind, paper_scale: bool) -> Self {
        let mut cfg = ExperimentConfig {
            kind,
            sweep: powers_of_ten(3, 6),
            replicates: if paper_scale { 20 } else { 5 },
            seed_base: 0,
            estimators: Estimator::ALL.to_vec(),
            solver: SolverOptions::default(),
            epsilon: DEFAULT_EPSILON,
            grid_size: 16,
            sample_size: 1_000_000,
            log_l: 2.0,
            oracle_grid_sizes: vec![4, 7, 10, 15, 23, 36],
            beta: 1.0,
            scaling_constant: None,
            runtime_axis: RuntimeAxis::GridSize,
            quad_tol: DEFAULT_QUAD_TOL,
            regression_range: None,
        };
        match kind {
            ExperimentKind::GridVaryN => {
                if paper_scale {
                    cfg.sweep = powers_of_ten(2, 8);
                }
            }
            ExperimentKind::GridVaryGridSize => {
                cfg.log_l = 0.2;
                cfg.sweep = if paper_scale {
                    vec![8.0, 16.0, 32.0, 64.0, 128.0, 200.0]
                } else {
                    vec![8.0, 16.0, 32.0, 64.0]
                };
                cfg.sample_size = if paper_scale { 100_000_000 } else { 1_000_000 };
            }
            ExperimentKind::DensityOracle | ExperimentKind::DensityFixedScaling => {
                cfg.estimators = vec![Estimator::Empirical, Estimator::Lb];
                cfg.replicates = if paper_scale { 20 } else { 3 };
                if paper_scale {
                    cfg.sweep = powers_of_ten(2, 8);
                    cfg.oracle_grid_sizes = vec![4, 7, 10, 15, 23, 36, 55, 84, 130, 201];
                }
            }
            ExperimentKind::Runtime => {
                cfg.estimators = vec![Estimator::Mle];
                cfg.replicates = if paper_scale { 20 } else { 3 };
                cfg.sample_size = 100_000;
                cfg.sweep = if paper_scale {
                    vec![8.0, 16.0, 32.0, 64.0, 128.0, 200.0]
                } else {
                    vec![4.0, 8.0, 16.0, 32.0]
                };
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameters(msg));
        if self.sweep.is_empty() || self.replicates == 0 || self.estimators.is_empty() {
            return bad("sweep, replicates and estimators must be nonempty".into());
        }
        if self.sweep.iter().any(|v| !(*v >= 1.0) || v.fract() != 0.0) {
            return bad(format!("sweep values must be positive integers, got {:?}", self.sweep));
        }
        if self.sweeps_grid_size() && self.sweep.iter().any(|&v| v < 2.0) {
            return bad("swept grid sizes must be >= 2".into());
        }
        if self.grid_size < 2 || !(self.log_l >= 0.0) || !(self.quad_tol > 0.0) {
            return bad("grid_size >= 2, log_l >= 0 and quad_tol > 0 required".into());
        }
        if self.kind == ExperimentKind::DensityOracle && self.oracle_grid_sizes.iter().any(|&n| n == 0) {
            return bad("oracle grid sizes must be >= 1".into());
        }
        if self.kind == ExperimentKind::DensityOracle && self.oracle_grid_sizes.is_empty() {
            return bad("oracle grid size list is empty".into());
        }
        let mut solver = self.solver;
        solver.variant = Variant::LowerBounded { epsilon: self.epsilon };
        solver.validate()
    }

    fn sweeps_grid_size(&self) -> bool {
        matches!(self.kind, ExperimentKind::GridVaryGridSize)
            || (self.kind == ExperimentKind::Runtime && self.runtime_axis == RuntimeAxis::GridSize)
    }

    /// The configured regression range, or the upper half of the sweep.
    pub fn effective_range(&self) -> (f64, f64) {
        self.regression_range.unwrap_or_else(|| {
            let mut xs = self.sweep.clone();
            xs.sort_by(f64::total_cmp);
            (xs[xs.len() / 2], xs[xs.len() - 1])
        })
    }

    fn solver_for(&self, estimator: Estimator) -> Option<SolverOptions> {
        estimator.variant(self.epsilon).map(|variant| SolverOptions { variant, ..self.solver })
    }
}

/// Summary of the fit behind a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordDiagnostics {
    pub grid_size: usize,
    pub outer_iters: usize,
    pub converged: bool,
    /// `None` when the gap is undefined (a fallback to frequencies with zeros).
    pub final_feasibility: Option<f64>,
    pub fell_back: bool,
    pub diverged: bool,
    pub inner_sweeps: usize,
    pub inner_not_converged: usize,
    #[serde(default)]
    pub inner_fallbacks: usize,
}

impl RecordDiagnostics {
    fn of(fit: &FitResult, grid_size: usize) -> Self {
        let d = &fit.diagnostics;
        RecordDiagnostics {
            grid_size,
            outer_iters: d.outer_iters,
            converged: d.converged,
            final_feasibility: Some(d.final_feasibility).filter(|v| v.is_finite()),
            fell_back: d.fell_back_to_empirical,
            diverged: d.diverged,
            inner_sweeps: d.inner_sweeps,
            inner_not_converged: d.inner_not_converged,
            inner_fallbacks: d.inner_fallbacks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sweep: f64,
    pub estimator: Estimator,
    /// `None` marks the mean over replicates.
    pub replicate: Option<usize>,
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<RecordDiagnostics>,
}

impl ExperimentRecord {
    fn raw(sweep: f64, estimator: Estimator, replicate: usize, metric: Metric, value: f64) -> Self {
        ExperimentRecord {
            sweep,
            estimator,
            replicate: Some(replicate),
            metric,
            value,
            diagnostics: None,
        }
    }

    fn with(mut self, diagnostics: Option<RecordDiagnostics>) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        // raw replicates first, the mean row last
        let rep = |r: Option<usize>| r.map_or(usize::MAX, |v| v);
        self.sweep
            .total_cmp(&other.sweep)
            .then(self.estimator.cmp(&other.estimator))
            .then(rep(self.replicate).cmp(&rep(other.replicate)))
            .then(self.metric.cmp(&other.metric))
    }
}

/// Everything needed to interpret a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rng_algorithm: String,
    pub seed_base: u64,
    pub records: Vec<ExperimentRecord>,
}

/// Runs the experiment selected by `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    match cfg.kind {
        ExperimentKind::GridVaryN | ExperimentKind::GridVaryGridSize => run_grid_experiment(cfg),
        ExperimentKind::DensityOracle | ExperimentKind::DensityFixedScaling => run_density_experiment(cfg),
        ExperimentKind::Runtime => run_runtime_experiment(cfg),
    }
}

/// Independent stream per (sweep point, replicate).
fn task_rng(cfg: &ExperimentConfig, sweep_index: usize, replicate: usize) -> SeededRng {
    SeededRng::with_stream(cfg.seed_base.wrapping_add(replicate as u64), sweep_index as u64)
}

fn run_tasks<F>(cfg: &ExperimentConfig, task: F) -> Result<Vec<ExperimentRecord>>
where
    F: Fn(usize, f64, usize) -> Result<Vec<ExperimentRecord>> + Sync,
{
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.sweep.len())
        .flat_map(|s| (0..cfg.replicates).map(move |r| (s, r)))
        .collect();
    let raw = jobs
        .into_par_iter()
        .map(|(s, r)| task(s, cfg.sweep[s], r))
        .collect::<Result<Vec<_>>>()?;
    Ok(with_means(raw.into_iter().flatten().collect()))
}

/// Appends mean rows and sorts by sweep, estimator, replicate, metric.
fn with_means(mut records: Vec<ExperimentRecord>) -> Vec<ExperimentRecord> {
    records.sort_by(ExperimentRecord::sort_key_cmp);
    let mut means = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let head = &records[i];
        let group: Vec<&ExperimentRecord> = records[i..]
            .iter()
            .take_while(|r| r.sweep == head.sweep && r.estimator == head.estimator)
            .collect();
        for metric in Metric::ALL {
            let values: Vec<f64> = group.iter().filter(|r| r.metric == metric).map(|r| r.value).collect();
            if !values.is_empty() {
                means.push(ExperimentRecord {
                    sweep: head.sweep,
                    estimator: head.estimator,
                    replicate: None,
                    metric,
                    value: values.iter().sum::<f64>() / values.len() as f64,
                    diagnostics: None,
                });
            }
        }
        i += group.len();
    }
    records.extend(means);
    records.sort_by(ExperimentRecord::sort_key_cmp);
    records
}

fn estimate(cfg: &ExperimentConfig, estimator: Estimator, counts: &CountGrid) -> Result<(PmfGrid, Option<FitResult>)> {
    match cfg.solver_for(estimator) {
        None => Ok((empirical_pmf(counts)?, None)),
        Some(opts) => {
            let fit = fit_mle(counts, &opts)?;
            Ok((fit.p_hat.clone(), Some(fit)))
        }
    }
}

/// Grid experiments: `H^2(p*, p_hat)` for every estimator, sweeping either
/// the sample size or the grid size.
pub fn run_grid_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if !matches!(cfg.kind, ExperimentKind::GridVaryN | ExperimentKind::GridVaryGridSize) {
        return Err(Error::InvalidParameters(format!("{:?} is not a grid experiment", cfg.kind)));
    }
    run_tasks(cfg, |s, x, r| {
        let (n, total) = match cfg.kind {
            ExperimentKind::GridVaryN => (cfg.grid_size, x as u64),
            _ => (x as usize, cfg.sample_size),
        };
        let truth = make_supermodular_pmf(n, cfg.log_l.exp())?;
        let counts = sample_multinomial(&truth, total, &mut task_rng(cfg, s, r))?;
        let mut out = Vec::new();
        for &est in &cfg.estimators {
            let (p_hat, fit) = estimate(cfg, est, &counts)?;
            let h2 = hellinger_sq(&truth, &p_hat)?;
            out.push(
                ExperimentRecord::raw(x, est, r, Metric::H2Truth, h2)
                    .with(fit.as_ref().map(|f| RecordDiagnostics::of(f, n))),
            );
        }
        Ok(out)
    })
}

fn density_estimate(
    cfg: &ExperimentConfig,
    estimator: Estimator,
    samples: &crate::density::SamplePoints,
    n: usize,
) -> Result<(PiecewiseConstantDensity, Option<RecordDiagnostics>)> {
    match cfg.solver_for(estimator) {
        None => Ok((empirical_density(samples, n)?, None)),
        Some(opts) => {
            let fit = fit_density(samples, n, &opts)?;
            let diag = RecordDiagnostics::of(&fit.fit, n);
            Ok((fit.density, Some(diag)))
        }
    }
}

/// Continuous experiments on the truncated Gaussian.
///
/// Oracle mode fits at every configured grid size and keeps the smallest
/// `H^2(rho_hat, rho*)` (ties go to the smaller grid). Fixed-scaling mode
/// uses `n = ceil(C N^(1/(2 beta + 1)))` and records both the variance part
/// `H^2(rho_hat, rho_bar)` and the full distance.
pub fn run_density_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if !matches!(cfg.kind, ExperimentKind::DensityOracle | ExperimentKind::DensityFixedScaling) {
        return Err(Error::InvalidParameters(format!("{:?} is not a density experiment", cfg.kind)));
    }
    let spec = TruncatedGaussianSpec::default();
    let truth = spec.density()?;
    let c = cfg.scaling_constant.unwrap_or_else(|| default_scaling_constant(cfg.beta));
    run_tasks(cfg, |s, x, r| {
        let samples = sample_truncated_gaussian(&spec, x as usize, &mut task_rng(cfg, s, r))?;
        let mut out = Vec::new();
        match cfg.kind {
            ExperimentKind::DensityOracle => {
                for &est in &cfg.estimators {
                    let mut best: Option<(f64, usize, Option<RecordDiagnostics>)> = None;
                    for &n in &cfg.oracle_grid_sizes {
                        let (rho_hat, diag) = density_estimate(cfg, est, &samples, n)?;
                        let h2 = hellinger_sq_continuous(&rho_hat, &truth, cfg.quad_tol)?;
                        let better = match &best {
                            None => true,
                            Some((b, bn, _)) => h2 < *b || (h2 == *b && n < *bn),
                        };
                        if better {
                            best = Some((h2, n, diag));
                        }
                    }
                    let (h2, n, diag) = best.expect("nonempty grid list");
                    out.push(ExperimentRecord::raw(x, est, r, Metric::H2Truth, h2).with(diag));
                    out.push(ExperimentRecord::raw(x, est, r, Metric::SelectedN, n as f64));
                }
            }
            _ => {
                let n = fixed_scaling_grid_size(x as u64, c, cfg.beta)?;
                let bar = cell_average_density(&truth, n, cfg.quad_tol)?;
                for &est in &cfg.estimators {
                    let (rho_hat, diag) = density_estimate(cfg, est, &samples, n)?;
                    let variance = hellinger_sq_pc(&rho_hat, &bar)?;
                    let full = hellinger_sq_continuous(&rho_hat, &truth, cfg.quad_tol)?;
                    out.push(ExperimentRecord::raw(x, est, r, Metric::H2VariancePart, variance).with(diag));
                    out.push(ExperimentRecord::raw(x, est, r, Metric::H2Truth, full).with(diag));
                }
            }
        }
        Ok(out)
    })
}

/// Wall-clock seconds per fit on the grid family. Runs sequentially so the
/// timings do not compete for cores.
pub fn run_runtime_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if cfg.kind != ExperimentKind::Runtime {
        return Err(Error::InvalidParameters(format!("{:?} is not a runtime experiment", cfg.kind)));
    }
    cfg.validate()?;
    let mut records = Vec::new();
    for (s, &x) in cfg.sweep.iter().enumerate() {
        let (n, total) = match cfg.runtime_axis {
            RuntimeAxis::GridSize => (x as usize, cfg.sample_size),
            RuntimeAxis::SampleSize => (cfg.grid_size, x as u64),
        };
        let truth = make_supermodular_pmf(n, cfg.log_l.exp())?;
        for r in 0..cfg.replicates {
            let counts = sample_multinomial(&truth, total, &mut task_rng(cfg, s, r))?;
            for &est in &cfg.estimators {
                let start = Instant::now();
                let (_, fit) = estimate(cfg, est, &counts)?;
                let secs = start.elapsed().as_secs_f64();
                records.push(
                    ExperimentRecord::raw(x, est, r, Metric::RuntimeSeconds, secs)
                        .with(fit.as_ref().map(|f| RecordDiagnostics::of(f, n))),
                );
            }
        }
    }
    Ok(with_means(records))
}

/// Output of [`loglog_slope`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    /// Smallest and largest x that entered the fit.
    pub range: (f64, f64),
    pub residual_rms: f64,
    pub points: usize,
}

/// Least-squares fit of `log y = intercept + slope log x` over the points
/// with `x` in the inclusive `range`.
pub fn loglog_slope(xs: &[f64], ys: &[f64], range: Option<(f64, f64)>) -> Result<RegressionResult> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: (xs.len(), 1),
            found: (ys.len(), 1),
        });
    }
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, _)| range.is_none_or(|(lo, hi)| **x >= lo && **x <= hi))
        .map(|(&x, &y)| (x, y))
        .collect();
    if pts.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0)) {
        return Err(Error::InvalidParameters("log-log regression needs positive values".into()));
    }
    if pts.len() < 2 {
        return Err(Error::DegenerateRegression(format!("{} point(s) in range", pts.len())));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateRegression("all x values are equal".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(RegressionResult {
        slope,
        intercept,
        range: (lo, hi),
        residual_rms: (rss / m).sqrt(),
        points: pts.len(),
    })
}

/// `(sweep, mean value)` pairs for one estimator and metric, by sweep.
pub fn mean_series(records: &[ExperimentRecord], estimator: Estimator, metric: Metric) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.replicate.is_none() && r.estimator == estimator && r.metric == metric)
        .map(|r| (r.sweep, r.value))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Log-log slope of the mean series.
pub fn series_slope(
    records: &[ExperimentRecord],
    estimator: Estimator,
    metric: Metric,
    range: Option<(f64, f64)>,
) -> Result<RegressionResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = mean_series(records, estimator, metric).into_iter().unzip();
    loglog_slope(&xs, &ys, range)
}

pub const CSV_HEADER: &str = "sweep,estimator,replicate,metric,value";

/// `sweep,estimator,replicate,metric,value` rows; mean rows carry `mean` as
/// the replicate. Floats use the shortest representation that reads back
/// exactly.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], mut writer: W) -> Result<()> {
    let mut text = String::with_capacity(64 * (records.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in records {
        let rep = r.replicate.map_or_else(|| "mean".to_string(), |v| v.to_string());
        text.push_str(&format!("{},{},{},{},{}\n", r.sweep, r.estimator, rep, r.metric, r.value));
    }
    writer
        .write_all(text.as_bytes())
        .map_err(|e| Error::Parse(format!("write failed: {e}")))
}

/// Parses [`write_csv`] output. Diagnostics are not part of the CSV.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let replicate = match &row[2] {
            "mean" => None,
            s => Some(s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")))?),
        };
        out.push(ExperimentRecord {
            sweep: parse_f64(&row[0])?,
            estimator: row[1].parse()?,
            replicate,
            metric: row[3].parse()?,
            value: parse_f64(&row[4])?,
            diagnostics: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes records as CSV, or as JSON together with the config and seed.
pub fn emit(records: &[ExperimentRecord], cfg: &ExperimentConfig, format: OutputFormat, path: &Path) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write_csv(records, std::io::BufWriter::new(file))
        }
        OutputFormat::Json => crate::io::save_json(
            &ExperimentOutput {
                config: cfg.clone(),
                rng_algorithm: RNG_ALGORITHM.to_string(),
                seed_base: cfg.seed_base,
                records: records.to_vec(),
            },
            path,
        ),
    }
}

/// The ground truth used by the density experiments.
pub fn density_truth() -> Result<AnalyticDensity> {
    TruncatedGaussianSpec::default().density()
}
