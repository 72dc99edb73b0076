//! `mtp2`: generate data, fit MTP2 estimators and run the benchmark sweeps.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or input, 3 for IO
//! failures. Solver non-convergence is reported in the diagnostics only.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use mtp2_core::density::{
    cell_average_density, fixed_scaling_grid_size, select_grid_size_with, LogTerm, DEFAULT_QUAD_TOL,
};
use mtp2_core::experiment::{
    series_slope, write_csv, ExperimentOutput, OutputFormat, RuntimeAxis,
};
use mtp2_core::io::{load_counts, load_grid, load_samples, write_grid_csv, write_samples_csv, GridEnvelope};
use mtp2_core::solver::DEFAULT_EPSILON;
use mtp2_core::synth::RNG_ALGORITHM;
use mtp2_core::{
    fit_density, fit_mle, hellinger_sq_continuous, hellinger_sq_pc, make_supermodular_pmf, project,
    run_experiment, sample_multinomial, sample_truncated_gaussian, AnalyticDensity, BoxBounds,
    ExperimentConfig, ExperimentKind, InnerMethod, Metric, ProjectionOptions, Schedule, SeededRng, SolverOptions,
    TruncatedGaussianSpec, Variant, WeightGrid,
};

#[derive(Parser)]
#[command(name = "mtp2", version, about = "MTP2 maximum-likelihood estimation on grids and on the unit square")]
struct Cli {
    /// Seed for data generation, or the seed base of a benchmark.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file. Without it the main output goes to stdout and the
    /// metadata or diagnostics JSON to stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for benchmark replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use the full published sweeps instead of the workstation presets.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic data.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Fit an MTP2 estimator to a grid of counts.
    FitGrid {
        /// Counts as a headerless CSV grid or a JSON envelope.
        counts: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Where to write the diagnostics JSON (default: next to --out).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Estimate a density on the unit square from two-column samples.
    FitDensity(FitDensityArgs),
    /// Weighted projection onto the supermodular cone, optionally within a box.
    Project(ProjectArgs),
    /// Run a benchmark sweep and write its records.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenCommand {
    /// Counts from the supermodular grid family.
    Grid {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        log_l: f64,
        /// Number of observations.
        #[arg(long)]
        total: u64,
    },
    /// Points from the truncated Gaussian on the unit square.
    Points {
        #[arg(long)]
        total: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Mle,
    Box,
    Lb,
}

#[derive(Args)]
struct SolverArgs {
    /// mle, box or lb (default: mle for grids, lb for densities).
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Floor of the lower-bounded variant.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Relative change stopping the projection.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Relative change stopping the Newton iteration.
    #[arg(long)]
    outer_tol: Option<f64>,
    /// Sweep cap per projection.
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
}

impl SolverArgs {
    fn options(&self, default_variant: VariantArg) -> SolverOptions {
        let variant = match self.variant.unwrap_or(default_variant) {
            VariantArg::Mle => Variant::Unconstrained,
            VariantArg::Box => Variant::BoxConstrained,
            VariantArg::Lb => Variant::LowerBounded { epsilon: self.epsilon },
        };
        let mut opts = SolverOptions::new(variant);
        if let Some(v) = self.inner_tol {
            opts.inner.rel_tol = v;
        }
        if let Some(v) = self.outer_tol {
            opts.outer_rel_tol = v;
        }
        if let Some(v) = self.max_inner {
            opts.inner.max_sweeps = v;
        }
        if let Some(v) = self.max_outer {
            opts.max_outer = v;
        }
        opts
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Truth {
    TruncatedGaussian,
    Uniform,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("size").required(true).args(["n", "auto_n", "fixed_scaling"])))]
struct FitDensityArgs {
    /// Samples as a headerless `x,y` CSV.
    samples: PathBuf,
    /// Cells per side.
    #[arg(long)]
    n: Option<usize>,
    /// Choose the grid size from the smoothness class (beta, R) and dmin.
    #[arg(long)]
    auto_n: bool,
    /// `n = ceil(C N^(1/(2 beta + 1)))` with this C.
    #[arg(long, value_name = "C")]
    fixed_scaling: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Lower bound of the density (default: taken from --truth).
    #[arg(long)]
    dmin: Option<f64>,
    /// Use the log term with explicit constants and this failure probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Report Hellinger distances to this ground truth.
    #[arg(long, value_enum)]
    truth: Option<Truth>,
    #[arg(long, default_value_t = DEFAULT_QUAD_TOL)]
    quad_tol: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dykstra,
    InteriorPoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Coupled,
    Separate,
}

#[derive(Args)]
struct ProjectArgs {
    /// Grid to project, CSV or JSON envelope.
    y: PathBuf,
    /// Positive weights of the same shape (default: all ones).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, requires = "upper")]
    lower: Option<PathBuf>,
    #[arg(long, requires = "lower")]
    upper: Option<PathBuf>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Dykstra)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Coupled)]
    schedule: ScheduleArg,
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchKind {
    GridN,
    GridSize,
    DensityOracle,
    DensityScaling,
    Runtime,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    SampleSize,
    GridSize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    kind: BenchKind,
    /// Start from this JSON config instead of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated subset of empirical, mle, box, lb.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    sample_size: Option<u64>,
    #[arg(long)]
    log_l: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    scaling_constant: Option<f64>,
    /// Comma-separated grid sizes tried by the oracle.
    #[arg(long, value_delimiter = ',')]
    oracle_sizes: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Regression range as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    range: Option<Vec<f64>>,
}

/// Errors that map to exit code 3.
fn is_io(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some()
            || matches!(e.downcast_ref::<mtp2_core::Error>(), Some(mtp2_core::Error::Io { .. }))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // core errors already embed their source in the message
            let mut msg = err.to_string();
            for cause in err.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(if is_io(&err) { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!(mtp2_core::Error::InvalidParameters("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| mtp2_core::Error::InvalidParameters(e.to_string()))?;
    }
    let out = Output {
        path: cli.out.clone(),
        format: cli.format,
    };
    match &cli.command {
        Command::Gen(gen) => generate(gen, cli.seed.unwrap_or(0), &out),
        Command::FitGrid {
            counts,
            solver,
            diagnostics,
        } => {
            let y = load_counts(counts)?;
            let fit = fit_mle(&y, &solver.options(VariantArg::Mle))?;
            out.grid(fit.p_hat.mass())?;
            out.sidecar(diagnostics.as_deref(), "diagnostics", &fit.diagnostics)
        }
        Command::FitDensity(args) => fit_density_command(args, &out),
        Command::Project(args) => project_command(args, &out),
        Command::Bench(args) => bench(args, &cli, &out),
    }
}

struct Output {
    path: Option<PathBuf>,
    format: Format,
}

impl Output {
    fn write_bytes(&self, bytes: &[u8]) -> anyhow::Result<()> {
        match &self.path {
            Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
            None => std::io::stdout().write_all(bytes).context("writing to stdout"),
        }
    }

    fn grid<T: std::fmt::Display + Clone + Serialize>(&self, grid: &Array2<T>) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        match self.format {
            Format::Csv => write_grid_csv(grid, &mut buf)?,
            Format::Json => {
                serde_json::to_writer(&mut buf, &GridEnvelope::from_array(grid))?;
                buf.push(b'\n');
            }
        }
        self.write_bytes(&buf)
    }

    /// Writes `value` to `explicit`, else to `<out>.<suffix>.json`, else to stderr.
    fn sidecar<T: Serialize>(&self, explicit: Option<&Path>, suffix: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| self.path.as_ref().map(|p| p.with_extension(format!("{suffix}.json"))));
        match path {
            Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
            None => std::io::stderr().write_all(text.as_bytes()).context("writing to stderr"),
        }
    }
}

fn generate(gen: &GenCommand, seed: u64, out: &Output) -> anyhow::Result<()> {
    let mut rng = SeededRng::new(seed);
    match *gen {
        GenCommand::Grid { n, log_l, total } => {
            if !(log_l >= 0.0) {
                bail!(mtp2_core::Error::InvalidParameters(format!("--log-l must be >= 0, got {log_l}")));
            }
            let p = make_supermodular_pmf(n, log_l.exp())?;
            let counts = sample_multinomial(&p, total, &mut rng)?;
            out.grid(counts.counts())?;
            let meta = json!({
                "generator": "supermodular_grid",
                "n": n,
                "log_l": log_l,
                "total": total,
                "seed": seed,
                "rng_algorithm": RNG_ALGORITHM,
            });
            out.sidecar(None, "meta", &meta)
        }
        GenCommand::Points { total } => {
            let spec = TruncatedGaussianSpec::default();
            let samples = sample_truncated_gaussian(&spec, total, &mut rng)?;
            let mut buf = Vec::new();
            write_samples_csv(&samples, &mut buf)?;
            out.write_bytes(&buf)?;
            let meta = json!({
                "generator": "truncated_gaussian",
                "mean": spec.mean,
                "cov": spec.cov,
                "total": total,
                "seed": seed,
                "rng_algorithm": RNG_ALGORITHM,
            });
            out.sidecar(None, "meta", &meta)
        }
    }
}

fn truth_density(truth: Truth) -> mtp2_core::Result<AnalyticDensity> {
    match truth {
        Truth::TruncatedGaussian => TruncatedGaussianSpec::default().density(),
        Truth::Uniform => Ok(AnalyticDensity::uniform()),
    }
}

fn fit_density_command(args: &FitDensityArgs, out: &Output) -> anyhow::Result<()> {
    let samples = load_samples(&args.samples)?;
    let truth = args.truth.map(truth_density).transpose()?;
    let total = samples.len() as u64;
    let n = if let Some(n) = args.n {
        n
    } else if let Some(c) = args.fixed_scaling {
        fixed_scaling_grid_size(total, c, args.beta)?
    } else {
        let dmin = match (args.dmin, &truth) {
            (Some(d), _) => d,
            (None, Some(rho)) => rho.bounds().0.context("the ground truth has no known lower bound")?,
            (None, None) => bail!(mtp2_core::Error::InvalidParameters("--auto-n needs --dmin or --truth".into())),
        };
        let log_term = args.delta.map_or(LogTerm::Simple, |delta| LogTerm::Explicit { delta });
        select_grid_size_with(total, args.beta, args.r, dmin, log_term)?
    };
    let opts = args.solver.options(VariantArg::Lb);
    let fit = fit_density(&samples, n, &opts)?;
    out.grid(&fit.density.values())?;

    let (mut to_truth, mut variance_part) = (None, None);
    if let Some(rho) = &truth {
        to_truth = Some(hellinger_sq_continuous(&fit.density, rho, args.quad_tol)?);
        let bar = cell_average_density(rho, n, args.quad_tol)?;
        variance_part = Some(hellinger_sq_pc(&fit.density, &bar)?);
    }
    let meta = json!({
        "n": n,
        "N": total,
        "variant": opts.variant.name(),
        "truth": truth.as_ref().map(|r| r.name()),
        "h2_to_truth": to_truth,
        "h2_variance_part": variance_part,
        "diagnostics": fit.fit.diagnostics,
    });
    out.sidecar(args.meta.as_deref(), "meta", &meta)
}

fn project_command(args: &ProjectArgs, out: &Output) -> anyhow::Result<()> {
    let y: Array2<f64> = load_grid(&args.y)?;
    let weights = match &args.weights {
        Some(p) => WeightGrid::new(load_grid(p)?)?,
        None => WeightGrid::ones(y.nrows(), y.ncols()),
    };
    let bounds = match (&args.lower, &args.upper) {
        (Some(lo), Some(hi)) => Some(BoxBounds::new(load_grid(lo)?, load_grid(hi)?)?),
        _ => None,
    };
    let mut opts = ProjectionOptions {
        method: match args.method {
            MethodArg::Dykstra => InnerMethod::Dykstra,
            MethodArg::InteriorPoint => InnerMethod::InteriorPoint,
        },
        schedule: match args.schedule {
            ScheduleArg::Coupled => Schedule::Coupled,
            ScheduleArg::Separate => Schedule::Separate,
        },
        ..Default::default()
    };
    if let Some(v) = args.rel_tol {
        opts.rel_tol = v;
    }
    if let Some(v) = args.feas_tol {
        opts.feas_tol = v;
    }
    if let Some(v) = args.max_sweeps {
        opts.max_sweeps = v;
    }
    opts.validate()?;
    let (theta, diag) = project(&y, &weights, bounds.as_ref(), &opts)?;
    out.grid(&theta)?;
    out.sidecar(args.diagnostics.as_deref(), "diagnostics", &diag)
}

fn bench(args: &BenchArgs, cli: &Cli, out: &Output) -> anyhow::Result<()> {
    let kind = match args.kind {
        BenchKind::GridN => ExperimentKind::GridVaryN,
        BenchKind::GridSize => ExperimentKind::GridVaryGridSize,
        BenchKind::DensityOracle => ExperimentKind::DensityOracle,
        BenchKind::DensityScaling => ExperimentKind::DensityFixedScaling,
        BenchKind::Runtime => ExperimentKind::Runtime,
    };
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| mtp2_core::Error::Parse(format!("{}: {e}", path.display())))?;
            if cfg.kind != kind {
                bail!(mtp2_core::Error::InvalidParameters("the config file is for a different benchmark".into()));
            }
            cfg
        }
        None => ExperimentConfig::preset(kind, cli.paper_scale),
    };
    if let Some(axis) = args.axis {
        cfg.runtime_axis = match axis {
            AxisArg::SampleSize => RuntimeAxis::SampleSize,
            AxisArg::GridSize => RuntimeAxis::GridSize,
        };
        if args.sweep.is_none() && axis == AxisArg::SampleSize {
            cfg.sweep = vec![1e2, 1e3, 1e4, 1e5];
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed_base = seed;
    }
    if let Some(v) = &args.sweep {
        cfg.sweep = v.clone();
    }
    if let Some(v) = args.replicates {
        cfg.replicates = v;
    }
    if let Some(list) = &args.estimators {
        cfg.estimators = list.iter().map(|s| s.trim().parse()).collect::<mtp2_core::Result<_>>()?;
    }
    if let Some(v) = args.grid_size {
        cfg.grid_size = v;
    }
    if let Some(v) = args.sample_size {
        cfg.sample_size = v;
    }
    if let Some(v) = args.log_l {
        cfg.log_l = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if args.scaling_constant.is_some() {
        cfg.scaling_constant = args.scaling_constant;
    }
    if let Some(v) = &args.oracle_sizes {
        cfg.oracle_grid_sizes = v.clone();
    }
    if let Some(r) = &args.range {
        cfg.regression_range = Some((r[0], r[1]));
    }

    let records = run_experiment(&cfg)?;
    let format = match out.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    match &out.path {
        Some(path) => mtp2_core::experiment::emit(&records, &cfg, format, path)?,
        None => {
            let mut buf = Vec::new();
            match format {
                OutputFormat::Csv => write_csv(&records, &mut buf)?,
                OutputFormat::Json => {
                    let output = ExperimentOutput {
                        config: cfg.clone(),
                        rng_algorithm: RNG_ALGORITHM.to_string(),
                        seed_base: cfg.seed_base,
                        records: records.clone(),
                    };
                    serde_json::to_writer_pretty(&mut buf, &output)?;
                    buf.push(b'\n');
                }
            }
            out.write_bytes(&buf)?;
        }
    }

    // slope summary on stderr so stdout stays machine-readable
    let metric = match kind {
        ExperimentKind::DensityFixedScaling => Metric::H2VariancePart,
        ExperimentKind::Runtime => Metric::RuntimeSeconds,
        _ => Metric::H2Truth,
    };
    let range = cfg.effective_range();
    for estimator in &cfg.estimators {
        match series_slope(&records, *estimator, metric, Some(range)) {
            Ok(fit) => eprintln!(
                "{estimator}: {metric} slope {:.3} over [{}, {}] ({} points)",
                fit.slope, fit.range.0, fit.range.1, fit.points
            ),
            Err(e) => eprintln!("{estimator}: no slope ({e})"),
        }
    }
    Ok(())
}
