//! Ground-truth families and seeded samplers.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{cell_average_density, AnalyticDensity, SamplePoints};
use crate::error::{Error, Result};
use crate::grid::{is_mtp2, CountGrid, MinorReport, PmfGrid};

/// Identifier written into experiment metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

/// ChaCha8 stream selected by a 64-bit seed and a stream index.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            inner,
            seed,
            stream,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `0..n` without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // Lemire's multiply-and-reject
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = self.next_u64() as u128 * n as u128;
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// A pair of independent standard normals (Marsaglia polar method).
    pub fn normal_pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                return (u * k, v * k);
            }
        }
    }
}

/// Vose alias table for O(1) categorical draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameters(
                "alias table needs finite nonnegative weights with positive sum".into(),
            ));
        }
        let k = weights.len();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * k as f64 / total).collect();
        let mut prob = vec![1.0; k];
        let mut alias: Vec<usize> = (0..k).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..k).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let i = rng.below(self.prob.len() as u64) as usize;
        if rng.uniform() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Softmax of `1 + log(L) i j / (n - 1)^2` on an `n x n` grid (zero-based).
pub fn make_supermodular_pmf(n: usize, l: f64) -> Result<PmfGrid> {
    if n < 2 || !(l >= 1.0) || !l.is_finite() {
        return Err(Error::InvalidParameters(format!(
            "need n >= 2 and finite L >= 1, got n = {n}, L = {l}"
        )));
    }
    let log_l = l.ln();
    let denom = ((n - 1) * (n - 1)) as f64;
    let theta = Array2::from_shape_fn((n, n), |(i, j)| 1.0 + log_l * (i * j) as f64 / denom);
    let max = theta.fold(f64::NEG_INFINITY, |m, &t| m.max(t));
    PmfGrid::from_weights(theta.mapv(|t| (t - max).exp()))
}

/// Counts of `total` independent draws from `p`.
pub fn sample_multinomial(p: &PmfGrid, total: u64, rng: &mut SeededRng) -> Result<CountGrid> {
    let (rows, cols) = p.dim();
    let mut counts = Array2::<u64>::zeros((rows, cols));
    if total > 0 {
        let flat: Vec<f64> = p.mass().iter().copied().collect();
        let table = AliasTable::new(&flat)?;
        let slice = counts.as_slice_mut().expect("standard layout");
        for _ in 0..total {
            slice[table.sample(rng)] += 1;
        }
    }
    CountGrid::new(counts)
}

/// Bivariate Gaussian restricted to the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussianSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Default for TruncatedGaussianSpec {
    fn default() -> Self {
        TruncatedGaussianSpec {
            mean: [0.5, 0.5],
            cov: [[0.2, 0.1], [0.1, 0.2]],
        }
    }
}

impl TruncatedGaussianSpec {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let spec = TruncatedGaussianSpec { mean, cov };
        let det = spec.det();
        if cov[0][1] != cov[1][0] || !(cov[0][0] > 0.0) || !(det > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "covariance must be symmetric positive definite, got {cov:?}"
            )));
        }
        Ok(spec)
    }

    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    /// Untruncated Gaussian density.
    pub fn gaussian_pdf(&self, x: f64, y: f64) -> f64 {
        let det = self.det();
        let (a, b) = (x - self.mean[0], y - self.mean[1]);
        let q = (self.cov[1][1] * a * a - 2.0 * self.cov[0][1] * a * b + self.cov[0][0] * b * b) / det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    /// `d^2 log rho / dx dy`, constant for a Gaussian.
    pub fn log_mixed_partial(&self) -> f64 {
        self.cov[0][1] / self.det()
    }

    /// Lower Cholesky factor `[[l11, 0], [l21, l22]]`.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.cov[0][0].sqrt();
        let l21 = self.cov[1][0] / l11;
        let l22 = (self.cov[1][1] - l21 * l21).sqrt();
        (l11, l21, l22)
    }

    /// One draw from the untruncated Gaussian.
    pub fn propose(&self, rng: &mut SeededRng) -> (f64, f64) {
        let (l11, l21, l22) = self.cholesky();
        let (z1, z2) = rng.normal_pair();
        (self.mean[0] + l11 * z1, self.mean[1] + l21 * z1 + l22 * z2)
    }

    /// The truncated density, normalized by quadrature.
    pub fn density(&self) -> Result<AnalyticDensity> {
        let spec = *self;
        let mut rho = AnalyticDensity::new("truncated_gaussian", Arc::new(move |x, y| spec.gaussian_pdf(x, y)))?;
        // the quadratic form is convex, so the minimum over the square sits at a corner
        let corner_min = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| spec.gaussian_pdf(x, y))
            .fold(f64::INFINITY, f64::min);
        let inside = spec.mean.iter().all(|m| (0.0..=1.0).contains(m));
        let z = rho.normalizer();
        let dmax = inside.then(|| spec.gaussian_pdf(spec.mean[0], spec.mean[1]) / z);
        rho.set_bounds(Some(corner_min / z), dmax);
        Ok(rho)
    }
}

/// Rejection sampler: Gaussian draws are kept when they land in the unit square.
pub fn sample_truncated_gaussian(
    spec: &TruncatedGaussianSpec,
    total: usize,
    rng: &mut SeededRng,
) -> Result<SamplePoints> {
    let mut points = Vec::with_capacity(total);
    while points.len() < total {
        let (x, y) = spec.propose(rng);
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            points.push((x, y));
        }
    }
    SamplePoints::new(points)
}

/// Minors of the cell-averaged discretization; a cheap check that a ground
/// truth is MTP2 before it is used in a benchmark.
pub fn validate_mtp2_generator(density: &AnalyticDensity, n: usize) -> Result<MinorReport> {
    let cells = cell_average_density(density, n, 1e-11)?;
    is_mtp2(cells.cells(), 0.0)
}
