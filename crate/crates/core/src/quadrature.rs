//! Adaptive tensor-product Gauss-Kronrod cubature on rectangles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae (nonnegative half) and weights; the embedded
// 7-point Gauss rule uses the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Default cap on the number of subregions per integral.
pub const DEFAULT_MAX_REGIONS: usize = 4096;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    /// Cell `(i, j)` of the uniform `n x n` partition of the unit square.
    pub fn cell(n: usize, i: usize, j: usize) -> Self {
        let h = 1.0 / n as f64;
        Rect::new(i as f64 * h, (i + 1) as f64 * h, j as f64 * h, (j + 1) as f64 * h)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn quarters(&self) -> [Rect; 4] {
        let xm = 0.5 * (self.x0 + self.x1);
        let ym = 0.5 * (self.y0 + self.y1);
        [
            Rect::new(self.x0, xm, self.y0, ym),
            Rect::new(xm, self.x1, self.y0, ym),
            Rect::new(self.x0, xm, ym, self.y1),
            Rect::new(xm, self.x1, ym, self.y1),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub regions: usize,
}

/// Kronrod nodes on [-1, 1] with their Kronrod and Gauss weights.
fn nodes() -> [(f64, f64, f64); 15] {
    let mut out = [(0.0, 0.0, 0.0); 15];
    for k in 0..7 {
        let g = if k % 2 == 1 { WG[k / 2] } else { 0.0 };
        out[k] = (-XGK[k], WGK[k], g);
        out[14 - k] = (XGK[k], WGK[k], g);
    }
    out[7] = (0.0, WGK[7], WG[3]);
    out
}

/// Tensor 15x15 Kronrod estimate of `f` over `r`, with the tensor 7x7 Gauss
/// estimate as the error indicator.
pub fn gauss_kronrod_rect<F: Fn(f64, f64) -> f64>(f: &F, r: &Rect) -> (f64, f64) {
    let nodes = nodes();
    let (cx, hx) = (0.5 * (r.x0 + r.x1), 0.5 * (r.x1 - r.x0));
    let (cy, hy) = (0.5 * (r.y0 + r.y1), 0.5 * (r.y1 - r.y0));
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for &(u, wku, wgu) in &nodes {
        let x = cx + hx * u;
        let mut row_k = 0.0;
        let mut row_g = 0.0;
        for &(v, wkv, wgv) in &nodes {
            let fx = f(x, cy + hy * v);
            row_k += wkv * fx;
            row_g += wgv * fx;
        }
        kronrod += wku * row_k;
        gauss += wgu * row_g;
    }
    let scale = hx * hy;
    (kronrod * scale, ((kronrod - gauss) * scale).abs())
}

struct Region {
    rect: Rect,
    value: f64,
    error: f64,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Region {}

impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive integration: the region with the largest error estimate
/// is split into quarters until the summed estimate is at most `abs_tol`.
pub fn integrate<F: Fn(f64, f64) -> f64>(
    f: &F,
    rect: Rect,
    abs_tol: f64,
    max_regions: usize,
) -> Result<Estimate> {
    if !(abs_tol > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "quadrature tolerance must be > 0, got {abs_tol}"
        )));
    }
    let (value, error) = gauss_kronrod_rect(f, &rect);
    if !value.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "non-finite integrand on {rect:?}"
        )));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Region { rect, value, error });
    let (mut total, mut total_err) = (value, error);
    let mut regions = 1;
    while total_err > abs_tol {
        if regions + 3 > max_regions {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {total_err:.3e} above {abs_tol:.3e} after {regions} regions"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        total -= worst.value;
        total_err -= worst.error;
        for q in worst.rect.quarters() {
            let (value, error) = gauss_kronrod_rect(f, &q);
            if !value.is_finite() {
                return Err(Error::QuadratureFailure(format!(
                    "non-finite integrand on {q:?}"
                )));
            }
            total += value;
            total_err += error;
            heap.push(Region { rect: q, value, error });
        }
        regions += 3;
        // recompute to shed accumulated cancellation in the running sums
        if regions % 256 == 1 {
            total = heap.iter().map(|r| r.value).sum();
            total_err = heap.iter().map(|r| r.error).sum();
        }
    }
    Ok(Estimate {
        value: total,
        error: total_err.max(0.0),
        regions,
    })
}
