//! Non-learnable transforms applied to every input window: instance
//! normalization, moving-average trend/seasonal decomposition and patching.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};

use crate::{Error, Result, Scalar};

/// Floor on per-instance standard deviations.
pub const INSTANCE_EPS: f64 = 1e-5;

/// Per-(instance, channel) statistics removed by [`instance_normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats<T> {
    /// `B × C`
    pub mean: Array2<T>,
    /// `B × C`, every entry ≥ [`INSTANCE_EPS`]
    pub std: Array2<T>,
}

impl<T: Scalar> InstanceStats<T> {
    /// Zero mean, unit std: denormalization is the identity.
    pub fn identity(batch: usize, channels: usize) -> Self {
        Self {
            mean: Array2::zeros((batch, channels)),
            std: Array2::ones((batch, channels)),
        }
    }
}

pub fn instance_normalize<T: Scalar>(x: ArrayView3<'_, T>) -> (Array3<T>, InstanceStats<T>) {
    let (b, t, c) = x.dim();
    let n = T::of(t as f64);
    let eps = T::of(INSTANCE_EPS);
    let mut mean = Array2::zeros((b, c));
    let mut std = Array2::zeros((b, c));
    let mut out = x.to_owned();
    for bi in 0..b {
        for ci in 0..c {
            let col = x.slice(s![bi, .., ci]);
            let m = col.fold(T::zero(), |acc, &v| acc + v) / n;
            let var = col.fold(T::zero(), |acc, &v| acc + (v - m) * (v - m)) / n;
            let sd = var.sqrt().max(eps);
            mean[[bi, ci]] = m;
            std[[bi, ci]] = sd;
            out.slice_mut(s![bi, .., ci]).mapv_inplace(|v| (v - m) / sd);
        }
    }
    (out, InstanceStats { mean, std })
}

/// `y · std + mean` per (instance, channel); `y` may have any length `L`.
pub fn instance_denormalize<T: Scalar>(y: ArrayView3<'_, T>, stats: &InstanceStats<T>) -> Array3<T> {
    let mut out = y.to_owned();
    for (bi, mut inst) in out.axis_iter_mut(Axis(0)).enumerate() {
        for mut row in inst.rows_mut() {
            for (ci, v) in row.iter_mut().enumerate() {
                *v = *v * stats.std[[bi, ci]] + stats.mean[[bi, ci]];
            }
        }
    }
    out
}

/// Trend and seasonal parts of a window; `trend + seasonal == input`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedWindow<T> {
    pub trend: Array3<T>,
    pub seasonal: Array3<T>,
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::config("kernel", format!("moving-average kernel must be odd and ≥ 1, got {kernel}")));
    }
    Ok(())
}

/// Centered moving average along each row, with the first/last value
/// repeated `(kernel − 1)/2` times at either end.
pub fn moving_average_rows<T: Scalar>(rows: ArrayView2<'_, T>, kernel: usize) -> Result<Array2<T>> {
    check_kernel(kernel)?;
    let (n_rows, len) = rows.dim();
    let half = (kernel / 2) as isize;
    let inv = T::one() / T::of(kernel as f64);
    let last = len as isize - 1;
    let mut out = Array2::zeros((n_rows, len));
    for (src, mut dst) in rows.rows().into_iter().zip(out.rows_mut()) {
        for t in 0..len as isize {
            let mut acc = T::zero();
            for o in -half..=half {
                acc += src[(t + o).clamp(0, last) as usize];
            }
            dst[t as usize] = acc * inv;
        }
    }
    Ok(out)
}

pub fn decompose<T: Scalar>(x: ArrayView3<'_, T>, kernel: usize) -> Result<DecomposedWindow<T>> {
    let (b, t, c) = x.dim();
    let rows = to_series(x);
    let trend_rows = moving_average_rows(rows.view(), kernel)?;
    let trend = from_series(trend_rows.view(), b, c);
    debug_assert_eq!(trend.dim(), (b, t, c));
    let seasonal = &x - &trend;
    Ok(DecomposedWindow { trend, seasonal })
}

/// Number of patches for lookback `t`, patch length `p` and stride `s`.
pub fn patch_count(t: usize, p: usize, s: usize) -> usize {
    (t - p) / s + 2
}

/// Overlapping patches of a zero-padded window.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet<T> {
    /// `B × C × N × P`
    pub patches: Array4<T>,
    pub patch_len: usize,
    pub stride: usize,
    pub count: usize,
}

impl<T> PatchSet<T> {
    pub fn padded_len(&self) -> usize {
        (self.count - 1) * self.stride + self.patch_len
    }
}

pub fn check_patch_geometry(t: usize, p: usize, s: usize) -> Result<()> {
    if p == 0 || s == 0 {
        return Err(Error::config("patch_len", "patch length and stride must be ≥ 1"));
    }
    if p > t {
        return Err(Error::config("patch_len", format!("patch length {p} exceeds lookback {t}")));
    }
    Ok(())
}

pub fn patch<T: Scalar>(x: ArrayView3<'_, T>, p: usize, s: usize) -> Result<PatchSet<T>> {
    let (b, t, c) = x.dim();
    check_patch_geometry(t, p, s)?;
    let rows = to_series(x);
    let flat = patch_rows(rows.view(), p, s);
    let n = patch_count(t, p, s);
    let patches = flat.into_shape_with_order((b, c, n, p)).expect("patch layout");
    Ok(PatchSet {
        patches,
        patch_len: p,
        stride: s,
        count: n,
    })
}

/// Patches each series row; output row `r·N + j` is patch `j` of series `r`.
pub(crate) fn patch_rows<T: Scalar>(rows: ArrayView2<'_, T>, p: usize, s: usize) -> Array2<T> {
    let (n_rows, t) = rows.dim();
    let n = patch_count(t, p, s);
    let mut out = Array2::zeros((n_rows * n, p));
    for (r, src) in rows.rows().into_iter().enumerate() {
        for j in 0..n {
            let start = j * s;
            let mut dst = out.row_mut(r * n + j);
            for k in 0..p {
                let idx = start + k;
                if idx < t {
                    dst[k] = src[idx];
                }
            }
        }
    }
    out
}

/// `B × L × C` → `(B·C) × L`, row `b·C + c` holding one channel's series.
pub fn to_series<T: Scalar>(x: ArrayView3<'_, T>) -> Array2<T> {
    let (b, l, c) = x.dim();
    let permuted = x.permuted_axes([0, 2, 1]);
    let mut out = Array2::zeros((b * c, l));
    for bi in 0..b {
        for ci in 0..c {
            out.row_mut(bi * c + ci).assign(&permuted.slice(s![bi, ci, ..]));
        }
    }
    out
}

/// Inverse of [`to_series`].
pub fn from_series<T: Scalar>(rows: ArrayView2<'_, T>, b: usize, c: usize) -> Array3<T> {
    let l = rows.ncols();
    let mut out = Array3::zeros((b, l, c));
    for bi in 0..b {
        for ci in 0..c {
            out.slice_mut(s![bi, .., ci]).assign(&rows.row(bi * c + ci));
        }
    }
    out
}
