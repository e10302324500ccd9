//! Building blocks of the forward pass.
//!
//! Series-level tensors use the row layout of [`crate::preprocess::to_series`]:
//! a `(B·C) × L` matrix whose row `b·C + c` is channel `c` of instance `b`.

use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView2, ArrayView4, Axis, Zip};

use super::MlpHead;
use crate::tensor::Linear;
use crate::{Error, Result, Scalar};

/// Output lengths of the `heads` prediction heads: `g, 2g, …, F` with `g = F / heads`.
pub fn granularity_schedule(horizon: usize, heads: usize) -> Result<Vec<usize>> {
    if heads == 0 || horizon == 0 {
        return Err(Error::config("heads", "heads and horizon must be ≥ 1"));
    }
    if !horizon.is_multiple_of(heads) {
        return Err(Error::config(
            "heads",
            format!("heads ({heads}) must divide horizon ({horizon})"),
        ));
    }
    let g = horizon / heads;
    Ok((1..=heads).map(|i| g * i).collect())
}

/// Endpoint-aligned linear interpolation weights, `src_len × dst_len`.
///
/// Output index `j` samples source coordinate `j·(src_len − 1)/(dst_len − 1)`.
pub fn interpolation_matrix<T: Scalar>(src_len: usize, dst_len: usize) -> Array2<T> {
    assert!(src_len >= 1 && dst_len >= 1);
    let mut m = Array2::zeros((src_len, dst_len));
    if src_len == 1 || dst_len == 1 {
        m.row_mut(0).fill(T::one());
        return m;
    }
    let scale_num = (src_len - 1) as f64;
    let scale_den = (dst_len - 1) as f64;
    for j in 0..dst_len {
        let pos = (j as f64) * scale_num / scale_den;
        let lo = (pos.floor() as usize).min(src_len - 1);
        let frac = pos - lo as f64;
        if frac == 0.0 || lo == src_len - 1 {
            m[[lo, j]] = T::one();
        } else {
            m[[lo, j]] = T::of(1.0 - frac);
            m[[lo + 1, j]] = T::of(frac);
        }
    }
    m
}

/// Upsamples each row from `G` to `F` samples by linear interpolation.
pub fn upsample<T: Scalar>(rows: ArrayView2<'_, T>, target_len: usize) -> Array2<T> {
    rows.dot(&interpolation_matrix::<T>(rows.ncols(), target_len))
}

/// Adaptive average pooling weights, `src_len × dst_len`: output bin `k`
/// averages source indices `[⌊k·F/G⌋, ⌈(k+1)·F/G⌉)`.
pub fn pooling_matrix<T: Scalar>(src_len: usize, dst_len: usize) -> Array2<T> {
    assert!(dst_len >= 1 && dst_len <= src_len);
    let mut m = Array2::zeros((src_len, dst_len));
    for k in 0..dst_len {
        let start = k * src_len / dst_len;
        let end = ((k + 1) * src_len).div_ceil(dst_len);
        let w = T::one() / T::of((end - start) as f64);
        for i in start..end {
            m[[i, k]] = w;
        }
    }
    m
}

/// Patch embedding on row-major patches `(R·N) × P`, adding the positional
/// encoding. Returns `R × (N·D)` (each series' patch embeddings flattened).
pub fn embed_rows<T: Scalar>(
    patches: ArrayView2<'_, T>,
    linear: &Linear<T>,
    pos: &ArrayD<T>,
    n_patches: usize,
    channels: usize,
) -> Array2<T> {
    let d = linear.fan_out();
    let mut e = linear.forward(patches);
    let pos = pos.view().into_shape_with_order((pos.len() / d, d)).expect("pos layout");
    let per_channel = pos.nrows() != n_patches;
    for (row_idx, mut row) in e.rows_mut().into_iter().enumerate() {
        let series = row_idx / n_patches;
        let j = row_idx % n_patches;
        let pos_row = if per_channel {
            (series % channels) * n_patches + j
        } else {
            j
        };
        row += &pos.row(pos_row);
    }
    let rows = e.nrows() / n_patches;
    e.into_shape_with_order((rows, n_patches * d)).expect("flatten")
}

/// Patch embedding on `B × C × N × P`, returning `B × C × N × D`.
pub fn embed<T: Scalar>(patches: ArrayView4<'_, T>, linear: &Linear<T>, pos: &ArrayD<T>) -> Array4<T> {
    let (b, c, n, p) = patches.dim();
    let flat = patches
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * c * n, p))
        .expect("patch layout");
    let e = embed_rows(flat.view(), linear, pos, n, c);
    e.into_shape_with_order((b, c, n, linear.fan_out())).expect("embedding layout")
}

/// Seasonal heads: one linear map `(N·D) → G_i` per head, shared across channels.
pub fn mpp_seasonal<T: Scalar>(x: ArrayView2<'_, T>, heads: &[Linear<T>]) -> Vec<Array2<T>> {
    heads.iter().map(|h| h.forward(x)).collect()
}

/// Trend heads: `ReLU((N·D) → H_hid)` then `H_hid → G_i`.
///
/// Returns the head outputs and the post-activation hidden layers.
pub fn mpp_trend<T: Scalar>(
    x: ArrayView2<'_, T>,
    heads: &[MlpHead<T>],
) -> (Vec<Array2<T>>, Vec<Array2<T>>) {
    heads
        .iter()
        .map(|h| {
            let mut hidden = h.hidden.forward(x);
            hidden.mapv_inplace(|v| v.max(T::zero()));
            (h.out.forward(hidden.view()), hidden)
        })
        .unzip()
}

/// Coarse-to-fine mixing: `Y_1 = Z_1`, `Y_i = Z_i + M_i(Y_{i−1})`.
pub fn mim<T: Scalar>(z: &[Array2<T>], mixers: &[Linear<T>]) -> Vec<Array2<T>> {
    assert_eq!(mixers.len() + 1, z.len().max(1));
    let mut out: Vec<Array2<T>> = Vec::with_capacity(z.len());
    for (i, zi) in z.iter().enumerate() {
        let yi = match out.last() {
            None => zi.clone(),
            Some(prev) => zi + &mixers[i - 1].forward(prev.view()),
        };
        out.push(yi);
    }
    out
}

/// Softmax over the head axis of gate logits laid out as `B × (H·C)`
/// (index `h·C + c`), returning `B × H × C`.
pub fn head_softmax<T: Scalar>(logits: ArrayView2<'_, T>, heads: usize, channels: usize) -> Array3<T> {
    let b = logits.nrows();
    let mut w = logits
        .to_owned()
        .into_shape_with_order((b, heads, channels))
        .expect("gate layout");
    for mut inst in w.axis_iter_mut(Axis(0)) {
        for mut col in inst.columns_mut() {
            let max = col.fold(T::neg_infinity(), |m, &v| m.max(v));
            col.mapv_inplace(|v| (v - max).exp());
            let sum = col.sum();
            col.mapv_inplace(|v| v / sum);
        }
    }
    w
}

/// Gate input: per-channel means of the seasonal and trend embeddings,
/// concatenated as `[seasonal channels…, trend channels…]` → `B × 2C`.
pub fn gate_input<T: Scalar>(es: ArrayView2<'_, T>, et: ArrayView2<'_, T>, channels: usize) -> Array2<T> {
    let b = es.nrows() / channels;
    let ms = es.mean_axis(Axis(1)).expect("non-empty embedding");
    let mt = et.mean_axis(Axis(1)).expect("non-empty embedding");
    let mut gin = Array2::zeros((b, 2 * channels));
    for bi in 0..b {
        for c in 0..channels {
            gin[[bi, c]] = ms[bi * channels + c];
            gin[[bi, channels + c]] = mt[bi * channels + c];
        }
    }
    gin
}

/// Gate weights `B × H × C` and the post-ReLU hidden layer.
pub fn amwg_weights<T: Scalar>(
    gin: ArrayView2<'_, T>,
    gate1: &Linear<T>,
    gate2: &Linear<T>,
    heads: usize,
    channels: usize,
) -> (Array3<T>, Array2<T>) {
    let mut hidden = gate1.forward(gin);
    hidden.mapv_inplace(|v| v.max(T::zero()));
    let logits = gate2.forward(hidden.view());
    (head_softmax(logits.view(), heads, channels), hidden)
}

/// Weighted fusion plus the unweighted head average:
/// `Y = Σ_i W[:, i, :] ⊗ Ỹ_i + (1/H) Σ_i Ỹ_i`.
pub fn fuse<T: Scalar>(upsampled: &[Array2<T>], weights: &Array3<T>) -> Array2<T> {
    let (b, h, c) = weights.dim();
    assert_eq!(h, upsampled.len());
    let mut out = mean_fuse(upsampled);
    for (i, u) in upsampled.iter().enumerate() {
        for bi in 0..b {
            for ci in 0..c {
                let w = weights[[bi, i, ci]];
                let r = bi * c + ci;
                Zip::from(out.row_mut(r))
                    .and(u.row(r))
                    .for_each(|o, &v| *o += w * v);
            }
        }
    }
    out
}

/// `(1/H) Σ_i Ỹ_i`.
pub fn mean_fuse<T: Scalar>(upsampled: &[Array2<T>]) -> Array2<T> {
    let inv = T::one() / T::of(upsampled.len() as f64);
    let mut out = Array2::zeros(upsampled[0].raw_dim());
    for u in upsampled {
        out.zip_mut_with(u, |o, &v| *o += v * inv);
    }
    out
}

/// Averages gate weights over the batch axis: `H × C`.
pub fn mean_over_batch<T: Scalar>(w: &Array3<T>) -> Array2<T> {
    w.mean_axis(Axis(0)).expect("non-empty batch")
}
