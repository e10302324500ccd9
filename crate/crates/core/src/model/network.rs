use ndarray::{Array2, Array3, ArrayView3, Zip};

use super::layers::{
    amwg_weights, embed_rows, fuse, gate_input, interpolation_matrix, mean_fuse, mim, mpp_seasonal,
    mpp_trend,
};
use super::{init_params, ModelConfig, ParamSet};
use crate::preprocess::{
    from_series, instance_denormalize, instance_normalize, moving_average_rows, patch_rows,
    to_series, InstanceStats,
};
use crate::tensor::Linear;
use crate::{Error, Result, Scalar};

/// Final forecast plus the intermediates exposed for losses and exports.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastOutput<T> {
    /// `B × F × C`
    pub final_forecast: Array3<T>,
    /// Per head `i`: `B × G_i × C`, denormalized.
    pub per_granularity: Vec<Array3<T>>,
    /// Per head `i`: `B × F × C`, denormalized.
    pub upsampled: Vec<Array3<T>>,
    /// `B × H × C`; uniform `1/H` when the gate is ablated.
    pub gate_weights: Array3<T>,
    pub stats: InstanceStats<T>,
}

/// Every intermediate of one forward pass in normalized space, row layout
/// `(B·C) × L`. Backpropagation consumes it.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub batch: usize,
    pub patches_s: Array2<T>,
    pub patches_t: Array2<T>,
    /// `(B·C) × (N·D)`
    pub embed_s: Array2<T>,
    pub embed_t: Array2<T>,
    /// Post-ReLU hidden layer of each trend head.
    pub trend_hidden: Vec<Array2<T>>,
    pub seasonal_mixed: Vec<Array2<T>>,
    pub trend_mixed: Vec<Array2<T>>,
    /// `Y_i = Y_i^s + Y_i^t`
    pub mixed: Vec<Array2<T>>,
    pub upsampled: Vec<Array2<T>>,
    /// `(B·C) × F`, before denormalization.
    pub fused: Array2<T>,
    pub gate_input: Option<Array2<T>>,
    pub gate_hidden: Option<Array2<T>>,
    pub gate_weights: Array3<T>,
    pub stats: InstanceStats<T>,
}

/// The network definition: validated config plus derived geometry.
#[derive(Clone, Debug)]
pub struct MdMixer {
    cfg: ModelConfig,
    schedule: Vec<usize>,
}

impl MdMixer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule()?;
        Ok(Self { cfg, schedule })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn heads(&self) -> usize {
        self.schedule.len()
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        init_params(&self.cfg, seed).expect("config validated at construction")
    }

    fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let want = ParamSet::<T>::zeros(&self.cfg)?;
        if params.heads() != want.heads() {
            return Err(Error::shape("params", want.heads(), params.heads()));
        }
        let mut shapes = Vec::new();
        want_shapes(&want, &mut shapes);
        let mut got = Vec::new();
        want_shapes(params, &mut got);
        if let Some((w, g)) = shapes.iter().zip(&got).find(|(w, g)| w != g) {
            return Err(Error::Shape {
                stage: "params",
                expected: format!("{} {:?}", w.0, w.1),
                got: format!("{} {:?}", g.0, g.1),
            });
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, x: ArrayView3<'_, T>, params: &ParamSet<T>) -> Result<ForecastOutput<T>> {
        let trace = self.trace(x, params)?;
        Ok(self.output(&trace))
    }

    /// Runs the forward pass and keeps every intermediate.
    pub fn trace<T: Scalar>(&self, x: ArrayView3<'_, T>, params: &ParamSet<T>) -> Result<ForwardTrace<T>> {
        let cfg = &self.cfg;
        let (b, t, c) = x.dim();
        if t != cfg.lookback || c != cfg.channels || b == 0 {
            return Err(Error::shape("input", (b.max(1), cfg.lookback, cfg.channels), (b, t, c)));
        }
        self.check_params(params)?;
        let n = cfg.num_patches();
        let h = self.heads();

        let (normalized, stats) = instance_normalize(x);
        let rows = to_series(normalized.view());
        let trend_rows = moving_average_rows(rows.view(), cfg.kernel)?;
        let seasonal_rows = &rows - &trend_rows;

        let patches_s = patch_rows(seasonal_rows.view(), cfg.patch_len, cfg.stride);
        let patches_t = patch_rows(trend_rows.view(), cfg.patch_len, cfg.stride);
        let embed_s = embed_rows(patches_s.view(), &params.embed_s, &params.pos_s, n, c);
        let embed_t = embed_rows(patches_t.view(), &params.embed_t, &params.pos_t, n, c);

        let z_s = mpp_seasonal(embed_s.view(), &params.season_heads);
        let (z_t, trend_hidden) = mpp_trend(embed_t.view(), &params.trend_heads);

        let (seasonal_mixed, trend_mixed) = if cfg.mim_active() {
            (mim(&z_s, &params.mixers_s), mim(&z_t, &params.mixers_t))
        } else {
            (z_s, z_t)
        };
        let mixed: Vec<Array2<T>> = seasonal_mixed
            .iter()
            .zip(&trend_mixed)
            .map(|(a, b)| a + b)
            .collect();
        let upsampled: Vec<Array2<T>> = mixed
            .iter()
            .map(|y| y.dot(&interpolation_matrix::<T>(y.ncols(), cfg.horizon)))
            .collect();

        let (fused, gate_input, gate_hidden, gate_weights) = if cfg.amwg_active() {
            let gin = gate_input(embed_s.view(), embed_t.view(), c);
            let (w, hidden) = amwg_weights(gin.view(), &params.gate1, &params.gate2, h, c);
            (fuse(&upsampled, &w), Some(gin), Some(hidden), w)
        } else {
            let w = Array3::from_elem((b, h, c), T::one() / T::of(h as f64));
            (mean_fuse(&upsampled), None, None, w)
        };

        for (stage, ok) in [
            ("embedding", embed_s.iter().chain(embed_t.iter()).all(|v| v.is_finite())),
            ("fusion", fused.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite { stage: stage.to_string() });
            }
        }

        Ok(ForwardTrace {
            batch: b,
            patches_s,
            patches_t,
            embed_s,
            embed_t,
            trend_hidden,
            seasonal_mixed,
            trend_mixed,
            mixed,
            upsampled,
            fused,
            gate_input,
            gate_hidden,
            gate_weights,
            stats,
        })
    }

    /// Denormalized outputs of a trace.
    pub fn output<T: Scalar>(&self, trace: &ForwardTrace<T>) -> ForecastOutput<T> {
        let (b, c) = (trace.batch, self.cfg.channels);
        let denorm = |rows: &Array2<T>| instance_denormalize(from_series(rows.view(), b, c).view(), &trace.stats);
        ForecastOutput {
            final_forecast: denorm(&trace.fused),
            per_granularity: trace.mixed.iter().map(denorm).collect(),
            upsampled: trace.upsampled.iter().map(denorm).collect(),
            gate_weights: trace.gate_weights.clone(),
            stats: trace.stats.clone(),
        }
    }

    /// Reverse-mode pass given the loss gradient w.r.t. the denormalized final
    /// forecast (`B × F × C`) and, optionally, w.r.t. each denormalized
    /// per-granularity output (`B × G_i × C`). Instance statistics are constants.
    pub fn backprop<T: Scalar>(
        &self,
        trace: &ForwardTrace<T>,
        params: &ParamSet<T>,
        d_final: ArrayView3<'_, T>,
        d_granularity: &[Option<Array3<T>>],
    ) -> ParamSet<T> {
        let cfg = &self.cfg;
        let (b, c) = (trace.batch, cfg.channels);
        let h = self.heads();
        let n = cfg.num_patches();
        let d = cfg.embed_dim;
        let mut grads = params.zeros_like();

        // Denormalization is y·std + mean, so upstream gradients scale by std.
        let scale_rows = |g: ArrayView3<'_, T>| -> Array2<T> {
            let mut rows = to_series(g);
            for (r, mut row) in rows.rows_mut().into_iter().enumerate() {
                let sd = trace.stats.std[[r / c, r % c]];
                row.mapv_inplace(|v| v * sd);
            }
            rows
        };
        let d_fused = scale_rows(d_final);

        let mut d_embed_s = Array2::<T>::zeros(trace.embed_s.raw_dim());
        let mut d_embed_t = Array2::<T>::zeros(trace.embed_t.raw_dim());

        // Fusion.
        let inv_h = T::one() / T::of(h as f64);
        let mut d_upsampled: Vec<Array2<T>> = Vec::with_capacity(h);
        if cfg.amwg_active() {
            let w = &trace.gate_weights;
            let mut d_w = Array3::<T>::zeros(w.raw_dim());
            for (i, u) in trace.upsampled.iter().enumerate() {
                let mut du = Array2::zeros(u.raw_dim());
                for r in 0..b * c {
                    let (bi, ci) = (r / c, r % c);
                    let coeff = w[[bi, i, ci]] + inv_h;
                    let g = d_fused.row(r);
                    Zip::from(du.row_mut(r)).and(g).for_each(|dst, &gv| *dst = gv * coeff);
                    d_w[[bi, i, ci]] = g.dot(&u.row(r));
                }
                d_upsampled.push(du);
            }
            // Softmax over heads: dz = w ⊙ (dw − Σ_i w·dw).
            let mut d_logits = Array2::<T>::zeros((b, h * c));
            for bi in 0..b {
                for ci in 0..c {
                    let dot = (0..h).fold(T::zero(), |acc, i| acc + w[[bi, i, ci]] * d_w[[bi, i, ci]]);
                    for i in 0..h {
                        d_logits[[bi, i * c + ci]] = w[[bi, i, ci]] * (d_w[[bi, i, ci]] - dot);
                    }
                }
            }
            let gin = trace.gate_input.as_ref().expect("gate active");
            let hidden = trace.gate_hidden.as_ref().expect("gate active");
            grads.gate2.accumulate_grad(hidden.view(), d_logits.view());
            let mut d_hidden = params.gate2.input_grad(d_logits.view());
            relu_mask(&mut d_hidden, hidden);
            grads.gate1.accumulate_grad(gin.view(), d_hidden.view());
            let d_gin = params.gate1.input_grad(d_hidden.view());
            let inv_nd = T::one() / T::of((n * d) as f64);
            for r in 0..b * c {
                let (bi, ci) = (r / c, r % c);
                let gs = d_gin[[bi, ci]] * inv_nd;
                let gt = d_gin[[bi, c + ci]] * inv_nd;
                d_embed_s.row_mut(r).mapv_inplace(|v| v + gs);
                d_embed_t.row_mut(r).mapv_inplace(|v| v + gt);
            }
        } else {
            for _ in 0..h {
                d_upsampled.push(d_fused.mapv(|v| v * inv_h));
            }
        }

        // Upsampling and the direct per-granularity gradients.
        let mut d_mixed: Vec<Array2<T>> = d_upsampled
            .iter()
            .zip(&trace.mixed)
            .map(|(du, y)| du.dot(&interpolation_matrix::<T>(y.ncols(), cfg.horizon).t()))
            .collect();
        for (dm, dg) in d_mixed.iter_mut().zip(d_granularity) {
            if let Some(dg) = dg {
                *dm += &scale_rows(dg.view());
            }
        }

        // MIM, identical for both branches since Y_i = Y_i^s + Y_i^t.
        let d_z_s = mim_backward(&d_mixed, &trace.seasonal_mixed, &params.mixers_s, &mut grads.mixers_s, cfg.mim_active());
        let d_z_t = mim_backward(&d_mixed, &trace.trend_mixed, &params.mixers_t, &mut grads.mixers_t, cfg.mim_active());

        // Parallel heads.
        for (i, dz) in d_z_s.iter().enumerate() {
            grads.season_heads[i].accumulate_grad(trace.embed_s.view(), dz.view());
            params.season_heads[i].backprop_input(dz.view(), &mut d_embed_s);
        }
        for (i, dz) in d_z_t.iter().enumerate() {
            let head = &params.trend_heads[i];
            let hidden = &trace.trend_hidden[i];
            grads.trend_heads[i].out.accumulate_grad(hidden.view(), dz.view());
            let mut d_hidden = head.out.input_grad(dz.view());
            relu_mask(&mut d_hidden, hidden);
            grads.trend_heads[i].hidden.accumulate_grad(trace.embed_t.view(), d_hidden.view());
            head.hidden.backprop_input(d_hidden.view(), &mut d_embed_t);
        }

        // Embedding and positional encoding.
        embed_backward(&trace.patches_s, d_embed_s, n, c, &mut grads.embed_s, &mut grads.pos_s);
        embed_backward(&trace.patches_t, d_embed_t, n, c, &mut grads.embed_t, &mut grads.pos_t);
        grads
    }
}

fn want_shapes<T: Scalar>(p: &ParamSet<T>, out: &mut Vec<(String, Vec<usize>)>) {
    use crate::tensor::TensorSet;
    p.visit(&mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
}

fn relu_mask<T: Scalar>(grad: &mut Array2<T>, activated: &Array2<T>) {
    grad.zip_mut_with(activated, |g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

/// Gradients of the MIM outputs with respect to the head outputs `Z_i`,
/// accumulating mixer gradients along the way.
fn mim_backward<T: Scalar>(
    d_out: &[Array2<T>],
    outputs: &[Array2<T>],
    mixers: &[Linear<T>],
    mixer_grads: &mut [Linear<T>],
    active: bool,
) -> Vec<Array2<T>> {
    let mut d_y: Vec<Array2<T>> = d_out.to_vec();
    if active {
        for i in (1..d_y.len()).rev() {
            let (prev, cur) = d_y.split_at_mut(i);
            let dy = cur[0].view();
            mixer_grads[i - 1].accumulate_grad(outputs[i - 1].view(), dy);
            mixers[i - 1].backprop_input(dy, &mut prev[i - 1]);
        }
    }
    d_y
}

fn embed_backward<T: Scalar>(
    patches: &Array2<T>,
    d_embed: Array2<T>,
    n: usize,
    channels: usize,
    grad: &mut Linear<T>,
    grad_pos: &mut ndarray::ArrayD<T>,
) {
    let d = grad.fan_out();
    let rows = d_embed.nrows() * n;
    let d_e = d_embed.into_shape_with_order((rows, d)).expect("embedding layout");
    grad.accumulate_grad(patches.view(), d_e.view());
    let pos_rows = grad_pos.len() / d;
    let mut pos = grad_pos
        .view_mut()
        .into_shape_with_order((pos_rows, d))
        .expect("pos layout");
    let per_channel = pos.nrows() != n;
    for (row_idx, row) in d_e.rows().into_iter().enumerate() {
        let series = row_idx / n;
        let j = row_idx % n;
        let target = if per_channel { (series % channels) * n + j } else { j };
        let mut dst = pos.row_mut(target);
        dst += &row;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PosEncoding;
    use crate::tensor::TensorSet;
    use ndarray::{s, Array, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_fwd_cfg() -> ModelConfig {
        ModelConfig {
            lookback: 8,
            horizon: 4,
            channels: 2,
            patch_len: 4,
            stride: 2,
            embed_dim: 3,
            heads: 2,
            hidden: 5,
            kernel: 3,
            ..ModelConfig::default()
        }
    }

    fn random_input(b: usize, t: usize, c: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((b, t, c), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn forward_shapes() {
        let model = MdMixer::new(tiny_fwd_cfg()).unwrap();
        let params = model.init_params::<f64>(0);
        let out = model.forward(random_input(3, 8, 2, 1).view(), &params).unwrap();
        assert_eq!(out.final_forecast.dim(), (3, 4, 2));
        let lens: Vec<usize> = out.per_granularity.iter().map(|y| y.dim().1).collect();
        assert_eq!(lens, vec![2, 4]);
        assert_eq!(out.gate_weights.dim(), (3, 2, 2));
        assert!(out.upsampled.iter().all(|u| u.dim() == (3, 4, 2)));
    }

    #[test]
    fn shape_mismatch_names_stage() {
        let model = MdMixer::new(tiny_fwd_cfg()).unwrap();
        let params = model.init_params::<f64>(0);
        let err = model.forward(random_input(1, 9, 2, 1).view(), &params).unwrap_err();
        assert!(matches!(err, Error::Shape { stage: "input", .. }));
        let other = MdMixer::new(ModelConfig { embed_dim: 4, ..tiny_fwd_cfg() }).unwrap();
        let err = other.forward(random_input(1, 8, 2, 1).view(), &params).unwrap_err();
        assert!(matches!(err, Error::Shape { stage: "params", .. }), "{err}");
    }

    #[test]
    fn constant_input_gives_constant_forecast() {
        let model = MdMixer::new(tiny_fwd_cfg()).unwrap();
        let mut params = model.init_params::<f64>(4);
        // zero positional encodings so normalized zeros stay zero through every map
        params.pos_s.fill(0.0);
        params.pos_t.fill(0.0);
        let mut x = Array3::zeros((2, 8, 2));
        for bi in 0..2 {
            for ci in 0..2 {
                x.slice_mut(s![bi, .., ci]).fill(3.0 + bi as f64 * 10.0 - ci as f64);
            }
        }
        let out = model.forward(x.view(), &params).unwrap();
        for bi in 0..2 {
            for ci in 0..2 {
                let want = 3.0 + bi as f64 * 10.0 - ci as f64;
                assert!(out.final_forecast.slice(s![bi, .., ci]).iter().all(|v| (*v - want).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn mean_fusion_of_equal_heads() {
        let cfg = ModelConfig { use_amwg: false, ..tiny_fwd_cfg() };
        let model = MdMixer::new(cfg).unwrap();
        let params = model.init_params::<f64>(0);
        let trace = model.trace(random_input(2, 8, 2, 3).view(), &params).unwrap();
        let out = model.output(&trace);
        // mean fusion of the traced heads equals the denormalized final
        let mean = mean_fuse(&trace.upsampled);
        let again = instance_denormalize(from_series(mean.view(), 2, 2).view(), &trace.stats);
        assert_eq!(out.final_forecast, again);
        assert!(out.gate_weights.iter().all(|w| *w == 0.5));
    }

    #[test]
    fn gate_weights_are_simplex() {
        let model = MdMixer::new(ModelConfig { heads: 4, horizon: 8, ..tiny_fwd_cfg() }).unwrap();
        let params = model.init_params::<f64>(9);
        let out = model.forward(random_input(5, 8, 2, 2).view(), &params).unwrap();
        for bi in 0..5 {
            for ci in 0..2 {
                let col = out.gate_weights.slice(s![bi, .., ci]);
                assert!(col.iter().all(|w| *w >= 0.0));
                assert!((col.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn per_granularity_is_branch_sum() {
        let model = MdMixer::new(tiny_fwd_cfg()).unwrap();
        let params = model.init_params::<f64>(1);
        let trace = model.trace(random_input(2, 8, 2, 5).view(), &params).unwrap();
        for i in 0..2 {
            assert_eq!(trace.mixed[i], &trace.seasonal_mixed[i] + &trace.trend_mixed[i]);
        }
    }

    #[test]
    fn deterministic_forward() {
        let model = MdMixer::new(tiny_fwd_cfg()).unwrap();
        let params = model.init_params::<f32>(2);
        let x = random_input(2, 8, 2, 7).mapv(|v| v as f32);
        assert_eq!(model.forward(x.view(), &params).unwrap(), model.forward(x.view(), &params).unwrap());
    }

    fn permutation_check(cfg: ModelConfig) {
        let model = MdMixer::new(cfg).unwrap();
        let params = model.init_params::<f64>(5);
        let x = random_input(2, 8, 3, 11);
        let perm = [2usize, 0, 1];
        let out = model.forward(x.view(), &params).unwrap();
        let outp = model.forward(x.select(Axis(2), &perm).view(), &params).unwrap();
        let diff = (&out.final_forecast.select(Axis(2), &perm) - &outp.final_forecast)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn channel_equivariant_without_gate() {
        permutation_check(ModelConfig { channels: 3, use_amwg: false, ..tiny_fwd_cfg() });
    }

    #[test]
    fn zero_mixers_make_mim_identity() {
        let cfg = tiny_fwd_cfg();
        let model = MdMixer::new(cfg.clone()).unwrap();
        let mut params = model.init_params::<f64>(6);
        for m in params.mixers_s.iter_mut().chain(params.mixers_t.iter_mut()) {
            m.weight.fill(0.0);
            m.bias.fill(0.0);
        }
        let x = random_input(2, 8, 2, 13);
        let with = model.forward(x.view(), &params).unwrap();
        let without = MdMixer::new(ModelConfig { use_mim: false, ..cfg }).unwrap();
        assert_eq!(with, without.forward(x.view(), &params).unwrap());
    }

    #[test]
    fn per_channel_positions_run() {
        let model = MdMixer::new(ModelConfig { pos_encoding: PosEncoding::PerChannel, ..tiny_fwd_cfg() }).unwrap();
        let params = model.init_params::<f64>(0);
        assert_eq!(params.pos_s.shape(), &[2, 4, 3]);
        model.forward(random_input(2, 8, 2, 1).view(), &params).unwrap();
    }

    #[test]
    fn ablated_mpp_has_single_head() {
        let model = MdMixer::new(ModelConfig { use_mpp: false, ..tiny_fwd_cfg() }).unwrap();
        let params = model.init_params::<f64>(0);
        assert_eq!(params.heads(), 1);
        assert!(params.mixers_s.is_empty());
        let out = model.forward(random_input(2, 8, 2, 1).view(), &params).unwrap();
        assert_eq!(out.per_granularity.len(), 1);
        assert_eq!(out.final_forecast, out.upsampled[0]);
        assert!(params.tensor_names().iter().all(|n| !n.contains("season_heads.1")));
    }
}
