use ndarray::{Array3, ArrayView3, Zip};

use crate::model::layers::pooling_matrix;
use crate::model::{ForecastOutput, MdMixer, ModelConfig, ParamSet};
use crate::preprocess::{from_series, to_series};
use crate::{Error, Result, Scalar};

/// Components of the training objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub main: f64,
    pub align_per_head: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn main_only(main: f64) -> Self {
        Self {
            main,
            align_per_head: Vec::new(),
            total: main,
        }
    }
}

fn check_same<T>(stage: &'static str, a: &ArrayView3<'_, T>, b: &ArrayView3<'_, T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(stage, b.dim(), a.dim()));
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn main_loss<T: Scalar>(y: ArrayView3<'_, T>, target: ArrayView3<'_, T>) -> Result<f64> {
    check_same("main loss", &y, &target)?;
    Ok(mean_abs(&y, &target))
}

fn mean_abs<T: Scalar>(y: &ArrayView3<'_, T>, target: &ArrayView3<'_, T>) -> f64 {
    let mut acc = 0.0;
    Zip::from(y).and(target).for_each(|&a, &b| acc += (a - b).as_f64().abs());
    acc / y.len() as f64
}

/// Adaptive-average-pooled targets for each granularity, `B × G_i × C`.
pub fn alignment_targets<T: Scalar>(target: ArrayView3<'_, T>, schedule: &[usize]) -> Vec<Array3<T>> {
    let (b, f, c) = target.dim();
    let rows = to_series(target);
    schedule
        .iter()
        .map(|&g| from_series(rows.dot(&pooling_matrix::<T>(f, g)).view(), b, c))
        .collect()
}

/// Main L1 loss plus `α` times the mean per-head alignment loss.
pub fn total_loss<T: Scalar>(
    output: &ForecastOutput<T>,
    target: ArrayView3<'_, T>,
    cfg: &ModelConfig,
) -> Result<LossBreakdown> {
    let main = main_loss(output.final_forecast.view(), target)?;
    let schedule: Vec<usize> = output.per_granularity.iter().map(|y| y.dim().1).collect();
    let targets = alignment_targets(target, &schedule);
    let align_per_head: Vec<f64> = output
        .per_granularity
        .iter()
        .zip(&targets)
        .map(|(y, t)| mean_abs(&y.view(), &t.view()))
        .collect();
    let total = if cfg.use_align_loss {
        main + cfg.align_weight * align_per_head.iter().sum::<f64>() / align_per_head.len() as f64
    } else {
        main
    };
    Ok(LossBreakdown {
        main,
        align_per_head,
        total,
    })
}

/// `scale · sign(y − target)` with `sign(0) = 0`.
pub(crate) fn l1_grad<T: Scalar>(y: ArrayView3<'_, T>, target: ArrayView3<'_, T>, scale: T) -> Array3<T> {
    let mut g = Array3::zeros(y.raw_dim());
    Zip::from(&mut g).and(y).and(target).for_each(|g, &a, &b| {
        let r = a - b;
        *g = if r > T::zero() {
            scale
        } else if r < T::zero() {
            -scale
        } else {
            T::zero()
        };
    });
    g
}

/// Loss and exact gradients of the total objective w.r.t. every parameter.
pub fn backward<T: Scalar>(
    model: &MdMixer,
    x: ArrayView3<'_, T>,
    target: ArrayView3<'_, T>,
    params: &ParamSet<T>,
) -> Result<(ParamSet<T>, LossBreakdown)> {
    let cfg = model.config();
    let trace = model.trace(x, params)?;
    let output = model.output(&trace);
    let loss = total_loss(&output, target, cfg)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite { stage: "loss".into() });
    }

    let d_final = l1_grad(
        output.final_forecast.view(),
        target,
        T::one() / T::of(target.len() as f64),
    );
    let h = output.per_granularity.len();
    let d_granularity: Vec<Option<Array3<T>>> = if cfg.use_align_loss && cfg.align_weight > 0.0 {
        let targets = alignment_targets(target, model.schedule());
        output
            .per_granularity
            .iter()
            .zip(&targets)
            .map(|(y, t)| {
                let scale = T::of(cfg.align_weight / h as f64 / y.len() as f64);
                Some(l1_grad(y.view(), t.view(), scale))
            })
            .collect()
    } else {
        vec![None; h]
    };
    let grads = model.backprop(&trace, params, d_final.view(), &d_granularity);
    if !crate::tensor::TensorSet::all_finite(&grads) {
        return Err(Error::NonFinite { stage: "gradients".into() });
    }
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    fn as3(v: &[f64]) -> Array3<f64> {
        Array::from_shape_vec((1, v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn main_loss_examples() {
        let y = as3(&[1.0, 2.0]);
        assert_eq!(main_loss(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(main_loss(y.view(), as3(&[2.0, 4.0]).view()).unwrap(), 1.5);
        let scaled = main_loss((&y * -3.0).view(), (as3(&[2.0, 4.0]) * -3.0).view()).unwrap();
        assert!((scaled - 4.5).abs() < 1e-12);
        assert!(main_loss(y.view(), as3(&[1.0]).view()).is_err());
    }

    #[test]
    fn alignment_target_examples() {
        let y = as3(&[1.0, 2.0, 3.0, 4.0]);
        let t = alignment_targets(y.view(), &[2, 3, 4]);
        assert_eq!(t[0], as3(&[1.5, 3.5]));
        assert_eq!(t[1], as3(&[1.5, 2.5, 3.5]));
        assert_eq!(t[2], y);
    }

    fn output_with(final_: Array3<f64>, gran: Vec<Array3<f64>>) -> ForecastOutput<f64> {
        let h = gran.len();
        ForecastOutput {
            upsampled: gran.clone(),
            per_granularity: gran,
            gate_weights: Array3::from_elem((1, h, 1), 1.0 / h as f64),
            stats: crate::preprocess::InstanceStats::identity(1, 1),
            final_forecast: final_,
        }
    }

    #[test]
    fn total_loss_cases() {
        let target = as3(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = ModelConfig { align_weight: 0.0, ..ModelConfig::tiny() };
        let out = output_with(as3(&[0.0, 0.0, 0.0, 0.0]), vec![as3(&[5.0, 5.0]), as3(&[0.0; 4])]);
        let l = total_loss(&out, target.view(), &cfg).unwrap();
        assert_eq!(l.total, l.main);

        let perfect = output_with(target.clone(), vec![as3(&[1.5, 3.5]), target.clone()]);
        let l = total_loss(&perfect, target.view(), &ModelConfig::tiny()).unwrap();
        assert_eq!(l.total, 0.0);

        // single head at full length equal to the final forecast
        let y = as3(&[0.0, 1.0, 1.0, 2.0]);
        let one = output_with(y.clone(), vec![y.clone()]);
        let cfg = ModelConfig { align_weight: 1.0, ..ModelConfig::tiny() };
        let l = total_loss(&one, target.view(), &cfg).unwrap();
        assert!((l.total - 2.0 * l.main).abs() < 1e-12);

        let cfg = ModelConfig { use_align_loss: false, align_weight: 1.0, ..ModelConfig::tiny() };
        let l = total_loss(&one, target.view(), &cfg).unwrap();
        assert_eq!(l.total, l.main);
    }

    #[test]
    fn total_monotone_in_alpha() {
        let target = as3(&[1.0, -2.0, 3.0, 0.5]);
        let out = output_with(as3(&[0.3, 0.0, 2.0, 1.0]), vec![as3(&[5.0, -5.0]), as3(&[0.0; 4])]);
        let mut prev = f64::NEG_INFINITY;
        for alpha in [0.0, 0.001, 0.01, 0.05, 0.2, 1.0] {
            let cfg = ModelConfig { align_weight: alpha, ..ModelConfig::tiny() };
            let l = total_loss(&out, target.view(), &cfg).unwrap();
            let mean_align = l.align_per_head.iter().sum::<f64>() / 2.0;
            assert!((l.total - (l.main + alpha * mean_align)).abs() < 1e-9);
            assert!(l.total >= prev);
            prev = l.total;
        }
    }

    #[test]
    fn subgradient_zero_at_zero_residual() {
        let y = array![[[1.0, 2.0]]];
        let g = l1_grad(y.view(), y.view(), 1.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
