use ndarray::{Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Forecaster;
use crate::model::{MdMixer, ModelConfig};
use crate::tensor::TensorSet;
use crate::Result;

/// Batch size of the random probe batch.
const PROBE_BATCH: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn scalar_at<P: TensorSet<f64>>(p: &P, slot: usize, k: usize) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    p.visit(&mut |_, _, v| {
        if i == slot {
            out = v[k];
        }
        i += 1;
    });
    out
}

fn nudge<P: TensorSet<f64>>(p: &mut P, slot: usize, k: usize, delta: f64) {
    let mut i = 0;
    p.visit_mut(&mut |_, _, v| {
        if i == slot {
            v[k] += delta;
        }
        i += 1;
    });
}

/// Compares analytic gradients against central differences with step `h`
/// for every scalar parameter.
pub fn gradcheck_forecaster<M: Forecaster<f64>>(
    model: &M,
    params: &M::Params,
    x: ArrayView3<'_, f64>,
    target: ArrayView3<'_, f64>,
    h: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    let (grads, _) = model.loss_and_grad(x, target, params)?;
    let mut slots: Vec<(String, usize)> = Vec::new();
    params.visit(&mut |name, _, v| slots.push((name.to_string(), v.len())));

    let mut probe = params.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        tolerance: tol,
        passed: true,
    };
    for (slot, (name, len)) in slots.iter().enumerate() {
        for k in 0..*len {
            nudge(&mut probe, slot, k, h);
            let (_, up) = model.loss_and_grad(x, target, &probe)?;
            nudge(&mut probe, slot, k, -2.0 * h);
            let (_, down) = model.loss_and_grad(x, target, &probe)?;
            nudge(&mut probe, slot, k, h);
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(scalar_at(&grads, slot, k), numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

/// Seeded standard-normal probe batch `(x, target)` for `cfg`.
pub fn probe_batch(cfg: &ModelConfig, seed: u64) -> (Array3<f64>, Array3<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |t: usize| {
        Array3::from_shape_simple_fn((PROBE_BATCH, t, cfg.channels), || StandardNormal.sample(&mut rng))
    };
    let x = draw(cfg.lookback);
    let y = draw(cfg.horizon);
    (x, y)
}

/// Gradient check of the full network at `f64` on a seeded random batch.
pub fn gradcheck(cfg: &ModelConfig, seed: u64, h: f64, tol: f64) -> Result<GradcheckReport> {
    let model = MdMixer::new(cfg.clone())?;
    let params = model.init_params::<f64>(seed);
    let (x, y) = probe_batch(cfg, seed.wrapping_add(1));
    gradcheck_forecaster(&model, &params, x.view(), y.view(), h, tol)
}
