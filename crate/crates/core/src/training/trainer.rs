use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, AdamW, AdamWConfig};
use crate::data::Windows;
use crate::model::{MdMixer, ParamSet};
use crate::tensor::TensorSet;
use crate::{Error, Result, Scalar};

/// A trainable forecaster over `B × T × C → B × F × C` batches.
pub trait Forecaster<T: Scalar> {
    type Params: TensorSet<T> + Clone;

    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn init(&self, seed: u64) -> Self::Params;
    fn predict(&self, x: ArrayView3<'_, T>, params: &Self::Params) -> Result<Array3<T>>;
    /// Gradients of the training objective and its value.
    fn loss_and_grad(
        &self,
        x: ArrayView3<'_, T>,
        target: ArrayView3<'_, T>,
        params: &Self::Params,
    ) -> Result<(Self::Params, f64)>;
}

impl<T: Scalar> Forecaster<T> for MdMixer {
    type Params = ParamSet<T>;

    fn lookback(&self) -> usize {
        self.config().lookback
    }

    fn horizon(&self) -> usize {
        self.config().horizon
    }

    fn init(&self, seed: u64) -> ParamSet<T> {
        self.init_params(seed)
    }

    fn predict(&self, x: ArrayView3<'_, T>, params: &ParamSet<T>) -> Result<Array3<T>> {
        Ok(self.forward(x, params)?.final_forecast)
    }

    fn loss_and_grad(
        &self,
        x: ArrayView3<'_, T>,
        target: ArrayView3<'_, T>,
        params: &ParamSet<T>,
    ) -> Result<(ParamSet<T>, f64)> {
        let (g, loss) = backward(self, x, target, params)?;
        Ok((g, loss.total))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            adamw: AdamWConfig::default(),
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        let a = &self.adamw;
        if !(a.lr.is_finite() && a.lr >= 0.0) {
            return Err(Error::config("lr", format!("must be finite and non-negative, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("beta", "betas must lie in [0, 1)"));
        }
        if a.eps.is_nan() || a.eps <= 0.0 || a.weight_decay.is_nan() || a.weight_decay < 0.0 {
            return Err(Error::config("eps", "eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_mse,val_mae\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_mse, r.val_mae);
        }
        s
    }

    /// Deterministic key-value summary; wall-clock time is left out so
    /// reruns are byte-identical.
    pub fn summary(&self) -> String {
        format!(
            "seed={}\nepochs_run={}\nbest_epoch={}\nbest_val_mse={}\nstopped_early={}\n",
            self.seed,
            self.epochs.len(),
            self.best_epoch,
            self.best_val_mse,
            self.stopped_early,
        )
    }
}

/// Mean squared and absolute error of `model` over every window, in the
/// windows' (standardized) space.
pub(crate) fn score<T: Scalar, M: Forecaster<T>>(
    model: &M,
    params: &M::Params,
    windows: &Windows<'_>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::SegmentTooShort { segment: "evaluation", len: 0, need: 1 });
    }
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for idx in windows.sequential_batches(batch_size) {
        let (x, y) = windows.batch::<T>(&idx);
        let pred = model.predict(x.view(), params)?;
        for (p, t) in pred.iter().zip(y.iter()) {
            let e = p.as_f64() - t.as_f64();
            se += e * e;
            ae += e.abs();
        }
        count += y.len();
    }
    Ok((se / count as f64, ae / count as f64))
}

/// Trains with AdamW, early-stops on validation MSE and returns the best
/// parameters.
pub fn train<T: Scalar, M: Forecaster<T>>(
    model: &M,
    train_set: &Windows<'_>,
    val_set: &Windows<'_>,
    hyper: &TrainHyper,
) -> Result<(M::Params, TrainReport)> {
    train_with(model, train_set, val_set, hyper, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar, M: Forecaster<T>>(
    model: &M,
    train_set: &Windows<'_>,
    val_set: &Windows<'_>,
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(M::Params, TrainReport)> {
    hyper.validate()?;
    for (name, w) in [("train", train_set), ("val", val_set)] {
        if w.lookback() != model.lookback() || w.horizon() != model.horizon() {
            return Err(Error::Shape {
                stage: "windows",
                expected: format!("lookback {} horizon {}", model.lookback(), model.horizon()),
                got: format!("{name}: lookback {} horizon {}", w.lookback(), w.horizon()),
            });
        }
    }
    if train_set.is_empty() {
        return Err(Error::SegmentTooShort { segment: "train", len: 0, need: 1 });
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = model.init(hyper.seed);
    let mut opt = AdamW::<T>::new(hyper.adamw);
    let mut best = params.clone();
    let mut best_mse = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let (x, y) = train_set.batch::<T>(idx);
            let (grads, loss) = match model.loss_and_grad(x.view(), y.view(), &params) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, batch: b + 1 }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            opt.step(&mut params, &grads);
            if !params.all_finite() {
                return Err(Error::Diverged { epoch, batch: b + 1 });
            }
            loss_sum += loss;
            batches += 1;
        }

        let (val_mse, val_mae) = score(model, &params, val_set, hyper.batch_size)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, batch: batches });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mse,
            val_mae,
        };
        on_epoch(&record);
        epochs.push(record);

        if val_mse < best_mse {
            best_mse = val_mse;
            best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= hyper.patience && epoch < hyper.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let report = TrainReport {
        seed: hyper.seed,
        epochs,
        best_epoch,
        best_val_mse: best_mse,
        stopped_early,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, synth_multiscale, SynthChannel};
    use crate::model::ModelConfig;

    fn frame(n: usize) -> crate::data::SeriesFrame {
        let ch = [
            SynthChannel { period: 12.0, amplitude: 1.0, slope: 0.0, noise_std: 0.05 },
            SynthChannel { period: 30.0, amplitude: 0.5, slope: 0.001, noise_std: 0.05 },
        ];
        synth_multiscale(n, &ch, 4).unwrap()
    }

    #[test]
    fn one_epoch_with_zero_patience() {
        let cfg = ModelConfig::tiny();
        let model = MdMixer::new(cfg).unwrap();
        let f = frame(60);
        let w = make_windows(&f, 8, 4).unwrap();
        let hyper = TrainHyper { patience: 0, max_epochs: 1, batch_size: 8, ..TrainHyper::default() };
        let (_, report) = train::<f32, _>(&model, &w, &w, &hyper).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.best_epoch, 1);
        assert!(report.to_csv().lines().count() == 2);
    }

    #[test]
    fn patience_zero_stops_after_first_epoch() {
        let model = MdMixer::new(ModelConfig::tiny()).unwrap();
        let f = frame(60);
        let w = make_windows(&f, 8, 4).unwrap();
        let hyper = TrainHyper { patience: 0, max_epochs: 5, batch_size: 8, ..TrainHyper::default() };
        let (_, report) = train::<f32, _>(&model, &w, &w, &hyper).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert!(report.stopped_early);
    }

    #[test]
    fn training_is_deterministic() {
        let model = MdMixer::new(ModelConfig::tiny()).unwrap();
        let f = frame(80);
        let w = make_windows(&f, 8, 4).unwrap();
        let hyper = TrainHyper { max_epochs: 3, batch_size: 8, seed: 9, ..TrainHyper::default() };
        let (a, ra) = train::<f32, _>(&model, &w, &w, &hyper).unwrap();
        let (b, rb) = train::<f32, _>(&model, &w, &w, &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs, rb.epochs);
    }

    #[test]
    fn repeated_batch_loss_decreases() {
        let model = MdMixer::new(ModelConfig::tiny()).unwrap();
        let f = frame(40);
        let w = make_windows(&f, 8, 4).unwrap();
        let idx: Vec<usize> = (0..8).collect();
        let (x, y) = w.batch::<f32>(&idx);
        let mut params: ParamSet<f32> = model.init(1);
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-4, ..AdamWConfig::default() });
        let (_, first) = model.loss_and_grad(x.view(), y.view(), &params).unwrap();
        let mut last = first;
        for _ in 0..50 {
            let (g, l) = model.loss_and_grad(x.view(), y.view(), &params).unwrap();
            opt.step(&mut params, &g);
            last = l;
        }
        assert!(last < first, "{last} >= {first}");
    }

    #[test]
    fn mismatched_windows_are_rejected() {
        let model = MdMixer::new(ModelConfig::tiny()).unwrap();
        let f = frame(40);
        let w = make_windows(&f, 10, 4).unwrap();
        let err = train::<f32, _>(&model, &w, &w, &TrainHyper::default()).unwrap_err();
        assert!(matches!(err, Error::Shape { stage: "windows", .. }));
    }

    #[test]
    fn non_finite_lr_is_rejected() {
        let model = MdMixer::new(ModelConfig::tiny()).unwrap();
        let f = frame(60);
        let w = make_windows(&f, 8, 4).unwrap();
        let bad = TrainHyper { adamw: AdamWConfig { lr: f64::NAN, ..AdamWConfig::default() }, ..TrainHyper::default() };
        assert!(matches!(train::<f32, _>(&model, &w, &w, &bad), Err(Error::InvalidConfig { .. })));
    }

    struct Exploding;

    impl Forecaster<f32> for Exploding {
        type Params = ParamSet<f32>;
        fn lookback(&self) -> usize {
            8
        }
        fn horizon(&self) -> usize {
            4
        }
        fn init(&self, seed: u64) -> ParamSet<f32> {
            MdMixer::new(ModelConfig::tiny()).unwrap().init_params(seed)
        }
        fn predict(&self, x: ArrayView3<'_, f32>, _: &ParamSet<f32>) -> Result<Array3<f32>> {
            Ok(Array3::zeros((x.dim().0, 4, x.dim().2)))
        }
        fn loss_and_grad(
            &self,
            _: ArrayView3<'_, f32>,
            _: ArrayView3<'_, f32>,
            p: &ParamSet<f32>,
        ) -> Result<(ParamSet<f32>, f64)> {
            Ok((p.zeros_like(), f64::INFINITY))
        }
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        let f = frame(60);
        let w = make_windows(&f, 8, 4).unwrap();
        let err = train::<f32, _>(&Exploding, &w, &w, &TrainHyper::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, batch: 1 }));
    }
}
