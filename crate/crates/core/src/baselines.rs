//! Linear forecasters and the dual-branch variant that swaps the trend map
//! for a one-hidden-layer MLP.
//!
//! All kinds are wrapped in instance normalization and share the main
//! model's loss, optimizer and training protocol.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::MlpHead;
use crate::preprocess::{
    from_series, instance_denormalize, instance_normalize, moving_average_rows, to_series,
};
use crate::tensor::{Linear, TensorSet};
use crate::training::{main_loss, Forecaster};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    LinearDirect,
    DecompLinear,
    DualBranch,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::LinearDirect, Self::DecompLinear, Self::DualBranch];

    pub fn decomposes(self) -> bool {
        !matches!(self, Self::LinearDirect)
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_direct" => Ok(Self::LinearDirect),
            "decomp_linear" => Ok(Self::DecompLinear),
            "dual_branch" => Ok(Self::DualBranch),
            other => Err(Error::config(
                "kind",
                format!("unknown baseline '{other}' (expected linear_direct, decomp_linear or dual_branch)"),
            )),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LinearDirect => "linear_direct",
            Self::DecompLinear => "decomp_linear",
            Self::DualBranch => "dual_branch",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    /// Trend MLP width; only read by `dual_branch`.
    pub hidden: usize,
    /// Moving-average kernel; ignored by `linear_direct`.
    pub kernel: usize,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, lookback: usize, horizon: usize, channels: usize) -> Self {
        Self { kind, lookback, horizon, channels, hidden: 64, kernel: 25 }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.kind.decomposes() && self.kernel.is_multiple_of(2) {
            return Err(Error::config("kernel", format!("must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Map applied to the trend component.
#[derive(Clone, Debug, PartialEq)]
pub enum TrendMap<T> {
    None,
    Linear(Linear<T>),
    Mlp(MlpHead<T>),
}

/// Parameters of one baseline. `main` acts on the raw window for
/// `linear_direct` and on the seasonal component otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams<T> {
    pub main: Linear<T>,
    pub trend: TrendMap<T>,
}

impl<T: Scalar> BaselineParams<T> {
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }
}

impl<T: Scalar> TensorSet<T> for BaselineParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        match &self.trend {
            TrendMap::None => self.main.visit_named("linear", f),
            TrendMap::Linear(l) => {
                self.main.visit_named("seasonal", f);
                l.visit_named("trend", f);
            }
            TrendMap::Mlp(m) => {
                self.main.visit_named("seasonal", f);
                m.hidden.visit_named("trend.hidden", f);
                m.out.visit_named("trend.out", f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        match &mut self.trend {
            TrendMap::None => self.main.visit_named_mut("linear", f),
            TrendMap::Linear(l) => {
                self.main.visit_named_mut("seasonal", f);
                l.visit_named_mut("trend", f);
            }
            TrendMap::Mlp(m) => {
                self.main.visit_named_mut("seasonal", f);
                m.hidden.visit_named_mut("trend.hidden", f);
                m.out.visit_named_mut("trend.out", f);
            }
        }
    }
}

/// Intermediates in normalized row layout `(B·C) × L`.
struct Pass<T> {
    main_in: Array2<T>,
    trend_in: Option<Array2<T>>,
    hidden: Option<Array2<T>>,
    out: Array3<T>,
    std: Array2<T>,
}

#[derive(Clone, Debug)]
pub struct Baseline {
    cfg: BaselineConfig,
}

impl Baseline {
    pub fn new(cfg: BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    /// Seeded init: weights uniform in ±1/√fan_in, biases zero.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> BaselineParams<T> {
        let (t, f, hid) = (self.cfg.lookback, self.cfg.horizon, self.cfg.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let main = Linear::uniform(t, f, &mut rng);
        let trend = match self.cfg.kind {
            BaselineKind::LinearDirect => TrendMap::None,
            BaselineKind::DecompLinear => TrendMap::Linear(Linear::uniform(t, f, &mut rng)),
            BaselineKind::DualBranch => TrendMap::Mlp(MlpHead {
                hidden: Linear::uniform(t, hid, &mut rng),
                out: Linear::uniform(hid, f, &mut rng),
            }),
        };
        BaselineParams { main, trend }
    }

    fn check<T: Scalar>(&self, x: &ArrayView3<'_, T>, params: &BaselineParams<T>) -> Result<()> {
        let (_, t, c) = x.dim();
        if t != self.cfg.lookback || c != self.cfg.channels {
            return Err(Error::shape(
                "input",
                ("B", self.cfg.lookback, self.cfg.channels),
                x.dim(),
            ));
        }
        let want = self.init_params::<T>(0);
        let mut expected = Vec::new();
        want.visit(&mut |n, s, _| expected.push((n.to_string(), s.to_vec())));
        let mut got = Vec::new();
        params.visit(&mut |n, s, _| got.push((n.to_string(), s.to_vec())));
        if expected != got {
            return Err(Error::shape("params", expected, got));
        }
        Ok(())
    }

    fn pass<T: Scalar>(&self, x: ArrayView3<'_, T>, params: &BaselineParams<T>) -> Result<Pass<T>> {
        self.check(&x, params)?;
        let (b, _, c) = x.dim();
        let (norm, stats) = instance_normalize(x);
        let rows = to_series(norm.view());
        let (main_in, trend_in) = if self.cfg.kind.decomposes() {
            let trend = moving_average_rows(rows.view(), self.cfg.kernel)?;
            (&rows - &trend, Some(trend))
        } else {
            (rows, None)
        };
        let mut y = params.main.forward(main_in.view());
        let mut hidden = None;
        match (&params.trend, &trend_in) {
            (TrendMap::Linear(l), Some(tr)) => y += &l.forward(tr.view()),
            (TrendMap::Mlp(m), Some(tr)) => {
                let h = m.hidden.forward(tr.view()).mapv(|v| v.max(T::zero()));
                y += &m.out.forward(h.view());
                hidden = Some(h);
            }
            _ => {}
        }
        let out = instance_denormalize(from_series(y.view(), b, c).view(), &stats);
        Ok(Pass { main_in, trend_in, hidden, out, std: stats.std })
    }

    pub fn forward<T: Scalar>(&self, x: ArrayView3<'_, T>, params: &BaselineParams<T>) -> Result<Array3<T>> {
        Ok(self.pass(x, params)?.out)
    }

    /// Main L1 loss and its parameter gradients.
    pub fn backward<T: Scalar>(
        &self,
        x: ArrayView3<'_, T>,
        target: ArrayView3<'_, T>,
        params: &BaselineParams<T>,
    ) -> Result<(BaselineParams<T>, f64)> {
        let pass = self.pass(x, params)?;
        let loss = main_loss(pass.out.view(), target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { stage: "loss".into() });
        }
        let scale = T::one() / T::of(target.len() as f64);
        let mut d_out = Array3::zeros(pass.out.raw_dim());
        Zip::from(&mut d_out).and(&pass.out).and(target).for_each(|g, &a, &b| {
            *g = if a > b {
                scale
            } else if a < b {
                -scale
            } else {
                T::zero()
            };
        });
        // Denormalization multiplies row (b, c) by std[b, c].
        let mut dy = to_series(d_out.view());
        let c = self.cfg.channels;
        for (r, mut row) in dy.rows_mut().into_iter().enumerate() {
            row *= pass.std[[r / c, r % c]];
        }

        let mut grads = params.zeros_like();
        grads.main.accumulate_grad(pass.main_in.view(), dy.view());
        match (&mut grads.trend, &params.trend, &pass.trend_in) {
            (TrendMap::Linear(g), _, Some(tr)) => g.accumulate_grad(tr.view(), dy.view()),
            (TrendMap::Mlp(g), TrendMap::Mlp(m), Some(tr)) => {
                let h = pass.hidden.as_ref().expect("hidden kept for mlp");
                g.out.accumulate_grad(h.view(), dy.view());
                let mut dh = m.out.input_grad(dy.view());
                Zip::from(&mut dh).and(h).for_each(|d, &hv| {
                    if hv <= T::zero() {
                        *d = T::zero();
                    }
                });
                g.hidden.accumulate_grad(tr.view(), dh.view());
            }
            _ => {}
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite { stage: "gradients".into() });
        }
        Ok((grads, loss))
    }
}

impl<T: Scalar> Forecaster<T> for Baseline {
    type Params = BaselineParams<T>;

    fn lookback(&self) -> usize {
        self.cfg.lookback
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn init(&self, seed: u64) -> BaselineParams<T> {
        self.init_params(seed)
    }

    fn predict(&self, x: ArrayView3<'_, T>, params: &BaselineParams<T>) -> Result<Array3<T>> {
        self.forward(x, params)
    }

    fn loss_and_grad(
        &self,
        x: ArrayView3<'_, T>,
        target: ArrayView3<'_, T>,
        params: &BaselineParams<T>,
    ) -> Result<(BaselineParams<T>, f64)> {
        self.backward(x, target, params)
    }
}
