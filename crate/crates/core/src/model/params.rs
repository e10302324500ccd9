use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, PosEncoding};
use crate::tensor::{Linear, TensorSet};
use crate::{Result, Scalar};

/// Standard deviation of the positional-encoding initialization.
const POS_INIT_STD: f64 = 0.02;

/// Two-layer trend head: `ReLU(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

/// Every learnable tensor of one network.
///
/// The same type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub embed_s: Linear<T>,
    pub embed_t: Linear<T>,
    /// `N × D` (shared) or `C × N × D` (per channel).
    pub pos_s: ArrayD<T>,
    pub pos_t: ArrayD<T>,
    pub season_heads: Vec<Linear<T>>,
    pub trend_heads: Vec<MlpHead<T>>,
    /// `mixers_s[k]` maps `G_k → G_{k+1}` (zero-based), i.e. feeds head `k + 1`.
    pub mixers_s: Vec<Linear<T>>,
    pub mixers_t: Vec<Linear<T>>,
    pub gate1: Linear<T>,
    pub gate2: Linear<T>,
}

fn pos_shape(cfg: &ModelConfig) -> Vec<usize> {
    let (n, d) = (cfg.num_patches(), cfg.embed_dim);
    match cfg.pos_encoding {
        PosEncoding::Shared => vec![n, d],
        PosEncoding::PerChannel => vec![cfg.channels, n, d],
    }
}

impl<T: Scalar> ParamSet<T> {
    /// All-zero parameters shaped for `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule()?;
        let h = schedule.len();
        let flat = cfg.num_patches() * cfg.embed_dim;
        Ok(Self {
            embed_s: Linear::zeros(cfg.patch_len, cfg.embed_dim),
            embed_t: Linear::zeros(cfg.patch_len, cfg.embed_dim),
            pos_s: ArrayD::zeros(pos_shape(cfg)),
            pos_t: ArrayD::zeros(pos_shape(cfg)),
            season_heads: schedule.iter().map(|&g| Linear::zeros(flat, g)).collect(),
            trend_heads: schedule
                .iter()
                .map(|&g| MlpHead {
                    hidden: Linear::zeros(flat, cfg.hidden),
                    out: Linear::zeros(cfg.hidden, g),
                })
                .collect(),
            mixers_s: schedule.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            mixers_t: schedule.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            gate1: Linear::zeros(2 * cfg.channels, cfg.hidden),
            gate2: Linear::zeros(cfg.hidden, h * cfg.channels),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }

    pub fn heads(&self) -> usize {
        self.season_heads.len()
    }
}

/// Seeded initialization: weights uniform in ±1/√fan_in, biases zero,
/// positional encodings `N(0, 0.02²)`.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let h = schedule.len();
    let flat = cfg.num_patches() * cfg.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, POS_INIT_STD).expect("valid std");

    let embed_s = Linear::uniform(cfg.patch_len, cfg.embed_dim, &mut rng);
    let embed_t = Linear::uniform(cfg.patch_len, cfg.embed_dim, &mut rng);
    let pos_s = ArrayD::from_shape_simple_fn(pos_shape(cfg), || T::of(normal.sample(&mut rng)));
    let pos_t = ArrayD::from_shape_simple_fn(pos_shape(cfg), || T::of(normal.sample(&mut rng)));
    let season_heads = schedule
        .iter()
        .map(|&g| Linear::uniform(flat, g, &mut rng))
        .collect();
    let trend_heads = schedule
        .iter()
        .map(|&g| MlpHead {
            hidden: Linear::uniform(flat, cfg.hidden, &mut rng),
            out: Linear::uniform(cfg.hidden, g, &mut rng),
        })
        .collect();
    let mixers_s = schedule
        .windows(2)
        .map(|w| Linear::uniform(w[0], w[1], &mut rng))
        .collect();
    let mixers_t = schedule
        .windows(2)
        .map(|w| Linear::uniform(w[0], w[1], &mut rng))
        .collect();
    let gate1 = Linear::uniform(2 * cfg.channels, cfg.hidden, &mut rng);
    let gate2 = Linear::uniform(cfg.hidden, h * cfg.channels, &mut rng);

    Ok(ParamSet {
        embed_s,
        embed_t,
        pos_s,
        pos_t,
        season_heads,
        trend_heads,
        mixers_s,
        mixers_t,
        gate1,
        gate2,
    })
}

impl<T: Scalar> TensorSet<T> for ParamSet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.embed_s.visit_named("embed_s", f);
        self.embed_t.visit_named("embed_t", f);
        f("pos_s", self.pos_s.shape(), self.pos_s.as_slice().expect("standard layout"));
        f("pos_t", self.pos_t.shape(), self.pos_t.as_slice().expect("standard layout"));
        for (i, head) in self.season_heads.iter().enumerate() {
            head.visit_named(&format!("season_heads.{i}"), f);
        }
        for (i, head) in self.trend_heads.iter().enumerate() {
            head.hidden.visit_named(&format!("trend_heads.{i}.hidden"), f);
            head.out.visit_named(&format!("trend_heads.{i}.out"), f);
        }
        for (k, m) in self.mixers_s.iter().enumerate() {
            m.visit_named(&format!("mixers_s.{}", k + 1), f);
        }
        for (k, m) in self.mixers_t.iter().enumerate() {
            m.visit_named(&format!("mixers_t.{}", k + 1), f);
        }
        self.gate1.visit_named("gate1", f);
        self.gate2.visit_named("gate2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.embed_s.visit_named_mut("embed_s", f);
        self.embed_t.visit_named_mut("embed_t", f);
        let shape = self.pos_s.shape().to_vec();
        f("pos_s", &shape, self.pos_s.as_slice_mut().expect("standard layout"));
        let shape = self.pos_t.shape().to_vec();
        f("pos_t", &shape, self.pos_t.as_slice_mut().expect("standard layout"));
        for (i, head) in self.season_heads.iter_mut().enumerate() {
            head.visit_named_mut(&format!("season_heads.{i}"), f);
        }
        for (i, head) in self.trend_heads.iter_mut().enumerate() {
            head.hidden.visit_named_mut(&format!("trend_heads.{i}.hidden"), f);
            head.out.visit_named_mut(&format!("trend_heads.{i}.out"), f);
        }
        for (k, m) in self.mixers_s.iter_mut().enumerate() {
            m.visit_named_mut(&format!("mixers_s.{}", k + 1), f);
        }
        for (k, m) in self.mixers_t.iter_mut().enumerate() {
            m.visit_named_mut(&format!("mixers_t.{}", k + 1), f);
        }
        self.gate1.visit_named_mut("gate1", f);
        self.gate2.visit_named_mut("gate2", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let a: ParamSet<f32> = init_params(&cfg, 11).unwrap();
        let b: ParamSet<f32> = init_params(&cfg, 11).unwrap();
        let c: ParamSet<f32> = init_params(&cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn head_widths_follow_schedule() {
        let cfg = ModelConfig { channels: 3, ..ModelConfig::default() };
        let p: ParamSet<f32> = init_params(&cfg, 0).unwrap();
        let widths: Vec<usize> = p.season_heads.iter().map(Linear::fan_out).collect();
        assert_eq!(widths, vec![12, 24, 36, 48, 60, 72, 84, 96]);
        let trend: Vec<usize> = p.trend_heads.iter().map(|h| h.out.fan_out()).collect();
        assert_eq!(trend, widths);
        assert_eq!(p.mixers_s.len(), 7);
        assert_eq!(p.mixers_s[0].weight.dim(), (12, 24));
        assert_eq!(p.season_heads[0].fan_in(), 6 * 64);
    }

    #[test]
    fn gate_shapes() {
        let cfg = ModelConfig {
            lookback: 8,
            horizon: 4,
            channels: 2,
            patch_len: 4,
            stride: 2,
            embed_dim: 3,
            heads: 2,
            hidden: 5,
            ..ModelConfig::default()
        };
        let p: ParamSet<f64> = init_params(&cfg, 0).unwrap();
        assert_eq!(p.gate2.weight.dim(), (5, 4));
        assert_eq!(p.gate1.weight.dim(), (4, 5));
    }

    #[test]
    fn init_ranges() {
        let cfg = ModelConfig::tiny();
        let p: ParamSet<f64> = init_params(&cfg, 3).unwrap();
        let bound = 1.0 / (cfg.patch_len as f64).sqrt();
        assert!(p.embed_s.weight.iter().all(|w| w.abs() <= bound));
        assert!(p.embed_s.bias.iter().all(|b| *b == 0.0));
        assert!(p.pos_s.iter().all(|v| v.abs() < 0.2));
        assert_eq!(p.pos_s.shape(), &[4, 3]);
        let per = ModelConfig { pos_encoding: PosEncoding::PerChannel, ..cfg };
        let p: ParamSet<f64> = init_params(&per, 3).unwrap();
        assert_eq!(p.pos_t.shape(), &[2, 4, 3]);
    }

    #[test]
    fn names_are_unique_and_stable() {
        let p: ParamSet<f32> = init_params(&ModelConfig::tiny(), 0).unwrap();
        let names = p.tensor_names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "embed_s.weight");
        assert!(names.contains(&"mixers_t.1.bias".to_string()));
        assert_eq!(names.last().unwrap(), "gate2.bias");
    }
}
