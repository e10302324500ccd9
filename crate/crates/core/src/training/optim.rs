use crate::tensor::TensorSet;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay and bias correction.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: TensorSet<T>>(&mut self, params: &mut P, grads: &P) {
        let mut g_all: Vec<Vec<T>> = Vec::new();
        grads.visit(&mut |_, _, g| g_all.push(g.to_vec()));
        if self.first.is_empty() {
            self.first = g_all.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;

        let cfg = self.config;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let lr = T::of(cfg.lr);
        let eps = T::of(cfg.eps);
        let wd = T::of(cfg.weight_decay);
        let bc1 = T::of(1.0 - cfg.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - cfg.beta2.powi(self.step as i32));

        let mut idx = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_mut(&mut |_, _, theta| {
            let (m, v, g) = (&mut first[idx], &mut second[idx], &g_all[idx]);
            assert_eq!(theta.len(), g.len(), "gradient shape mismatch");
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[k]);
            }
            idx += 1;
        });
    }
}
