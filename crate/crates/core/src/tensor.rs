//! Named parameter tensors and the dense linear layer shared by every model.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::Scalar;

/// A collection of named, enumerable tensors (parameters or their gradients).
///
/// Visiting order is stable and defines the checkpoint layout.
pub trait TensorSet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [T]));

    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _, _| names.push(name.to_string()));
        names
    }

    fn num_elements(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }

    fn fill(&mut self, value: T)
    where
        T: Copy,
    {
        self.visit_mut(&mut |_, _, data| data.fill(value));
    }

    fn all_finite(&self) -> bool
    where
        T: Scalar,
    {
        let mut ok = true;
        self.visit(&mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Affine map `y = x · W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Weights uniform in ±1/√fan_in, bias zero.
    pub fn uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-bound..=bound)));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros((x.nrows(), self.fan_out()));
        out += &self.bias;
        general_mat_mul(T::one(), &x, &self.weight, T::one(), &mut out);
        out
    }

    /// Accumulates `xᵀ·dy` into the weight gradient and column sums into the bias gradient.
    pub fn accumulate_grad(&mut self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>) {
        general_mat_mul(T::one(), &x.t(), &dy, T::one(), &mut self.weight);
        self.bias += &dy.sum_axis(Axis(0));
    }

    /// Adds `dy · Wᵀ` into `dx`.
    pub fn backprop_input(&self, dy: ArrayView2<'_, T>, dx: &mut Array2<T>) {
        general_mat_mul(T::one(), &dy, &self.weight.t(), T::one(), dx);
    }

    pub fn input_grad(&self, dy: ArrayView2<'_, T>) -> Array2<T> {
        let mut dx = Array2::zeros((dy.nrows(), self.fan_in()));
        self.backprop_input(dy, &mut dx);
        dx
    }

    pub(crate) fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f(
            &format!("{prefix}.weight"),
            self.weight.shape(),
            self.weight.as_slice().expect("standard layout"),
        );
        f(
            &format!("{prefix}.bias"),
            self.bias.shape(),
            self.bias.as_slice().expect("standard layout"),
        );
    }

    pub(crate) fn visit_named_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &[usize], &mut [T]),
    ) {
        let shape = self.weight.shape().to_vec();
        f(
            &format!("{prefix}.weight"),
            &shape,
            self.weight.as_slice_mut().expect("standard layout"),
        );
        let shape = self.bias.shape().to_vec();
        f(
            &format!("{prefix}.bias"),
            &shape,
            self.bias.as_slice_mut().expect("standard layout"),
        );
    }
}
