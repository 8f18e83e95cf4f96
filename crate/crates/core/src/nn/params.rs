use rand::Rng;

use super::tensor::{Scalar, Tensor};

/// Learnable parameters of a convolution or dense layer, plus the momentum
/// buffers SGD keeps alongside them.
///
/// Convolution weights have shape `(out, in, k, k)`; dense weights
/// `(out, in, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub weight_velocity: Vec<T>,
    pub bias_velocity: Vec<T>,
}

/// Gradients matching a [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(out: usize, inp: usize, k: usize) -> Self {
        let weights = Tensor::zeros([out, inp, k, k]);
        let n = weights.len();
        LayerParams {
            weights,
            bias: vec![T::zero(); out],
            weight_velocity: vec![T::zero(); n],
            bias_velocity: vec![T::zero(); out],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(out, inp, k);
        let fan_in = (inp * k * k) as f64;
        let fan_out = (out * k * k) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        for w in p.weights.data_mut() {
            *w = T::from_f64_lossy(rng.random_range(-limit..limit));
        }
        p
    }

    pub fn from_parts(weights: Tensor<T>, bias: Vec<T>) -> Self {
        let n = weights.len();
        let b = bias.len();
        LayerParams {
            weights,
            bias,
            weight_velocity: vec![T::zero(); n],
            bias_velocity: vec![T::zero(); b],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Weights per output unit (`in·k·k`).
    pub fn fan_in(&self) -> usize {
        self.in_dim() * self.kernel() * self.kernel()
    }

    pub fn count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        LayerParams {
            weights: self.weights.cast(),
            bias: conv(&self.bias),
            weight_velocity: conv(&self.weight_velocity),
            bias_velocity: conv(&self.bias_velocity),
        }
    }

    pub(crate) fn is_consistent(&self) -> bool {
        self.bias.len() == self.out_dim()
            && self.weight_velocity.len() == self.weights.len()
            && self.bias_velocity.len() == self.bias.len()
    }
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(p: &LayerParams<T>) -> Self {
        ParamGrads {
            weights: vec![T::zero(); p.weights.len()],
            bias: vec![T::zero(); p.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}
