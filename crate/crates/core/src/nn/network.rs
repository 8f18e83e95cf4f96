use std::ops::Range;

use super::conv::{check_input, conv2d_backward_cols, conv2d_with_cols};
use super::dense::{dense, dense_backward};
use super::loss::Objective;
use super::params::{LayerParams, ParamGrads};
use super::pool::{maxpool2x2, maxpool_backward, PoolIndices};
use super::rank::{rank_forward, scatter, RankCorrespondence};
use super::relu::{relu, relu_backward};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(LayerParams<T>),
    MaxPool,
    Relu,
    Rank,
    Dense(LayerParams<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Relu,
    Rank,
    Dense,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Relu => LayerKind::Relu,
            Layer::Rank => LayerKind::Rank,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    pub fn params(&self) -> Option<&LayerParams<T>> {
        match self {
            Layer::Conv(p) | Layer::Dense(p) => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams<T>> {
        match self {
            Layer::Conv(p) | Layer::Dense(p) => Some(p),
            _ => None,
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(p) => Layer::Conv(p.cast()),
            Layer::Dense(p) => Layer::Dense(p.cast()),
            Layer::MaxPool => Layer::MaxPool,
            Layer::Relu => Layer::Relu,
            Layer::Rank => Layer::Rank,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        match self {
            Layer::Conv(p) => {
                let [oh, ow] = check_input(&Tensor::<T>::zeros([0, c, h, w]), p)?;
                Ok([p.out_dim(), oh, ow])
            }
            Layer::MaxPool => {
                if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                    return Err(Error::shape("maxpool2x2", "even spatial dims", format!("{h}x{w}")));
                }
                Ok([c, h / 2, w / 2])
            }
            Layer::Relu | Layer::Rank => Ok([c, h, w]),
            Layer::Dense(p) => {
                if c * h * w != p.in_dim() || p.kernel() != 1 {
                    return Err(Error::shape("dense", p.in_dim(), c * h * w));
                }
                Ok([p.out_dim(), 1, 1])
            }
        }
    }
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
enum Saved<T> {
    Nothing,
    Gate,
    Cols(Vec<T>),
    Pool(PoolIndices),
    Rank(RankCorrespondence),
}

/// Activations and bookkeeping recorded by [`Network::forward_trace`].
#[derive(Clone, Debug)]
pub struct Trace<T> {
    start: usize,
    /// `inputs[i]` is the input to layer `start + i`.
    inputs: Vec<Tensor<T>>,
    saved: Vec<Saved<T>>,
    output: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    /// Input to absolute layer index `layer` (the network output when
    /// `layer` equals the layer count).
    pub fn activation(&self, layer: usize) -> &Tensor<T> {
        let i = layer - self.start;
        if i == self.inputs.len() {
            &self.output
        } else {
            &self.inputs[i]
        }
    }

    /// Hashes every discrete decision made for `sample` (ReLU gates, pool
    /// winners, rank orderings). Equal fingerprints mean the network is on
    /// the same linear piece.
    pub fn fingerprint(&self, sample: usize) -> u64 {
        self.fingerprint_from(sample, self.start)
    }

    /// [`Trace::fingerprint`] restricted to layers `from..`.
    pub fn fingerprint_from(&self, sample: usize, from: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        let skip = from.saturating_sub(self.start);
        for (input, saved) in self.inputs.iter().zip(&self.saved).skip(skip) {
            match saved {
                Saved::Pool(idx) => {
                    // winners are flat batch indices; hash them relative to the sample
                    let per = idx.argmax().len() / input.batch();
                    let offset = (sample * input.sample_len()) as u64;
                    idx.argmax()[sample * per..(sample + 1) * per].iter().for_each(|&v| mix(v as u64 - offset));
                }
                Saved::Rank(c) => {
                    let per = c.as_slice().len() / input.batch();
                    c.as_slice()[sample * per..(sample + 1) * per].iter().for_each(|&v| mix(v as u64));
                }
                Saved::Gate => {
                    for &v in input.sample(sample) {
                        mix((v > T::zero()) as u64);
                    }
                }
                Saved::Nothing | Saved::Cols(_) => {}
            }
        }
        h
    }
}

/// A feed-forward stack of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Validates that the layer shapes chain from `input_shape`.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Network { input_shape, layers };
        net.shapes()?;
        for p in net.layers.iter().filter_map(Layer::params) {
            if !p.is_consistent() {
                return Err(Error::shape("Network::new", "bias/velocity matching weights", "inconsistent params"));
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Per-sample shape after each layer.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut s = self.input_shape;
        self.layers
            .iter()
            .map(|l| {
                s = l.output_shape(s)?;
                Ok(s)
            })
            .collect()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.shapes()
            .ok()
            .and_then(|v| v.last().copied())
            .unwrap_or(self.input_shape)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::params).map(LayerParams::count).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>, start: usize) -> Result<()> {
        let want = if start == 0 {
            self.input_shape
        } else {
            self.shapes()?[start - 1]
        };
        if input.sample_shape() != want {
            return Err(Error::shape("Network::forward", format!("{want:?}"), format!("{:?}", input.sample_shape())));
        }
        Ok(())
    }

    fn step(&self, layer: &Layer<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match layer {
            Layer::Conv(p) => conv2d_with_cols(x, p)?.0,
            Layer::MaxPool => maxpool2x2(x)?.0,
            Layer::Relu => relu(x),
            Layer::Rank => rank_forward(x).0,
            Layer::Dense(p) => dense(x, p)?,
        })
    }

    /// Runs layers `range` on `input` (which must be the input of
    /// `range.start`).
    pub fn forward_range(&self, input: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        self.check_input(input, range.start)?;
        let mut x = input.clone();
        for layer in &self.layers[range] {
            x = self.step(layer, &x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_range(input, 0..self.layers.len())
    }

    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        self.forward_trace_from(0, input.clone())
    }

    /// Traced forward pass through layers `start..`.
    pub fn forward_trace_from(&self, start: usize, input: Tensor<T>) -> Result<Trace<T>> {
        self.check_input(&input, start)?;
        let mut inputs = Vec::with_capacity(self.layers.len() - start);
        let mut saved = Vec::with_capacity(self.layers.len() - start);
        let mut x = input;
        for layer in &self.layers[start..] {
            let (y, s) = match layer {
                Layer::Conv(p) => {
                    let (y, cols) = conv2d_with_cols(&x, p)?;
                    (y, Saved::Cols(cols))
                }
                Layer::MaxPool => {
                    let (y, idx) = maxpool2x2(&x)?;
                    (y, Saved::Pool(idx))
                }
                Layer::Relu => (relu(&x), Saved::Gate),
                Layer::Rank => {
                    let (y, c) = rank_forward(&x);
                    (y, Saved::Rank(c))
                }
                Layer::Dense(p) => (dense(&x, p)?, Saved::Nothing),
            };
            inputs.push(x);
            saved.push(s);
            x = y;
        }
        Ok(Trace {
            start,
            inputs,
            saved,
            output: x,
        })
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the trace output).
    ///
    /// Returns one entry per layer (`Some` for parametric layers) and the
    /// gradient w.r.t. the trace input when requested.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: Tensor<T>,
        want_input_grad: bool,
    ) -> Result<(Vec<Option<ParamGrads<T>>>, Option<Tensor<T>>)> {
        if grad_out.shape() != trace.output.shape() {
            return Err(Error::shape(
                "Network::backward",
                format!("{:?}", trace.output.shape()),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let start = trace.start;
        let mut grads: Vec<Option<ParamGrads<T>>> = vec![None; self.layers.len()];
        let mut g = grad_out;
        for li in (start..self.layers.len()).rev() {
            let i = li - start;
            let input = &trace.inputs[i];
            // the first layer's input gradient is only needed on request
            let need_in = li > start || want_input_grad;
            g = match (&self.layers[li], &trace.saved[i]) {
                (Layer::Conv(p), Saved::Cols(cols)) => {
                    let cg = conv2d_backward_cols(cols, input.shape(), p, &g, need_in)?;
                    grads[li] = Some(ParamGrads {
                        weights: cg.grad_weights,
                        bias: cg.grad_bias,
                    });
                    match cg.grad_in {
                        Some(t) => t,
                        None => break,
                    }
                }
                (Layer::Dense(p), _) => {
                    let dg = dense_backward(input, p, &g)?;
                    grads[li] = Some(ParamGrads {
                        weights: dg.grad_weights,
                        bias: dg.grad_bias,
                    });
                    dg.grad_in
                }
                (Layer::MaxPool, Saved::Pool(idx)) => maxpool_backward(idx, &g)?,
                (Layer::Relu, _) => relu_backward(input, &g)?,
                (Layer::Rank, Saved::Rank(c)) => scatter(&g, c),
                _ => unreachable!("trace does not match layer stack"),
            };
        }
        Ok((grads, if want_input_grad { Some(g) } else { None }))
    }

    /// Mean loss over the batch and the batch-averaged parameter gradients.
    pub fn loss_and_grads(
        &self,
        input: &Tensor<T>,
        objective: Objective<'_>,
    ) -> Result<(f64, Vec<Option<ParamGrads<T>>>)> {
        let trace = self.forward_trace(input)?;
        let (losses, mut g) = objective.evaluate(&trace.output)?;
        let n = input.batch() as f64;
        let scale = T::from_f64_lossy(1.0 / n);
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        let (grads, _) = self.backward(&trace, g, false)?;
        Ok((losses.iter().sum::<f64>() / n, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> Network<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Network::new(
            [2, 6, 6],
            vec![
                Layer::Conv(LayerParams::glorot(3, 2, 3, &mut rng)),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Rank,
                Layer::Dense(LayerParams::glorot(4, 12, 1, &mut rng)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn shapes_chain() {
        let net = small_net();
        assert_eq!(net.shapes().unwrap(), vec![[3, 4, 4], [3, 4, 4], [3, 2, 2], [3, 2, 2], [4, 1, 1]]);
        assert_eq!(net.param_count(), 3 * 2 * 9 + 3 + 4 * 12 + 4);
    }

    #[test]
    fn bad_chain_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Network::<f32>::new(
            [1, 6, 6],
            vec![Layer::Conv(LayerParams::glorot(2, 1, 2, &mut rng)), Layer::MaxPool],
        );
        assert!(r.is_err());
    }

    #[test]
    fn trace_output_matches_forward() {
        let net = small_net();
        let x = Tensor::from_vec([2, 2, 6, 6], (0..144).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        let t = net.forward_trace(&x).unwrap();
        assert_eq!(&y, t.output());
        let mid = net.forward_range(&x, 0..3).unwrap();
        assert_eq!(&mid, t.activation(3));
        assert_eq!(net.forward_range(&mid, 3..5).unwrap(), y);
        assert!(net.forward(&Tensor::zeros([1, 1, 6, 6])).is_err());
    }

    #[test]
    fn fingerprint_ignores_batch_position() {
        let net = small_net();
        let x = Tensor::from_vec([2, 2, 6, 6], (0..144).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()).unwrap();
        let both = net.forward_trace(&x).unwrap();
        let second = net.forward_trace(&x.sample_tensor(1)).unwrap();
        assert_eq!(both.fingerprint(1), second.fingerprint(0));
        assert_ne!(both.fingerprint(0), both.fingerprint(1));
    }
}
