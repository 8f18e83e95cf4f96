//! Valid (unpadded), stride-1 2-D convolution via im2col + GEMM.

use super::params::LayerParams;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub grad_in: Option<Tensor<T>>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
}

pub(crate) fn check_input<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<[usize; 2]> {
    let k = params.kernel();
    let [_, c, h, w] = input.shape();
    if c != params.in_dim() || h < k || w < k {
        return Err(Error::shape(
            "conv2d",
            format!("{} input channels with spatial size >= {k}x{k}", params.in_dim()),
            format!("{c}x{h}x{w}"),
        ));
    }
    Ok([h - k + 1, w - k + 1])
}

/// Unrolls every `k×k×C` window into a column: rows are `(c, ky, kx)`,
/// columns are `(sample, oy, ox)`.
pub(crate) fn im2col<T: Scalar>(input: &Tensor<T>, k: usize) -> Vec<T> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let ohw = oh * ow;
    let m = n * ohw;
    let mut cols = vec![T::zero(); c * k * k * m];
    for s in 0..n {
        let x = input.sample(s);
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * m + s * ohw..row * m + (s + 1) * ohw];
                    for oy in 0..oh {
                        let src = &plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                        dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], shape: [usize; 4], k: usize) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let ohw = oh * ow;
    let m = n * ohw;
    let mut out = Tensor::zeros(shape);
    for s in 0..n {
        let x = out.sample_mut(s);
        for ci in 0..c {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * m + s * ohw..row * m + (s + 1) * ohw];
                    for oy in 0..oh {
                        let dst = &mut plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                        for (d, v) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward pass that also returns the unrolled input for reuse in backward.
pub(crate) fn conv2d_with_cols<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let [oh, ow] = check_input(input, params)?;
    let n = input.batch();
    let out_c = params.out_dim();
    let ohw = oh * ow;
    let m = n * ohw;
    let cols = im2col(input, params.kernel());
    let mut y = vec![T::zero(); out_c * m];
    T::gemm(false, false, out_c, m, params.fan_in(), params.weights.data(), &cols, T::zero(), &mut y);
    // (out, sample, pixel) -> (sample, out, pixel)
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    for s in 0..n {
        let dst = out.sample_mut(s);
        for o in 0..out_c {
            let b = params.bias[o];
            let src = &y[o * m + s * ohw..o * m + (s + 1) * ohw];
            for (d, v) in dst[o * ohw..(o + 1) * ohw].iter_mut().zip(src) {
                *d = *v + b;
            }
        }
    }
    Ok((out, cols))
}

/// Valid convolution, stride 1: output is `(out, H-k+1, W-k+1)` per sample.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    conv2d_with_cols(input, params).map(|(y, _)| y)
}

pub(crate) fn conv2d_backward_cols<T: Scalar>(
    cols: &[T],
    input_shape: [usize; 4],
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let k = params.kernel();
    let [n, _, h, w] = input_shape;
    let out_c = params.out_dim();
    let expect = [n, out_c, h + 1 - k, w + 1 - k];
    if grad_out.shape() != expect {
        return Err(Error::shape(
            "conv2d_backward",
            format!("{expect:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let ohw = expect[2] * expect[3];
    let m = n * ohw;
    let mut g = vec![T::zero(); out_c * m];
    let mut grad_bias = vec![T::zero(); out_c];
    for s in 0..n {
        let src = grad_out.sample(s);
        for o in 0..out_c {
            let row = &src[o * ohw..(o + 1) * ohw];
            g[o * m + s * ohw..o * m + (s + 1) * ohw].copy_from_slice(row);
            grad_bias[o] += row.iter().copied().sum::<T>();
        }
    }
    let fan_in = params.fan_in();
    let mut grad_weights = vec![T::zero(); out_c * fan_in];
    T::gemm(false, true, out_c, fan_in, m, &g, cols, T::zero(), &mut grad_weights);
    let grad_in = if want_input_grad {
        let mut gcols = vec![T::zero(); fan_in * m];
        T::gemm(true, false, fan_in, m, out_c, params.weights.data(), &g, T::zero(), &mut gcols);
        Some(col2im(&gcols, input_shape, k))
    } else {
        None
    };
    Ok(ConvGrads {
        grad_in,
        grad_weights,
        grad_bias,
    })
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input(input, params)?;
    let cols = im2col(input, params.kernel());
    conv2d_backward_cols(&cols, input.shape(), params, grad_out, true)
}

/// Recomputes one output channel of one sample directly from its windows.
pub(crate) fn conv2d_channel<T: Scalar>(
    input: &[T],
    in_shape: [usize; 3],
    params: &LayerParams<T>,
    out_channel: usize,
    out: &mut [T],
) {
    let [c, h, w] = in_shape;
    let k = params.kernel();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let fan = params.fan_in();
    let wrow = &params.weights.data()[out_channel * fan..(out_channel + 1) * fan];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = params.bias[out_channel];
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        acc += input[ci * h * w + (oy + ky) * w + ox + kx] * wrow[(ci * k + ky) * k + kx];
                    }
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
}
