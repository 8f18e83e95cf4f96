use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Winning input position of every pooled output, as flat indices into the
/// input tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// 2×2 non-overlapping max pooling. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape("maxpool2x2", "even, nonzero spatial dims", format!("{h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    let y = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y[(plane * oh + oy) * ow + ox] = x[best];
                argmax.push(best as u32);
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: [n, c, h, w],
            argmax,
        },
    ))
}

/// Routes each pooled gradient back to its argmax position.
pub fn maxpool_backward<T: Scalar>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = indices.input_shape;
    let expect = [n, c, h / 2, w / 2];
    if grad_out.shape() != expect {
        return Err(Error::shape(
            "maxpool_backward",
            format!("{expect:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_in = Tensor::zeros(indices.input_shape);
    let gi = grad_in.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[i as usize] += g;
    }
    Ok(grad_in)
}
