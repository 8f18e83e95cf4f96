use super::params::LayerParams;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub grad_in: Tensor<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<()> {
    if input.sample_len() != params.in_dim() || params.kernel() != 1 {
        return Err(Error::shape(
            "dense",
            format!("{} inputs per sample", params.in_dim()),
            input.sample_len(),
        ));
    }
    Ok(())
}

/// Fully-connected layer `y = W·x + b`. Each sample is flattened
/// channel-major, then row-major; output shape is `(batch, out, 1, 1)`.
pub fn dense<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    check(input, params)?;
    let n = input.batch();
    let (out, inp) = (params.out_dim(), params.in_dim());
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(&params.bias);
    }
    T::gemm(false, true, n, out, inp, input.data(), params.weights.data(), T::one(), &mut y);
    Tensor::from_vec([n, out, 1, 1], y)
}

/// Returns `Wᵀ·g`, `g⊗x` and `g`, each summed over the batch.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    check(input, params)?;
    let n = input.batch();
    let (out, inp) = (params.out_dim(), params.in_dim());
    if grad_out.len() != n * out {
        return Err(Error::shape("dense_backward", format!("{n}x{out}"), format!("{:?}", grad_out.shape())));
    }
    let g = grad_out.data();
    let mut grad_in = vec![T::zero(); n * inp];
    T::gemm(false, false, n, inp, out, g, params.weights.data(), T::zero(), &mut grad_in);
    let mut grad_weights = vec![T::zero(); out * inp];
    T::gemm(true, false, out, inp, n, g, input.data(), T::zero(), &mut grad_weights);
    let mut grad_bias = vec![T::zero(); out];
    for row in g.chunks(out) {
        for (b, &v) in grad_bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(DenseGrads {
        grad_in: Tensor::from_vec(input.shape(), grad_in)?,
        grad_weights,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let mut p = LayerParams::<f64>::zeros(3, 3, 1);
        for i in 0..3 {
            p.weights.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec([1, 3, 1, 1], vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(dense(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut p = LayerParams::<f32>::glorot(4, 6, 1, &mut ChaCha8Rng::seed_from_u64(0));
        p.bias = vec![1.0, 2.0, 3.0, 4.0];
        let y = dense(&Tensor::zeros([2, 6, 1, 1]), &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn flattens_feature_maps() {
        let p = LayerParams::<f32>::zeros(2, 8, 1);
        assert!(dense(&Tensor::zeros([1, 2, 2, 2]), &p).is_ok());
        assert!(dense(&Tensor::zeros([1, 2, 2, 1]), &p).is_err());
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = LayerParams::<f64>::glorot(3, 5, 1, &mut rng);
        p.bias = vec![0.1, -0.2, 0.3];
        let x = Tensor::from_vec([2, 5, 1, 1], (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let go = Tensor::from_vec([2, 3, 1, 1], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = |x: &Tensor<f64>, p: &LayerParams<f64>| -> f64 {
            dense(x, p).unwrap().data().iter().zip(go.data()).map(|(a, b)| a * b).sum()
        };
        let g = dense_backward(&x, &p, &go).unwrap();
        let h = 1e-4;
        let close = |fd: f64, a: f64| (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-8);
        let mut xp = x.clone();
        for i in 0..10 {
            let v = xp.data()[i];
            xp.data_mut()[i] = v + h;
            let lp = loss(&xp, &p);
            xp.data_mut()[i] = v - h;
            let lm = loss(&xp, &p);
            xp.data_mut()[i] = v;
            assert!(close((lp - lm) / (2.0 * h), g.grad_in.data()[i]));
        }
        for i in 0..15 {
            let v = p.weights.data()[i];
            p.weights.data_mut()[i] = v + h;
            let lp = loss(&x, &p);
            p.weights.data_mut()[i] = v - h;
            let lm = loss(&x, &p);
            p.weights.data_mut()[i] = v;
            assert!(close((lp - lm) / (2.0 * h), g.grad_weights[i]));
        }
        for o in 0..3 {
            assert!((g.grad_bias[o] - (go.data()[o] + go.data()[3 + o])).abs() < 1e-12);
        }
    }
}
