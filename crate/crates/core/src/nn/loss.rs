use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Training target for a batch.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// One class index (0-based) per sample; soft-max cross-entropy.
    Classes(&'a [usize]),
    /// One real target per sample for a single-output head; `½(y − t)²`.
    Targets(&'a [f64]),
}

impl Objective<'_> {
    pub fn len(&self) -> usize {
        match self {
            Objective::Classes(c) => c.len(),
            Objective::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample losses and per-sample (unscaled) gradients for a batch of
    /// outputs shaped `(batch, k, 1, 1)`.
    pub(crate) fn evaluate<T: Scalar>(&self, output: &Tensor<T>) -> Result<(Vec<f64>, Tensor<T>)> {
        let n = output.batch();
        if self.len() != n {
            return Err(Error::shape("loss", format!("{} targets", n), self.len()));
        }
        let k = output.sample_len();
        let mut grad = Tensor::zeros(output.shape());
        let mut losses = Vec::with_capacity(n);
        for s in 0..n {
            let y = output.sample(s);
            let (l, g) = match self {
                Objective::Classes(c) => softmax_xent(y, c[s])?,
                Objective::Targets(t) => {
                    if k != 1 {
                        return Err(Error::shape("squared_error", "1 output", k));
                    }
                    let (l, g) = squared_error(y[0], T::from_f64_lossy(t[s]));
                    (l, vec![g])
                }
            };
            losses.push(l.as_f64());
            grad.sample_mut(s).copy_from_slice(&g);
        }
        Ok((losses, grad))
    }
}

/// Numerically stable soft-max.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let e: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| T::from_f64_lossy(v / z)).collect()
}

/// `−log softmax(y)[target]` and its gradient `softmax(y) − onehot(target)`.
pub fn softmax_xent<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let shifted: Vec<f64> = logits.iter().map(|v| v.as_f64() - max).collect();
    let z: f64 = shifted.iter().map(|v| v.exp()).sum();
    let log_z = z.ln();
    let loss = log_z - shifted[target];
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let p = (s - log_z).exp();
            T::from_f64_lossy(if i == target { p - 1.0 } else { p })
        })
        .collect();
    Ok((T::from_f64_lossy(loss), grad))
}

/// `½(y − t)²` and `y − t`.
pub fn squared_error<T: Scalar>(y: T, target: T) -> (T, T) {
    let d = y - target;
    (T::from_f64_lossy(0.5) * d * d, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (l, g) = softmax_xent(&[0.7f64; 10], 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - 2.302585).abs() < 1e-6);
        for (i, v) in g.iter().enumerate() {
            let want = if i == 3 { 0.1 - 1.0 } else { 0.1 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_logit_drives_loss_to_zero() {
        let mut y = [0.0f64; 10];
        let mut last = f64::INFINITY;
        for big in [1.0, 10.0, 100.0, 1000.0] {
            y[4] = big;
            let (l, _) = softmax_xent(&y, 4).unwrap();
            assert!(l <= last);
            last = l;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn no_overflow_on_large_logits() {
        let (l, g) = softmax_xent(&[1e4f32, 0.0, -1e4], 1).unwrap();
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!((l - 1e4).abs() < 1.0);
    }

    #[test]
    fn target_out_of_range() {
        assert!(softmax_xent(&[0.0f32; 10], 10).is_err());
    }

    #[test]
    fn matches_direct_formula() {
        // direct evaluation of -log(e^{y_j} / sum_i e^{y_i}) on moderate logits
        let y = [0.3f64, -1.2, 2.5, 0.0, 1.1, -0.4, 0.9, -2.2, 1.7, 0.05];
        let denom: f64 = y.iter().map(|v| v.exp()).sum();
        for j in 0..10 {
            let (l, g) = softmax_xent(&y, j).unwrap();
            assert!((l - -(y[j].exp() / denom).ln()).abs() < 1e-13);
            for i in 0..10 {
                let p = y[i].exp() / denom;
                let want = if i == j { p - 1.0 } else { p };
                assert!((g[i] - want).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn loss_nonnegative_grad_sums_to_zero(y in prop::collection::vec(-30.0f64..30.0, 10), j in 0usize..10) {
            let (l, g) = softmax_xent(&y, j).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
