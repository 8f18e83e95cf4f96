use super::params::{LayerParams, ParamGrads};
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// SGD hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial_lr must be > 0, got {}", self.initial_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        format!(
            "initial_lr={}\nmomentum={}\nbatch_size={}\nepochs={}\nrng_seed={}\n",
            self.initial_lr, self.momentum, self.batch_size, self.epochs, self.rng_seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("malformed line `{line}`")))?;
            let bad = |_| Error::InvalidArgument(format!("bad value for {k}: `{v}`"));
            let v = v.trim();
            match k.trim() {
                "initial_lr" => cfg.initial_lr = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "momentum" => cfg.momentum = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "epochs" => cfg.epochs = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "rng_seed" => cfg.rng_seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => return Err(Error::InvalidArgument(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Inverse-power decay: `lr0 · (1 + 1e-4·iter)^-0.75`, with `iter` counting
/// mini-batch updates from 0.
pub fn lr_at(iter: u64, config: &TrainConfig) -> f64 {
    config.initial_lr * (1.0 + 0.0001 * iter as f64).powf(-0.75)
}

/// Classical momentum: `v ← μ·v − lr·g`, `θ ← θ + v`.
pub fn sgd_step<T: Scalar>(params: &mut LayerParams<T>, grads: &ParamGrads<T>, lr: f64, momentum: f64) {
    let lr = T::from_f64_lossy(lr);
    let mu = T::from_f64_lossy(momentum);
    let update = |theta: &mut [T], vel: &mut [T], g: &[T]| {
        for ((p, v), &g) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    };
    update(params.weights.data_mut(), &mut params.weight_velocity, &grads.weights);
    update(&mut params.bias, &mut params.bias_velocity, &grads.bias);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.01);
        let want = 0.01 * 2f64.powf(-0.75);
        assert!((lr_at(10_000, &cfg) - want).abs() < 1e-15);
        assert!((lr_at(10_000, &cfg) - 0.0059460).abs() < 1e-7);
        for a in [0u64, 1, 10, 999, 50_000] {
            assert!(lr_at(a, &cfg) > lr_at(a + 1, &cfg));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { initial_lr: 0.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { momentum: -0.1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_text_round_trip() {
        let c = TrainConfig { initial_lr: 0.02, momentum: 0.5, batch_size: 16, epochs: 3, rng_seed: 42 };
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::from_text("bogus=1").is_err());
    }

    fn scalar_param(v: f64) -> LayerParams<f64> {
        LayerParams::from_parts(Tensor::from_vec([1, 1, 1, 1], vec![v]).unwrap(), vec![0.0])
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut p = scalar_param(1.5);
        sgd_step(&mut p, &ParamGrads { weights: vec![0.0], bias: vec![0.0] }, 0.1, 0.9);
        assert_eq!(p.weights.data(), &[1.5]);
    }

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut p = scalar_param(1.5);
        sgd_step(&mut p, &ParamGrads { weights: vec![2.0], bias: vec![-1.0] }, 0.1, 0.0);
        assert!((p.weights.data()[0] - 1.3).abs() < 1e-15);
        assert!((p.bias[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_steps_on_quadratic() {
        // f(θ) = θ², g = 2θ, θ0 = 1, lr = 0.1, μ = 0.9
        // v1 = -0.2, θ1 = 0.8; v2 = 0.9·(-0.2) - 0.1·1.6 = -0.34, θ2 = 0.46
        let mut p = scalar_param(1.0);
        for _ in 0..2 {
            let g = 2.0 * p.weights.data()[0];
            sgd_step(&mut p, &ParamGrads { weights: vec![g], bias: vec![0.0] }, 0.1, 0.9);
        }
        assert!((p.weights.data()[0] - 0.46).abs() < 1e-12);
        assert!((p.weight_velocity[0] + 0.34).abs() < 1e-12);
    }
}
