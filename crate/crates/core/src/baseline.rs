//! Comparison regressors for the forest: ridge-regularised least squares,
//! the same fit on logit-transformed targets, and RBF kernel ridge
//! regression (standing in for a support-vector regressor).
//!
//! Features are standardised per dimension before fitting. Predictions are
//! clamped into `[EPS, 1]` so every regressor returns a valid transmission.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::par::{substream, Exec};

/// Lower clamp for predictions and for targets before `logit`.
pub const EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Linear,
    LogisticLink,
    Kernel,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Linear, BaselineKind::LogisticLink, BaselineKind::Kernel];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Linear => "linear",
            BaselineKind::LogisticLink => "logistic",
            BaselineKind::Kernel => "kernel",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}` (linear|logistic|kernel)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    /// Ridge strength for the linear fits, relative to the sample count.
    pub linear_ridge: f64,
    /// Ridge strength of the kernel system `(K + λI)α = y`.
    pub kernel_ridge: f64,
    /// RBF width `exp(−γ‖x − x'‖²)`; `None` uses `1 / dim`.
    pub gamma: Option<f64>,
    /// Kernel fits use at most this many support points.
    pub max_kernel_points: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            linear_ridge: 1e-6,
            kernel_ridge: 0.1,
            gamma: None,
            max_kernel_points: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[f32], dim: usize) -> Self {
        let n = (x.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in x.chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64 / n);
        }
        let mut var = vec![0.0; dim];
        for row in x.chunks(dim) {
            var.iter_mut().zip(row).zip(&mean).for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2) / n);
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    fn apply<'a>(&'a self, row: &'a [f32]) -> impl Iterator<Item = f64> + 'a {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((&v, m), s)| (v as f64 - m) * s)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Fitted {
    /// Weights with the intercept last.
    Linear(Vec<f64>),
    Kernel {
        support: Vec<Vec<f64>>,
        alpha: Vec<f64>,
        offset: f64,
        gamma: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    kind: BaselineKind,
    dim: usize,
    standardizer: Standardizer,
    fitted: Fitted,
}

fn logit(t: f64) -> f64 {
    let t = t.clamp(EPS, 1.0 - EPS);
    (t / (1.0 - t)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Solves the SPD system, adding diagonal load until Cholesky succeeds.
fn solve_spd(mut a: DMatrix<f64>, b: DVector<f64>, mut ridge: f64) -> DVector<f64> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    ridge = ridge.max(f64::EPSILON) * scale;
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    loop {
        if let Some(c) = a.clone().cholesky() {
            return c.solve(&b);
        }
        for i in 0..n {
            a[(i, i)] += ridge * 9.0;
        }
        ridge *= 10.0;
    }
}

pub fn fit_baseline(
    kind: BaselineKind,
    features: &[f32],
    dim: usize,
    targets: &[f64],
    config: &BaselineConfig,
) -> Result<BaselineModel> {
    if dim == 0 || features.len() % dim != 0 || features.len() / dim != targets.len() {
        return Err(Error::shape("fit_baseline", format!("{} rows of {dim}", targets.len()), features.len()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let standardizer = Standardizer::fit(features, dim);
    let rows: Vec<Vec<f64>> = features.chunks(dim).map(|r| standardizer.apply(r).collect()).collect();
    let fitted = match kind {
        BaselineKind::Linear | BaselineKind::LogisticLink => {
            let y: Vec<f64> = match kind {
                BaselineKind::Linear => targets.to_vec(),
                _ => targets.iter().map(|&t| logit(t)).collect(),
            };
            let p = dim + 1;
            let mut xtx = DMatrix::<f64>::zeros(p, p);
            let mut xty = DVector::<f64>::zeros(p);
            let mut aug = vec![1.0; p];
            for (row, &t) in rows.iter().zip(&y) {
                aug[..dim].copy_from_slice(row);
                for i in 0..p {
                    xty[i] += aug[i] * t;
                    for j in 0..=i {
                        xtx[(i, j)] += aug[i] * aug[j];
                    }
                }
            }
            for i in 0..p {
                for j in 0..i {
                    xtx[(j, i)] = xtx[(i, j)];
                }
            }
            Fitted::Linear(solve_spd(xtx, xty, config.linear_ridge).iter().copied().collect())
        }
        BaselineKind::Kernel => {
            let n = rows.len();
            let m = n.min(config.max_kernel_points.max(1));
            let mut pick: Vec<usize> = sample(&mut substream(config.seed, 0), n, m).into_vec();
            pick.sort_unstable();
            let support: Vec<Vec<f64>> = pick.iter().map(|&i| rows[i].clone()).collect();
            let y: Vec<f64> = pick.iter().map(|&i| targets[i]).collect();
            let offset = y.iter().sum::<f64>() / m as f64;
            let gamma = config.gamma.unwrap_or(1.0 / dim as f64);
            let k = DMatrix::from_fn(m, m, |i, j| rbf(&support[i], &support[j], gamma));
            let mut k = k;
            for i in 0..m {
                k[(i, i)] += config.kernel_ridge;
            }
            let rhs = DVector::from_iterator(m, y.iter().map(|v| v - offset));
            let alpha = solve_spd(k, rhs, 0.0).iter().copied().collect();
            Fitted::Kernel { support, alpha, offset, gamma }
        }
    };
    Ok(BaselineModel { kind, dim, standardizer, fitted })
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::shape("predict", self.dim, x.len()));
        }
        let z: Vec<f64> = self.standardizer.apply(x).collect();
        let raw = match &self.fitted {
            Fitted::Linear(w) => w[self.dim] + z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>(),
            Fitted::Kernel { support, alpha, offset, gamma } => {
                offset + support.iter().zip(alpha).map(|(s, a)| a * rbf(s, &z, *gamma)).sum::<f64>()
            }
        };
        let t = match self.kind {
            BaselineKind::LogisticLink => sigmoid(raw),
            _ => raw,
        };
        Ok(t.clamp(EPS, 1.0))
    }

    pub fn predict_batch(&self, features: &[f32], exec: Exec) -> Result<Vec<f64>> {
        if features.len() % self.dim != 0 {
            return Err(Error::shape("predict_batch", format!("rows of {}", self.dim), features.len()));
        }
        exec.map(features.len() / self.dim, |i| self.predict(&features[i * self.dim..(i + 1) * self.dim]))
            .into_iter()
            .collect()
    }
}
