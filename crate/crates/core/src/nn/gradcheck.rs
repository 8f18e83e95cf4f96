//! Central finite-difference gradient checking in double precision.
//!
//! Every parameter and every input element is perturbed by `±STEP` and the
//! loss recomputed. Perturbed forward passes are batched: for a parameter
//! of layer `L` only the output channel it feeds is recomputed (directly,
//! from the unrolled windows), and the rest of the network runs on a batch
//! of such perturbed activations.
//!
//! ReLU, max-pooling and ranking make the loss piecewise smooth. A probe
//! whose `+STEP` or `−STEP` pass changes any gate, pool winner or ranking
//! order straddles a kink where the finite difference is meaningless; such
//! probes are counted in [`GradCheckReport::skipped_kinks`] and excluded
//! from the error maximum.

use super::conv::conv2d_channel;
use super::loss::Objective;
use super::network::{Layer, Network};
use super::params::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-4;

/// Lower bound on the relative-error denominator. Finite differences of a
/// loss of order 1 carry absolute noise around `1e-12`; gradients smaller
/// than this floor are compared absolutely.
pub const DENOMINATOR_FLOOR: f64 = 1e-7;

const BATCH_ROWS: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Where the worst relative error occurred.
    pub worst: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

#[derive(Clone, Debug)]
enum Targets {
    Classes(Vec<usize>),
    Reals(Vec<f64>),
}

impl Targets {
    fn of(obj: Objective<'_>) -> Self {
        match obj {
            Objective::Classes(c) => Targets::Classes(c.to_vec()),
            Objective::Targets(t) => Targets::Reals(t.to_vec()),
        }
    }

    fn pick(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Reals(t) => Targets::Reals(rows.iter().map(|&r| t[r]).collect()),
        }
    }

    fn objective(&self) -> Objective<'_> {
        match self {
            Targets::Classes(c) => Objective::Classes(c),
            Targets::Reals(t) => Objective::Targets(t),
        }
    }
}

/// One pending perturbed evaluation.
#[derive(Clone, Copy)]
struct Probe {
    /// Index into the flat list of checked quantities.
    slot: usize,
    sample: usize,
    plus: bool,
}

struct Accumulator<'a> {
    net: &'a Network<f64>,
    targets: &'a Targets,
    base_print: Vec<u64>,
    start: usize,
    rows: Vec<f64>,
    row_shape: [usize; 3],
    probes: Vec<Probe>,
    // per slot: (loss+, loss-, kink)
    results: Vec<(f64, f64, bool)>,
}

impl Accumulator<'_> {
    fn push(&mut self, row: &[f64], probe: Probe) -> Result<()> {
        self.rows.extend_from_slice(row);
        self.probes.push(probe);
        if self.probes.len() >= BATCH_ROWS {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.probes.is_empty() {
            return Ok(());
        }
        let [c, h, w] = self.row_shape;
        let batch = Tensor::from_vec([self.probes.len(), c, h, w], std::mem::take(&mut self.rows))?;
        let trace = self.net.forward_trace_from(self.start, batch)?;
        let samples: Vec<usize> = self.probes.iter().map(|p| p.sample).collect();
        let t = self.targets.pick(&samples);
        let (losses, _) = t.objective().evaluate(trace.output())?;
        for (i, p) in self.probes.iter().enumerate() {
            let kink = trace.fingerprint(i) != self.base_print[p.sample];
            let r = &mut self.results[p.slot];
            if p.plus {
                r.0 = losses[i];
            } else {
                r.1 = losses[i];
            }
            r.2 |= kink;
        }
        self.probes.clear();
        Ok(())
    }
}

fn check_distinct(input: &Tensor<f64>) -> Result<()> {
    let map = input.height() * input.width();
    for (m, plane) in input.data().chunks(map.max(1)).enumerate() {
        let mut v = plane.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if v.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidArgument(format!(
                "grad_check needs pairwise distinct values per channel (map {m} has ties)"
            )));
        }
    }
    Ok(())
}

/// Compares analytic gradients of each sample's loss against central
/// finite differences, over all parameters and the input.
pub fn grad_check(
    network: &Network<f64>,
    input: &Tensor<f64>,
    objective: Objective<'_>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_distinct(input)?;
    let n = input.batch();
    let targets = Targets::of(objective);
    if objective.len() != n {
        return Err(Error::shape("grad_check", format!("{n} targets"), objective.len()));
    }

    // analytic gradients, one sample at a time
    let mut analytic: Vec<(Vec<Option<ParamGrads<f64>>>, Tensor<f64>)> = Vec::with_capacity(n);
    for s in 0..n {
        let x = input.sample_tensor(s);
        let trace = network.forward_trace(&x)?;
        let (_, g) = targets.pick(&[s]).objective().evaluate(trace.output())?;
        let (pg, gi) = network.backward(&trace, g, true)?;
        analytic.push((pg, gi.expect("input gradient requested")));
    }

    let base = network.forward_trace(input)?;
    let shapes = network.shapes()?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks: 0,
        tolerance,
    };
    let mut absorb = |acc: &Accumulator<'_>, labels: &[(String, f64)]| {
        for ((lp, lm, kink), (label, a)) in acc.results.iter().zip(labels) {
            if *kink {
                report.skipped_kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * STEP);
            let rel = relative_error(*a, fd);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - fd).abs());
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = format!("{label}: analytic {a:.6e}, numeric {fd:.6e}");
            }
        }
    };

    let mut work = network.clone();
    for li in 0..network.layers().len() {
        let Some(params) = network.layers()[li].params() else { continue };
        let is_conv = matches!(network.layers()[li], Layer::Conv(_));
        let x = base.activation(li);
        let y = base.activation(li + 1);
        let in_shape = x.sample_shape();
        let out_shape = shapes[li];
        let plane = out_shape[1] * out_shape[2];
        let fan = if is_conv { params.fan_in() } else { params.in_dim() };
        let n_w = params.weights.len();
        let total = n_w + params.bias.len();

        let base_print = (0..n).map(|s| base.fingerprint_from(s, li + 1)).collect();
        let mut acc = Accumulator {
            net: network,
            targets: &targets,
            base_print,
            start: li + 1,
            rows: Vec::new(),
            row_shape: out_shape,
            probes: Vec::new(),
            results: vec![(0.0, 0.0, false); total * n],
        };
        let mut labels = Vec::with_capacity(total * n);
        let mut row = vec![0.0; y.sample_len()];
        for j in 0..total {
            let (o, is_bias) = if j < n_w { (j / fan, false) } else { (j - n_w, true) };
            for s in 0..n {
                let slot = j * n + s;
                let a = {
                    let g = analytic[s].0[li].as_ref().expect("param grads");
                    if is_bias { g.bias[o] } else { g.weights[j] }
                };
                let what = if is_bias { format!("bias[{o}]") } else { format!("weight[{j}]") };
                labels.push((format!("layer {li} {what}, sample {s}"), a));
                for plus in [true, false] {
                    let delta = if plus { STEP } else { -STEP };
                    let p = work.layers_mut()[li].params_mut().expect("parametric");
                    let orig = if is_bias { p.bias[o] } else { p.weights.data()[j] };
                    if is_bias {
                        p.bias[o] = orig + delta;
                    } else {
                        p.weights.data_mut()[j] = orig + delta;
                    }
                    row.copy_from_slice(y.sample(s));
                    let dst = &mut row[o * plane..(o + 1) * plane];
                    if is_conv {
                        conv2d_channel(x.sample(s), in_shape, p, o, dst);
                    } else {
                        let w = &p.weights.data()[o * fan..(o + 1) * fan];
                        dst[0] = p.bias[o] + w.iter().zip(x.sample(s)).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if is_bias {
                        p.bias[o] = orig;
                    } else {
                        p.weights.data_mut()[j] = orig;
                    }
                    acc.push(&row, Probe { slot, sample: s, plus })?;
                }
            }
        }
        acc.flush()?;
        absorb(&acc, &labels);
    }

    // input gradient
    let per = input.sample_len();
    let mut acc = Accumulator {
        net: network,
        targets: &targets,
        base_print: (0..n).map(|s| base.fingerprint(s)).collect(),
        start: 0,
        rows: Vec::new(),
        row_shape: input.sample_shape(),
        probes: Vec::new(),
        results: vec![(0.0, 0.0, false); per * n],
    };
    let mut labels = Vec::with_capacity(per * n);
    let mut row = vec![0.0; per];
    for s in 0..n {
        for e in 0..per {
            let slot = s * per + e;
            labels.push((format!("input[{e}], sample {s}"), analytic[s].1.data()[e]));
            for plus in [true, false] {
                row.copy_from_slice(input.sample(s));
                row[e] += if plus { STEP } else { -STEP };
                acc.push(&row, Probe { slot, sample: s, plus })?;
            }
        }
    }
    acc.flush()?;
    absorb(&acc, &labels);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn distinct_input(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_network_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::new(
            [1, 3, 3],
            vec![
                Layer::Dense(LayerParams::glorot(5, 9, 1, &mut rng)),
                Layer::Dense(LayerParams::glorot(1, 5, 1, &mut rng)),
            ],
        )
        .unwrap();
        let x = distinct_input([3, 1, 3, 3], &mut rng);
        // squared error of a linear map is quadratic: central differences are
        // exact up to rounding
        let r = grad_check(&net, &x, Objective::Targets(&[0.2, 0.5, 0.9]), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.skipped_kinks, 0);
        assert!(r.passed());
    }

    #[test]
    fn rank_dense_loss_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let net = Network::new(
            [2, 3, 3],
            vec![Layer::Rank, Layer::Dense(LayerParams::glorot(4, 18, 1, &mut rng))],
        )
        .unwrap();
        let x = distinct_input([4, 2, 3, 3], &mut rng);
        let r = grad_check(&net, &x, Objective::Classes(&[0, 1, 2, 3]), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.0, 1e-9) - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn ties_rejected() {
        let net = Network::new([1, 1, 2], vec![Layer::Rank]).unwrap();
        let x = Tensor::from_vec([1, 1, 1, 2], vec![0.5, 0.5]).unwrap();
        assert!(grad_check(&net, &x, Objective::Targets(&[0.0]), 1e-4).is_err());
    }

    #[test]
    fn batched_conv_pool_probes_are_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = Network::new(
            [2, 6, 6],
            vec![
                Layer::Conv(LayerParams::glorot(3, 2, 3, &mut rng)),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Rank,
                Layer::Dense(LayerParams::glorot(4, 12, 1, &mut rng)),
            ],
        )
        .unwrap();
        let x = distinct_input([3, 2, 6, 6], &mut rng);
        let r = grad_check(&net, &x, Objective::Classes(&[0, 2, 3]), 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
        // kinks are rare for random inputs; a sample's later position in
        // the probe batch must not register as one
        assert!(r.skipped_kinks * 10 < r.checked, "{r:?}");
    }
}
