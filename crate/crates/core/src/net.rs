//! The fixed ten-layer Ranking-CNN: construction, transmission-bin
//! labelling, training, classification and feature extraction.
//!
//! ```text
//! input 3×20×20
//! conv 5×5 → 32×16×16, ReLU
//! max-pool 2×2 → 32×8×8
//! ranking            (default placement)
//! conv 3×3 → 32×6×6, ReLU
//! conv 3×3 → 32×4×4, ReLU
//! max-pool 2×2 → 32×2×2
//! dense 128 → 64, ReLU
//! dense 64 → 64      (feature layer)
//! dense 64 → 10      (bin logits)
//! ```

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, lr_at, sgd_step, Layer, LayerKind, LayerParams, Network, Objective, Tensor, TrainConfig};
use crate::par::{substream, Exec};
use crate::synth::{PatchDataset, PatchSample};

pub const PATCH: usize = 20;
pub const CLASSES: usize = 10;
pub const FEATURE_DIM: usize = 64;

/// Transmission bin `j ∈ 1..=10`: `t ∈ ((j-1)/10, j/10]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinLabel(u8);

impl BinLabel {
    pub fn new(j: u8) -> Result<Self> {
        if (1..=CLASSES as u8).contains(&j) {
            Ok(BinLabel(j))
        } else {
            Err(Error::InvalidArgument(format!("bin label {j} outside 1..=10")))
        }
    }

    /// 1-based bin number.
    pub fn get(self) -> u8 {
        self.0
    }

    /// 0-based class index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn one_hot(self) -> [u8; CLASSES] {
        let mut v = [0; CLASSES];
        v[self.index()] = 1;
        v
    }
}

/// Smallest `j` with `t ≤ j/10`.
pub fn bin_label(t: f64) -> Result<BinLabel> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("transmission {t} outside (0, 1]")));
    }
    let j = (1..=CLASSES as u8)
        .find(|&j| t <= j as f64 / 10.0)
        .expect("t <= 1 always lands in a bin");
    Ok(BinLabel(j))
}

/// Where the ranking layer goes. `None` builds the classical CNN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Placement {
    AfterConv1,
    #[default]
    AfterPool1,
    AfterConv2,
    AfterConv3,
    AfterPool2,
    None,
}

impl Placement {
    pub const ALL: [Placement; 6] = [
        Placement::AfterConv1,
        Placement::AfterPool1,
        Placement::AfterConv2,
        Placement::AfterConv3,
        Placement::AfterPool2,
        Placement::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placement::AfterConv1 => "conv1",
            Placement::AfterPool1 => "pool1",
            Placement::AfterConv2 => "conv2",
            Placement::AfterConv3 => "conv3",
            Placement::AfterPool2 => "pool2",
            Placement::None => "none",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Placement::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown placement `{s}` (conv1|pool1|conv2|conv3|pool2|none)")))
    }
}

/// Output layer of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Head {
    /// 10 bin logits trained with soft-max loss.
    #[default]
    Classifier,
    /// A single linear output trained with squared error on `t` (the
    /// end-to-end regression variant, for comparison only).
    Regression,
}

/// Which activation to use as the patch descriptor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureLayer {
    /// Flattened second pooling output (128-D).
    Pool2,
    /// First dense layer after ReLU (64-D).
    Fc1,
    /// Second dense layer (64-D), the default.
    #[default]
    Fc2,
}

/// A Ranking-CNN (or ablation variant) with its trained state.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    network: Network<f32>,
    trained: bool,
}

/// Builds the fixed architecture. For a given seed the parameters are
/// identical across placements because the ranking layer owns none.
pub fn build_network(placement: Placement, seed: u64) -> NetworkModel {
    build_network_with_head(placement, Head::Classifier, seed)
}

pub fn build_network_with_head(placement: Placement, head: Head, seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv1 = LayerParams::glorot(32, 3, 5, &mut rng);
    let conv2 = LayerParams::glorot(32, 32, 3, &mut rng);
    let conv3 = LayerParams::glorot(32, 32, 3, &mut rng);
    let fc1 = LayerParams::glorot(64, 128, 1, &mut rng);
    let fc2 = LayerParams::glorot(64, 64, 1, &mut rng);
    let out = match head {
        Head::Classifier => LayerParams::glorot(CLASSES, 64, 1, &mut rng),
        Head::Regression => LayerParams::glorot(1, 64, 1, &mut rng),
    };

    let mut layers = Vec::with_capacity(14);
    let rank_if = |layers: &mut Vec<Layer<f32>>, here: Placement| {
        if placement == here {
            layers.push(Layer::Rank);
        }
    };
    layers.extend([Layer::Conv(conv1), Layer::Relu]);
    rank_if(&mut layers, Placement::AfterConv1);
    layers.push(Layer::MaxPool);
    rank_if(&mut layers, Placement::AfterPool1);
    layers.extend([Layer::Conv(conv2), Layer::Relu]);
    rank_if(&mut layers, Placement::AfterConv2);
    layers.extend([Layer::Conv(conv3), Layer::Relu]);
    rank_if(&mut layers, Placement::AfterConv3);
    layers.push(Layer::MaxPool);
    rank_if(&mut layers, Placement::AfterPool2);
    layers.extend([Layer::Dense(fc1), Layer::Relu, Layer::Dense(fc2), Layer::Dense(out)]);

    let network = Network::new([3, PATCH, PATCH], layers).expect("fixed architecture chains");
    NetworkModel { network, trained: false }
}

impl NetworkModel {
    /// Wraps a loaded network, checking it has the Ranking-CNN interface
    /// (3×20×20 input, a final dense layer fed by 64 features).
    pub fn from_network(network: Network<f32>) -> Result<Self> {
        if network.input_shape() != [3, PATCH, PATCH] {
            return Err(Error::shape("NetworkModel", "3x20x20 input", format!("{:?}", network.input_shape())));
        }
        match network.layers().last() {
            Some(Layer::Dense(p)) if p.in_dim() == FEATURE_DIM => {}
            _ => return Err(Error::InvalidArgument("network must end in a dense layer over 64 features".into())),
        }
        Ok(NetworkModel { network, trained: true })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.network
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks the model usable for inference without training it.
    pub fn assume_trained(&mut self) {
        self.trained = true;
    }

    pub fn head(&self) -> Head {
        if self.network.output_shape()[0] == 1 {
            Head::Regression
        } else {
            Head::Classifier
        }
    }

    pub fn placement(&self) -> Placement {
        let layers = self.network.layers();
        let Some(i) = layers.iter().position(|l| l.kind() == LayerKind::Rank) else {
            return Placement::None;
        };
        let convs = layers[..i].iter().filter(|l| l.kind() == LayerKind::Conv).count();
        let pools = layers[..i].iter().filter(|l| l.kind() == LayerKind::MaxPool).count();
        match (convs, pools) {
            (1, 0) => Placement::AfterConv1,
            (1, 1) => Placement::AfterPool1,
            (2, _) => Placement::AfterConv2,
            (3, 1) => Placement::AfterConv3,
            _ => Placement::AfterPool2,
        }
    }

    /// Number of layers to run to obtain `which`.
    fn feature_depth(&self, which: FeatureLayer) -> usize {
        let layers = self.network.layers();
        let last = layers.len() - 1;
        match which {
            FeatureLayer::Fc2 => last,
            FeatureLayer::Fc1 => {
                let d = layers.iter().position(|l| l.kind() == LayerKind::Dense).unwrap_or(last);
                // include the ReLU that follows
                if layers.get(d + 1).map(Layer::kind) == Some(LayerKind::Relu) {
                    d + 2
                } else {
                    d + 1
                }
            }
            FeatureLayer::Pool2 => {
                let d = layers.iter().position(|l| l.kind() == LayerKind::Dense).unwrap_or(last);
                d
            }
        }
    }

    pub fn feature_dim(&self, which: FeatureLayer) -> usize {
        let depth = self.feature_depth(which);
        let shapes = self.network.shapes().expect("validated at construction");
        let [c, h, w] = shapes[depth - 1];
        c * h * w
    }

    fn check_patches(&self, patches: &Tensor<f32>) -> Result<()> {
        if patches.sample_shape() != [3, PATCH, PATCH] {
            return Err(Error::shape(
                "patch",
                "3x20x20",
                format!("{:?}", patches.sample_shape()),
            ));
        }
        Ok(())
    }

    /// Raw outputs (bin logits, or the scalar for a regression head).
    pub fn logits(&self, patches: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_patches(patches)?;
        self.network.forward(patches)
    }

    /// Soft-max bin probabilities per patch.
    pub fn classify(&self, patches: &Tensor<f32>) -> Result<Vec<[f32; CLASSES]>> {
        if self.head() != Head::Classifier {
            return Err(Error::InvalidArgument("classify needs a classifier head".into()));
        }
        let y = self.logits(patches)?;
        Ok((0..y.batch())
            .map(|s| {
                let p = nn::softmax(y.sample(s));
                let mut out = [0.0; CLASSES];
                out.copy_from_slice(&p);
                out
            })
            .collect())
    }

    /// Feature vectors for a batch of patches, row-major `batch × dim`.
    pub fn features_at(&self, patches: &Tensor<f32>, which: FeatureLayer) -> Result<Vec<f32>> {
        self.check_patches(patches)?;
        let depth = self.feature_depth(which);
        Ok(self.network.forward_range(patches, 0..depth)?.into_vec())
    }

    /// 64-D second-dense-layer features (the classifier output is skipped).
    pub fn extract_features(&self, patches: &Tensor<f32>) -> Result<Vec<f32>> {
        self.features_at(patches, FeatureLayer::Fc2)
    }

    /// Applies the output layer to precomputed features.
    pub fn head_from_features(&self, features: &[f32]) -> Result<Tensor<f32>> {
        let n = features.len() / FEATURE_DIM;
        let x = Tensor::from_vec([n, FEATURE_DIM, 1, 1], features.to_vec())?;
        let last = self.network.layers().len() - 1;
        self.network.forward_range(&x, last..last + 1)
    }

    /// Features for many patches, computed in independent chunks.
    pub fn features_for(
        &self,
        samples: &[&[f32]],
        which: FeatureLayer,
        exec: Exec,
    ) -> Result<Vec<f32>> {
        const CHUNK: usize = 256;
        let dim = self.feature_dim(which);
        let chunks = samples.len().div_ceil(CHUNK);
        let parts = exec.map(chunks, |c| -> Result<Vec<f32>> {
            let rows = &samples[c * CHUNK..((c + 1) * CHUNK).min(samples.len())];
            let mut data = Vec::with_capacity(rows.len() * 3 * PATCH * PATCH);
            rows.iter().for_each(|r| data.extend_from_slice(r));
            let t = Tensor::from_vec([rows.len(), 3, PATCH, PATCH], data)?;
            self.features_at(&t, which)
        });
        let mut out = Vec::with_capacity(samples.len() * dim);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path, config: Option<&TrainConfig>) -> Result<()> {
        nn::serialize::save(path, &self.network, config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_network(nn::serialize::load(path)?)
    }
}

/// Training/validation index partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Reserves `floor(fraction · n)` samples for validation, chosen by a
/// seeded shuffle.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed ^ 0x5e11_7a1d, 0));
    let n_val = ((n as f64) * fraction).floor() as usize;
    let validation = {
        let mut v = idx[..n_val].to_vec();
        v.sort_unstable();
        v
    };
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    Split { train, validation }
}

/// Fraction of patches held out for validation by [`train`].
pub const VALIDATION_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Top-1 bin accuracy (classifier head).
    pub val_accuracy: Option<f64>,
    /// Mean absolute transmission error (regression head).
    pub val_mae: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub iterations: u64,
}

impl TrainReport {
    /// `epoch,mean_loss,val_accuracy,lr` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,val_accuracy,lr")?;
        for e in &self.history {
            let acc = e.val_accuracy.or(e.val_mae).map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(w, "{},{:.6},{},{:.8}", e.epoch, e.mean_loss, acc, e.lr)?;
        }
        Ok(())
    }
}

fn gather(samples: &[&PatchSample]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * 3 * PATCH * PATCH);
    for s in samples {
        data.extend_from_slice(&s.hazy);
    }
    Tensor::from_vec([samples.len(), 3, PATCH, PATCH], data)
}

/// Trains on the dataset with the default 5% hold-out.
pub fn train(model: &mut NetworkModel, dataset: &PatchDataset, config: &TrainConfig) -> Result<TrainReport> {
    let split = holdout_split(dataset.samples.len(), VALIDATION_FRACTION, config.rng_seed);
    train_on(model, dataset, &split, config, |_| {})
}

/// Mini-batch SGD over `split.train`, evaluating on `split.validation`
/// after every epoch. `on_epoch` sees each epoch's statistics as they are
/// produced.
pub fn train_on(
    model: &mut NetworkModel,
    dataset: &PatchDataset,
    split: &Split,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let head = model.head();
    let mut order = split.train.clone();
    let mut report = TrainReport::default();
    let mut iter: u64 = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut substream(config.rng_seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let x = gather(&batch)?;
            let (loss, grads) = match head {
                Head::Classifier => {
                    let labels: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
                    model.network.loss_and_grads(&x, Objective::Classes(&labels))?
                }
                Head::Regression => {
                    let t: Vec<f64> = batch.iter().map(|s| s.t).collect();
                    model.network.loss_and_grads(&x, Objective::Targets(&t))?
                }
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration: iter,
                    batch_start: b * config.batch_size,
                    loss,
                });
            }
            let lr = lr_at(iter, config);
            for (layer, g) in model.network.layers_mut().iter_mut().zip(&grads) {
                if let (Some(p), Some(g)) = (layer.params_mut(), g) {
                    sgd_step(p, g, lr, config.momentum);
                }
            }
            loss_sum += loss;
            batches += 1;
            iter += 1;
        }
        model.trained = true;
        let (val_accuracy, val_mae) = if split.validation.is_empty() {
            (None, None)
        } else {
            let v = evaluate(model, dataset, &split.validation)?;
            match head {
                Head::Classifier => (Some(v), None),
                Head::Regression => (None, Some(v)),
            }
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            val_accuracy,
            val_mae,
            lr: lr_at(iter.saturating_sub(1), config),
        };
        on_epoch(&stats);
        report.history.push(stats);
    }
    report.iterations = iter;
    Ok(report)
}

/// Top-1 accuracy (classifier) or mean absolute error in `t` (regression)
/// over the given samples.
pub fn evaluate(model: &NetworkModel, dataset: &PatchDataset, indices: &[usize]) -> Result<f64> {
    let mut score = 0.0;
    for chunk in indices.chunks(256) {
        let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let y = model.logits(&gather(&batch)?)?;
        for (s, sample) in batch.iter().enumerate() {
            let out = y.sample(s);
            score += match model.head() {
                Head::Classifier => (argmax(out) == sample.label.index()) as u8 as f64,
                Head::Regression => (out[0] as f64 - sample.t).abs(),
            };
        }
    }
    Ok(score / indices.len().max(1) as f64)
}

/// Mean training loss of the model over the given samples, without
/// updating it.
pub fn mean_loss(model: &NetworkModel, dataset: &PatchDataset, indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(256) {
        let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
        let y = model.logits(&gather(&batch)?)?;
        let losses = match model.head() {
            Head::Classifier => {
                let labels: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
                Objective::Classes(&labels).evaluate(&y)?.0
            }
            Head::Regression => {
                let t: Vec<f64> = batch.iter().map(|s| s.t).collect();
                Objective::Targets(&t).evaluate(&y)?.0
            }
        };
        total += losses.iter().sum::<f64>();
    }
    Ok(total / indices.len().max(1) as f64)
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, synthesize_hazy};

    #[test]
    fn bins() {
        assert_eq!(bin_label(0.1).unwrap().get(), 1);
        assert_eq!(bin_label(1.0).unwrap().get(), 10);
        assert_eq!(bin_label(0.1000001).unwrap().get(), 2);
        assert_eq!(bin_label(0.05).unwrap().get(), 1);
        for i in 1..=10 {
            assert_eq!(bin_label(i as f64 / 10.0).unwrap().get(), i as u8);
        }
        for bad in [0.0, -0.1, 1.0000001, f64::NAN] {
            assert!(bin_label(bad).is_err());
        }
        let l = bin_label(0.35).unwrap();
        assert_eq!(l.one_hot().iter().map(|&v| v as u32).sum::<u32>(), 1);
        assert_eq!(l.one_hot()[3], 1);
    }

    #[test]
    fn architecture_shapes() {
        let m = build_network(Placement::AfterPool1, 0);
        let shapes = m.network().shapes().unwrap();
        assert_eq!(shapes[0], [32, 16, 16]);
        assert_eq!(shapes.last(), Some(&[10, 1, 1]));
        assert_eq!(m.network().layers()[3].kind(), LayerKind::Rank);
        assert_eq!(m.placement(), Placement::AfterPool1);
        assert_eq!(m.feature_dim(FeatureLayer::Pool2), 128);
        assert_eq!(m.feature_dim(FeatureLayer::Fc1), 64);
        assert_eq!(m.feature_dim(FeatureLayer::Fc2), 64);
    }

    #[test]
    fn placements_share_parameters() {
        let base = build_network(Placement::None, 3);
        for p in Placement::ALL {
            let m = build_network(p, 3);
            assert_eq!(m.placement(), p);
            assert_eq!(m.network().param_count(), base.network().param_count());
            let a: Vec<_> = m.network().layers().iter().filter_map(|l| l.params()).collect();
            let b: Vec<_> = base.network().layers().iter().filter_map(|l| l.params()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(
            base.network().param_count(),
            32 * 75 + 32 + 2 * (32 * 288 + 32) + 128 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10
        );
    }

    #[test]
    fn placement_names_parse() {
        for p in Placement::ALL {
            assert_eq!(p.name().parse::<Placement>().unwrap(), p);
        }
        assert!("fc1".parse::<Placement>().is_err());
    }

    #[test]
    fn zero_patch_gives_finite_logits() {
        let m = build_network(Placement::default(), 1);
        let y = m.logits(&Tensor::zeros([1, 3, 20, 20])).unwrap();
        assert_eq!(y.len(), 10);
        assert!(y.is_finite());
        assert!(m.logits(&Tensor::zeros([1, 3, 19, 20])).is_err());
    }

    #[test]
    fn features_feed_the_classifier() {
        let m = build_network(Placement::default(), 2);
        let clear: Vec<f32> = (0..1200).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let x = Tensor::from_vec([1, 3, 20, 20], synthesize_hazy(&clear, 0.4, [1.0; 3]).unwrap()).unwrap();
        let f = m.extract_features(&x).unwrap();
        assert_eq!(f.len(), 64);
        assert_eq!(f, m.extract_features(&x).unwrap());
        assert_eq!(m.head_from_features(&f).unwrap(), m.logits(&x).unwrap());
        let p = m.classify(&x).unwrap()[0];
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(argmax(&p), argmax(m.logits(&x).unwrap().data()));
    }

    #[test]
    fn untrained_is_near_chance() {
        let patches: Vec<Vec<f32>> = (0..200)
            .map(|k| (0..1200).map(|i| ((i * (k % 17 + 1) + k) % 97) as f32 / 97.0).collect())
            .collect();
        let ds = build_dataset(&patches, 10, 3, Exec::Parallel).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let mut m = build_network(Placement::default(), 8);
        m.assume_trained();
        let acc = evaluate(&m, &ds, &all).unwrap();
        // An untrained network collapses onto few bins of a balanced set.
        assert!(acc < 0.25, "{acc}");
        let loss = mean_loss(&m, &ds, &all).unwrap();
        assert!((loss - 10f64.ln()).abs() < 0.5, "{loss}");
    }

    #[test]
    fn split_sizes() {
        let s = holdout_split(100, 0.05, 1);
        assert_eq!(s.validation.len(), 5);
        assert_eq!(s.train.len(), 95);
        assert_eq!(s, holdout_split(100, 0.05, 1));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(holdout_split(1, 0.05, 0).validation.is_empty());
    }

    #[test]
    fn single_sample_overfits() {
        let clear: Vec<f32> = (0..1200).map(|i| ((i * 31) % 97) as f32 / 97.0).collect();
        let ds = build_dataset(&[clear], 1, 5, Exec::Sequential).unwrap();
        let mut m = build_network(Placement::default(), 4);
        let cfg = TrainConfig { epochs: 50, batch_size: 1, rng_seed: 1, ..Default::default() };
        let split = Split { train: vec![0], validation: vec![] };
        let r = train_on(&mut m, &ds, &split, &cfg, |_| {}).unwrap();
        assert_eq!(r.iterations, 50);
        let first = r.history[0].mean_loss;
        let last = r.history.last().unwrap().mean_loss;
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_reproducible() {
        let clear: Vec<Vec<f32>> = (0..8)
            .map(|k| (0..1200).map(|i| ((i * (k + 3)) % 101) as f32 / 101.0).collect())
            .collect();
        let ds = build_dataset(&clear, 4, 9, Exec::Parallel).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, rng_seed: 5, ..Default::default() };
        let mut a = build_network(Placement::default(), 6);
        let mut b = build_network(Placement::default(), 6);
        let ra = train(&mut a, &ds, &cfg).unwrap();
        let rb = train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.iterations, 2 * 31usize.div_ceil(8) as u64);
        let mut csv = Vec::new();
        ra.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }
}
