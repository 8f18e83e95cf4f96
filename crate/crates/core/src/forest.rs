//! Random-forest regression from patch features to transmission.
//!
//! Each tree sees a bootstrap resample of the training rows and a fixed
//! random subset of the feature dimensions, chosen once per tree. Splits
//! maximise the reduction in summed squared error; a node becomes a leaf
//! when it cannot be split into two children of at least `min_leaf` rows or
//! its targets are constant.
//!
//! `RFOR` file layout (little-endian):
//!
//! ```text
//! "RFOR"  u32 version (1)
//! u32 dim, u32 min_leaf, u32 tree count
//! dim × f64 importance
//! per tree: u32 subset size, subset × u32 dims,
//!           u32 node count, per node: u32 feature (u32::MAX for a leaf),
//!           f64 threshold, u32 left, u32 right, f64 value
//! ```

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::par::{substream, Exec};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"RFOR";
pub const VERSION: u32 = 1;
const LEAF: u32 = u32::MAX;

/// Mean taken relative to the first value, so equal inputs give exactly
/// that value back.
fn shifted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut values = values.peekable();
    let Some(&first) = values.peek() else {
        return f64::NAN;
    };
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - first), n + 1));
    first + sum / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub feature_frac: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            feature_frac: 1.0 / 3.0,
            min_leaf: 5,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// Dimensions per tree: `⌈dim · feature_frac⌉`, at least one.
    pub fn subset_size(&self, dim: usize) -> usize {
        ((dim as f64 * self.feature_frac).ceil() as usize).clamp(1, dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    subset: Vec<u32>,
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut n = &self.nodes[0];
        while n.feature != LEAF {
            n = if x[n.feature as usize] as f64 <= n.threshold {
                &self.nodes[n.left as usize]
            } else {
                &self.nodes[n.right as usize]
            };
        }
        n.value
    }

    /// Feature dimensions this tree may split on.
    pub fn subset(&self) -> &[u32] {
        &self.subset
    }

    /// Dimensions actually used by some split.
    pub fn split_features(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().filter(|n| n.feature != LEAF).map(|n| n.feature)
    }

    pub fn leaf_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter(|n| n.feature == LEAF).map(|n| n.value)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    dim: usize,
    min_leaf: usize,
    trees: Vec<Tree>,
    importance: Vec<f64>,
}

fn check_rows(features: &[f32], dim: usize) -> Result<usize> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::shape("features", format!("rows of {dim}"), features.len()));
    }
    Ok(features.len() / dim)
}

/// Fits `config.n_trees` trees in parallel, each from its own substream.
pub fn fit_forest(features: &[f32], dim: usize, targets: &[f64], config: &ForestConfig, exec: Exec) -> Result<ForestModel> {
    let n = check_rows(features, dim)?;
    if n != targets.len() {
        return Err(Error::shape("fit_forest", format!("{n} targets"), targets.len()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("a forest needs at least two samples".into()));
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidArgument(format!("target {t} outside (0, 1]")));
    }
    if config.n_trees == 0 || config.min_leaf == 0 || !(config.feature_frac > 0.0 && config.feature_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!("invalid forest config {config:?}")));
    }
    let k = config.subset_size(dim);
    let fits = exec.map(config.n_trees, |i| {
        let mut rng = substream(config.seed, i as u64);
        let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
        let mut subset: Vec<u32> = sample(&mut rng, dim, k).into_iter().map(|d| d as u32).collect();
        subset.sort_unstable();
        let mut imp = vec![0.0; dim];
        let tree = TreeBuilder::new(features, dim, targets, &rows, subset, config.min_leaf).build(&mut imp);
        (tree, imp)
    });
    let mut importance = vec![0.0; dim];
    let mut trees = Vec::with_capacity(fits.len());
    for (tree, imp) in fits {
        importance.iter_mut().zip(&imp).for_each(|(a, b)| *a += b);
        trees.push(tree);
    }
    Ok(ForestModel { dim, min_leaf: config.min_leaf, trees, importance })
}

/// CART on one bootstrap sample. Every subset feature keeps the sample
/// positions of the current node sorted by value, so a split only needs a
/// linear scan and a stable partition.
struct TreeBuilder<'a> {
    features: &'a [f32],
    dim: usize,
    min_leaf: usize,
    y: Vec<f64>,
    /// Row of each sample position.
    rows: &'a [u32],
    subset: Vec<u32>,
    /// `order[f]` holds positions sorted by feature `subset[f]`.
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

struct Split {
    slot: usize,
    threshold: f64,
    left_len: usize,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    fn new(features: &'a [f32], dim: usize, targets: &[f64], rows: &'a [u32], subset: Vec<u32>, min_leaf: usize) -> Self {
        let y: Vec<f64> = rows.iter().map(|&r| targets[r as usize]).collect();
        let order = subset
            .iter()
            .map(|&f| {
                let mut o: Vec<u32> = (0..rows.len() as u32).collect();
                let key = |p: u32| features[rows[p as usize] as usize * dim + f as usize];
                o.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
                o
            })
            .collect();
        TreeBuilder {
            features,
            dim,
            min_leaf,
            y,
            rows,
            subset,
            order,
            goes_left: vec![false; rows.len()],
            scratch: Vec::with_capacity(rows.len()),
            nodes: Vec::new(),
        }
    }

    fn value(&self, pos: u32, slot: usize) -> f32 {
        self.features[self.rows[pos as usize] as usize * self.dim + self.subset[slot] as usize]
    }

    fn build(mut self, importance: &mut [f64]) -> Tree {
        self.nodes.push(Node::leaf(0.0));
        // (node index, range in every order list)
        let mut stack = vec![(0usize, 0usize, self.y.len())];
        while let Some((id, lo, hi)) = stack.pop() {
            let (sum, sq) = self.order[0][lo..hi].iter().fold((0.0, 0.0), |(s, q), &p| {
                let v = self.y[p as usize];
                (s + v, q + v * v)
            });
            let count = (hi - lo) as f64;
            let mean = shifted_mean(self.order[0][lo..hi].iter().map(|&p| self.y[p as usize]));
            self.nodes[id] = Node::leaf(mean);
            let sse = (sq - sum * sum / count).max(0.0);
            if hi - lo < 2 * self.min_leaf || sse <= 1e-12 * count {
                continue;
            }
            let Some(split) = self.best_split(lo, hi, sum, sse) else {
                continue;
            };
            importance[self.subset[split.slot] as usize] += split.gain;
            let mid = self.partition(lo, hi, &split);
            let left = self.nodes.len();
            self.nodes.push(Node::leaf(0.0));
            self.nodes.push(Node::leaf(0.0));
            self.nodes[id] = Node {
                feature: self.subset[split.slot],
                threshold: split.threshold,
                left: left as u32,
                right: left as u32 + 1,
                value: mean,
            };
            stack.push((left + 1, mid, hi));
            stack.push((left, lo, mid));
        }
        Tree { subset: self.subset, nodes: self.nodes }
    }

    fn best_split(&self, lo: usize, hi: usize, total: f64, parent_sse: f64) -> Option<Split> {
        let n = hi - lo;
        let mut best: Option<Split> = None;
        // Minimising SSE_l + SSE_r is maximising s_l²/n_l + s_r²/n_r.
        let base = total * total / n as f64;
        for slot in 0..self.subset.len() {
            let ord = &self.order[slot][lo..hi];
            let mut left_sum = 0.0;
            for i in 0..n - self.min_leaf {
                left_sum += self.y[ord[i] as usize];
                let nl = i + 1;
                if nl < self.min_leaf {
                    continue;
                }
                let a = self.value(ord[i], slot);
                let b = self.value(ord[i + 1], slot);
                if a == b {
                    continue;
                }
                let nr = n - nl;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
                if best.as_ref().is_none_or(|s| score > s.gain) {
                    best = Some(Split {
                        slot,
                        threshold: (a as f64 + b as f64) / 2.0,
                        left_len: nl,
                        gain: score,
                    });
                }
            }
        }
        best.filter(|s| s.gain > 1e-12 * parent_sse.max(1e-300))
    }

    /// Stable partition of every order list; returns the split point.
    fn partition(&mut self, lo: usize, hi: usize, split: &Split) -> usize {
        let ord = &self.order[split.slot][lo..hi];
        for (i, &p) in ord.iter().enumerate() {
            self.goes_left[p as usize] = i < split.left_len;
        }
        for slot in 0..self.order.len() {
            if slot == split.slot {
                continue;
            }
            self.scratch.clear();
            let list = &mut self.order[slot][lo..hi];
            let mut w = 0;
            for r in 0..list.len() {
                let p = list[r];
                if self.goes_left[p as usize] {
                    list[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            list[w..].copy_from_slice(&self.scratch);
        }
        lo + split.left_len
    }
}

impl ForestModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean of the trees' leaf values.
    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::shape("predict", self.dim, x.len()));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f32]) -> f64 {
        shifted_mean(self.trees.iter().map(|t| t.predict(x)))
    }

    /// Predictions for row-major `features`.
    pub fn predict_batch(&self, features: &[f32], exec: Exec) -> Result<Vec<f64>> {
        let n = check_rows(features, self.dim)?;
        Ok(exec.map(n, |i| self.predict_unchecked(&features[i * self.dim..(i + 1) * self.dim])))
    }

    /// Total squared-error reduction attributed to each dimension.
    pub fn feature_importance(&self) -> &[f64] {
        &self.importance
    }

    /// `dim,importance` rows.
    pub fn write_importance_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dim,importance")?;
        for (d, v) in self.importance.iter().enumerate() {
            writeln!(w, "{d},{v:.9}")?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.dim as u32);
        w.u32(self.min_leaf as u32);
        w.u32(self.trees.len() as u32);
        self.importance.iter().for_each(|&v| w.f64(v));
        for t in &self.trees {
            w.u32(t.subset.len() as u32);
            t.subset.iter().for_each(|&d| w.u32(d));
            w.u32(t.nodes.len() as u32);
            for n in &t.nodes {
                w.u32(n.feature);
                w.f64(n.threshold);
                w.u32(n.left);
                w.u32(n.right);
                w.f64(n.value);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, "forest", MAGIC, VERSION)?;
        let dim = r.u32()? as usize;
        let min_leaf = r.u32()? as usize;
        let n_trees = r.count(8)?;
        if dim == 0 || n_trees == 0 {
            return Err(r.corrupt("empty forest"));
        }
        let importance = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let k = r.count(4)?;
            let subset = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if subset.iter().any(|&d| d as usize >= dim) {
                return Err(r.corrupt("subset dimension out of range"));
            }
            let m = r.count(28)?;
            if m == 0 {
                return Err(r.corrupt("tree without nodes"));
            }
            let mut nodes = Vec::with_capacity(m);
            for i in 0..m {
                let node = Node {
                    feature: r.u32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                    value: r.f64()?,
                };
                // Children always follow their parent, which rules out cycles.
                let bad_child = |c: u32| c as usize <= i || c as usize >= m;
                if node.feature != LEAF
                    && (!subset.contains(&node.feature) || bad_child(node.left) || bad_child(node.right))
                {
                    return Err(r.corrupt(format!("node {i} is malformed")));
                }
                nodes.push(node);
            }
            trees.push(Tree { subset, nodes });
        }
        r.end()?;
        Ok(ForestModel { dim, min_leaf, trees, importance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
