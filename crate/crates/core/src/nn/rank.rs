//! The ranking layer.
//!
//! Each feature map is sorted ascending and written back row-major, so the
//! smallest response lands top-left and the largest bottom-right. Values
//! are permuted, never modified, and the layer has no parameters.
//!
//! For a map `I` with `N` elements the forward pass produces `O` with
//! `O[n] = I[C[n]]`, where `C` is the correspondence recorded here. The
//! backward pass routes each output gradient to its source element:
//! `dL/dI[C[n]] = dL/dO[n]`. Forward is one `O(N log N)` sort per map,
//! backward one `O(N)` scatter.

use std::cmp::Ordering;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Source index of every ranked element, per map.
///
/// Indices are 0-based within the map: `perm[m * map_len + n]` is the
/// position in map `m` whose value was placed at output position `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankCorrespondence {
    map_len: usize,
    perm: Vec<u32>,
}

impl RankCorrespondence {
    /// Wraps a raw permutation table, checking that every map's slice is a
    /// bijection on `0..map_len`.
    pub fn new(map_len: usize, perm: Vec<u32>) -> Result<Self> {
        let c = RankCorrespondence { map_len, perm };
        c.validate()?;
        Ok(c)
    }

    pub fn map_len(&self) -> usize {
        self.map_len
    }

    pub fn maps(&self) -> usize {
        if self.map_len == 0 {
            0
        } else {
            self.perm.len() / self.map_len
        }
    }

    /// The correspondence of map `m`.
    pub fn map(&self, m: usize) -> &[u32] {
        &self.perm[m * self.map_len..(m + 1) * self.map_len]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.perm
    }

    fn validate(&self) -> Result<()> {
        if self.map_len == 0 || self.perm.len() % self.map_len != 0 {
            return Err(Error::InvalidPermutation(format!(
                "{} entries do not split into maps of {}",
                self.perm.len(),
                self.map_len
            )));
        }
        let mut seen = vec![false; self.map_len];
        for (m, chunk) in self.perm.chunks(self.map_len).enumerate() {
            seen.iter_mut().for_each(|s| *s = false);
            for &p in chunk {
                let p = p as usize;
                if p >= self.map_len || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::InvalidPermutation(format!(
                        "map {m}: index {p} out of range or repeated"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sorts every `(sample, channel)` map ascending (stable), returning the
/// ranked tensor and the correspondence needed by [`rank_backward`].
pub fn rank_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, RankCorrespondence) {
    let [n, c, h, w] = input.shape();
    let map_len = h * w;
    let mut out = Tensor::zeros(input.shape());
    let mut perm = Vec::with_capacity(n * c * map_len);
    let mut order: Vec<u32> = Vec::with_capacity(map_len);
    for (src, dst) in input
        .data()
        .chunks(map_len.max(1))
        .zip(out.data_mut().chunks_mut(map_len.max(1)))
    {
        order.clear();
        order.extend(0..map_len as u32);
        // sort_by is stable, so ties keep their input order
        order.sort_by(|&a, &b| {
            src[a as usize]
                .partial_cmp(&src[b as usize])
                .unwrap_or(Ordering::Equal)
        });
        for (d, &i) in dst.iter_mut().zip(&order) {
            *d = src[i as usize];
        }
        perm.extend_from_slice(&order);
    }
    (out, RankCorrespondence { map_len, perm })
}

/// Scatters output gradients back to the positions they were ranked from.
pub fn rank_backward<T: Scalar>(grad_out: &Tensor<T>, corr: &RankCorrespondence) -> Result<Tensor<T>> {
    corr.validate()?;
    let [n, c, h, w] = grad_out.shape();
    if h * w != corr.map_len || n * c != corr.maps() {
        return Err(Error::shape(
            "rank_backward",
            format!("{} maps of {} elements", corr.maps(), corr.map_len),
            format!("{:?}", grad_out.shape()),
        ));
    }
    Ok(scatter(grad_out, corr))
}

/// [`rank_backward`] without re-validating a correspondence this module
/// produced itself.
pub(crate) fn scatter<T: Scalar>(grad_out: &Tensor<T>, corr: &RankCorrespondence) -> Tensor<T> {
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let map_len = corr.map_len;
    for ((g, dst), p) in grad_out
        .data()
        .chunks(map_len)
        .zip(grad_in.data_mut().chunks_mut(map_len))
        .zip(corr.perm.chunks(map_len))
    {
        for (&gv, &src) in g.iter().zip(p) {
            dst[src as usize] = gv;
        }
    }
    grad_in
}
