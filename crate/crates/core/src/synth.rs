//! Training-corpus synthesis: random clear patches from source images,
//! hazed with a constant per-patch transmission under white atmospheric
//! light, plus the `RCDS` dataset file format.
//!
//! ```text
//! "RCDS"  u32 version (1)
//! u64 sample count, u32 patch size s
//! per sample: 3·s·s f32 clear, 3·s·s f32 hazy, f64 t, u8 label (1..=10)
//! provenance: u64 seed, u64 clear patches, u32 per patch,
//!             u32 source count, length-prefixed UTF-8 source names
//! ```
//!
//! All values are little-endian.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::net::{bin_label, BinLabel};
use crate::par::{substream, Exec};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"RCDS";
pub const VERSION: u32 = 1;

/// Atmospheric light used for every training patch.
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// CHW, values in [0, 1].
    pub clear: Vec<f32>,
    /// CHW, `clear·t + (1 − t)`.
    pub hazy: Vec<f32>,
    pub t: f64,
    pub label: BinLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub seed: u64,
    pub clear_patches: u64,
    pub per_patch: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub patch_size: usize,
    pub samples: Vec<PatchSample>,
    pub provenance: Provenance,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples in each of the ten bins.
    pub fn label_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        self.samples.iter().for_each(|s| h[s.label.index()] += 1);
        h
    }
}

/// Draws `count` square patches. Patch `i` comes from its own substream:
/// an image chosen uniformly, then a uniformly random top-left corner.
/// Images smaller than the patch are skipped with a warning.
pub fn sample_clear_patches(images: &[RgbImage], count: usize, size: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    if count == 0 || size == 0 {
        return Err(Error::InvalidArgument("patch count and size must be at least 1".into()));
    }
    let usable: Vec<&RgbImage> = images
        .iter()
        .enumerate()
        .filter_map(|(i, img)| {
            if img.width() >= size && img.height() >= size {
                Some(img)
            } else {
                log::warn!(
                    "skipping image {i} ({}x{}): smaller than {size}x{size}",
                    img.width(),
                    img.height()
                );
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::NoImages(format!("no image is at least {size}x{size}")));
    }
    Ok(Exec::default().map(count, |i| {
        let mut rng = substream(seed, i as u64);
        let img = usable[rng.random_range(0..usable.len())];
        let x0 = rng.random_range(0..=img.width() - size);
        let y0 = rng.random_range(0..=img.height() - size);
        img.crop_chw(x0, y0, size)
    }))
}

/// `clear·t + A·(1 − t)` per channel, evaluated in f64.
pub fn synthesize_hazy(clear: &[f32], t: f64, a: [f64; 3]) -> Result<Vec<f32>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("transmission {t} outside (0, 1]")));
    }
    if clear.len() % 3 != 0 {
        return Err(Error::shape("synthesize_hazy", "3 channels", format!("{} values", clear.len())));
    }
    let plane = clear.len() / 3;
    Ok(clear
        .iter()
        .enumerate()
        .map(|(i, &j)| (j as f64 * t + a[i / plane] * (1.0 - t)) as f32)
        .collect())
}

/// Uniform on (0, 1]: `1 − u` for `u` uniform on [0, 1).
pub fn sample_transmission(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Hazes every clear patch at `per_patch` random transmissions. Patch `p`
/// draws its transmissions from substream `p`, so the result does not
/// depend on `exec`.
pub fn build_dataset(clear: &[Vec<f32>], per_patch: usize, seed: u64, exec: Exec) -> Result<PatchDataset> {
    if per_patch == 0 {
        return Err(Error::InvalidArgument("per_patch must be at least 1".into()));
    }
    let patch_size = match clear.first() {
        Some(p) => ((p.len() / 3) as f64).sqrt() as usize,
        None => 0,
    };
    if let Some(bad) = clear.iter().find(|p| p.len() != 3 * patch_size * patch_size) {
        return Err(Error::shape("build_dataset", format!("3x{patch_size}x{patch_size} patches"), bad.len()));
    }
    let groups = exec.map(clear.len(), |p| -> Result<Vec<PatchSample>> {
        let mut rng = substream(seed, p as u64);
        (0..per_patch)
            .map(|_| {
                let t = sample_transmission(&mut rng);
                Ok(PatchSample {
                    hazy: synthesize_hazy(&clear[p], t, WHITE)?,
                    clear: clear[p].clone(),
                    t,
                    label: bin_label(t)?,
                })
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(clear.len() * per_patch);
    for g in groups {
        samples.extend(g?);
    }
    Ok(PatchDataset {
        patch_size,
        samples,
        provenance: Provenance {
            sources: Vec::new(),
            seed,
            clear_patches: clear.len() as u64,
            per_patch: per_patch as u32,
        },
    })
}

pub fn encode(ds: &PatchDataset) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u64(ds.samples.len() as u64);
    w.u32(ds.patch_size as u32);
    for s in &ds.samples {
        w.f32s(&s.clear);
        w.f32s(&s.hazy);
        w.f64(s.t);
        w.u8(s.label.get());
    }
    let p = &ds.provenance;
    w.u64(p.seed);
    w.u64(p.clear_patches);
    w.u32(p.per_patch);
    w.u32(p.sources.len() as u32);
    p.sources.iter().for_each(|s| w.str(s));
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<PatchDataset> {
    let mut r = Reader::open(bytes, "dataset", MAGIC, VERSION)?;
    let n = r.u64()?;
    let patch_size = r.u32()? as usize;
    let len = 3 * patch_size * patch_size;
    let record = 8 * len + 9;
    if n.saturating_mul(record as u64) > bytes.len() as u64 {
        return Err(r.corrupt(format!("sample count {n} exceeds file size")));
    }
    let mut samples = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let clear = r.f32s(len)?;
        let hazy = r.f32s(len)?;
        let t = r.f64()?;
        let j = r.u8()?;
        let label = BinLabel::new(j).map_err(|_| r.corrupt(format!("label {j} outside 1..=10")))?;
        if bin_label(t).ok() != Some(label) {
            return Err(r.corrupt(format!("label {j} does not match transmission {t}")));
        }
        samples.push(PatchSample { clear, hazy, t, label });
    }
    let seed = r.u64()?;
    let clear_patches = r.u64()?;
    let per_patch = r.u32()?;
    let k = r.count(4)?;
    let sources = (0..k).map(|_| r.str()).collect::<Result<_>>()?;
    r.end()?;
    Ok(PatchDataset {
        patch_size,
        samples,
        provenance: Provenance { sources, seed, clear_patches, per_patch },
    })
}

pub fn write_dataset(path: &Path, ds: &PatchDataset) -> Result<()> {
    std::fs::write(path, encode(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<PatchDataset> {
    decode(&std::fs::read(path)?)
}
