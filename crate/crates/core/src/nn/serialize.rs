//! Model file format (`.model`).
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! "RCNN"            4 bytes magic
//! version           u32 (= 1)
//! input c, h, w     3 × u32
//! layer count       u32
//! per layer:
//!   tag             u8: 1 conv, 2 maxpool, 3 relu, 4 rank, 5 dense
//!   conv / dense:   out u32, in u32, k u32 (1 for dense),
//!                   weights f32 × out·in·k·k  (out, in, ky, kx order),
//!                   bias f32 × out
//! ```
//!
//! The training configuration is written next to the model as a text
//! sidecar (`<file>.train.txt`, `key=value` lines).

use std::fs;
use std::path::{Path, PathBuf};

use super::network::{Layer, Network};
use super::optim::TrainConfig;
use super::params::LayerParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"RCNN";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_RANK: u8 = 4;
const TAG_DENSE: u8 = 5;

pub fn encode(net: &Network<f32>) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    for d in net.input_shape() {
        w.u32(d as u32);
    }
    w.u32(net.layers().len() as u32);
    for layer in net.layers() {
        match layer {
            Layer::Conv(p) | Layer::Dense(p) => {
                w.u8(if matches!(layer, Layer::Conv(_)) { TAG_CONV } else { TAG_DENSE });
                w.u32(p.out_dim() as u32);
                w.u32(p.in_dim() as u32);
                w.u32(p.kernel() as u32);
                w.f32s(p.weights.data());
                w.f32s(&p.bias);
            }
            Layer::MaxPool => w.u8(TAG_POOL),
            Layer::Relu => w.u8(TAG_RELU),
            Layer::Rank => w.u8(TAG_RANK),
        }
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader::open(bytes, "model file", MAGIC, VERSION)?;
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n = r.count(1)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8()?;
        layers.push(match tag {
            TAG_CONV | TAG_DENSE => {
                let (out, inp, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                if tag == TAG_DENSE && k != 1 {
                    return Err(r.corrupt(format!("dense layer with kernel {k}")));
                }
                let len = out
                    .checked_mul(inp)
                    .and_then(|v| v.checked_mul(k * k))
                    .ok_or_else(|| r.corrupt("parameter count overflow"))?;
                let weights = Tensor::from_vec([out, inp, k, k], r.f32s(len)?)?;
                let bias = r.f32s(out)?;
                let p = LayerParams::from_parts(weights, bias);
                if tag == TAG_CONV {
                    Layer::Conv(p)
                } else {
                    Layer::Dense(p)
                }
            }
            TAG_POOL => Layer::MaxPool,
            TAG_RELU => Layer::Relu,
            TAG_RANK => Layer::Rank,
            other => return Err(r.corrupt(format!("unknown layer tag {other}"))),
        });
    }
    r.end()?;
    Network::new(shape, layers).map_err(|e| Error::Corrupt {
        what: "model file",
        offset: bytes.len() as u64,
        reason: e.to_string(),
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".train.txt");
    PathBuf::from(s)
}

/// Writes the model and, when given, its training configuration sidecar.
pub fn save(path: &Path, net: &Network<f32>, config: Option<&TrainConfig>) -> Result<()> {
    fs::write(path, encode(net))?;
    if let Some(c) = config {
        fs::write(sidecar_path(path), c.to_text())?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Network<f32>> {
    decode(&fs::read(path)?)
}

/// Reads the training sidecar written by [`save`], if present.
pub fn load_config(path: &Path) -> Result<Option<TrainConfig>> {
    match fs::read_to_string(sidecar_path(path)) {
        Ok(t) => TrainConfig::from_text(&t).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Network::new(
            [3, 6, 6],
            vec![
                Layer::Conv(LayerParams::glorot(4, 3, 3, &mut rng)),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Rank,
                Layer::Dense(LayerParams::glorot(5, 16, 1, &mut rng)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let n = net();
        let bytes = encode(&n);
        assert_eq!(&bytes[..4], b"RCNN");
        assert_eq!(decode(&bytes).unwrap(), n);
    }

    #[test]
    fn truncation_and_version() {
        let bytes = encode(&net());
        for cut in [0, 3, 7, 20, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        let msg = decode(&v2).unwrap_err().to_string();
        assert!(msg.contains('2') && msg.contains('1'), "{msg}");
        let mut junk = bytes;
        junk.push(0);
        assert!(decode(&junk).is_err());
    }

    #[test]
    fn file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.model");
        let cfg = TrainConfig { epochs: 3, rng_seed: 9, ..Default::default() };
        save(&p, &net(), Some(&cfg)).unwrap();
        assert_eq!(load(&p).unwrap(), net());
        assert_eq!(load_config(&p).unwrap(), Some(cfg));
    }
}
