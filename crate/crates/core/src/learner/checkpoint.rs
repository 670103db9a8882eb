//! Versioned binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "ALLABMDL"
//! version    u32      1
//! dropout_p  f64
//! seed       u64
//! epoch      u64
//! layers     u32, then (fan_in u32, fan_out u32) per trunk layer
//! has_head   u8; if 1: branches u32, (fan_in, fan_out) per branch, then the output layer's (fan_in, fan_out)
//! params     f64 values, row-major, weights then bias for every layer in the order above
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{Dense, LossHead, Network};
use super::LearnerModel;
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ALLABMDL";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &LearnerModel, mut out: impl Write) -> std::io::Result<()> {
    let net = &model.net;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&model.dropout_p.to_le_bytes())?;
    out.write_all(&model.seed.to_le_bytes())?;
    out.write_all(&(model.epoch as u64).to_le_bytes())?;
    let shape = |d: &Dense| [d.fan_in() as u32, d.fan_out() as u32];
    out.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        for v in shape(l) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    match &net.head {
        None => out.write_all(&[0])?,
        Some(h) => {
            out.write_all(&[1])?;
            out.write_all(&(h.branches.len() as u32).to_le_bytes())?;
            for d in h.branches.iter().chain(std::iter::once(&h.out)) {
                for v in shape(d) {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    for slice in net.param_slices() {
        for v in slice {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &LearnerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at offset {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn dense_shape(&mut self) -> Result<Dense> {
        let (i, o) = (self.u32()?, self.u32()?);
        if i == 0 || o == 0 {
            return Err(Error::Checkpoint(format!("empty layer {i}x{o}")));
        }
        Ok(Dense {
            weight: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        })
    }
}

/// Reads a checkpoint. The training RNG restarts from a stream derived from the
/// stored seed and epoch.
pub fn read_checkpoint(mut input: impl Read) -> Result<LearnerModel> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if &c.take::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dropout_p = c.f64()?;
    let seed_value = c.u64()?;
    let epoch = c.u64()? as usize;
    let n_layers = c.u32()?;
    if n_layers == 0 {
        return Err(Error::Checkpoint("no layers".into()));
    }
    let layers = (0..n_layers).map(|_| c.dense_shape()).collect::<Result<Vec<_>>>()?;
    let head = match c.take::<1>()?[0] {
        0 => None,
        1 => {
            let n = c.u32()?;
            let branches = (0..n).map(|_| c.dense_shape()).collect::<Result<Vec<_>>>()?;
            Some(LossHead {
                branches,
                out: c.dense_shape()?,
            })
        }
        other => return Err(Error::Checkpoint(format!("bad head flag {other}"))),
    };
    let mut net = Network { layers, head };
    for w in net.layers.windows(2) {
        if w[0].fan_out() != w[1].fan_in() {
            return Err(Error::Checkpoint("inconsistent layer widths".into()));
        }
    }
    for slice in net.param_slices_mut() {
        for v in slice.iter_mut() {
            *v = c.f64()?;
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if !net.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(LearnerModel {
        net,
        dropout_p,
        seed: seed_value,
        epoch,
        rng: seed::rng(seed::derive(seed_value, &[seed::stream::MODEL, epoch as u64])),
        loss_history: Vec::new(),
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LearnerModel> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_model, LearnerConfig};

    #[test]
    fn roundtrip_preserves_parameters() {
        let cfg = LearnerConfig {
            hidden_sizes: vec![5, 3],
            loss_head: true,
            loss_head_width: 4,
            ..LearnerConfig::default()
        };
        let mut m = init_model(&cfg, 2, 3).unwrap();
        m.epoch = 17;
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.net, m.net);
        assert_eq!((back.epoch, back.dropout_p, back.seed), (17, m.dropout_p, m.seed));

        buf[8] = 9;
        assert!(read_checkpoint(buf.as_slice()).is_err());
        assert!(read_checkpoint(&b"ALLABMDL"[..]).is_err());
    }
}
