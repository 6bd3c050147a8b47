//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "EUISNET\0"
//! version          u32      = 1
//! in_channels      u32
//! out_channels     u32
//! base_width       u32
//! dropout_rate     f64
//! decoder_widths   4 × u32
//! param_count      u32
//!   id             u32
//!   name_len       u32, then name_len bytes of UTF-8
//!   dims           4 × u32  (N, C, H, W)
//!   values         N·C·H·W × f32
//! bn_count         u32
//!   gamma_id       u32      (identifies the layer)
//!   channels       u32
//!   running_mean   channels × f32
//!   running_var    channels × f32
//! has_training     u8       (0 or 1)
//!   epoch          u32
//!   lr             f64
//!   best_metric    f64
//!   adam_step      u64
//!   moment_count   u32
//!     id           u32
//!     numel        u32
//!     first        numel × f32
//!     second       numel × f32
//! ```
//!
//! Values are stored as `f32`; an `f32` model round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

use super::config::ModelConfig;
use super::net::EuisNet;

const MAGIC: &[u8; 8] = b"EUISNET\0";
const VERSION: u32 = 1;

/// Optimizer moments for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentRecord {
    pub id: ParamId,
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

/// Training progress stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub epoch: u32,
    pub lr: f64,
    pub best_metric: f64,
    pub adam_step: u64,
    pub moments: Vec<MomentRecord>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s<I: IntoIterator<Item = f32>>(w: &mut impl Write, vals: I) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

/// Serializes a model (and optional training state).
pub fn write_checkpoint<T: Scalar, W: Write>(
    w: &mut W,
    model: &EuisNet<T>,
    training: Option<&TrainingState>,
) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let c = &model.config;
    w.write_all(MAGIC).map_err(io)?;
    put_u32(w, VERSION).map_err(io)?;
    put_u32(w, to_u32(c.in_channels, "in_channels")?).map_err(io)?;
    put_u32(w, to_u32(c.out_channels, "out_channels")?).map_err(io)?;
    put_u32(w, to_u32(c.base_width, "base_width")?).map_err(io)?;
    put_f64(w, c.dropout_rate).map_err(io)?;
    for &d in &c.decoder_widths {
        put_u32(w, to_u32(d, "decoder width")?).map_err(io)?;
    }

    let params = model.parameters();
    put_u32(w, to_u32(params.len(), "parameter count")?).map_err(io)?;
    for p in params {
        put_u32(w, p.id.0).map_err(io)?;
        put_u32(w, to_u32(p.name.len(), "name length")?).map_err(io)?;
        w.write_all(p.name.as_bytes()).map_err(io)?;
        for d in p.shape().dims() {
            put_u32(w, to_u32(d, "dimension")?).map_err(io)?;
        }
        put_f32s(w, p.value.data().iter().map(|v| v.as_f64() as f32)).map_err(io)?;
    }

    let bns = model.batch_norms();
    put_u32(w, to_u32(bns.len(), "batch-norm count")?).map_err(io)?;
    for bn in bns {
        put_u32(w, bn.gamma.id.0).map_err(io)?;
        put_u32(w, to_u32(bn.channels(), "channels")?).map_err(io)?;
        put_f32s(w, bn.running_mean.iter().map(|v| v.as_f64() as f32)).map_err(io)?;
        put_f32s(w, bn.running_var.iter().map(|v| v.as_f64() as f32)).map_err(io)?;
    }

    match training {
        None => w.write_all(&[0]).map_err(io)?,
        Some(t) => {
            w.write_all(&[1]).map_err(io)?;
            put_u32(w, t.epoch).map_err(io)?;
            put_f64(w, t.lr).map_err(io)?;
            put_f64(w, t.best_metric).map_err(io)?;
            put_u64(w, t.adam_step).map_err(io)?;
            put_u32(w, to_u32(t.moments.len(), "moment count")?).map_err(io)?;
            for m in &t.moments {
                if m.first.len() != m.second.len() {
                    return Err(Error::Checkpoint(format!("moment length mismatch for {}", m.id)));
                }
                put_u32(w, m.id.0).map_err(io)?;
                put_u32(w, to_u32(m.first.len(), "moment length")?).map_err(io)?;
                put_f32s(w, m.first.iter().copied()).map_err(io)?;
                put_f32s(w, m.second.iter().copied()).map_err(io)?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; n * 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Deserializes a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<(EuisNet<T>, Option<TrainingState>)> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not an EUIS-Net checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig {
        in_channels: r.usize()?,
        out_channels: r.usize()?,
        base_width: r.usize()?,
        dropout_rate: r.f64()?,
        decoder_widths: [r.usize()?, r.usize()?, r.usize()?, r.usize()?],
    };
    let mut model = EuisNet::<T>::new(config, 0)?;

    let count = r.usize()?;
    let expected = model.parameters().len();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, architecture needs {expected}"
        )));
    }
    for p in model.parameters_mut() {
        let id = ParamId(r.u32()?);
        let name_len = r.usize()?;
        let mut name = vec![0u8; name_len];
        r.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let shape = Shape::new(r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        if id != p.id || name != p.name || shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {id} '{name}' {shape} does not match expected {} '{}' {}",
                p.id,
                p.name,
                p.shape()
            )));
        }
        let vals = r.f32s(shape.numel())?;
        p.value = Tensor::from_vec(shape, vals.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect())?;
    }

    let bn_count = r.usize()?;
    let expected = model.batch_norms().len();
    if bn_count != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {bn_count} batch-norm layers, expected {expected}"
        )));
    }
    for bn in model.batch_norms_mut() {
        let id = ParamId(r.u32()?);
        let ch = r.usize()?;
        if id != bn.gamma.id || ch != bn.channels() {
            return Err(Error::Checkpoint(format!(
                "batch-norm record {id} does not match layer {}",
                bn.gamma.id
            )));
        }
        bn.running_mean = r.f32s(ch)?.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect();
        bn.running_var = r.f32s(ch)?.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect();
    }

    let training = match r.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let epoch = r.u32()?;
            let lr = r.f64()?;
            let best_metric = r.f64()?;
            let adam_step = r.u64()?;
            let n = r.usize()?;
            let mut moments = Vec::with_capacity(n);
            for _ in 0..n {
                let id = ParamId(r.u32()?);
                let len = r.usize()?;
                let first = r.f32s(len)?;
                let second = r.f32s(len)?;
                moments.push(MomentRecord { id, first, second });
            }
            Some(TrainingState {
                epoch,
                lr,
                best_metric,
                adam_step,
                moments,
            })
        }
        b => return Err(Error::Checkpoint(format!("bad training-state flag {b}"))),
    };
    Ok((model, training))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &EuisNet<T>, training: Option<&TrainingState>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, model, training)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(EuisNet<T>, Option<TrainingState>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"NOTACKPT\x01\0\0\0".to_vec();
        assert!(matches!(
            read_checkpoint::<f32, _>(&bytes[..]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let model = EuisNet::<f32>::new(ModelConfig::with_base_width(2), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, None).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_checkpoint::<f32, _>(&buf[..]).is_err());
    }

    #[test]
    fn save_load_save_is_bit_identical() {
        let model = EuisNet::<f32>::new(ModelConfig::with_base_width(2), 7).unwrap();
        let state = TrainingState {
            epoch: 3,
            lr: 2.5e-4,
            best_metric: 0.75,
            adam_step: 12,
            moments: vec![MomentRecord {
                id: ParamId(0),
                first: vec![0.5; 3],
                second: vec![0.25; 3],
            }],
        };
        let mut a = Vec::new();
        write_checkpoint(&mut a, &model, Some(&state)).unwrap();
        let (loaded, st) = read_checkpoint::<f32, _>(&a[..]).unwrap();
        assert_eq!(st.as_ref(), Some(&state));
        let mut b = Vec::new();
        write_checkpoint(&mut b, &loaded, st.as_ref()).unwrap();
        assert_eq!(a, b);
    }
}
