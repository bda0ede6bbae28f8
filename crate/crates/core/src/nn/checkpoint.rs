//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "DPSFCKPT"
//! version      u32      = 1
//! model seed   u64
//! layer count  u32
//! per layer:
//!   kind       u8       0 = dense, 1 = activation, 2 = low-rank adapter
//!   input      u32
//!   output     u32
//!   rank       u32      0 unless kind = 2
//!   spec seed  u64
//!   dense:     u64 count, then count × f64   (weights row-major, then bias)
//!   adapter:   the dense block for the frozen host, then
//!              u64 count, then count × f64   (down-projection, then up-projection)
//! ```
//!
//! Encoding then decoding reproduces every parameter bitwise.

use std::path::Path;

use super::layer::{check_rank, Adapter, Dense, Layer, LayerKind, LayerSpec};
use super::model::LayeredModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DPSFCKPT";
pub const VERSION: u32 = 1;

pub fn encode(model: &LayeredModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.num_layers() as u32).to_le_bytes());
    for (spec, layer) in model.specs().iter().zip(model.layers()) {
        let (kind, rank) = match layer {
            Layer::Dense(_) => (0u8, 0u32),
            Layer::Tanh { .. } => (1, 0),
            Layer::Adapted { adapter, .. } => (2, adapter.rank as u32),
        };
        out.push(kind);
        out.extend_from_slice(&(layer.input() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output() as u32).to_le_bytes());
        out.extend_from_slice(&rank.to_le_bytes());
        out.extend_from_slice(&spec.seed.to_le_bytes());
        let mut put = |v: &[f64]| {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        match layer {
            Layer::Dense(d) => put(&d.params),
            Layer::Tanh { .. } => {}
            Layer::Adapted { base, adapter } => {
                put(&base.params);
                put(&adapter.params);
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn f64_block(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected as u64 {
            return Err(Error::Checkpoint(format!(
                "parameter block has {n} values, expected {expected}"
            )));
        }
        if self.remaining() / 8 < expected {
            return Err(Error::Checkpoint("truncated parameter block".into()));
        }
        let bytes = self.take(expected * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn dense_len(input: usize, output: usize) -> Result<usize> {
    input
        .checked_mul(output)
        .and_then(|w| w.checked_add(output))
        .ok_or_else(|| Error::Checkpoint("layer dimensions overflow".into()))
}

pub fn decode(bytes: &[u8]) -> Result<LayeredModel> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = c.u64()?;
    let count = c.u32()? as usize;
    if count == 0 {
        return Err(Error::Checkpoint("no layers".into()));
    }
    // Each layer header is 21 bytes, which bounds `count` by the input size.
    if count > c.remaining() / 21 {
        return Err(Error::Checkpoint("layer count exceeds input size".into()));
    }
    let mut specs = Vec::with_capacity(count);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = c.u8()?;
        let input = c.u32()? as usize;
        let output = c.u32()? as usize;
        let rank = c.u32()? as usize;
        let spec_seed = c.u64()?;
        if input == 0 || output == 0 {
            return Err(Error::Checkpoint("zero layer width".into()));
        }
        let (kind, layer) = match kind {
            0 => {
                let params = c.f64_block(dense_len(input, output)?)?;
                (
                    LayerKind::Dense,
                    Layer::Dense(Dense {
                        input,
                        output,
                        params,
                    }),
                )
            }
            1 => {
                if input != output {
                    return Err(Error::Checkpoint("activation changes width".into()));
                }
                (LayerKind::Activation, Layer::Tanh { width: input })
            }
            2 => {
                check_rank(rank, input, output).map_err(|e| Error::Checkpoint(e.to_string()))?;
                let base = Dense {
                    input,
                    output,
                    params: c.f64_block(dense_len(input, output)?)?,
                };
                let n = rank
                    .checked_mul(input + output)
                    .ok_or_else(|| Error::Checkpoint("adapter dimensions overflow".into()))?;
                let adapter = Adapter {
                    rank,
                    input,
                    output,
                    params: c.f64_block(n)?,
                };
                (LayerKind::LowRankAdapter, Layer::Adapted { base, adapter })
            }
            k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
        };
        specs.push(LayerSpec {
            kind,
            input,
            output,
            rank: (kind == LayerKind::LowRankAdapter).then_some(rank),
            seed: spec_seed,
        });
        layers.push(layer);
    }
    if c.remaining() != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    LayeredModel::from_parts(specs, seed, layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, model: &LayeredModel) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<LayeredModel> {
    decode(&std::fs::read(path)?)
}
