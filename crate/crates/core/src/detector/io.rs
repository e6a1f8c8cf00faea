//! Binary model file.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! "PSVI"            4 bytes magic
//! version  u32      currently 1
//! seed     u64      initialisation seed of the spec
//! H W C    3 × u32  input size
//! stages   u32      then per stage: out_channels kernel stride pad pool_window pool_stride
//! fcs      u32      then one u32 per FC layer size
//! means    3 × f32  per-channel preprocessing means
//! params   f32 …    per layer: weights, then bias
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::model::Model;
use super::spec::{ConvStage, ModelSpec};
use super::ModelError;
use crate::tensor::{LayerParams, Tensor};

pub const MAGIC: [u8; 4] = *b"PSVI";
pub const FORMAT_VERSION: u32 = 1;
/// Magic, version and seed.
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("not a model file: bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated: needed {needed} bytes at offset {offset}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} unexpected bytes after the last parameter")]
    TrailingBytes(usize),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, FormatError> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let mut out = Vec::with_capacity(spec.file_size().unwrap_or(0));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&spec.seed.to_le_bytes());
        put_u32(&mut out, spec.input_height);
        put_u32(&mut out, spec.input_width);
        put_u32(&mut out, spec.input_channels);
        put_u32(&mut out, spec.conv_stages.len());
        for st in &spec.conv_stages {
            for v in [
                st.out_channels,
                st.kernel,
                st.stride,
                st.pad,
                st.pool_window,
                st.pool_stride,
            ] {
                put_u32(&mut out, v);
            }
        }
        put_u32(&mut out, spec.fc_sizes.len());
        for &s in &spec.fc_sizes {
            put_u32(&mut out, s);
        }
        for m in self.channel_means() {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for p in self.layers() {
            for v in p.weights.data().iter().chain(p.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Model, ModelError> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic.to_vec()).into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let seed = r.u64()?;
        let (input_height, input_width, input_channels) = (r.usize()?, r.usize()?, r.usize()?);
        let stage_count = r.usize()?;
        // a corrupt count must not drive a huge allocation
        if stage_count > r.remaining() / 24 {
            r.take(stage_count.saturating_mul(24))?;
        }
        let mut conv_stages = Vec::with_capacity(stage_count);
        for _ in 0..stage_count {
            conv_stages.push(ConvStage {
                out_channels: r.usize()?,
                kernel: r.usize()?,
                stride: r.usize()?,
                pad: r.usize()?,
                pool_window: r.usize()?,
                pool_stride: r.usize()?,
            });
        }
        let fc_count = r.usize()?;
        if fc_count > r.remaining() / 4 {
            r.take(fc_count.saturating_mul(4))?;
        }
        let fc_sizes = (0..fc_count)
            .map(|_| r.usize())
            .collect::<Result<Vec<_>, _>>()?;
        let channel_means = [r.f32()?, r.f32()?, r.f32()?];
        let spec = ModelSpec {
            input_height,
            input_width,
            input_channels,
            conv_stages,
            fc_sizes,
            seed,
        };
        let shapes = spec.validate()?;
        let total: usize = shapes
            .layers
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum();
        let bytes = total * 4;
        if r.remaining() < bytes {
            return Err(FormatError::Truncated {
                offset: r.pos,
                needed: bytes,
                available: r.remaining(),
            }
            .into());
        }
        if r.remaining() > bytes {
            return Err(FormatError::TrailingBytes(r.remaining() - bytes).into());
        }
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor, ModelError> {
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
            Ok(Tensor::from_vec(shape, data)?)
        };
        let mut params = Vec::with_capacity(shapes.layers.len());
        for (wshape, bias_len) in &shapes.layers {
            let weights = read_tensor(wshape)?;
            let bias = read_tensor(&[*bias_len])?;
            params.push(LayerParams::new(weights, bias));
        }
        Ok(Model::from_parts(spec, params, channel_means))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        Model::from_bytes(&fs::read(path)?)
    }
}
