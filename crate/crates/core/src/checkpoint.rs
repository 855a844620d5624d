//! Binary checkpoint holding the source network and its target mirror.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "WBCK"
//! version      u32      = 1
//! input_len    u32
//! output_len   u32
//! features     u32
//! layer_count  u32
//! shape table  layer_count × (out u32, in u32, activation u32)
//!              activation: 0 = tanh, 1 = identity
//! decay        f64
//! source       per layer: weight (out·in f64, row-major), bias (out f64)
//! target       same layout as source
//! checksum     u64      FNV-1a over every preceding byte
//! ```

use std::path::Path;

use crate::ema::EmaMirror;
use crate::linalg::Matrix;
use crate::mlp::{Activation, Layer, ModelParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WBCK";
pub const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn encode(source: &ModelParams, mirror: &EmaMirror) -> Result<Vec<u8>> {
    if !source.same_shape(mirror.target()) {
        return Err(Error::config("source and target networks differ in shape"));
    }
    let mut buf = Vec::with_capacity(64 + 16 * source.parameter_count());
    buf.extend_from_slice(MAGIC);
    let put_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut buf, VERSION as usize);
    put_u32(&mut buf, source.input_len());
    put_u32(&mut buf, source.output_len());
    put_u32(&mut buf, source.features());
    put_u32(&mut buf, source.layers().len());
    for l in source.layers() {
        put_u32(&mut buf, l.outputs());
        put_u32(&mut buf, l.inputs());
        put_u32(&mut buf, l.activation.code() as usize);
    }
    buf.extend_from_slice(&mirror.decay().to_le_bytes());
    for net in [source, mirror.target()] {
        for t in net.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Decodes a checkpoint; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ModelParams, EmaMirror)> {
    let bad = |reason: &str| Error::Integrity {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 8 + 8 {
        return Err(bad("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());

    let mut r = Reader { bytes: body, pos: 4 };
    let truncated = || bad("truncated file");
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION as usize {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if fnv1a(body) != stored {
        return Err(bad("checksum mismatch (truncated or corrupted)"));
    }
    let input_len = r.u32().ok_or_else(truncated)?;
    let output_len = r.u32().ok_or_else(truncated)?;
    let features = r.u32().ok_or_else(truncated)?;
    let count = r.u32().ok_or_else(truncated)?;
    let mut shapes = Vec::new();
    for _ in 0..count {
        let out = r.u32().ok_or_else(truncated)?;
        let inp = r.u32().ok_or_else(truncated)?;
        let act = r.u32().ok_or_else(truncated)?;
        let act = u8::try_from(act)
            .ok()
            .and_then(Activation::from_code)
            .ok_or_else(|| bad(&format!("unknown activation code {act}")))?;
        shapes.push((out, inp, act));
    }
    let decay = r.f64().ok_or_else(truncated)?;
    let read_net = |r: &mut Reader| -> Result<ModelParams> {
        let mut layers = Vec::with_capacity(shapes.len());
        for &(out, inp, act) in &shapes {
            let w = r
                .f64s(out.checked_mul(inp).ok_or_else(truncated)?)
                .ok_or_else(truncated)?;
            let b = r.f64s(out).ok_or_else(truncated)?;
            layers.push(Layer::new(Matrix::from_vec(out, inp, w)?, b, act)?);
        }
        ModelParams::new(input_len, output_len, features, layers).map_err(|e| bad(&e.to_string()))
    };
    let source = read_net(&mut r)?;
    let target = read_net(&mut r)?;
    if r.pos != body.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let mirror = EmaMirror::from_parts(target, decay).map_err(|e| bad(&e.to_string()))?;
    Ok((source, mirror))
}

pub fn save(source: &ModelParams, mirror: &EmaMirror, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(source, mirror)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, EmaMirror)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
