//! Binary model checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `SSNLLCKP`, a `u32` format
//! version, `u32` input width, class count, feature tap and layer count, then
//! one record per layer introduced by a tag byte. Parameters are stored as raw
//! IEEE-754 bits, so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use super::{Affine, BatchNormState, Classifier, Layer, Matrix};
use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 8] = b"SSNLLCKP";
pub const VERSION: u32 = 1;

const TAG_AFFINE: u8 = 1;
const TAG_BATCH_NORM: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_SOFTMAX: u8 = 4;

pub fn to_bytes(model: &Classifier) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.input_width() as u32);
    put_u32(&mut out, model.num_classes() as u32);
    put_u32(&mut out, model.feature_tap() as u32);
    put_u32(&mut out, model.layers().len() as u32);
    for layer in model.layers() {
        match layer {
            Layer::Affine(a) => {
                out.push(TAG_AFFINE);
                put_u32(&mut out, a.inputs() as u32);
                put_u32(&mut out, a.outputs() as u32);
                put_f64s(&mut out, a.weight.as_slice());
                put_f64s(&mut out, &a.bias);
            }
            Layer::BatchNorm(bn) => {
                out.push(TAG_BATCH_NORM);
                put_u32(&mut out, bn.width() as u32);
                put_f64s(&mut out, &[bn.epsilon]);
                for v in [&bn.mean, &bn.var, &bn.gamma, &bn.beta] {
                    put_f64s(&mut out, v);
                }
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::Softmax => out.push(TAG_SOFTMAX),
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Classifier> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(format_err("not a checkpoint: bad magic header"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let input_width = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let feature_tap = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.take(1)?[0] {
            TAG_AFFINE => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let weight = Matrix::from_vec(inputs, outputs, r.f64s(inputs * outputs)?)
                    .map_err(|e| format_err(e.to_string()))?;
                let bias = r.f64s(outputs)?;
                Layer::Affine(Affine { weight, bias })
            }
            TAG_BATCH_NORM => {
                let width = r.u32()? as usize;
                let epsilon = r.f64s(1)?[0];
                Layer::BatchNorm(BatchNormState {
                    mean: r.f64s(width)?,
                    var: r.f64s(width)?,
                    gamma: r.f64s(width)?,
                    beta: r.f64s(width)?,
                    epsilon,
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_SOFTMAX => Layer::Softmax,
            tag => return Err(format_err(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Classifier::new(input_width, layers, num_classes, feature_tap)
        .map_err(|e| format_err(format!("inconsistent checkpoint: {e}")))
}

pub fn save(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Classifier> {
    from_bytes(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| format_err("length overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
