//! Flat binary checkpoint format for [`EncoderParams`].
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic    8 bytes  "SCLIPCKP"
//! version  u32      1
//! count    u32      number of tensors
//! tensor*  name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | values f32 LE (row-major)
//! ```
//!
//! Tensors are `image.{i}.weight`, `image.{i}.bias`, `image.projection`,
//! `text.embedding`, `text.{i}.weight`, `text.{i}.bias`, `text.projection`
//! and `meta.activation` (a single value, 0 = tanh, 1 = identity).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::encoder::{Activation, Dense, EncoderParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCLIPCKP";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &EncoderParams) -> Vec<u8> {
    let mut tensors = params.named_tensors();
    let act = [match params.activation {
        Activation::Tanh => 0.0,
        Activation::Identity => 1.0,
    }];
    tensors.push(("meta.activation".into(), vec![1], &act));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

pub fn from_bytes(buf: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.insert(name, Tensor { dims, values });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    assemble(tensors)
}

fn matrix(tensors: &mut HashMap<String, Tensor>, name: &str) -> Result<Array2<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims.len() != 2 {
        return Err(Error::Checkpoint(format!("{name} must be rank 2")));
    }
    Ok(Array2::from_shape_vec((t.dims[0], t.dims[1]), t.values).unwrap())
}

fn vector(tensors: &mut HashMap<String, Tensor>, name: &str) -> Result<Array1<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims.len() != 1 {
        return Err(Error::Checkpoint(format!("{name} must be rank 1")));
    }
    Ok(Array1::from(t.values))
}

fn layers(tensors: &mut HashMap<String, Tensor>, tower: &str) -> Result<Vec<Dense>> {
    let mut out = Vec::new();
    while tensors.contains_key(&format!("{tower}.{}.weight", out.len())) {
        let i = out.len();
        out.push(Dense {
            weight: matrix(tensors, &format!("{tower}.{i}.weight"))?,
            bias: vector(tensors, &format!("{tower}.{i}.bias"))?,
        });
    }
    Ok(out)
}

fn assemble(mut tensors: HashMap<String, Tensor>) -> Result<EncoderParams> {
    let activation = match vector(&mut tensors, "meta.activation")?.as_slice().unwrap() {
        [a] if *a == 0.0 => Activation::Tanh,
        [a] if *a == 1.0 => Activation::Identity,
        _ => return Err(Error::Checkpoint("bad meta.activation".into())),
    };
    let params = EncoderParams {
        image_layers: layers(&mut tensors, "image")?,
        image_projection: matrix(&mut tensors, "image.projection")?,
        token_embedding: matrix(&mut tensors, "text.embedding")?,
        text_layers: layers(&mut tensors, "text")?,
        text_projection: matrix(&mut tensors, "text.projection")?,
        activation,
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    check_shapes(&params)?;
    Ok(params)
}

fn check_shapes(p: &EncoderParams) -> Result<()> {
    let chain = |layers: &[Dense], input: usize, proj: &Array2<f64>, tower: &str| -> Result<()> {
        let mut width = input;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.nrows() != width || l.bias.len() != l.weight.ncols() {
                return Err(Error::Checkpoint(format!("{tower}.{i} does not compose")));
            }
            width = l.weight.ncols();
        }
        if proj.nrows() != width {
            return Err(Error::Checkpoint(format!("{tower}.projection does not compose")));
        }
        Ok(())
    };
    chain(&p.image_layers, p.feature_dim(), &p.image_projection, "image")?;
    chain(&p.text_layers, p.token_embedding.ncols(), &p.text_projection, "text")?;
    if p.image_projection.ncols() != p.text_projection.ncols() {
        return Err(Error::Checkpoint("projections disagree on embedding dimension".into()));
    }
    if !p.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(())
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params))
        .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&buf)
}
