//! Versioned binary checkpoint of named dense nets.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "VOSC"
//! version      u32      = 1
//! net_count    u32
//! per net:
//!   name_len   u16, name (UTF-8, name_len bytes)
//!   updates    u64      optimizer steps applied to this net
//!   layers     u32
//!   input_dim  u32
//!   per layer: out_dim u32, activation u8 (0 = identity, 1 = ReLU)
//!   per layer: weights (input x output, row-major) f64, then bias (output) f64
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::dense::{Activation, Dense, DenseNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VOSC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNet {
    pub name: String,
    pub updates: u64,
    pub net: DenseNet,
}

pub fn write_checkpoint<W: Write>(mut w: W, nets: &[NamedNet]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(nets.len() as u32).to_le_bytes())?;
    for entry in nets {
        let name = entry.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::invalid("net name too long"))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&entry.updates.to_le_bytes())?;
        let layers = entry.net.layers();
        w.write_all(&(layers.len() as u32).to_le_bytes())?;
        w.write_all(&(entry.net.input_dim() as u32).to_le_bytes())?;
        for layer in layers {
            w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
            w.write_all(&[layer.activation().code()])?;
        }
        for layer in layers {
            for v in layer.weights().iter().chain(layer.bias().iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedNet>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("checkpoint", "net name is not UTF-8"))?;
        let mut updates = [0u8; 8];
        r.read_exact(&mut updates)?;
        let n_layers = read_u32(&mut r)? as usize;
        let mut dims = vec![read_u32(&mut r)? as usize];
        let mut acts = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            dims.push(read_u32(&mut r)? as usize);
            let mut code = [0u8; 1];
            r.read_exact(&mut code)?;
            acts.push(
                Activation::from_code(code[0])
                    .ok_or_else(|| Error::format("checkpoint", format!("unknown activation {}", code[0])))?,
            );
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (i, act) in acts.into_iter().enumerate() {
            let (inp, out) = (dims[i], dims[i + 1]);
            let weights = Array2::from_shape_vec((inp, out), read_f64s(&mut r, inp * out)?)
                .map_err(|e| Error::format("checkpoint", e.to_string()))?;
            let bias = Array1::from_vec(read_f64s(&mut r, out)?);
            layers.push(Dense::new(weights, bias, act)?);
        }
        nets.push(NamedNet {
            name,
            updates: u64::from_le_bytes(updates),
            net: DenseNet::from_layers(layers)?,
        });
    }
    Ok(nets)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
