//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `NAPINNW1` |
//! | 4 × 4 | `input_dim`, `hidden_layers`, `hidden_width`, `output_dim` (u32) |
//! | 4     | activation code (u32, 0 = ELU) |
//! | 4     | reserved, zero |
//! | 8     | seed (u64) |
//! | 8     | epoch (u64) |
//! | 8     | parameter count (u64) |
//! | 8 × n | parameters (f64) in canonical order |

use std::io::{Read, Write};
use std::path::Path;

use super::spec::{param_count, Activation, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NAPINNW1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub seed: u64,
    pub epoch: u64,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &NetworkParams, seed: u64, epoch: u64) -> std::io::Result<()> {
    let spec = &params.spec;
    w.write_all(MAGIC)?;
    for dim in [spec.input_dim, spec.hidden_layers, spec.hidden_width, spec.output_dim] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    let activation: u32 = match spec.activation {
        Activation::Elu => 0,
    };
    w.write_all(&activation.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&epoch.to_le_bytes())?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.values.len() * 8);
    for x in &params.values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    }
    let activation = match u32::from_le_bytes(read_array(&mut r)?) {
        0 => Activation::Elu,
        other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
    };
    let _reserved: [u8; 4] = read_array(&mut r)?;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let epoch = u64::from_le_bytes(read_array(&mut r)?);
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let spec = NetworkSpec {
        input_dim: dims[0],
        hidden_layers: dims[1],
        hidden_width: dims[2],
        output_dim: dims[3],
        activation,
    };
    spec.validate()?;
    if count != param_count(&spec) {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters, spec needs {}",
            param_count(&spec)
        )));
    }
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Checkpoint {
        params: NetworkParams::new(spec, values)?,
        seed,
        epoch,
    })
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams, seed: u64, epoch: u64) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, params, seed, epoch).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
