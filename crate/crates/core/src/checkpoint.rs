//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MACN"  u32 version  u32 layer_count
//! per layer:
//!     u8 kind (0 sigmoid, 1 linear, 2 rbf)  u32 in_dim  u32 out_dim
//!     u32 hyperparameter count  f64 rbf_width  f64 ridge  f64 bias (0 or 1)
//!     f64 weights, out_dim rows of row_len values
//! u32 placement_count  u32 boundary indices
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Layer, LayerKind, LayerSpec, NestedNet};

pub const MAGIC: &[u8; 4] = b"MACN";
pub const VERSION: u32 = 1;
const HYPERPARAMS: u32 = 3;
/// Refuse absurd sizes from corrupt headers before allocating.
const MAX_DIM: u32 = 1 << 24;

pub fn write_checkpoint<W: Write>(net: &NestedNet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        let s = layer.spec();
        w.write_all(&[s.kind.code()])?;
        w.write_all(&(s.in_dim as u32).to_le_bytes())?;
        w.write_all(&(s.out_dim as u32).to_le_bytes())?;
        w.write_all(&HYPERPARAMS.to_le_bytes())?;
        for v in [s.rbf_width, s.ridge, if s.bias { 1.0 } else { 0.0 }] {
            w.write_all(&v.to_le_bytes())?;
        }
        let m = layer.weights();
        for h in 0..m.nrows() {
            for v in m.row(h).iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.write_all(&(net.placement().len() as u32).to_le_bytes())?;
    for &k in net.placement() {
        w.write_all(&(k as u32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_bytes(net: &NestedNet) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(net, &mut out).expect("writing to memory cannot fail");
    out
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<NestedNet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("missing MACN magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = bounded(read_u32(&mut r)?, "layer count")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = LayerKind::from_code(kind[0]).ok_or_else(|| Error::Format(format!("unknown layer kind {}", kind[0])))?;
        let in_dim = bounded(read_u32(&mut r)?, "input width")?;
        let out_dim = bounded(read_u32(&mut r)?, "output width")?;
        let nh = bounded(read_u32(&mut r)?, "hyperparameter count")?;
        let hyper = (0..nh).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        if hyper.len() < HYPERPARAMS as usize {
            return Err(Error::Format(format!("expected {HYPERPARAMS} hyperparameters, found {nh}")));
        }
        let spec = LayerSpec {
            kind,
            in_dim,
            out_dim,
            rbf_width: hyper[0],
            ridge: hyper[1],
            bias: hyper[2] != 0.0,
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        let n = spec.param_count();
        let values = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let w = DMatrix::from_row_slice(spec.out_dim, spec.row_len(), &values);
        layers.push(Layer::new(spec, w).map_err(|e| Error::Format(e.to_string()))?);
    }
    let np = bounded(read_u32(&mut r)?, "placement count")?;
    let placement = (0..np)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after placement".into()));
    }
    NestedNet::new(layers, placement).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(net: &NestedNet, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NestedNet> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn bounded(v: u32, what: &str) -> Result<usize> {
    if v > MAX_DIM {
        return Err(Error::Format(format!("{what} {v} is implausibly large")));
    }
    Ok(v as usize)
}
