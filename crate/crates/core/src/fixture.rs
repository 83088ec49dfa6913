//! Flat binary tensor bundles for exchanging fixtures between implementations.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "SEGKTNS1"
//! count   u32      number of tensors
//! repeat count times:
//!   rank  u32
//!   dims  rank × u32
//!   data  product(dims) × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask_head::{FeaturePyramid, MaskHeadConfig, MaskHeadParams};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 8] = b"SEGKTNS1";

pub fn write_bundle<W: Write>(mut w: W, tensors: &[Tensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a bundle; malformed headers are reported as invalid arguments,
/// truncated payloads as I/O errors.
pub fn read_bundle<R: Read>(mut r: R) -> Result<Vec<Tensor>> {
    let io = |e| Error::io("<bundle>", e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a tensor bundle (bad magic)"));
    }
    let count = read_u32(&mut r).map_err(io)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let rank = read_u32(&mut r).map_err(io)? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::invalid(format!("bundle tensor has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b).map_err(io)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(Tensor::new(dims, data)?);
    }
    Ok(out)
}

pub fn save_bundle(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_bundle(BufWriter::new(f), tensors).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<Vec<Tensor>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_bundle(BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_params(path: &Path, config: &MaskHeadConfig) -> Result<MaskHeadParams> {
    MaskHeadParams::from_tensors(config, load_bundle(path)?)
}

/// Loads pyramid levels; the input size is implied by the finest level.
pub fn load_pyramid(path: &Path, config: &MaskHeadConfig) -> Result<FeaturePyramid> {
    let levels = load_bundle(path)?;
    let first = levels.first().ok_or_else(|| Error::invalid("empty pyramid bundle"))?;
    let (_, h, w) = first.chw()?;
    let s = config.strides[0];
    let pyramid = FeaturePyramid {
        levels,
        input_size: (h * s, w * s),
    };
    pyramid.validate(config)?;
    Ok(pyramid)
}
