//! `ELP1` parameter files: the magic bytes, then for each array a `u32` rank,
//! `rank` `u32` extents and the raw values, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Array, Parameterized};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ELP1";

pub fn write_arrays<W: Write>(mut w: W, arrays: &[&Array]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for a in arrays {
        let rank = u32::try_from(a.rank()).map_err(|_| Error::Checkpoint("rank overflow".into()))?;
        w.write_all(&rank.to_le_bytes())?;
        for &e in a.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Checkpoint("extent overflow".into()))?;
            w.write_all(&e.to_le_bytes())?;
        }
        for v in a.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<Array>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing ELP1 magic".into()));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        let slice = bytes
            .get(pos..end)
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        pos = end;
        Ok(slice)
    };
    let mut arrays = Vec::new();
    loop {
        let head = match take(4) {
            Ok(h) => h,
            Err(_) => break,
        };
        let rank = u32::from_le_bytes(head.try_into().expect("4 bytes")) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let count: usize = shape.iter().product();
        let raw = take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(Array::new(shape, data)?);
    }
    Ok(arrays)
}

pub fn save_params<P: Parameterized>(path: &Path, params: &P) -> Result<()> {
    let mut buf = Vec::new();
    write_arrays(&mut buf, &params.arrays())?;
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a checkpoint into an already-constructed model of the same
/// architecture; every array must match in shape.
pub fn load_params<P: Parameterized>(path: &Path, params: &mut P) -> Result<()> {
    let arrays = read_arrays(fs::File::open(path)?)?;
    let mut targets = params.arrays_mut();
    if arrays.len() != targets.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} arrays, model expects {}",
            arrays.len(),
            targets.len()
        )));
    }
    for (i, (src, dst)) in arrays.iter().zip(targets.iter_mut()).enumerate() {
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "array {i}: checkpoint shape {:?}, model shape {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}
