//! Binary tensor files: the magic `CLFT`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then the row-major values as little-endian
//! `f64`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use clft_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLFT";
/// Guards against reading garbage as a gigantic header.
const MAX_RANK: u32 = 16;

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "extent exceeds u32"))?;
        w.write_all(&e.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor. `Ok(None)` at a clean end of input, so concatenated
/// tensors can be streamed.
pub fn read_tensor(r: &mut impl Read) -> io::Result<Option<Tensor>> {
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut magic[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    if &magic != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic (expected CLFT)"));
    }
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("rank {rank} too large"),
        ));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|e| e as usize))
        .collect::<io::Result<Vec<_>>>()?;
    let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
    let n = n.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "extent product overflows"))?;
    let mut data = Vec::with_capacity(n.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(&shape, data)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    save_tensors(path, std::slice::from_ref(t))
}

pub fn save_tensors(path: &Path, ts: &[Tensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in ts {
        write_tensor(&mut w, t).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every tensor in a file, in order.
pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    while let Some(t) = read_tensor(&mut r).map_err(|e| Error::io(path, e))? {
        out.push(t);
    }
    Ok(out)
}

/// Exactly one tensor.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut ts = load_tensors(path)?;
    match ts.len() {
        1 => Ok(ts.pop().expect("one tensor")),
        n => Err(Error::format(path, format!("expected one tensor, found {n}"))),
    }
}
