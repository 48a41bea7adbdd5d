//! Binary checkpoint container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        8 bytes   "SETLOC\x00\x01"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON
//! n_arrays     u32
//! n_arrays × {
//!     name_len u32, name (UTF-8)
//!     rank     u32, dims (rank × u32)
//!     data     product(dims) × f64
//! }
//! ```
//!
//! The header is free-form JSON; [`crate::training::TrainedModel`] stores the model
//! config, vocabulary, normalization stats, class labels and seeds there.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SETLOC\x00\x01";

// guards against allocating absurd sizes from a corrupt length field
const MAX_LEN: usize = 1 << 31;

pub fn write_checkpoint(path: &Path, header: &Value, arrays: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let header = serde_json::to_vec(header)?;
    write_len(&mut w, header.len())?;
    w.write_all(&header)?;
    write_len(&mut w, arrays.len())?;
    for (name, t) in arrays {
        write_len(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_len(&mut w, t.shape().len())?;
        for &d in t.shape() {
            write_len(&mut w, d)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Value, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("file too short"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint (bad magic)", path.display())));
    }
    let header_len = read_len(&mut r)?;
    let header: Value = serde_json::from_slice(&read_bytes(&mut r, header_len)?)?;
    let n = read_len(&mut r)?;
    let mut arrays = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name_len = read_len(&mut r)?;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?).map_err(|_| corrupt("array name is not UTF-8"))?;
        let rank = read_len(&mut r)?;
        let shape = (0..rank).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel > MAX_LEN / 8 {
            return Err(corrupt("array too large"));
        }
        let bytes = read_bytes(&mut r, numel * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        arrays.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok((header, arrays))
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint: {what}"))
}

fn write_len(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated"))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    if n > MAX_LEN {
        return Err(corrupt("length field too large"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| corrupt("truncated"))?;
    Ok(buf)
}
