//! Minimal binary tensor records: length-prefixed name, dims, f32 LE data.
//! Checkpoints and replay-buffer files are built out of these records.

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

const FILE_MAGIC: &[u8; 4] = b"NNT1";

#[derive(Debug, thiserror::Error)]
pub enum TioError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed tensor data: {0}")]
    Format(String),
}

/// Write one tensor record to a stream.
pub fn write_record<W: Write>(w: &mut W, name: &str, arr: &ArrayD<f32>) -> Result<(), TioError> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(TioError::Format(format!("tensor name too long: {name}")));
    }
    w.write_u16::<LittleEndian>(name_bytes.len() as u16)?;
    w.write_all(name_bytes)?;
    w.write_u8(arr.ndim() as u8)?;
    for &d in arr.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    let data = arr
        .as_slice()
        .ok_or_else(|| TioError::Format("tensor must be standard layout".into()))?;
    let mut buf = vec![0u8; data.len() * 4];
    LittleEndian::write_f32_into(data, &mut buf);
    w.write_all(&buf)?;
    Ok(())
}

/// Read one tensor record from a stream.
pub fn read_record<R: Read>(r: &mut R) -> Result<(String, ArrayD<f32>), TioError> {
    let name_len = r.read_u16::<LittleEndian>()? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| TioError::Format("tensor name is not utf-8".into()))?;
    let ndim = r.read_u8()? as usize;
    if ndim > 8 {
        return Err(TioError::Format(format!("implausible ndim {ndim} for {name}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut len = 1usize;
    for _ in 0..ndim {
        let d = r.read_u64::<LittleEndian>()? as usize;
        len = len
            .checked_mul(d)
            .ok_or_else(|| TioError::Format(format!("tensor {name} dims overflow")))?;
        dims.push(d);
    }
    if len > (1 << 31) {
        return Err(TioError::Format(format!("tensor {name} too large: {len} elements")));
    }
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    let mut data = vec![0f32; len];
    LittleEndian::read_f32_into(&buf, &mut data);
    let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| TioError::Format(format!("tensor {name}: {e}")))?;
    Ok((name, arr))
}

/// Write a whole file of named tensors.
pub fn write_tensors(path: &Path, tensors: &[(String, ArrayD<f32>)]) -> Result<(), TioError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FILE_MAGIC)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, arr) in tensors {
        write_record(&mut w, name, arr)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a whole file of named tensors.
pub fn read_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>, TioError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FILE_MAGIC {
        return Err(TioError::Format(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(read_record(&mut r)?);
    }
    Ok(out)
}
