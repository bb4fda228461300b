//! Binary tensor files: `"STMA"`, version byte, rank byte, `rank` little-endian
//! `u64` dims, then the little-endian `f64` payload in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Result, StmaError};

pub const TENSOR_MAGIC: &[u8; 4] = b"STMA";
pub const TENSOR_VERSION: u8 = 1;

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| StmaError::contract("tensor rank exceeds 255"))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[TENSOR_VERSION, rank])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut header = [0u8; 6];
    r.read_exact(&mut header)?;
    if &header[..4] != TENSOR_MAGIC {
        return Err(StmaError::Parse("bad tensor magic".into()));
    }
    if header[4] != TENSOR_VERSION {
        return Err(StmaError::Parse(format!("unsupported tensor version {}", header[4])));
    }
    let rank = header[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut buf)?;
        let d = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| StmaError::Parse("dimension overflows usize".into()))?;
        shape.push(d);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| StmaError::Parse("tensor size overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != numel * 8 {
        return Err(StmaError::Parse(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            numel * 8
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Tensor::new(shape, data)
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)?;
    f.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_byte_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"STMA".to_vec();
        expected.extend([1u8, 2u8]);
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-2.5f64).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let t = Tensor::zeros(&[3]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
        assert!(read_tensor(&mut b"NOPE\x01\x00".as_slice()).is_err());
    }
}
