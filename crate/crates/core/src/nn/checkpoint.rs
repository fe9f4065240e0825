//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "FNDCKPT\0"
//! version    u32      1
//! width      u32      bytes per scalar (4 or 8)
//! count      u32      number of matrices
//! count x {
//!   name_len u32, name (utf-8), rows u64, cols u64, rows*cols scalars
//! }
//! ```

use std::io::{Read, Write};

use super::{Matrix, NnError, ParamSet, Scalar};

const MAGIC: &[u8; 8] = b"FNDCKPT\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ParamSet<T>, mut w: W) -> Result<(), NnError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for &x in p.value.data() {
            x.write_le(&mut buf);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads every named matrix from a checkpoint, in file order.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Vec<(String, Matrix<T>)>, NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let width = cur.u32()? as usize;
    if width != T::BYTES {
        return Err(NnError::Checkpoint(format!(
            "scalar width {width} does not match requested {}",
            T::BYTES
        )));
    }
    let count = cur.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| NnError::Checkpoint("parameter name is not utf-8".into()))?;
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let raw = cur.take(rows * cols * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes after last matrix".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Matrix::uniform(3, 2, 1.0, &mut rng));
        ps.add("b", Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&ps, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        // The last 8 bytes are the bias 1.0 in little-endian.
        assert_eq!(&buf[buf.len() - 8..], &1.0f64.to_le_bytes());

        let entries: Vec<(String, Matrix<f64>)> = read_checkpoint(buf.as_slice()).unwrap();
        let mut other = ParamSet::<f64>::new();
        other.add("w", Matrix::zeros(3, 2));
        other.add("b", Matrix::zeros(1, 1));
        other.load_values(entries).unwrap();
        assert_eq!(other, ps);
    }

    #[test]
    fn rejects_wrong_width_and_truncation() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", Matrix::zeros(2, 2));
        let mut buf = Vec::new();
        write_checkpoint(&ps, &mut buf).unwrap();
        assert!(read_checkpoint::<f32, _>(buf.as_slice()).is_err());
        assert!(read_checkpoint::<f64, _>(&buf[..buf.len() - 1]).is_err());
    }
}
