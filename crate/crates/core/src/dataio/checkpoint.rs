//! Versioned binary checkpoints of parameter tensors plus the RNG position.
//!
//! Layout (little endian): magic `SPFC`, u32 version, u32 tensor count, then
//! per tensor a u32 name length, UTF-8 name, u32 rows, u32 cols and
//! rows·cols f64 values; the file ends with the RNG seed (u64), stream (u64)
//! and word position (u128).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet, RngState};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SPFC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamSet<T>,
    pub rng: RngState,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in self.params.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for &x in m.as_slice() {
                buf.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.rng.seed.to_le_bytes());
        buf.extend_from_slice(&self.rng.stream.to_le_bytes());
        buf.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, file };
        if r.take(4)? != MAGIC {
            return Err(r.bad("missing SPFC magic"));
        }
        if r.u32()? != VERSION {
            return Err(r.bad("unsupported checkpoint version"));
        }
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| r.bad("tensor name is not UTF-8"))?.to_string();
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let data = r
                .take(rows * cols * 8)?
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            params.push(name, Matrix::from_vec(rows, cols, data));
        }
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let stream = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(Self { params, rng: RngState { seed, stream, word_pos } })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::MalformedRow { file: self.file.to_string(), line: self.pos, reason: reason.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn round_trip_preserves_tensors_and_rng() {
        let mut rng = SeededRng::new(3);
        rng.next_u64();
        let mut params = ParamSet::<f64>::new();
        params.push("encoder/w1", Matrix::from_f64(2, 2, &[1.0, -0.5, 1e-300, 3.25]));
        params.push("b", Matrix::zeros(1, 3));
        let ck = Checkpoint { params, rng: rng.state() };
        let back = Checkpoint::<f64>::from_bytes(&ck.to_bytes(), "t").unwrap();
        assert_eq!(back, ck);
        let mut resumed = SeededRng::from_state(back.rng);
        assert_eq!(resumed.next_u64(), rng.next_u64());
    }

    #[test]
    fn truncation_is_reported() {
        let ck = Checkpoint { params: ParamSet::<f64>::new(), rng: SeededRng::new(1).state() };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1], "t").is_err());
    }
}
