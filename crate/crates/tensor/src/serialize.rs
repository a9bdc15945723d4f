//! Flat little-endian binary encoding of a [`ParamSet`].
//!
//! ```text
//! "FPAW" | version u32 | entry count u32
//! per entry: layer u32 | name len u32 | name utf-8 | rank u32 | dims u32[rank] | data f64[numel]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::{ParamEntry, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPAW";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| TensorError::Format(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl ParamSet {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(12 + self.num_params() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut buf, self.len())?;
        for e in self.entries() {
            put_u32(&mut buf, e.layer)?;
            put_u32(&mut buf, e.name.len())?;
            buf.extend_from_slice(e.name.as_bytes());
            put_u32(&mut buf, e.tensor.rank())?;
            for &d in e.tensor.shape() {
                put_u32(&mut buf, d)?;
            }
            for v in e.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    /// Decodes a set; every tensor comes back marked as trainable.
    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let layer = r.u32()?;
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| TensorError::Format(format!("entry name: {e}")))?
                .to_string();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push(ParamEntry {
                layer,
                name,
                tensor: Tensor::new(shape, data)?.with_grad(true),
            });
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        ParamSet::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
        ParamSet::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        ParamSet::new(vec![
            ParamEntry {
                layer: 1,
                name: "enc.w".into(),
                tensor: Tensor::new(vec![2, 2], vec![1.5, -0.0, 3.25, 1e-300]).unwrap(),
            },
            ParamEntry {
                layer: 2,
                name: "fc.b".into(),
                tensor: Tensor::scalar(7.0).unwrap(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes().unwrap();
        assert_eq!(&b[..4], b"FPAW");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        // first entry: layer 1, name len 5
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 5);
        assert_eq!(&b[20..25], b"enc.w");
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let s = sample();
        let back = ParamSet::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert!(s.bit_eq(&back));
    }

    #[test]
    fn rejects_corruption() {
        let mut b = sample().to_bytes().unwrap();
        assert!(ParamSet::from_bytes(&b[..b.len() - 1]).is_err());
        b.push(0);
        assert!(ParamSet::from_bytes(&b).is_err());
        b[0] = b'X';
        assert!(ParamSet::from_bytes(&b).is_err());
    }
}
