//! Flat binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CATG" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 bytes
//!   rank: u64 | dims: rank x u64
//!   data: prod(dims) x f64
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{NumericsError, Tensor};

pub const MAGIC: &[u8; 4] = b"CATG";
pub const VERSION: u32 = 1;

pub fn write_records<W: Write>(mut w: W, records: &[(String, Tensor)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn corrupt(detail: impl Into<String>) -> NumericsError {
    NumericsError::Corrupt(detail.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NumericsError> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(NumericsError::BadMagic);
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(NumericsError::Version { found: version, expected: VERSION });
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?
            .to_string();
        let rank = c.u64("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(corrupt(format!("{name}: implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u64("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| corrupt(format!("{name}: bad dims {dims:?}")))?;
        let raw = c.take(numel * 8, "data")?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_records(&bytes)
}

pub fn save(path: &Path, records: &[(String, Tensor)]) -> Result<(), NumericsError> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, NumericsError> {
    decode_records(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("emb".to_string(), Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap()),
            ("b".to_string(), Tensor::scalar(0.1)),
        ]
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"CATG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(&buf[12..15], b"emb");
        assert_eq!(u64::from_le_bytes(buf[15..23].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip_bit_exact() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        let back = decode_records(&buf).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn truncation_is_reported() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        for cut in [2, 6, 10, 20, buf.len() - 1] {
            let err = decode_records(&buf[..cut]).unwrap_err();
            assert!(
                matches!(err, NumericsError::Corrupt(_) | NumericsError::BadMagic),
                "cut {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(decode_records(&bad), Err(NumericsError::BadMagic)));
        let mut bad = buf;
        bad[4] = 9;
        assert!(matches!(decode_records(&bad), Err(NumericsError::Version { found: 9, .. })));
    }
}
