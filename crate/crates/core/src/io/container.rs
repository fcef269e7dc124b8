use std::fs;
use std::path::Path;

use ndarray::{ArrayD, ArrayView, Dimension, IxDyn};

use super::write_atomic;
use crate::error::{invalid, Error, Result};
use crate::model::C64;

pub const MAGIC: [u8; 4] = *b"SMLE";
pub const VERSION: u16 = 1;
pub const DTYPE_COMPLEX64: u16 = 1;

/// Container bytes: magic, version (u16), dtype (u16), ndim (u32), dims
/// (u64 each), interleaved little-endian f32 (re, im) in row-major order,
/// then the CRC32 of everything before it.
pub fn encode_array<D: Dimension>(a: ArrayView<'_, C64, D>) -> Result<Vec<u8>> {
    if a.ndim() == 0 || a.shape().contains(&0) {
        return invalid(format!("cannot store an array of shape {:?}", a.shape()));
    }
    let mut out = Vec::with_capacity(12 + 8 * a.ndim() + 8 * a.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_COMPLEX64.to_le_bytes());
    out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
    for &d in a.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in a.iter() {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptFile { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse container bytes; `path` only labels errors.
pub fn decode_array(bytes: &[u8], path: &Path) -> Result<ArrayD<C64>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = r.u16()?;
    if dtype != DTYPE_COMPLEX64 {
        return Err(r.corrupt(format!("unknown dtype tag {dtype}")));
    }
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(r.corrupt(format!("implausible dimension count {ndim}")));
    }
    let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(r.corrupt("empty dimension"));
    }
    let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.corrupt("dimension overflow"))?;
    let expected = len.checked_mul(8).and_then(|p| p.checked_add(r.pos + 4));
    if expected != Some(bytes.len()) {
        return Err(r.corrupt(format!("payload length mismatch ({} bytes for shape {dims:?})", bytes.len())));
    }
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != crc {
        return Err(r.corrupt("checksum mismatch"));
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let re = r.f32()?;
        let im = r.f32()?;
        data.push(C64::new(re as f64, im as f64));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| r.corrupt(e.to_string()))
}

pub fn write_array<D: Dimension>(path: &Path, a: ArrayView<'_, C64, D>) -> Result<()> {
    write_atomic(path, &encode_array(a)?)
}

pub fn read_array(path: &Path) -> Result<ArrayD<C64>> {
    decode_array(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, rng_from};
    use ndarray::Array3;

    fn quantized(shape: (usize, usize, usize)) -> Array3<C64> {
        let mut rng = rng_from(4, 0);
        Array3::from_shape_simple_fn(shape, || {
            let v = complex_normal(&mut rng, 1.0);
            C64::new(v.re as f32 as f64, v.im as f32 as f64)
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.smle");
        let a = quantized((3, 5, 7));
        write_array(&p, a.view()).unwrap();
        let b = read_array(&p).unwrap();
        assert_eq!(b.shape(), &[3, 5, 7]);
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        let again = encode_array(b.view()).unwrap();
        assert_eq!(again, fs::read(&p).unwrap());
    }

    #[test]
    fn damaged_files_rejected() {
        let path = Path::new("x");
        let bytes = encode_array(quantized((2, 2, 2)).view()).unwrap();
        assert!(matches!(decode_array(&bytes[..bytes.len() - 5], path), Err(Error::CorruptFile { .. })));
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(decode_array(&flipped, path), Err(Error::CorruptFile { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_array(&magic, path), Err(Error::CorruptFile { .. })));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_array(&version, path), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn empty_shapes_rejected() {
        let a = Array3::<C64>::zeros((2, 0, 3));
        assert!(encode_array(a.view()).is_err());
    }
}
