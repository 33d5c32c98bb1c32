//! Little-endian tensor container shared by datasets, checkpoints and bundles.
//!
//! Layout of one blob:
//!
//! ```text
//! "CMFT" | version: u32 | element type: u32 | rank: u32 | dims: rank × u64 | payload
//! ```
//!
//! Element type 1 is `f32`, 2 is `u32`; the payload is row-major. A named
//! archive is `count: u32` followed by `count` entries of
//! `name_len: u32 | name (UTF-8) | blob`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"CMFT";
pub const BLOB_VERSION: u32 = 1;
pub const ELEM_F32: u32 = 1;
pub const ELEM_U32: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::checked(dims, TensorData::F32(data))
    }

    pub fn u32(dims: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        Self::checked(dims, TensorData::U32(data))
    }

    /// Stores `f64` values as `f32`.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::f32(dims, data.iter().map(|&v| v as f32).collect())
    }

    fn checked(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let want: usize = dims.iter().product();
        let got = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        };
        if want != got {
            return Err(Error::dim(format!("tensor dims {dims:?} need {want} values, got {got}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U32(_) => Err(Error::invalid("expected an f32 tensor")),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.data {
            TensorData::U32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::invalid("expected a u32 tensor")),
        }
    }

    pub fn to_f64(&self) -> Result<Vec<f64>> {
        Ok(self.as_f32()?.iter().map(|&v| v as f64).collect())
    }

    /// Size of the payload in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.numel() * 4
    }
}

pub fn encode_blob(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    let code = match t.data {
        TensorData::F32(_) => ELEM_F32,
        TensorData::U32(_) => ELEM_U32,
    };
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

/// Cursor over a byte buffer that reports the failing offset.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(want)
                ),
            ));
        }
        Ok(())
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.offset();
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn decode_blob(r: &mut Reader<'_>) -> Result<Tensor> {
    r.magic(BLOB_MAGIC)?;
    let version = r.u32("version")?;
    if version != BLOB_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BLOB_VERSION,
        });
    }
    let at = r.offset();
    let code = r.u32("element type")?;
    if code != ELEM_F32 && code != ELEM_U32 {
        return Err(Error::format(at, format!("unknown element type {code}")));
    }
    let rank = r.u32("rank")? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    let mut numel: usize = 1;
    for _ in 0..rank {
        let at = r.offset();
        let d = usize::try_from(r.u64("dimension")?)
            .map_err(|_| Error::format(at, "dimension overflows usize"))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::format(at, "element count overflows"))?;
        dims.push(d);
    }
    let bytes = numel
        .checked_mul(4)
        .ok_or_else(|| Error::format(r.offset(), "payload size overflows"))?;
    let payload = r.take(bytes, "payload")?;
    let data = if code == ELEM_F32 {
        TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        TensorData::U32(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    };
    Ok(Tensor { dims, data })
}

pub fn encode_named(tensors: &[(String, Tensor)], out: &mut Vec<u8>) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_string(out, name);
        encode_blob(t, out);
    }
}

pub fn decode_named(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor)>> {
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        out.push((name, decode_blob(r)?));
    }
    Ok(out)
}

/// Writes a single-tensor file.
pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_blob(t, &mut buf);
    write_atomic(path, &buf)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = read_file(&path)?;
    let mut r = Reader::new(&bytes);
    let t = decode_blob(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    fs::read(path.as_ref()).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a partially written file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_layout_is_bit_exact() {
        let t = Tensor::f32(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        encode_blob(&t, &mut buf);
        let mut want = Vec::new();
        want.extend_from_slice(b"CMFT");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn every_truncation_rejected() {
        let t = Tensor::u32(vec![3], vec![7, 8, 9]).unwrap();
        let mut buf = Vec::new();
        encode_blob(&t, &mut buf);
        for cut in 0..buf.len() {
            let mut r = Reader::new(&buf[..cut]);
            assert!(matches!(decode_blob(&mut r), Err(Error::Format { .. })));
        }
        let mut r = Reader::new(&buf);
        assert_eq!(decode_blob(&mut r).unwrap(), t);
    }

    #[test]
    fn version_and_magic_checked() {
        let t = Tensor::f32(vec![1], vec![0.0]).unwrap();
        let mut buf = Vec::new();
        encode_blob(&t, &mut buf);
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_blob(&mut Reader::new(&bad)),
            Err(Error::Version { found: 9, .. })
        ));
        bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_blob(&mut Reader::new(&bad)),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn atomic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cmft");
        let t = Tensor::f32(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_tensor(&p, &t).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
