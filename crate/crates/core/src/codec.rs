//! Little-endian binary primitives shared by the dataset and checkpoint
//! containers.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// `u32 ndim`, `u64` dims, then the values.
pub(crate) fn put_tensor(out: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    put_f64s(out, data);
}

pub(crate) fn put_header<T: serde::Serialize>(out: &mut Vec<u8>, magic: &[u8; 8], header: &T) -> Result<()> {
    out.extend_from_slice(magic);
    let json = serde_json::to_vec(header).map_err(|e| Error::data(format!("header encoding: {e}")))?;
    put_u64(out, json.len() as u64);
    out.extend_from_slice(&json);
    Ok(())
}

/// Cursor over an in-memory container.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::data(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::data("length does not fit in usize"))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| Error::data("length overflow"))?)?;
        let out: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite value in tensor payload"));
        }
        Ok(out)
    }

    pub(crate) fn tensor(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::data(format!("implausible tensor rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::data("tensor size overflow"))?;
        Ok((shape, self.f64s(n)?))
    }

    pub(crate) fn header<T: serde::de::DeserializeOwned>(&mut self, magic: &[u8; 8]) -> Result<T> {
        if self.bytes(8)? != magic {
            return Err(Error::data(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let len = self.usize()?;
        serde_json::from_slice(self.bytes(len)?).map_err(|e| Error::data(format!("header: {e}")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::data(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Writes `bytes` to `path`, refusing to clobber unless `overwrite` is set.
pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8], overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --overwrite to replace it", path.display()),
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
