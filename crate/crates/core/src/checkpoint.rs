//! Binary parameter container.
//!
//! ```text
//! "LFMC" | version u8 | dtype u8 | count u32
//! count × ( name_len u32 | name utf-8 | rank u8 | rank × u32 extent | scalars )
//! ```
//! All integers and scalars are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"LFMC";
pub const VERSION: u8 = 1;

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            x.push_le(&mut out);
        }
    }
    out
}

/// Little-endian cursor that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.what, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4).ok() != Some(magic.as_slice()) {
            return Err(Error::format(self.what, "bad magic"));
        }
        Ok(())
    }

    pub(crate) fn dtype(&mut self) -> Result<DType> {
        let code = self.u8()?;
        DType::from_code(code).ok_or_else(|| Error::format(self.what, format!("unknown dtype code {code}")))
    }

    /// `n` scalars stored as `dtype`, converted to `T`.
    pub(crate) fn scalars<T: Real>(&mut self, dtype: DType, n: usize) -> Result<Vec<T>> {
        let size = dtype.size();
        let bytes = self.take(n.checked_mul(size).ok_or_else(|| Error::format(self.what, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(size)
            .map(|c| match dtype {
                d if d == T::DTYPE => T::from_le(c),
                DType::F32 => T::lit(f32::from_le(c) as f64),
                DType::F64 => T::lit(f64::from_le(c)),
            })
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.what, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.expect_magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let dtype = r.dtype()?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?.to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = r.scalars(dtype, n)?;
        out.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

/// Overwrites every parameter of `store` with the record of the same name.
/// Names and shapes must match exactly.
pub fn load_into<T: Real>(store: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(store, decode(&bytes)?)
}

pub fn restore<T: Real>(store: &mut ParamStore<T>, records: Vec<(String, Tensor<T>)>) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::format("checkpoint", format!("{} records for {} parameters", records.len(), store.len())));
    }
    for (name, value) in records {
        let id = store.id(&name).ok_or_else(|| Error::format("checkpoint", format!("unknown parameter `{name}`")))?;
        if store.value(id).shape() != value.shape() {
            return Err(Error::format(
                "checkpoint",
                format!("`{name}` has shape {:?}, model expects {:?}", value.shape(), store.value(id).shape()),
            ));
        }
        *store.value_mut(id) = value;
    }
    Ok(())
}
