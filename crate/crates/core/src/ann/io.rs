//! Binary index format, all integers little-endian:
//!
//! ```text
//! magic "OBIX" | version u32 | d u32 | m u32 | ksub u32 | nlist u32 | count u32
//! coarse centroids  f32[nlist * d]
//! sub-centroids     f32[m * ksub * d/m]
//! per list:         len u32 | ids u64[len] | codes u8[len * m]
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::ivf::{InvertedList, IvfPqIndex};
use super::pq::PqCodebook;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"OBIX";
pub const INDEX_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn serialize_index(index: &IvfPqIndex) -> Result<Vec<u8>> {
    let cb = index.codebook();
    let mut out = Vec::with_capacity(
        32 + 4 * (index.coarse_centroids().len() + cb.centroids.len()) + index.len() * (8 + cb.m),
    );
    out.extend_from_slice(&INDEX_MAGIC);
    for v in [
        INDEX_VERSION,
        to_u32(index.dim(), "dimension")?,
        to_u32(cb.m, "m")?,
        to_u32(cb.ksub, "ksub")?,
        to_u32(index.nlist(), "nlist")?,
        to_u32(index.len(), "count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in index.coarse_centroids().iter().chain(&cb.centroids) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for list in index.lists() {
        out.extend_from_slice(&to_u32(list.len(), "list length")?.to_le_bytes());
        for &id in &list.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&list.codes);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("index truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format("index header sizes overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn deserialize_index(bytes: &[u8]) -> Result<IvfPqIndex> {
    if bytes.len() < 4 || bytes[..4] != INDEX_MAGIC {
        return Err(Error::Format("not an index file (bad magic)".into()));
    }
    if bytes.len() < 32 {
        return Err(Error::Format("index truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::Format(format!("unsupported index version {version}")));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let d = r.u32()? as usize;
    let m = r.u32()? as usize;
    let ksub = r.u32()? as usize;
    let nlist = r.u32()? as usize;
    let count = r.u32()? as usize;
    if d == 0 || m == 0 || nlist == 0 || d % m != 0 {
        return Err(Error::Format(format!("invalid index header d={d} m={m} nlist={nlist}")));
    }
    let coarse = r.f32s(nlist.saturating_mul(d))?;
    let sub = r.f32s(ksub.saturating_mul(d))?;
    let codebook = PqCodebook::from_parts(d, m, ksub, sub).map_err(|e| Error::Format(e.to_string()))?;
    let mut lists = Vec::with_capacity(nlist);
    let mut total = 0usize;
    for _ in 0..nlist {
        let len = r.u32()? as usize;
        let ids = (0..len).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let codes = r.take(len.saturating_mul(m))?.to_vec();
        total += len;
        lists.push(InvertedList { ids, codes });
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes in index", body.len() - r.pos)));
    }
    if total != count {
        return Err(Error::Format(format!("header count {count} but lists hold {total}")));
    }
    IvfPqIndex::from_parts(d, coarse, codebook, lists)
}

pub fn write_index(index: &IvfPqIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = serialize_index(index)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_index(path: impl AsRef<Path>) -> Result<IvfPqIndex> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_index(&bytes)
}
