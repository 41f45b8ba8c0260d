//! Binary checkpoint format.
//!
//! ```text
//! "DRPN"  u16 version  u32 count
//! count x { u16 name_len, name (utf-8), u8 rank, u32 dims[rank], f64 payload[prod(dims)] }
//! ```
//!
//! Every integer and float is little-endian. Payloads are row-major.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Array;

pub const MAGIC: [u8; 4] = *b"DRPN";
pub const VERSION: u16 = 1;

/// Named tensors in file order.
pub type NamedTensors = Vec<(String, Array)>;

fn check_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if name.is_empty() {
            return Err(Error::Format("tensor names must be non-empty".into()));
        }
        if !seen.insert(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
    }
    Ok(())
}

pub fn save_checkpoint(tensors: &[(String, Array)]) -> Result<Vec<u8>> {
    check_names(tensors.iter().map(|(n, _)| n.as_str()))?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    let payload: usize = tensors.iter().map(|(n, a)| 2 + n.len() + 1 + 4 * a.rank() + 8 * a.len()).sum();
    let mut out = Vec::with_capacity(10 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, array) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name {name:?} is too long")))?;
        let rank = u8::try_from(array.rank())
            .map_err(|_| Error::Format(format!("{name}: rank {} is too large", array.rank())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in array.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: extent {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in array.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<NamedTensors> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.array("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = u32::from_le_bytes(r.array("entry count")?) as usize;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..count {
        let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| Error::Format(format!("entry {i}: name is not utf-8: {e}")))?
            .to_string();
        if name.is_empty() {
            return Err(Error::Format(format!("entry {i} has an empty name")));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let rank = r.array::<1>("rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(r.array("dims")?) as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("{name}: dims {dims:?} overflow")))?;
        let payload = r.take(len, &format!("payload of {name}"))?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Array::new(dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last entry", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint_file(path: impl AsRef<Path>, tensors: &[(String, Array)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = save_checkpoint(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_checkpoint(&bytes)
}
