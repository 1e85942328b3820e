//! Flat named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DAWNCKPT"
//! version   u32      currently 1
//! count     u32      number of entries
//! entry * count:
//!   kind      u8     0 = trainable parameter, 1 = buffer (running statistics)
//!   name_len  u32
//!   name      name_len bytes, UTF-8
//!   ndim      u32
//!   dims      u64 * ndim
//!   values    f32 * product(dims), row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DAWNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Parameter,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor<f32>,
}

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = store.params().len() + store.buffers().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    let entries = store
        .params()
        .iter()
        .map(|p| (EntryKind::Parameter, &p.name, &p.value))
        .chain(store.buffers().iter().map(|b| (EntryKind::Buffer, &b.name, &b.value)));
    for (kind, name, value) in entries {
        out.push(match kind {
            EntryKind::Parameter => 0,
            EntryKind::Buffer => 1,
        });
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<const N: usize>(cur: &mut Cursor<&[u8]>, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what} at byte {}", cur.position())))?;
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut cur = Cursor::new(bytes);
    let magic: [u8; 8] = take(&mut cur, "header")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(&mut cur, "version")?);
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = u32::from_le_bytes(take(&mut cur, "entry count")?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let kind = match take::<1>(&mut cur, "entry kind")?[0] {
            0 => EntryKind::Parameter,
            1 => EntryKind::Buffer,
            k => return Err(Error::Checkpoint(format!("unknown entry kind {k}"))),
        };
        let name_len = u32::from_le_bytes(take(&mut cur, "name length")?) as usize;
        let start = cur.position() as usize;
        let name_bytes = bytes
            .get(start..start + name_len)
            .ok_or_else(|| Error::Checkpoint(format!("truncated name at byte {start}")))?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("non-UTF-8 name at byte {start}")))?;
        cur.set_position((start + name_len) as u64);
        let ndim = u32::from_le_bytes(take(&mut cur, "rank")?) as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut cur, "dimension")?) as usize);
        }
        let len: usize = shape.iter().product();
        let start = cur.position() as usize;
        let raw = bytes
            .get(start..start + 4 * len)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: truncated values at byte {start}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        cur.set_position((start + 4 * len) as u64);
        entries.push(Entry {
            name,
            kind,
            value: Tensor::new(shape, data)?,
        });
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last entry",
            bytes.len() - cur.position() as usize
        )));
    }
    Ok(entries)
}

/// Overwrite every tensor of `store` from `entries`; names and shapes must match exactly.
pub fn restore(store: &mut ParamStore<f32>, entries: &[Entry]) -> Result<()> {
    let expected = store.params().len() + store.buffers().len();
    let find = |name: &str, kind: EntryKind| {
        entries
            .iter()
            .find(|e| e.name == name && e.kind == kind)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    };
    for p in store.params_mut() {
        let e = find(&p.name, EntryKind::Parameter)?;
        if e.value.shape() != p.value.shape() {
            return Err(Error::CheckpointShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: e.value.shape().to_vec(),
            });
        }
        p.value = e.value.clone();
    }
    for b in store.buffers_mut() {
        let e = find(&b.name, EntryKind::Buffer)?;
        if e.value.shape() != b.value.shape() {
            return Err(Error::CheckpointShape {
                name: b.name.clone(),
                expected: b.value.shape().to_vec(),
                found: e.value.shape().to_vec(),
            });
        }
        b.value = e.value.clone();
    }
    if entries.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, model has {expected}",
            entries.len()
        )));
    }
    Ok(())
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add_param("a.weight", Tensor::new([2, 2], vec![1.0, -0.5, 3.25, f32::MIN_POSITIVE]).unwrap())
            .unwrap();
        s.add_param("a.bias", Tensor::new([2], vec![0.1, 0.2]).unwrap()).unwrap();
        s.add_buffer("bn.running_var", Tensor::full([3], 1.0)).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = store();
        let entries = decode(&encode(&s)).unwrap();
        let mut t = store();
        for p in t.params_mut() {
            p.value.fill(0.0);
        }
        restore(&mut t, &entries).unwrap();
        for (a, b) in s.params().iter().zip(t.params()) {
            let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut bytes = encode(&store());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
        let mut bytes = encode(&store());
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(Error::CheckpointVersion { found: 9, expected: 1 })));
        let bytes = encode(&store());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let entries = decode(&encode(&store())).unwrap();
        let mut other = ParamStore::new();
        other.add_param("a.weight", Tensor::zeros([4])).unwrap();
        other.add_param("a.bias", Tensor::zeros([2])).unwrap();
        other.add_buffer("bn.running_var", Tensor::zeros([3])).unwrap();
        match restore(&mut other, &entries) {
            Err(Error::CheckpointShape { name, .. }) => assert_eq!(name, "a.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
