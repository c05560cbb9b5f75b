//! Binary tensor container and model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HCNN"  magic
//! u16     version
//! u32     entry count
//! entry*: u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//!         u8 rank, u32 dims[rank], payload
//! ```
//!
//! A model checkpoint is a container of its named tensors plus a JSON
//! sidecar at `<path>.json` holding the architecture.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HybridModel, HybridModelConfig};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"HCNN";
pub const VERSION: u16 = 1;

/// Serialises `entries` into the container format.
pub fn encode<'a, T: Real + 'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("{name}: rank too large")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
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

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a container, converting every payload to `T`. `origin` names the
/// source in errors. Nothing is returned unless the whole file parses.
pub fn decode<T: Real>(bytes: &[u8], origin: &Path) -> Result<IndexMap<String, Tensor<T>>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let count = r.u32("entry count")?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_tag(r.u8("dtype")?)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype tag")))?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let width = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let payload = r.take(n * width, &format!("payload of {name}"))?;
        let data: Vec<T> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        if out.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_tensors<'a, T: Real + 'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    fs::write(path, encode(entries)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensors<T: Real>(path: &Path) -> Result<IndexMap<String, Tensor<T>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Path of the JSON sidecar that accompanies `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Contents of a model checkpoint's sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: HybridModelConfig,
    pub tool_version: String,
}

pub fn save_checkpoint<T: Real>(model: &HybridModel<T>, path: &Path) -> Result<()> {
    write_tensors(path, model.store().entries())?;
    let meta = CheckpointMeta {
        config: model.config().clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&side, e))
}

/// Loads a model; the architecture comes from the sidecar.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<HybridModel<T>> {
    let tensors = read_tensors(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    HybridModel::from_tensors(meta.config, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IndexMap<String, Tensor<f32>> {
        let mut m = IndexMap::new();
        m.insert("a".to_string(), Tensor::from_f64(&[2, 2], &[1.0, -0.5, 3.25, f32::MIN_POSITIVE as f64]).unwrap());
        m.insert("b.c".to_string(), Tensor::from_f64(&[3], &[0.1, 0.2, 0.3]).unwrap());
        m
    }

    fn bytes() -> Vec<u8> {
        let m = sample();
        encode(m.iter().map(|(k, v)| (k.as_str(), v))).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let back = decode::<f32>(&bytes(), Path::new("x")).unwrap();
        assert_eq!(back, sample());
        for (a, b) in back.values().zip(sample().values()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout() {
        let b = bytes();
        assert_eq!(&b[..4], b"HCNN");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), VERSION);
        assert_eq!(u32::from_le_bytes([b[6], b[7], b[8], b[9]]), 2);
        assert_eq!(u16::from_le_bytes([b[10], b[11]]), 1);
        assert_eq!(b[12], b'a');
        assert_eq!((b[13], b[14]), (0, 2));
    }

    #[test]
    fn corrupt_magic() {
        let mut b = bytes();
        b[0] = b'X';
        assert!(matches!(decode::<f32>(&b, Path::new("m")), Err(Error::BadMagic(_))));
    }

    #[test]
    fn newer_version() {
        let mut b = bytes();
        b[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            decode::<f32>(&b, Path::new("m")),
            Err(Error::Version { found, .. }) if found == VERSION + 1
        ));
    }

    #[test]
    fn every_truncation_is_reported() {
        let b = bytes();
        for cut in 4..b.len() {
            assert!(matches!(decode::<f32>(&b[..cut], Path::new("m")), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn f32_payload_widens_exactly() {
        let back = decode::<f64>(&bytes(), Path::new("x")).unwrap();
        assert_eq!(back["a"].data()[1], -0.5);
        assert_eq!(back["b.c"].data()[0], 0.1f32 as f64);
    }
}
