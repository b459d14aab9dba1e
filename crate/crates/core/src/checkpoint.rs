//! Named-tensor checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DEGC" | version: u32 | kind len: u32 | kind bytes
//! entry count: u32
//! per entry: name len u32 | name bytes | dtype u8 (0=f64, 1=u8)
//!            | ndim u32 | dims u32 * ndim | payload
//! crc32: u32  (over every preceding byte)
//! ```
//!
//! `load(save(m))` is bit-identical; names must be unique.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DEGC";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_U8: u8 = 1;

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: BTreeMap<String, Tensor>,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            tensors: BTreeMap::new(),
            blobs: BTreeMap::new(),
        }
    }

    pub fn put_tensor(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.tensors.contains_key(name) || self.blobs.contains_key(name) {
            return Err(Error::Format(format!("duplicate checkpoint entry '{name}'")));
        }
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn put_blob(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        if self.tensors.contains_key(name) || self.blobs.contains_key(name) {
            return Err(Error::Format(format!("duplicate checkpoint entry '{name}'")));
        }
        self.blobs.insert(name.to_string(), bytes);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor '{name}'")))
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .get(name)
            .map(|b| b.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint is missing blob '{name}'")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = Vec::new();
        body.extend_from_slice(CHECKPOINT_MAGIC);
        body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        body.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        body.extend_from_slice(self.kind.as_bytes());
        let count = self.tensors.len() + self.blobs.len();
        body.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.push(DTYPE_F64);
            body.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (name, b) in &self.blobs {
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.push(DTYPE_U8);
            body.extend_from_slice(&1u32.to_le_bytes());
            body.extend_from_slice(&(b.len() as u32).to_le_bytes());
            body.extend_from_slice(b);
        }
        let crc = crc32fast::hash(&body);
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&body)?;
        w.write_all(&crc.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        File::open(path)?.read_to_end(&mut raw)?;
        if raw.len() < 4 + 4 + 4 + 4 + 4 {
            return Err(Error::Format(format!(
                "{}: too short to be a checkpoint",
                path.display()
            )));
        }
        let (body, crc_bytes) = raw.split_at(raw.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Format(format!(
                "{}: crc mismatch (stored {stored:#010x}, computed {computed:#010x})",
                path.display()
            )));
        }
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > body.len() {
                return Err(Error::Format("checkpoint truncated".into()));
            }
            let s = &body[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let u32_at = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().expect("4 bytes")))
        };
        if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic, expected \"DEGC\"",
                path.display()
            )));
        }
        let version = u32_at(&mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let kind_len = u32_at(&mut pos)? as usize;
        let kind = String::from_utf8(take(&mut pos, kind_len)?.to_vec())
            .map_err(|_| Error::Format("kind tag is not utf-8".into()))?;
        let count = u32_at(&mut pos)? as usize;
        let mut ck = Checkpoint::new(&kind);
        for _ in 0..count {
            let name_len = u32_at(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Format("entry name is not utf-8".into()))?;
            let dtype = take(&mut pos, 1)?[0];
            let ndim = u32_at(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u32_at(&mut pos)? as usize);
            }
            let n: usize = dims.iter().product();
            match dtype {
                DTYPE_F64 => {
                    let bytes = take(&mut pos, n * 8)?;
                    let data: Vec<f64> = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    ck.put_tensor(&name, Tensor::new(dims, data)?)?;
                }
                DTYPE_U8 => {
                    let bytes = take(&mut pos, n)?.to_vec();
                    ck.put_blob(&name, bytes)?;
                }
                other => {
                    return Err(Error::Format(format!("unknown dtype code {other}")));
                }
            }
        }
        if pos != body.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use tempfile::tempdir;

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let mut rng = Rng::from_seed(1);
        let mut ck = Checkpoint::new("vae");
        ck.put_tensor("enc.w", Tensor::randn(&[4, 3], &mut rng).unwrap())
            .unwrap();
        ck.put_tensor("enc.b", Tensor::randn(&[3], &mut rng).unwrap())
            .unwrap();
        ck.put_blob("config", br#"{"latent":128}"#.to_vec()).unwrap();
        let p1 = dir.path().join("a.degc");
        let p2 = dir.path().join("b.degc");
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        assert_eq!(back.kind, "vae");
        back.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "byte-identical round trip");
        let w = back.tensor("enc.w").unwrap();
        let orig = ck.tensor("enc.w").unwrap();
        assert!(w
            .data()
            .iter()
            .zip(orig.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempdir().unwrap();
        let mut ck = Checkpoint::new("gan");
        ck.put_tensor("w", Tensor::scalar(1.5)).unwrap();
        let p = dir.path().join("c.degc");
        ck.save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        let err = Checkpoint::load(&p).unwrap_err().to_string();
        assert!(err.contains("crc mismatch"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ck = Checkpoint::new("x");
        ck.put_tensor("w", Tensor::scalar(1.0)).unwrap();
        assert!(ck.put_tensor("w", Tensor::scalar(2.0)).is_err());
        assert!(ck.put_blob("w", vec![1]).is_err());
    }
}
