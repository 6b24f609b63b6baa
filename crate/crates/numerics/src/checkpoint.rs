//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GSUMCKPT"
//! version    u32
//! hash       u32 length + UTF-8 config hash
//! metadata   u32 count, then (u32 key length, key, u64 value length, value bytes)
//! params     u32 count, then (u32 name length, name, u32 ndim = 2,
//!                             u64 rows, u64 cols, rows*cols f64)
//! optimizer  u8 flag; when 1: f64 lr, beta1, beta2, eps, u64 step,
//!            then every param's first moments followed by its second moments
//! checksum   32-byte SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::adam::{Adam, AdamConfig};
use crate::error::{NumericsError, Result};
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GSUMCKPT";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub metadata: BTreeMap<String, Vec<u8>>,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            out.extend_from_slice(v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
            put_f64s(&mut out, p.value.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                let c = adam.config;
                for x in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.extend_from_slice(&adam.step.to_le_bytes());
                for t in adam.m.iter().chain(&adam.v) {
                    put_f64s(&mut out, t.data());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
            return Err(NumericsError::Integrity(format!(
                "file too short ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(NumericsError::Integrity("bad magic".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(NumericsError::Integrity(
                "checksum mismatch (truncated or corrupted)".into(),
            ));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(NumericsError::Integrity(format!(
                "unsupported version {version}"
            )));
        }
        let config_hash = r.string()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let n = r.u64()? as usize;
            metadata.insert(k, r.take(n)?.to_vec());
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(NumericsError::Integrity(format!(
                    "parameter `{name}` has {ndim} dimensions"
                )));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let data = r.f64s(rows * cols)?;
            params.insert(name, Tensor::from_vec(rows, cols, data)?, Init::Zeros)?;
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step = r.u64()?;
                let moments = |r: &mut Reader| -> Result<Vec<Tensor>> {
                    params
                        .iter()
                        .map(|(_, p)| {
                            let (rows, cols) = (p.value.rows(), p.value.cols());
                            Tensor::from_vec(rows, cols, r.f64s(rows * cols)?)
                        })
                        .collect()
                };
                let m = moments(&mut r)?;
                let v = moments(&mut r)?;
                Some(Adam { config, step, m, v })
            }
            f => {
                return Err(NumericsError::Integrity(format!(
                    "bad optimizer flag {f}"
                )))
            }
        };
        if r.pos != body.len() {
            return Err(NumericsError::Integrity("trailing bytes".into()));
        }
        Ok(Self {
            config_hash,
            metadata,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Load and require the stored config hash to equal `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config_hash != expected {
            return Err(NumericsError::ConfigMismatch {
                expected: expected.to_string(),
                found: ck.config_hash,
            });
        }
        Ok(ck)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NumericsError::Integrity("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            NumericsError::Integrity("tensor size overflow".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NumericsError::Integrity("invalid UTF-8 string".into()))
    }
}
