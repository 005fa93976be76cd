//! Little-endian checkpoint files.
//!
//! Layout: `GTSV`, `u32` version, length-prefixed model config (TOML),
//! length-prefixed normalizer (TOML), `u64` step, `u32` tensor count, then per
//! tensor: length-prefixed name, `u32` rows, `u32` cols, `f32` data and the
//! CRC-32 of the data bytes.

use std::fs;
use std::path::Path;

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

use super::ModelConfig;

pub const MAGIC: &[u8; 4] = b"GTSV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub step: u64,
    pub params: ParamStore<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!("file ends inside {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Corruption(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_block(&mut out, self.config.to_toml()?.as_bytes());
        let norm = toml::to_string(&self.normalizer).map_err(|e| Error::Format(e.to_string()))?;
        put_block(&mut out, norm.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_block(&mut out, name.as_bytes());
            put_u32(&mut out, t.rows() as u32);
            put_u32(&mut out, t.cols() as u32);
            let start = out.len();
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&out[start..]);
            put_u32(&mut out, crc);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Corruption("file shorter than the magic tag".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config = ModelConfig::from_toml(r.text("config block")?)
            .map_err(|e| Error::Format(format!("config block: {e}")))?;
        let normalizer: Normalizer = toml::from_str(r.text("normalizer block")?)
            .map_err(|e| Error::Format(format!("normalizer block: {e}")))?;
        let step = r.u64("step counter")?;
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.text("tensor name")?.to_string();
            let rows = r.u32("tensor shape")? as usize;
            let cols = r.u32("tensor shape")? as usize;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| {
                    Error::Corruption(format!("tensor `{name}` has an impossible shape"))
                })?;
            let raw = r.take(len, "tensor data")?;
            let crc = r.u32("tensor checksum")?;
            if crc32fast::hash(raw) != crc {
                return Err(Error::Checksum(name));
            }
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params
                .insert(&name, Tensor::from_vec(rows, cols, data)?)
                .map_err(|_| Error::Corruption(format!("duplicate tensor `{name}`")))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            normalizer,
            step,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
