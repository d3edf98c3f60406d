//! Binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PFKD" | u32 version | u8 kind | u64 fingerprint
//! u32 meta_len | meta_len bytes of JSON metadata
//! u32 entries | entries x (u32 name_len | name | u32 rank | rank x u32 extent | f32 values)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Entries hold parameters followed by buffers, in model order.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, ModelState};
use crate::tensor::{Mode, Tensor};

pub const MAGIC: &[u8; 4] = b"PFKD";
pub const VERSION: u32 = 1;

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMeta {
    pub spec: ModelSpec,
    pub role: String,
    pub fold: Option<usize>,
    pub seed: u64,
    /// Resolved run configuration as TOML.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightContainer {
    pub kind: ModelKind,
    pub fingerprint: u64,
    /// Metadata JSON, kept verbatim so re-saving is byte-identical.
    pub meta_json: String,
    pub entries: IndexMap<String, Tensor<f32>>,
}

impl WeightContainer {
    pub fn from_state(state: &ModelState<f32>, meta: &WeightMeta) -> Result<Self> {
        meta.spec.check_state(state)?;
        let mut entries = IndexMap::new();
        for (k, v) in state.params.iter().chain(&state.buffers) {
            entries.insert(k.clone(), v.clone());
        }
        Ok(WeightContainer {
            kind: state.kind,
            fingerprint: state.fingerprint,
            meta_json: serde_json::to_string(meta).map_err(|e| Error::Weights(e.to_string()))?,
            entries,
        })
    }

    pub fn meta(&self) -> Result<WeightMeta> {
        serde_json::from_str(&self.meta_json).map_err(|e| Error::Weights(format!("metadata: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.kind.tag());
        b.extend_from_slice(&self.fingerprint.to_le_bytes());
        b.extend_from_slice(&(self.meta_json.len() as u32).to_le_bytes());
        b.extend_from_slice(self.meta_json.as_bytes());
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Weights(m);
        if bytes.len() < 4 + 4 + 1 + 8 + 4 + 4 + 4 || &bytes[..4] != MAGIC {
            return Err(bad("not a weight file (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(bad(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Cursor { b: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        let kind = ModelKind::from_tag(tag).ok_or_else(|| bad(format!("unknown model kind tag {tag}")))?;
        let fingerprint = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta_json = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| bad("metadata is not UTF-8".into()))?
            .to_string();
        let count = r.u32()? as usize;
        let mut entries = IndexMap::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| bad("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let len = shape.iter().product::<usize>();
            let data = r
                .take(len.checked_mul(4).ok_or_else(|| bad("entry too large".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("entry `{name}`: {e}")))?;
            if entries.insert(name.clone(), t).is_some() {
                return Err(bad(format!("duplicate entry `{name}`")));
            }
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(WeightContainer {
            kind,
            fingerprint,
            meta_json,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Weights(m) => Error::Weights(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Rebuilds the eval-mode model state. The stored spec must agree with
    /// the header fingerprint and, when given, with `expected`.
    pub fn into_state(self, expected: Option<&ModelSpec>) -> Result<(WeightMeta, ModelState<f32>)> {
        let meta = self.meta()?;
        let spec = &meta.spec;
        if spec.kind() != self.kind || spec.fingerprint() != self.fingerprint {
            return Err(Error::Weights("header does not match the stored model spec".into()));
        }
        if let Some(e) = expected {
            if e.fingerprint() != self.fingerprint || e.kind() != self.kind {
                return Err(Error::Weights(format!(
                    "weights were trained with a different {:?} spec (fingerprint {:016x}, config has {:016x})",
                    self.kind,
                    self.fingerprint,
                    e.fingerprint()
                )));
            }
        }
        let mut state: ModelState<f32> = spec.build(&mut crate::rng::stream(0, "template"))?;
        let expected_names: Vec<&String> = state.params.keys().chain(state.buffers.keys()).collect();
        if expected_names.len() != self.entries.len() || expected_names.iter().any(|n| !self.entries.contains_key(*n)) {
            return Err(Error::Weights("entry names do not match the model".into()));
        }
        for (name, slot) in state.params.iter_mut().chain(state.buffers.iter_mut()) {
            let t = &self.entries[name];
            if t.shape() != slot.shape() {
                return Err(Error::Weights(format!(
                    "entry `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        state.set_mode(Mode::Eval);
        Ok((meta, state))
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| Error::Weights("file is truncated".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Saves a trained state with its provenance.
pub fn save_model(path: &Path, state: &ModelState<f32>, meta: &WeightMeta) -> Result<()> {
    WeightContainer::from_state(state, meta)?.save(path)
}

pub fn load_model(path: &Path, expected: Option<&ModelSpec>) -> Result<(WeightMeta, ModelState<f32>)> {
    WeightContainer::load(path)?.into_state(expected)
}
