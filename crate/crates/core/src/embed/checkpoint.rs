//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FGATCKPT" | u32 version | u32 meta_len | meta (UTF-8 `key=value` lines)
//! u32 n_sections | n_sections × section
//! section = u32 name_len | name | u8 dtype (1 = f32, 2 = f64)
//!         | u32 ndims | ndims × u64 dim | row-major payload
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelState, Params};
use crate::error::{Error, Result};
use crate::math::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FGATCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Values widened to f64; for `F32` sections every value is exactly
    /// representable as f32.
    pub data: Vec<f64>,
}

impl Section {
    pub fn from_mat(name: impl Into<String>, m: &Mat, dtype: Dtype) -> Self {
        let data = match dtype {
            Dtype::F32 => m.as_slice().iter().map(|&x| f64::from(x as f32)).collect(),
            Dtype::F64 => m.as_slice().to_vec(),
        };
        Section {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            dtype,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub sections: Vec<Section>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint".into(),
        msg: msg.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.dtype as u8);
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match s.dtype {
                Dtype::F32 => s
                    .data
                    .iter()
                    .for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes())),
                Dtype::F64 => s
                    .data
                    .iter()
                    .for_each(|&x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("missing FGATCKPT header"));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = c.u32()? as usize;
        let meta_text =
            std::str::from_utf8(c.take(meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta = meta_text
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(format!("bad metadata line {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = c.u32()? as usize;
        let mut sections = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(name_len)?)
                .map_err(|_| bad("section name is not UTF-8"))?
                .to_string();
            let dtype = match c.take(1)?[0] {
                1 => Dtype::F32,
                2 => Dtype::F64,
                other => return Err(bad(format!("unknown dtype {other} in section {name}"))),
            };
            let ndims = c.u32()? as usize;
            let shape = (0..ndims)
                .map(|_| c.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("section size overflow"))?;
            let width = if dtype == Dtype::F32 { 4 } else { 8 };
            let payload = c.take(count.checked_mul(width).ok_or_else(|| bad("section size overflow"))?)?;
            let data = match dtype {
                Dtype::F32 => payload
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                    .collect(),
                Dtype::F64 => payload
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
            sections.push(Section {
                name,
                shape,
                dtype,
                data,
            });
        }
        if c.pos != bytes.len() {
            return Err(bad("trailing bytes after last section"));
        }
        Ok(Checkpoint { meta, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies sections `prefix + tensor name` into `params`, checking shapes.
    pub fn load_params(&self, prefix: &str, params: &mut Params) -> Result<()> {
        for (name, m) in params.named_mut() {
            let key = format!("{prefix}{name}");
            let s = self
                .section(&key)
                .ok_or_else(|| bad(format!("missing section {key}")))?;
            if s.shape != [m.rows(), m.cols()] {
                return Err(Error::DimensionMismatch(format!(
                    "section {key} has shape {:?}, model expects {:?}",
                    s.shape,
                    m.shape()
                )));
            }
            m.as_mut_slice().copy_from_slice(&s.data);
        }
        Ok(())
    }

    pub fn push_params(&mut self, prefix: &str, params: &Params, dtype: Dtype) {
        for (name, m) in params.named() {
            self.sections
                .push(Section::from_mat(format!("{prefix}{name}"), m, dtype));
        }
    }
}

impl ModelState {
    /// Model parameters plus config, with `dtype` payloads.
    pub fn to_checkpoint(&self, dtype: Dtype) -> Checkpoint {
        let mut ck = Checkpoint {
            meta: self.config.to_meta(),
            sections: Vec::new(),
        };
        ck.push_params("", &self.params, dtype);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ck.meta)?;
        config.validate()?;
        let mut params = Params::zeros(&config);
        ck.load_params("", &mut params)?;
        Ok(ModelState { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint(Dtype::F32).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
