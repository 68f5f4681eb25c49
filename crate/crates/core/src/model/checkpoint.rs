//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSTA"              4-byte magic
//! version: u32        currently 1
//! header_len: u32     byte length of the header text
//! header              UTF-8 lines:
//!                       config.<field>=<value>   one per ModelConfig field
//!                       param <name> <d0>x<d1>...  one per tensor, in payload order
//! payload             f64 values of every parameter, row-major, in header order
//! ```
//!
//! File size is therefore `12 + header_len + 8 · (total parameter count)`.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSTA";
pub const FORMAT_VERSION: u32 = 1;

/// A model configuration and its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
}

impl From<&Model> for Checkpoint {
    fn from(m: &Model) -> Self {
        Checkpoint {
            config: m.config().clone(),
            params: m.named().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        Model::from_named(self.config, self.params)
    }

    fn header_text(&self) -> String {
        let mut text = String::new();
        for line in self.config.to_kv_lines() {
            text.push_str("config.");
            text.push_str(&line);
            text.push('\n');
        }
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            text.push_str(&format!("param {name} {}\n", dims.join("x")));
        }
        text
    }

    /// Bytes taken by magic, version, length prefix and header text.
    pub fn header_size(&self) -> usize {
        12 + self.header_text().len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header_text();
        let count: usize = self.params.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 8 * count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Load(m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (missing DSTA magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = bytes
            .get(12..12 + header_len)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header =
            std::str::from_utf8(header).map_err(|_| bad("header is not UTF-8".into()))?;

        let mut config = ModelConfig::desk();
        let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
        for line in header.lines() {
            if let Some(kv) = line.strip_prefix("config.") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed config line {line:?}")))?;
                config
                    .set_kv(k, v)
                    .map_err(|e| bad(format!("header field {k}: {e}")))?;
            } else if let Some(rest) = line.strip_prefix("param ") {
                let (name, dims) = rest
                    .rsplit_once(' ')
                    .ok_or_else(|| bad(format!("malformed param line {line:?}")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape for parameter {name}: {dims}")))?;
                entries.push((name.to_string(), shape));
            } else if !line.is_empty() {
                return Err(bad(format!("unexpected header line {line:?}")));
            }
        }
        config
            .validate()
            .map_err(|e| bad(format!("embedded configuration: {e}")))?;

        let expected = super::params::layout(&config);
        if expected.len() != entries.len() {
            return Err(bad(format!(
                "configuration implies {} parameters, header lists {}",
                expected.len(),
                entries.len()
            )));
        }
        for ((want_name, want_shape, _), (name, shape)) in expected.iter().zip(&entries) {
            if want_name != name {
                return Err(bad(format!(
                    "parameter {name} found where {want_name} was expected"
                )));
            }
            if want_shape != shape {
                return Err(bad(format!(
                    "parameter {name}: header shape {shape:?} disagrees with configuration {want_shape:?}"
                )));
            }
        }

        let mut pos = 12 + header_len;
        let mut params = Vec::with_capacity(entries.len());
        for (name, shape) in entries {
            let count: usize = shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * count)
                .ok_or_else(|| bad(format!("payload truncated in parameter {name}")))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * count;
            let t = Tensor::new(shape, data).map_err(|e| bad(format!("parameter {name}: {e}")))?;
            params.push((name, t));
        }
        if pos != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after the payload",
                bytes.len() - pos
            )));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
