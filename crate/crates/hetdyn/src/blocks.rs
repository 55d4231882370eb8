//! Shared container: one JSON header line, then labeled blocks of little-endian
//! `f64`. Each block starts with a text line `#block <label> <count>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HdynError, Result};

pub const ENDIANNESS: &str = "little";

/// Fields every container header carries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    #[serde(flatten)]
    pub body: T,
}

pub struct BlockWriter {
    buf: Vec<u8>,
}

impl BlockWriter {
    pub fn new<T: Serialize>(format: &str, version: u32, body: &T) -> Self {
        let env = Envelope {
            format: format.to_string(),
            version,
            endianness: ENDIANNESS.to_string(),
            body,
        };
        let mut buf = serde_json::to_vec(&env).expect("headers serialize");
        buf.push(b'\n');
        BlockWriter { buf }
    }

    pub fn block(&mut self, label: &str, values: &[f64]) -> &mut Self {
        writeln!(self.buf, "#block {label} {}", values.len()).expect("writing to a Vec");
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write(self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| HdynError::io(dir, e))?;
        }
        fs::write(path, self.buf).map_err(|e| HdynError::io(path, e))
    }
}

pub struct BlockReader {
    path: PathBuf,
    bytes: Vec<u8>,
    pos: usize,
}

impl BlockReader {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HdynError::io(path, e))?;
        Ok(Self::from_bytes(path, bytes))
    }

    pub fn from_bytes(path: &Path, bytes: Vec<u8>) -> Self {
        BlockReader {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        }
    }

    fn line(&mut self, what: &str) -> Result<&str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| HdynError::Truncated {
            path: self.path.clone(),
            block: what.to_string(),
            expected: rest.len() + 1,
            found: rest.len(),
        })?;
        let start = self.pos;
        self.pos += end + 1;
        std::str::from_utf8(&self.bytes[start..start + end])
            .map_err(|_| HdynError::parse(&self.path, format!("{what} line is not text")))
    }

    /// Parses the header line, checking format name and version.
    pub fn header<T: DeserializeOwned>(&mut self, format: &str, version: u32) -> Result<T> {
        let path = self.path.clone();
        let line = self.line("header")?.to_string();
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| HdynError::parse(&path, format!("bad header: {e}")))?;
        let found_format = value.get("format").and_then(|v| v.as_str()).unwrap_or_default();
        if found_format != format {
            return Err(HdynError::parse(&path, format!("expected a `{format}` file, found `{found_format}`")));
        }
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != version {
            return Err(HdynError::Version {
                path,
                found,
                expected: version,
            });
        }
        if value.get("endianness").and_then(|v| v.as_str()) != Some(ENDIANNESS) {
            return Err(HdynError::parse(&path, "only little-endian data is supported"));
        }
        let env: Envelope<T> =
            serde_json::from_value(value).map_err(|e| HdynError::parse(&path, format!("bad header: {e}")))?;
        Ok(env.body)
    }

    /// Next block, which must carry `label` and hold `expected` values when given.
    pub fn block(&mut self, label: &str, expected: Option<usize>) -> Result<Vec<f64>> {
        let path = self.path.clone();
        let line = self.line(label)?.to_string();
        let mut parts = line.split(' ');
        let (tag, name, count) = (parts.next(), parts.next(), parts.next().and_then(|c| c.parse::<usize>().ok()));
        let count = match (tag, name, count) {
            (Some("#block"), Some(n), Some(c)) if n == label => c,
            _ => return Err(HdynError::parse(&path, format!("expected block `{label}`, found `{line}`"))),
        };
        if let Some(e) = expected.filter(|&e| e != count) {
            return Err(HdynError::parse(&path, format!("block `{label}` holds {count} values, expected {e}")));
        }
        let need = count * 8;
        let have = self.bytes.len() - self.pos;
        if have < need {
            return Err(HdynError::Truncated {
                path,
                block: label.to_string(),
                expected: need,
                found: have,
            });
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos += need;
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(HdynError::parse(
                &self.path,
                format!("{} trailing bytes after the last block", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
