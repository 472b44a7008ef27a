//! Binary container shared by field and training checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "GTCK"
//! version    u32      1
//! header_len u64      byte length of the JSON header
//! header     JSON     {"meta": <any>, "tensors": [{"name": str, "len": int}, ...]}
//! payloads   f32 LE   tensors concatenated in header order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"GTCK";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: Value,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

impl Archive {
    pub fn push(&mut self, name: impl Into<String>, data: Vec<f32>) {
        self.tensors.push(Tensor {
            name: name.into(),
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.data.as_slice())
            .ok_or_else(|| Error::format(format!("archive has no tensor named {name:?}")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    len: t.data.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(ARCHIVE_MAGIC)?;
        w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.tensors {
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::format(format!(
                "bad checkpoint magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                "GTCK"
            )));
        }
        let mut word = [0u8; 4];
        read_exact(r, &mut word, "version")?;
        let version = u32::from_le_bytes(word);
        if version != ARCHIVE_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version}, expected {ARCHIVE_VERSION}"
            )));
        }
        let mut len = [0u8; 8];
        read_exact(r, &mut len, "header length")?;
        let header_len = u64::from_le_bytes(len);
        if header_len > (1 << 30) {
            return Err(Error::format(format!("implausible header length {header_len}")));
        }
        let mut json = vec![0u8; header_len as usize];
        read_exact(r, &mut json, "header")?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::format(format!("corrupt checkpoint header: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let mut bytes = vec![0u8; entry.len * 4];
            read_exact(r, &mut bytes, &format!("tensor {:?}", entry.name))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(Tensor {
                name: entry.name,
                data,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::format(e.to_string()))? != 0 {
            return Err(Error::format("trailing bytes after last checkpoint tensor"));
        }
        Ok(Archive {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(format!("checkpoint truncated while reading {what}: {e}")))
}
