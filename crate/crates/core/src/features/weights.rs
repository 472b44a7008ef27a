//! GTFW weight files.
//!
//! ```text
//! magic     4 bytes  "GTFW"
//! version   u32      1
//! count     u32      number of entries
//! table     count x { name_len u32, name utf-8, ndim u32, dims u32 x ndim }
//! payloads  f32 LE   entries concatenated in table order, row-major
//! ```
//!
//! All integers are little-endian. Convolution filters are named
//! `block<B>.conv<K>.weight` with shape `[out, in, 3, 3]` and biases
//! `block<B>.conv<K>.bias` with shape `[out]`; blocks and convolutions are
//! numbered from 1. An optional `input.mean` entry of shape `[3]` holds the
//! per-channel mean subtracted from the input image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"GTFW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    pub entries: Vec<WeightEntry>,
}

impl WeightArchive {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(WeightEntry {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
        }
        for e in &self.entries {
            let mut buf = Vec::with_capacity(e.data.len() * 4);
            for v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("in-memory write");
        v
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        fill(r, &mut magic, "the magic bytes")?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::format(format!(
                "not a GTFW weight file (magic {:?})",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(r, "the version")?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(format!(
                "unsupported GTFW version {version}, expected {WEIGHTS_VERSION}"
            )));
        }
        let count = read_u32(r, "the entry count")? as usize;
        if count > 4096 {
            return Err(Error::format(format!("implausible GTFW entry count {count}")));
        }
        let mut table = Vec::with_capacity(count);
        for i in 0..count {
            let name_len = read_u32(r, &format!("the name of entry {i}"))? as usize;
            if name_len > 1024 {
                return Err(Error::format(format!("entry {i} has an implausible name length")));
            }
            let mut name = vec![0u8; name_len];
            fill(r, &mut name, &format!("the name of entry {i}"))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format(format!("entry {i} has a non utf-8 name")))?;
            let ndim = read_u32(r, &format!("the rank of layer {name:?}"))? as usize;
            if ndim > 8 {
                return Err(Error::format(format!("layer {name:?} has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(r, &format!("the shape of layer {name:?}"))? as usize);
            }
            table.push((name, shape));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, shape) in table {
            let len: usize = shape.iter().product();
            let mut bytes = vec![0u8; len * 4];
            fill(r, &mut bytes, &format!("the payload of layer {name:?}"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push(WeightEntry { name, shape, data });
        }
        Ok(WeightArchive { entries })
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

fn fill(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("GTFW file truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    fill(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
