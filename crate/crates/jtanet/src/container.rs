//! Shared binary container format for checkpoints, patch sets, and feature
//! databases.
//!
//! Layout: 4-byte magic, u32 format version, u64 header length, a JSON
//! header, then raw little-endian section payloads. The header carries
//! caller metadata plus a section table (name, dtype, shape, byte offset,
//! element count), so files are self-describing and partially readable.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum Dtype {
    F64,
    F32,
    U32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::U32 => 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: u64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    sections: Vec<SectionMeta>,
}

pub(crate) struct ContainerBuilder {
    sections: Vec<SectionMeta>,
    payload: Vec<u8>,
}

impl ContainerBuilder {
    pub fn new() -> ContainerBuilder {
        ContainerBuilder { sections: Vec::new(), payload: Vec::new() }
    }

    fn push(&mut self, name: &str, dtype: Dtype, shape: &[usize], count: usize) {
        self.sections.push(SectionMeta {
            name: name.to_string(),
            dtype,
            shape: shape.to_vec(),
            offset: self.payload.len() as u64,
            count: count as u64,
        });
    }

    pub fn add_f64(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.push(name, Dtype::F64, shape, data.len());
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn add_f32(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.push(name, Dtype::F32, shape, data.len());
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn add_u32(&mut self, name: &str, shape: &[usize], data: &[u32]) {
        self.push(name, Dtype::U32, shape, data.len());
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn write(
        self,
        path: &Path,
        magic: &[u8; 4],
        version: u32,
        meta: serde_json::Value,
    ) -> Result<()> {
        let header = Header { meta, sections: self.sections };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(magic)?;
        w.write_all(&version.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        w.write_all(&self.payload)?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) struct ContainerReader {
    path: PathBuf,
    pub meta: serde_json::Value,
    sections: Vec<SectionMeta>,
    payload: Vec<u8>,
}

impl ContainerReader {
    pub fn open(path: &Path, magic: &[u8; 4], expect_version: u32) -> Result<ContainerReader> {
        let mut r = BufReader::new(File::open(path)?);
        let mut got_magic = [0u8; 4];
        let mut version = [0u8; 4];
        let mut header_len = [0u8; 8];
        let read_exact = |r: &mut BufReader<File>, buf: &mut [u8], what: &str| {
            r.read_exact(buf)
                .map_err(|_| Error::format(path, format!("truncated before {what}")))
        };
        read_exact(&mut r, &mut got_magic, "magic")?;
        if &got_magic != magic {
            return Err(Error::format(
                path,
                format!(
                    "magic {:?} does not match expected {:?}",
                    String::from_utf8_lossy(&got_magic),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        read_exact(&mut r, &mut version, "version")?;
        let version = u32::from_le_bytes(version);
        if version != expect_version {
            return Err(Error::format(
                path,
                format!("format version {version} is not supported (expected {expect_version})"),
            ));
        }
        read_exact(&mut r, &mut header_len, "header length")?;
        let header_len = u64::from_le_bytes(header_len) as usize;
        let mut header_bytes = vec![0u8; header_len];
        read_exact(&mut r, &mut header_bytes, "header")?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::format(path, format!("bad header JSON: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        for s in &header.sections {
            let span = s.count as usize * s.dtype.size();
            let end = s.offset as usize + span;
            if end > payload.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "section {} claims bytes {}..{end} but payload has {}",
                        s.name, s.offset,
                        payload.len()
                    ),
                ));
            }
            let expect: usize = s.shape.iter().product();
            if expect != s.count as usize {
                return Err(Error::format(
                    path,
                    format!(
                        "section {} shape {:?} disagrees with count {}",
                        s.name, s.shape, s.count
                    ),
                ));
            }
        }
        Ok(ContainerReader {
            path: path.to_path_buf(),
            meta: header.meta,
            sections: header.sections,
            payload,
        })
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    fn find(&self, name: &str, dtype: Dtype) -> Result<(&SectionMeta, &[u8])> {
        let s = self
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::format(&self.path, format!("missing section {name}")))?;
        if s.dtype != dtype {
            return Err(Error::format(
                &self.path,
                format!("section {name} is {:?}, expected {dtype:?}", s.dtype),
            ));
        }
        let span = s.count as usize * dtype.size();
        Ok((s, &self.payload[s.offset as usize..s.offset as usize + span]))
    }

    pub fn f64(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (s, bytes) = self.find(name, Dtype::F64)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((s.shape.clone(), data))
    }

    pub fn f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let (s, bytes) = self.find(name, Dtype::F32)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((s.shape.clone(), data))
    }

    pub fn u32(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let (s, bytes) = self.find(name, Dtype::U32)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((s.shape.clone(), data))
    }
}
