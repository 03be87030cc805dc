//! Binary tensor container.
//!
//! ```text
//! "LFVW0001"                      8-byte magic
//! u64 little-endian               header length in bytes
//! header                          UTF-8 JSON: {"entries": [{name, shape, dtype, offset}], "metadata": {..}}
//! payload                         raw little-endian values; offsets are relative to its start
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LFVW0001";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl EntryData {
    fn dtype(&self) -> DType {
        match self {
            EntryData::F32(_) => DType::F32,
            EntryData::F64(_) => DType::F64,
        }
    }

    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContainerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: Map<String, Value>,
    pub entries: Vec<ContainerEntry>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    entries: Vec<HeaderEntry>,
    #[serde(default)]
    metadata: Map<String, Value>,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: &ParamStore) -> Self {
        let mut c = Self::new();
        for (name, t) in params.iter() {
            c.push_tensor(name, t);
        }
        c
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) {
        self.entries.push(ContainerEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: EntryData::F32(t.data().to_vec()),
        });
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        self.entries.push(ContainerEntry {
            name: name.to_string(),
            shape,
            data: EntryData::F64(values),
        });
    }

    pub fn entry(&self, name: &str) -> Option<&ContainerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.entry(name).map(|e| (&e.shape, &e.data)) {
            Some((shape, EntryData::F32(v))) => Tensor::new(shape.clone(), v.clone()),
            Some(_) => Err(Error::Contract(format!("entry {name:?} is not f32"))),
            None => Err(Error::Contract(format!("no entry named {name:?}"))),
        }
    }

    pub fn f64_values(&self, name: &str) -> Result<&[f64]> {
        match self.entry(name).map(|e| &e.data) {
            Some(EntryData::F64(v)) => Ok(v),
            Some(_) => Err(Error::Contract(format!("entry {name:?} is not f64"))),
            None => Err(Error::Contract(format!("no entry named {name:?}"))),
        }
    }

    /// Overwrites every parameter of `params` from the same-named f32 entries.
    pub fn load_params(&self, params: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            params.set(&name, self.tensor(&name)?)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut header = Header {
            entries: Vec::with_capacity(self.entries.len()),
            metadata: self.metadata.clone(),
        };
        for e in &self.entries {
            let n: usize = e.shape.iter().product();
            if n != e.data.len() {
                return Err(Error::Contract(format!(
                    "entry {:?}: shape {:?} does not match {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            header.entries.push(HeaderEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                dtype: e.data.dtype(),
                offset,
            });
            offset += (n * e.data.dtype().size()) as u64;
        }
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.entries {
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_err(path, "missing LFVW0001 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err(path, "header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| format_err(path, format!("bad header: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut entries = Vec::with_capacity(header.entries.len());
        for h in header.entries {
            let n: usize = h.shape.iter().product();
            let start = h.offset as usize;
            let end = start + n * h.dtype.size();
            if end > payload.len() {
                return Err(format_err(path, format!("entry {:?} runs past end of file", h.name)));
            }
            let raw = &payload[start..end];
            let data = match h.dtype {
                DType::F32 => EntryData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                DType::F64 => EntryData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
            };
            entries.push(ContainerEntry {
                name: h.name,
                shape: h.shape,
                data,
            });
        }
        Ok(Self {
            metadata: header.metadata,
            entries,
        })
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let bytes = c.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Container::from_bytes(&bytes, path)
}
