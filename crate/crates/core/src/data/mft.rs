//! MFT1 tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MFT1" | version u32 | entry count u32 |
//!   per entry: name len u16 | name bytes | dtype u8 | rank u8 | dims u64 × rank | payload
//! ```
//!
//! dtype 0 is f32, 1 is f64; payloads are row-major.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"MFT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum MftValue {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl MftValue {
    pub fn dims(&self) -> &[usize] {
        match self {
            MftValue::F32(t) => t.dims(),
            MftValue::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            MftValue::F32(_) => DType::F32,
            MftValue::F64(_) => DType::F64,
        }
    }

    /// Converts to `T`, casting between precisions if needed.
    pub fn to_real<T: Real>(&self) -> Tensor<T> {
        match self {
            MftValue::F32(t) => t.cast(),
            MftValue::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for MftValue {
    fn from(t: Tensor<f32>) -> Self {
        MftValue::F32(t)
    }
}

impl From<Tensor<f64>> for MftValue {
    fn from(t: Tensor<f64>) -> Self {
        MftValue::F64(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MftEntry {
    pub name: String,
    pub value: MftValue,
}

impl MftEntry {
    pub fn new(name: impl Into<String>, value: impl Into<MftValue>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// Header of one entry, with the payload's absolute byte offset.
#[derive(Clone, Debug, PartialEq)]
pub struct MftIndexEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub payload_offset: u64,
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for name in names {
        if name.is_empty() || !name.is_ascii() || name.len() > u16::MAX as usize {
            return Err(Error::Data(format!(
                "invalid tensor name {name:?}: must be non-empty ASCII"
            )));
        }
        if !seen.insert(name) {
            return Err(Error::Data(format!("duplicate tensor name `{name}`")));
        }
    }
    Ok(())
}

pub fn encode_mft(entries: &[MftEntry]) -> Result<Vec<u8>> {
    check_names(entries.iter().map(|e| e.name.as_str()))?;
    let count = u32::try_from(entries.len()).map_err(|_| Error::Data("too many entries".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        let dims = e.value.dims();
        let rank = u8::try_from(dims.len()).map_err(|_| Error::Data(format!("`{}`: rank too large", e.name)))?;
        out.push(e.value.dtype() as u8);
        out.push(rank);
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.value {
            MftValue::F32(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            MftValue::F64(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

pub fn write_mft(path: &Path, entries: &[MftEntry]) -> Result<()> {
    let bytes = encode_mft(entries)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Convenience writer for a homogeneous list of named tensors.
pub fn write_tensors<T: Real>(path: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<()>
where
    MftValue: From<Tensor<T>>,
{
    let entries: Vec<MftEntry> = tensors
        .iter()
        .map(|(n, t)| MftEntry::new(*n, MftValue::from((*t).clone())))
        .collect();
    write_mft(path, &entries)
}

/// Reads from a byte source while tracking the absolute offset for diagnostics.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, entry: Option<&str>, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Format {
            offset: self.offset,
            entry: entry.map(str::to_string),
            detail: format!("truncated while reading {what} ({n} bytes)"),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self, entry: Option<&str>, what: &str) -> Result<u8> {
        Ok(self.bytes(1, entry, what)?[0])
    }

    fn u16(&mut self, entry: Option<&str>, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, entry, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, entry: Option<&str>, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, entry, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, entry: Option<&str>, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, entry, what)?.try_into().unwrap()))
    }
}

fn format_err(offset: u64, entry: Option<&str>, detail: impl Into<String>) -> Error {
    Error::Format {
        offset,
        entry: entry.map(str::to_string),
        detail: detail.into(),
    }
}

fn read_preamble<R: Read>(c: &mut Cursor<R>) -> Result<u32> {
    let magic = c.bytes(4, None, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, None, format!("bad magic {magic:?}")));
    }
    let version = c.u32(None, "version")?;
    if version != VERSION {
        return Err(format_err(4, None, format!("unsupported version {version}")));
    }
    c.u32(None, "entry count")
}

fn read_header<R: Read>(c: &mut Cursor<R>, index: u32) -> Result<MftIndexEntry> {
    let label = format!("#{index}");
    let start = c.offset;
    let len = c.u16(Some(&label), "name length")? as usize;
    let raw = c.bytes(len, Some(&label), "name")?;
    let name = String::from_utf8(raw)
        .ok()
        .filter(|n| n.is_ascii() && !n.is_empty())
        .ok_or_else(|| format_err(start, Some(&label), "entry name is not non-empty ASCII"))?;
    let code_at = c.offset;
    let code = c.u8(Some(&name), "dtype")?;
    let dtype =
        DType::from_code(code).ok_or_else(|| format_err(code_at, Some(&name), format!("unknown dtype code {code}")))?;
    let rank = c.u8(Some(&name), "rank")?;
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let at = c.offset;
        let d = c.u64(Some(&name), "dims")?;
        if d == 0 || d > u32::MAX as u64 {
            return Err(format_err(at, Some(&name), format!("invalid dim {d}")));
        }
        dims.push(d as usize);
    }
    if rank == 0 {
        return Err(format_err(code_at + 1, Some(&name), "rank must be at least 1"));
    }
    Ok(MftIndexEntry {
        name,
        dtype,
        dims,
        payload_offset: c.offset,
    })
}

fn payload_len(h: &MftIndexEntry) -> Result<usize> {
    h.dims
        .iter()
        .try_fold(h.dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(h.payload_offset, Some(&h.name), "payload size overflows"))
}

fn read_payload<R: Read>(c: &mut Cursor<R>, h: &MftIndexEntry) -> Result<MftValue> {
    let n = payload_len(h)?;
    let raw = c.bytes(n, Some(&h.name), "payload")?;
    let bad = |_| format_err(h.payload_offset, Some(&h.name), "non-finite payload value");
    Ok(match h.dtype {
        DType::F32 => {
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            MftValue::F32(Tensor::new(h.dims.clone(), data).map_err(bad)?)
        }
        DType::F64 => {
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            MftValue::F64(Tensor::new(h.dims.clone(), data).map_err(bad)?)
        }
    })
}

pub fn decode_mft(bytes: &[u8]) -> Result<Vec<MftEntry>> {
    let mut c = Cursor {
        inner: bytes,
        offset: 0,
    };
    let count = read_preamble(&mut c)?;
    let mut out: Vec<MftEntry> = Vec::new();
    for i in 0..count {
        let h = read_header(&mut c, i)?;
        if out.iter().any(|e| e.name == h.name) {
            return Err(format_err(h.payload_offset, Some(&h.name), "duplicate entry name"));
        }
        let value = read_payload(&mut c, &h)?;
        out.push(MftEntry { name: h.name, value });
    }
    if c.offset as usize != bytes.len() {
        return Err(format_err(
            c.offset,
            None,
            format!("{} trailing bytes", bytes.len() as u64 - c.offset),
        ));
    }
    Ok(out)
}

pub fn read_mft(path: &Path) -> Result<Vec<MftEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mft(&bytes)
}

/// Reads every entry header without loading payloads.
pub fn read_mft_index(path: &Path) -> Result<Vec<MftIndexEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut c = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };
    let count = read_preamble(&mut c)?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let h = read_header(&mut c, i)?;
        let len = payload_len(&h)? as u64;
        if h.payload_offset + len > file_len {
            return Err(format_err(file_len, Some(&h.name), "truncated while reading payload"));
        }
        c.inner
            .seek(SeekFrom::Start(h.payload_offset + len))
            .map_err(|e| Error::io(path, e))?;
        c.offset = h.payload_offset + len;
        out.push(h);
    }
    if c.offset != file_len {
        return Err(format_err(
            c.offset,
            None,
            format!("{} trailing bytes", file_len - c.offset),
        ));
    }
    Ok(out)
}

/// Loads a single entry located via [`read_mft_index`].
pub fn read_mft_entry(path: &Path, header: &MftIndexEntry) -> Result<MftValue> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    reader
        .seek(SeekFrom::Start(header.payload_offset))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        inner: reader,
        offset: header.payload_offset,
    };
    read_payload(&mut c, header)
}
