//! Checkpoint container: an 8-byte little-endian header length, a JSON header
//! describing each tensor, then a packed little-endian data region.
//!
//! Written files are canonical: tensors sorted by name, data packed without
//! gaps in that order, header padded with spaces to a multiple of 8 bytes.
//! Parsing accepts any valid layout and validates it strictly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Metadata key holding the structural hash of a checkpoint.
pub const ARCH_FINGERPRINT_KEY: &str = "arch_fingerprint";

const METADATA_ENTRY: &str = "__metadata__";
const HEADER_ALIGN: usize = 8;

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F64 => "F64",
            DType::I64 => "I64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(DType::F32),
            "F64" => Ok(DType::F64),
            "I64" => Ok(DType::I64),
            other => Err(Error::MalformedHeader(format!("unknown dtype `{other}`"))),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layout entry for one tensor in a serialized file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Half-open byte range relative to the start of the data region.
    pub data_offsets: (usize, usize),
}

/// A named tensor's dtype, shape and raw little-endian buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    /// Wraps a raw buffer, checking its length against dtype and shape.
    pub fn from_raw(dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected = element_count(&shape)
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{dtype} tensor of shape {shape:?} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_raw(DType::F32, shape, data)
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_raw(DType::F64, shape, data)
    }

    pub fn from_i64(shape: Vec<usize>, values: &[i64]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_raw(DType::I64, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    /// Decodes every element, widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self.dtype {
            DType::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::I64 => self
                .data
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        }
    }

    /// Integer view; `None` unless the tensor is I64.
    pub fn to_i64_vec(&self) -> Option<Vec<i64>> {
        (self.dtype == DType::I64).then(|| {
            self.data
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
    }
}

/// Named tensors in canonical (lexicographic) order plus string metadata.
///
/// The `arch_fingerprint` metadata entry is maintained automatically and
/// always matches the current tensor structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        let mut cp = Self {
            tensors: BTreeMap::new(),
            metadata: BTreeMap::new(),
        };
        cp.refresh_fingerprint();
        cp
    }

    /// Adds a tensor. Names must be non-empty and unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name == METADATA_ENTRY {
            return Err(Error::InvalidTensor {
                name,
                reason: "reserved or empty name".into(),
            });
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.tensors.insert(name, tensor);
        self.refresh_fingerprint();
        Ok(())
    }

    /// Replaces the buffer of an existing tensor with one of identical structure.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
        if slot.dtype != tensor.dtype || slot.shape != tensor.shape {
            return Err(Error::ShapeMismatch(format!(
                "replacement for `{name}` changes structure ({} {:?} -> {} {:?})",
                slot.dtype, slot.shape, tensor.dtype, tensor.shape
            )));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    /// Tensors in canonical name order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Sets a metadata entry. The fingerprint key is managed internally and
    /// cannot be overwritten.
    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        if key != ARCH_FINGERPRINT_KEY {
            self.metadata.insert(key, value.into());
        }
    }

    /// Drops all metadata except the fingerprint.
    pub fn clear_metadata(&mut self) {
        self.metadata.clear();
        self.refresh_fingerprint();
    }

    pub fn arch_fingerprint(&self) -> &str {
        &self.metadata[ARCH_FINGERPRINT_KEY]
    }

    /// Hash of the canonical serialized bytes; identifies exact contents.
    pub fn content_digest(&self) -> String {
        short_hex(&Sha256::digest(write_checkpoint(self)))
    }

    /// Decoded values of the named tensor, widened to `f64`.
    pub fn tensor_values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor(name)?.to_f64_vec())
    }

    /// Canonical layout: entries sorted by name, packed contiguously.
    pub fn layout(&self) -> Vec<TensorMeta> {
        let mut offset = 0;
        self.tensors
            .iter()
            .map(|(name, t)| {
                let begin = offset;
                offset += t.data.len();
                TensorMeta {
                    name: name.clone(),
                    dtype: t.dtype,
                    shape: t.shape.clone(),
                    data_offsets: (begin, offset),
                }
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_checkpoint(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, write_checkpoint(self))?;
        Ok(())
    }

    fn refresh_fingerprint(&mut self) {
        let fp = compute_arch_fingerprint(self.tensors.iter().map(|(n, t)| (n.as_str(), t)));
        self.metadata.insert(ARCH_FINGERPRINT_KEY.to_string(), fp);
    }
}

fn short_hex(digest: &[u8]) -> String {
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

fn compute_arch_fingerprint<'a>(tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> String {
    let mut hasher = Sha256::new();
    for (name, t) in tensors {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(t.dtype.as_str().as_bytes());
        for d in &t.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        hasher.update([0xffu8]);
    }
    short_hex(&hasher.finalize())
}

/// Top-level header entries in file order, so duplicate keys can be detected
/// (a plain JSON map would silently keep the last one).
struct HeaderEntries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for HeaderEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = HeaderEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object of tensor entries")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<HeaderEntries, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push(entry);
                }
                Ok(HeaderEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Parses and validates a serialized checkpoint.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::MalformedHeader("file shorter than 8-byte length prefix".into()))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(8))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::MalformedHeader(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })?;
    let header_text = std::str::from_utf8(&bytes[8..header_end])
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let HeaderEntries(entries) = serde_json::from_str(header_text)
        .map_err(|e| Error::MalformedHeader(format!("header is not a JSON object: {e}")))?;
    let data = &bytes[header_end..];

    let mut metadata: Option<BTreeMap<String, String>> = None;
    let mut metas: Vec<TensorMeta> = Vec::with_capacity(entries.len());
    let mut seen = std::collections::BTreeSet::new();
    for (name, value) in entries {
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        if name == METADATA_ENTRY {
            let map: BTreeMap<String, String> = serde_json::from_value(value).map_err(|e| {
                Error::MalformedHeader(format!("__metadata__ must map strings to strings: {e}"))
            })?;
            metadata = Some(map);
            continue;
        }
        if name.is_empty() {
            return Err(Error::MalformedHeader("empty tensor name".into()));
        }
        let info: RawTensorInfo = serde_json::from_value(value)
            .map_err(|e| Error::MalformedHeader(format!("tensor `{name}`: {e}")))?;
        let dtype = DType::parse(&info.dtype)
            .map_err(|e| Error::MalformedHeader(format!("tensor `{name}`: {e}")))?;
        let [begin, end] = info.data_offsets;
        if end < begin {
            return Err(Error::OffsetError(format!(
                "tensor `{name}` has reversed range [{begin}, {end})"
            )));
        }
        let expected = element_count(&info.shape)
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::MalformedHeader(format!("tensor `{name}` shape overflows")))?;
        if end - begin != expected {
            return Err(Error::OffsetError(format!(
                "tensor `{name}` range [{begin}, {end}) holds {} bytes, {dtype} shape {:?} needs {expected}",
                end - begin,
                info.shape
            )));
        }
        metas.push(TensorMeta {
            name,
            dtype,
            shape: info.shape,
            data_offsets: (begin, end),
        });
    }

    validate_layout(&mut metas, data.len())?;

    let mut tensors = BTreeMap::new();
    for meta in metas {
        let (begin, end) = meta.data_offsets;
        let tensor = Tensor {
            dtype: meta.dtype,
            shape: meta.shape,
            data: data[begin..end].to_vec(),
        };
        tensors.insert(meta.name, tensor);
    }

    let mut cp = Checkpoint {
        tensors,
        metadata: metadata.unwrap_or_default(),
    };
    let stored = cp.metadata.get(ARCH_FINGERPRINT_KEY).cloned();
    cp.refresh_fingerprint();
    if let Some(stored) = stored {
        if stored != cp.metadata[ARCH_FINGERPRINT_KEY] {
            return Err(Error::MalformedHeader(format!(
                "stored arch_fingerprint {stored} does not match tensors ({})",
                cp.metadata[ARCH_FINGERPRINT_KEY]
            )));
        }
    }
    Ok(cp)
}

/// Ranges must tile `[0, data_len)` exactly: no overlap, gap or overrun.
fn validate_layout(metas: &mut [TensorMeta], data_len: usize) -> Result<()> {
    metas.sort_by_key(|m| m.data_offsets);
    let mut cursor = 0usize;
    for m in metas.iter() {
        let (begin, end) = m.data_offsets;
        if begin < cursor {
            return Err(Error::OffsetError(format!(
                "tensor `{}` range [{begin}, {end}) overlaps previous data ending at {cursor}",
                m.name
            )));
        }
        if begin > cursor {
            return Err(Error::OffsetError(format!(
                "gap of {} bytes before tensor `{}`",
                begin - cursor,
                m.name
            )));
        }
        if end > data_len {
            return Err(Error::OffsetError(format!(
                "tensor `{}` range [{begin}, {end}) exceeds data region of {data_len} bytes",
                m.name
            )));
        }
        cursor = end;
    }
    if cursor != data_len {
        return Err(Error::OffsetError(format!(
            "{} trailing bytes after last tensor",
            data_len - cursor
        )));
    }
    Ok(())
}

/// Serializes to the canonical byte form.
pub fn write_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let quote = |s: &str| serde_json::to_string(s).expect("string serialization is infallible");

    let mut header = String::from("{");
    header.push_str(&quote(METADATA_ENTRY));
    header.push_str(":{");
    for (i, (k, v)) in cp.metadata.iter().enumerate() {
        if i > 0 {
            header.push(',');
        }
        header.push_str(&quote(k));
        header.push(':');
        header.push_str(&quote(v));
    }
    header.push('}');

    let layout = cp.layout();
    for meta in &layout {
        let shape = meta
            .shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        header.push(',');
        header.push_str(&quote(&meta.name));
        header.push_str(&format!(
            r#":{{"dtype":"{}","shape":[{}],"data_offsets":[{},{}]}}"#,
            meta.dtype, shape, meta.data_offsets.0, meta.data_offsets.1
        ));
    }
    header.push('}');
    while header.len() % HEADER_ALIGN != 0 {
        header.push(' ');
    }

    let data_len = layout.last().map_or(0, |m| m.data_offsets.1);
    let mut out = Vec::with_capacity(8 + header.len() + data_len);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in cp.tensors.values() {
        out.extend_from_slice(&t.data);
    }
    out
}

/// Values of `name` decoded from `cp`, widened to 64-bit.
pub fn tensor_values(cp: &Checkpoint, name: &str) -> Result<Vec<f64>> {
    cp.tensor_values(name)
}
