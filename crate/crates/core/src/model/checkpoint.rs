//! Binary container for model checkpoints and preprocessed tensors.
//!
//! Layout (little endian): magic `UCNT`, u16 version, u32 length + UTF-8
//! `key=value` lines, u32 tensor count, then per tensor a u32 name length,
//! the name, u32 rank, u32 dims and f32 values. The last 8 bytes are the
//! 64-bit FNV-1a digest of everything before them.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use thiserror::Error;

use super::{Model, ModelError, UcnetConfig};
use crate::nn::Real;

pub const CONTAINER_MAGIC: &[u8; 4] = b"UCNT";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not a ucnet container")]
    BadMagic,
    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("digest mismatch: stored {stored:016x}, computed {computed:016x}")]
    DigestMismatch { stored: u64, computed: u64 },
    #[error("container truncated")]
    Truncated,
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn digest(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Malformed("field exceeds u32".into()))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_container(c: &Container) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    let mut text = String::new();
    for (k, v) in &c.meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(CheckpointError::Malformed(format!("metadata entry {k:?}")));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, c.tensors.len())?;
    for t in &c.tensors {
        if t.dims.iter().product::<usize>() != t.values.len() {
            return Err(CheckpointError::Malformed(format!("tensor {} dims", t.name)));
        }
        put_u32(&mut out, t.name.len())?;
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.dims.len())?;
        for &d in &t.dims {
            put_u32(&mut out, d)?;
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let d = digest(&out);
    out.extend_from_slice(&d.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Container, CheckpointError> {
    if bytes.len() < 4 {
        return Err(if CONTAINER_MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(CheckpointError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CONTAINER_VERSION {
        return Err(CheckpointError::VersionMismatch {
            expected: CONTAINER_VERSION,
            found: version,
        });
    }
    if bytes.len() < 6 + 8 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = digest(body);
    if stored != computed {
        return Err(CheckpointError::DigestMismatch { stored, computed });
    }

    let mut cur = Cursor { buf: body, pos: 6 };
    let text_len = cur.u32()?;
    let text = cur.string(text_len)?;
    let mut meta = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("metadata line {line:?}")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    let count = cur.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = cur.u32()?;
        let name = cur.string(name_len)?;
        let rank = cur.u32()?;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} too large")))?;
        let raw = cur.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    if cur.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(Container { meta, tensors })
}

fn model_container<T: Real>(model: &Model<T>) -> Container {
    let mut meta = vec![("kind".to_string(), "model".to_string())];
    meta.extend(model.config().to_pairs());
    let to_f32 = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap()).collect::<Vec<f32>>();
    let mut tensors = Vec::new();
    for ((name, p), dims) in model.params().into_iter().zip(model.param_shapes()) {
        tensors.push(NamedTensor {
            name,
            dims,
            values: to_f32(p),
        });
    }
    for (name, b) in model.buffers() {
        tensors.push(NamedTensor {
            name,
            dims: vec![b.len()],
            values: to_f32(b),
        });
    }
    Container { meta, tensors }
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<(), CheckpointError> {
    let bytes = write_container(&model_container(model))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn model_from_container<T: Real>(c: &Container) -> Result<Model<T>, CheckpointError> {
    if c.meta("kind") != Some("model") {
        return Err(CheckpointError::Malformed("container does not hold a model".into()));
    }
    let pairs: Vec<(String, String)> =
        c.meta.iter().filter(|(k, _)| k != "kind").cloned().collect();
    let config = UcnetConfig::from_pairs(&pairs)?;
    let mut model = Model::<T>::zeroed(&config)?;
    let names: Vec<String> = model
        .params()
        .into_iter()
        .chain(model.buffers())
        .map(|(n, _)| n)
        .collect();
    let shapes: Vec<Vec<usize>> = model
        .param_shapes()
        .into_iter()
        .chain(model.buffers().iter().map(|(_, b)| vec![b.len()]))
        .collect();
    if c.tensors.len() != names.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, found {}",
            names.len(),
            c.tensors.len()
        )));
    }
    let mut values: Vec<Vec<T>> = Vec::with_capacity(names.len());
    for ((name, shape), t) in names.iter().zip(&shapes).zip(&c.tensors) {
        if &t.name != name || &t.dims != shape {
            return Err(CheckpointError::Malformed(format!(
                "tensor {} {:?} where {} {:?} was expected",
                t.name, t.dims, name, shape
            )));
        }
        values.push(t.values.iter().map(|&v| T::of(v as f64)).collect());
    }
    let n_params = model.params().len();
    let mut it = values.into_iter();
    for slot in model.params_mut() {
        *slot = it.next().expect("counted");
    }
    debug_assert_eq!(it.len(), names.len() - n_params);
    for slot in model.buffers_mut() {
        *slot = it.next().expect("counted");
    }
    Ok(model)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    model_from_container(&read_container(&bytes)?)
}

/// Loads a checkpoint and rejects it unless its architecture equals
/// `expected`, naming the first differing field.
pub fn load_checkpoint_matching<T: Real>(
    path: &Path,
    expected: &UcnetConfig,
) -> Result<Model<T>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let c = read_container(&bytes)?;
    let pairs: Vec<(String, String)> =
        c.meta.iter().filter(|(k, _)| k != "kind").cloned().collect();
    let found = UcnetConfig::from_pairs(&pairs)?;
    if let Some(e) = found.diff(expected) {
        return Err(e.into());
    }
    model_from_container(&c)
}
