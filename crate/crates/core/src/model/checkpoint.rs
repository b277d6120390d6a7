//! Binary checkpoints.
//!
//! Layout (little endian):
//! `DLGNCKPT`, u32 version, u32 length + TOML model spec, u32 entry count,
//! then per entry: u32 length + UTF-8 name, 4 × u64 dims, f64 data.
//! Parameters come first in registry order, then running statistics.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::network::Model;
use crate::model::spec::ModelSpec;
use crate::tensor::{Rng, Shape4};

pub const MAGIC: &[u8; 8] = b"DLGNCKPT";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = model.spec().to_toml();
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    let tensors = model.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Corrupt("string is not valid UTF-8".into()))
    }
}

/// Reads only the model spec stored in a checkpoint.
pub fn decode_spec(bytes: &[u8]) -> Result<ModelSpec> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r)
}

fn read_header(r: &mut Reader) -> Result<ModelSpec> {
    if r.bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(r.bytes) {
            Error::Truncated
        } else {
            Error::BadMagic
        });
    }
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let text = r.string()?;
    ModelSpec::from_toml(&text).map_err(|e| Error::Corrupt(format!("stored model spec: {e}")))
}

/// Rebuilds the model from bytes. When `expected` is given the stored
/// spec must equal it.
pub fn decode(bytes: &[u8], expected: Option<&ModelSpec>) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let spec = read_header(&mut r)?;
    if let Some(exp) = expected {
        if exp != &spec {
            return Err(Error::SpecMismatch(format!(
                "checkpoint holds model `{}`, expected `{}` with a different configuration",
                spec.name, exp.name
            )));
        }
    }
    let mut model = Model::build(&spec, &mut Rng::new(0))?;
    let count = r.u32()? as usize;
    let mut slots = model.named_tensors_mut();
    if count != slots.len() {
        return Err(Error::SpecMismatch(format!(
            "checkpoint has {count} tensors, model `{}` has {}",
            spec.name,
            slots.len()
        )));
    }
    for (name, slot) in slots.iter_mut() {
        let stored = r.string()?;
        if &stored != name {
            return Err(Error::SpecMismatch(format!(
                "expected tensor `{name}`, found `{stored}`"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::try_from(r.u64()?)
                .map_err(|_| Error::Corrupt("dimension overflow".into()))?;
        }
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
        if shape != slot.shape() {
            return Err(Error::SpecMismatch(format!(
                "tensor `{name}` has shape {shape}, model expects {}",
                slot.shape()
            )));
        }
        let raw = r.take(shape.len() * 8)?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

/// Writes atomically: a temporary file in the target directory is renamed
/// into place.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path, expected: Option<&ModelSpec>) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes, expected)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
