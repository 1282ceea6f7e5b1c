//! Binary checkpoint format.
//!
//! ```text
//! "SLFM"                       magic
//! u32                          format version
//! u64                          build seed
//! u32 + bytes                  config record (key = value text)
//! u32                          tensor count
//! per tensor, in build order:
//!   u32 + bytes                name
//!   u32 + u32 * ndim           shape
//!   f64 * numel                data
//! ```
//!
//! All integers and floats are little-endian.

use crate::config::EncoderConfig;
use crate::error::{CheckpointError, Result};
use crate::kv::KvRecord;

use super::{build_stack, EncoderStack};

pub const MAGIC: &[u8; 4] = b"SLFM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub seed: u64,
    pub config: EncoderConfig,
}

pub fn serialize_checkpoint(stack: &EncoderStack) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&stack.seed().to_le_bytes());
    put_bytes(&mut out, stack.config().to_text().as_bytes());
    let entries = stack.params().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        put_bytes(&mut out, e.name.as_bytes());
        let shape = e.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> std::result::Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

fn header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION }.into());
    }
    let seed = r.u64("seed")?;
    let text = r.string("config record")?;
    let config = EncoderConfig::parse(&text).map_err(|e| CheckpointError::Malformed(format!("stored config: {e}")))?;
    Ok(CheckpointHeader { version, seed, config })
}

/// Reads only the header: version, seed and stored config.
pub fn read_checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    header(&mut Reader { buf: bytes, pos: 0 })
}

/// Rebuilds a stack from `bytes`. `config` must equal the stored config.
pub fn load_checkpoint(bytes: &[u8], config: &EncoderConfig) -> Result<EncoderStack> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let head = header(&mut r)?;
    let (stored, given) = (head.config.to_kv(), config.to_kv());
    for ((k, sv), (_, gv)) in stored.pairs().iter().zip(given.pairs()) {
        if sv != gv {
            return Err(
                CheckpointError::ConfigMismatch { key: k.clone(), stored: sv.clone(), given: gv.clone() }.into()
            );
        }
    }
    let mut stack = build_stack(config, head.seed)?;
    let count = r.u32("tensor count")? as usize;
    if count != stack.params().len() {
        return Err(CheckpointError::Malformed(format!(
            "{count} tensors stored, config builds {}",
            stack.params().len()
        ))
        .into());
    }
    for entry in stack.params_mut().iter_mut() {
        let name = r.string("tensor name")?;
        if name != entry.name {
            return Err(CheckpointError::Malformed(format!("expected tensor `{}`, found `{name}`", entry.name)).into());
        }
        let ndim = r.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32(&name)? as usize);
        }
        if shape != entry.tensor.shape() {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` has shape {shape:?}")).into());
        }
        let raw = r.take(8 * entry.tensor.numel(), &name)?;
        for (dst, chunk) in entry.tensor.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    Ok(stack)
}

/// Config text stored in a checkpoint, for callers that want raw pairs.
pub fn stored_config_record(bytes: &[u8]) -> Result<KvRecord> {
    Ok(read_checkpoint_header(bytes)?.config.to_kv())
}
