//! Binary checkpoint format "SGCK" v1, little-endian throughout:
//!
//! ```text
//! magic "SGCK" | version u16 | config digest u64
//! tensor count u32 | per tensor: name (u16 len + bytes), rank u8,
//!                    dims u32 x rank, values f32 x prod(dims)
//! stats: mu_x, mu_y, sigma_x, sigma_y, eps (f32 x 5)
//! history count u32 | per row: epoch u32, loss f32, val_acc f32
//! integrity digest u64 over all preceding bytes
//! ```
//!
//! The trailing digest makes single-byte corruption detectable; loads are
//! bit-exact inverses of saves.

use std::path::Path;

use super::digest::Fnv1a;
use super::{io_err, write_atomic, DataError};
use crate::graph::NormalizationStats;
use crate::tensor::NamedTensors;

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: u32,
    pub loss: f32,
    pub val_acc: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Digest of the model configuration that produced the parameters.
    pub config_digest: u64,
    pub tensors: NamedTensors,
    pub stats: NormalizationStats,
    pub history: Vec<HistoryRow>,
}

impl Checkpoint {
    /// Fails with `ConfigDigestMismatch` when the checkpoint was produced
    /// under a different model configuration.
    pub fn expect_config(&self, expected: u64) -> Result<(), DataError> {
        if self.config_digest != expected {
            return Err(DataError::ConfigDigestMismatch {
                expected,
                found: self.config_digest,
            });
        }
        Ok(())
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ck.config_digest.to_le_bytes());
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, (dims, values)) in &ck.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in [ck.stats.mu_x, ck.stats.mu_y, ck.stats.sigma_x, ck.stats.sigma_y, ck.stats.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ck.history.len() as u32).to_le_bytes());
    for row in &ck.history {
        out.extend_from_slice(&row.epoch.to_le_bytes());
        out.extend_from_slice(&row.loss.to_le_bytes());
        out.extend_from_slice(&row.val_acc.to_le_bytes());
    }
    let mut h = Fnv1a::new();
    h.write(&out);
    out.extend_from_slice(&h.finish().to_le_bytes());
    out
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), DataError> {
    write_atomic(path, &encode(ck))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated { path: self.path.to_path_buf() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < MAGIC.len() + 2 + 8 {
        return Err(DataError::Truncated { path: path.to_path_buf() });
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic { path: path.to_path_buf() });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    // Integrity check before any structural parsing.
    let body_len = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let mut h = Fnv1a::new();
    h.write(&bytes[..body_len]);
    let computed = h.finish();
    if stored != computed {
        return Err(DataError::DigestMismatch { path: path.to_path_buf(), stored, computed });
    }

    let mut r = Reader { bytes: &bytes[..body_len], pos: 6, path };
    let config_digest = r.u64()?;
    let n_tensors = r.u32()? as usize;
    let mut tensors = NamedTensors::new();
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.f32()?);
        }
        tensors.insert(name, (dims, values));
    }
    let stats = NormalizationStats {
        mu_x: r.f32()?,
        mu_y: r.f32()?,
        sigma_x: r.f32()?,
        sigma_y: r.f32()?,
        eps: r.f32()?,
    };
    let n_rows = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        history.push(HistoryRow { epoch: r.u32()?, loss: r.f32()?, val_acc: r.f32()? });
    }
    Ok(Checkpoint { config_digest, tensors, stats, history })
}
