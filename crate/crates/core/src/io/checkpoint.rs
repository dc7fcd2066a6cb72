//! Versioned, checksummed binary checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic      8 bytes  "RDTXCKPT"
//! version    u32
//! length     u64      payload byte count
//! payload    length bytes
//! checksum   32 bytes SHA-256 of payload
//! ```
//!
//! Payload: domain code `u8`, encoder kind `u8`, shared-encoder flag `u8`,
//! then `u32` gat_out, embed_dim, hidden, gat_repeats, feature_count,
//! template_count; `f64` elapsed seconds, `u64` gradient steps, `u64` seed;
//! `u32` tensor count and per tensor a `u32`-length UTF-8 name, `u32` rank,
//! `u64` dims and `f64` data. Tensors are stored in name order. Nothing in
//! the format depends on the number of objects of any instance.

use sha2::{Digest, Sha256};

use super::CheckpointError;
use crate::mdp::DomainId;
use crate::model::{EncoderConfig, EncoderKind, TransferNet};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"RDTXCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub elapsed_seconds: f64,
    pub gradient_steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn net(&self) -> TransferNet {
        TransferNet::from_params(self.config, self.params.clone())
    }

    /// Equality of everything except wall-clock time.
    pub fn same_content(&self, other: &Checkpoint) -> bool {
        self.config == other.config
            && self.meta.gradient_steps == other.meta.gradient_steps
            && self.meta.seed == other.meta.seed
            && self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|((n1, t1), (n2, t2))| {
                n1 == n2
                    && t1.shape() == t2.shape()
                    && t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    if let Some((name, _)) = ckpt.params.iter().find(|(_, t)| !t.is_finite()) {
        return Err(CheckpointError::NonFinite(name.clone()));
    }
    let c = &ckpt.config;
    let mut p = Vec::new();
    p.push(c.domain.code());
    p.push(c.encoder.code());
    p.push(c.shared_encoder as u8);
    for v in [c.gat_out, c.embed_dim, c.hidden, c.gat_repeats, c.feature_count, c.template_count] {
        p.extend_from_slice(&(v as u32).to_le_bytes());
    }
    p.extend_from_slice(&ckpt.meta.elapsed_seconds.to_le_bytes());
    p.extend_from_slice(&ckpt.meta.gradient_steps.to_le_bytes());
    p.extend_from_slice(&ckpt.meta.seed.to_le_bytes());
    p.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, t) in ckpt.params.iter() {
        p.extend_from_slice(&(name.len() as u32).to_le_bytes());
        p.extend_from_slice(name.as_bytes());
        p.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            p.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            p.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(p.len() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p);
    out.extend_from_slice(&Sha256::digest(&p));
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed("payload ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 20 {
        return Err(CheckpointError::CorruptChecksum);
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20usize.saturating_add(len).saturating_add(32) {
        return Err(CheckpointError::CorruptChecksum);
    }
    let payload = &bytes[20..20 + len];
    if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
        return Err(CheckpointError::CorruptChecksum);
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let domain = DomainId::from_code(r.u8()?)
        .ok_or_else(|| CheckpointError::Malformed("unknown domain code".into()))?;
    let encoder = EncoderKind::from_code(r.u8()?)
        .ok_or_else(|| CheckpointError::Malformed("unknown encoder code".into()))?;
    let shared_encoder = r.u8()? != 0;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = EncoderConfig {
        domain,
        encoder,
        gat_out: dims[0],
        embed_dim: dims[1],
        hidden: dims[2],
        gat_repeats: dims[3],
        feature_count: dims[4],
        template_count: dims[5],
        shared_encoder,
    };
    let meta = TrainingMeta {
        elapsed_seconds: r.f64()?,
        gradient_steps: r.u64()?,
        seed: r.u64()?,
    };
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        if params.get(&name).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor `{name}`")));
        }
        params.insert(name, Tensor::new(shape, data));
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed("trailing bytes in payload".into()));
    }

    let expected = config.param_shapes();
    if expected.len() != params.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} tensors stored, configuration needs {}",
            params.len(),
            expected.len()
        )));
    }
    for (name, [r, c]) in expected {
        match params.get(&name) {
            Some(t) if t.shape() == [r, c] => {}
            Some(t) => {
                return Err(CheckpointError::Malformed(format!(
                    "tensor `{name}` has shape {:?}, expected [{r}, {c}]",
                    t.shape()
                )))
            }
            None => return Err(CheckpointError::Malformed(format!("tensor `{name}` missing"))),
        }
    }
    Ok(Checkpoint { config, params, meta })
}
