//! `UCKP` checkpoints.
//!
//! Layout (little-endian): magic, u32 version, u32-length-prefixed JSON
//! config, tensor sections for the encoder and logit scale, the Adam step
//! count and moment sections, u64 training step, u32-length-prefixed rng
//! blob, and a trailing SHA-256 over every preceding byte.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LogitScale, TrainConfig, TrainError};
use crate::ag::{AdamState, NamedTensor, Tensor};
use crate::format::{put_f32s, put_u32, put_u64, write_atomic, ByteReader, FormatError};
use crate::model::{EncoderConfig, EncoderParams};

const MAGIC: [u8; 4] = *b"UCKP";
const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const RNG_BLOB_LEN: usize = 32 + 8 + 16;
const LOGIT_SCALE_NAME: &str = "logit_scale";

/// Position of a ChaCha stream: key, stream id and word offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RNG_BLOB_LEN);
        out.extend_from_slice(&self.seed);
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Result<Self, FormatError> {
        if b.len() != RNG_BLOB_LEN {
            return Err(FormatError::Invalid(format!("rng blob has {} bytes", b.len())));
        }
        Ok(Self {
            seed: b[..32].try_into().unwrap(),
            stream: u64::from_le_bytes(b[32..40].try_into().unwrap()),
            word_pos: u128::from_le_bytes(b[40..56].try_into().unwrap()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: EncoderConfig,
    pub train: TrainConfig,
}

/// Complete training state after `step` optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: EncoderParams,
    pub logit_scale: LogitScale,
    pub adam: AdamState,
    pub step: u64,
    pub rng: RngState,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    put_f32s(out, t.data());
}

fn read_tensor(r: &mut ByteReader<'_>) -> Result<NamedTensor, FormatError> {
    let len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(len)?)
        .map_err(|_| FormatError::Invalid("tensor name is not UTF-8".into()))?
        .to_owned();
    let rank = r.u32()? as usize;
    if rank == 0 || rank > 4 {
        return Err(FormatError::Invalid(format!("tensor {name} has rank {rank}")));
    }
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or_else(|| FormatError::Invalid(format!("tensor {name} is too large")))?;
    let data = r.f32s(count)?;
    let tensor = Tensor::new(shape, data).map_err(|e| FormatError::Invalid(format!("tensor {name}: {e}")))?;
    Ok(NamedTensor::new(name, tensor))
}

fn put_sections(out: &mut Vec<u8>, tensors: &[(String, &Tensor<f32>)]) {
    put_u32(out, tensors.len() as u32);
    for (name, t) in tensors {
        put_tensor(out, name, t);
    }
}

fn read_sections(r: &mut ByteReader<'_>) -> Result<Vec<NamedTensor>, FormatError> {
    let n = r.u32()? as usize;
    (0..n).map(|_| read_tensor(r)).collect()
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, TrainError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        let config = serde_json::to_vec(&self.config).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        put_u32(&mut out, config.len() as u32);
        out.extend_from_slice(&config);

        let scale = Tensor::scalar(self.logit_scale.s);
        let mut named: Vec<(String, &Tensor<f32>)> =
            self.params.tensors.iter().map(|t| (t.name.clone(), &t.tensor)).collect();
        named.push((LOGIT_SCALE_NAME.into(), &scale));
        put_sections(&mut out, &named);

        if self.adam.m.len() != named.len() || self.adam.v.len() != named.len() {
            return Err(TrainError::InvalidConfig("optimizer state does not match parameters".into()));
        }
        put_u64(&mut out, self.adam.t);
        let moments: Vec<(String, &Tensor<f32>)> = named
            .iter()
            .zip(&self.adam.m)
            .map(|((n, _), m)| (format!("adam.m.{n}"), m))
            .chain(named.iter().zip(&self.adam.v).map(|((n, _), v)| (format!("adam.v.{n}"), v)))
            .collect();
        put_sections(&mut out, &moments);

        put_u64(&mut out, self.step);
        let blob = self.rng.to_bytes();
        put_u32(&mut out, blob.len() as u32);
        out.extend_from_slice(&blob);

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        ByteReader::new(bytes).magic(MAGIC)?;
        if bytes.len() < 8 + DIGEST_LEN {
            return Err(FormatError::Truncated { needed: 8 + DIGEST_LEN, offset: 0, len: bytes.len() });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(FormatError::DigestMismatch);
        }

        let mut r = ByteReader::new(body);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let len = r.u32()? as usize;
        let config: CheckpointConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| FormatError::Invalid(format!("config: {e}")))?;

        let mut tensors = read_sections(&mut r)?;
        let scale = match tensors.pop() {
            Some(t) if t.name == LOGIT_SCALE_NAME && t.tensor.len() == 1 => LogitScale { s: t.tensor.data()[0] },
            _ => return Err(FormatError::Invalid("missing logit scale section".into())),
        };
        let params = EncoderParams { tensors };
        params.check(&config.model).map_err(|e| FormatError::Invalid(e.to_string()))?;

        let t = r.u64()?;
        let mut moments = read_sections(&mut r)?;
        let count = params.tensors.len() + 1;
        if moments.len() != 2 * count {
            return Err(FormatError::Invalid(format!("{} optimizer sections for {count} tensors", moments.len())));
        }
        let v = moments.split_off(count).into_iter().map(|t| t.tensor).collect();
        let m = moments.into_iter().map(|t| t.tensor).collect();

        let step = r.u64()?;
        let blob_len = r.u32()? as usize;
        let rng = RngState::from_bytes(r.take(blob_len)?)?;
        r.finish()?;
        Ok(Self { config, params, logit_scale: scale, adam: AdamState { m, v, t }, step, rng })
    }

    /// Hex SHA-256 of the encoded checkpoint body.
    pub fn digest(&self) -> Result<String, TrainError> {
        let bytes = self.encode()?;
        Ok(hex_digest(&bytes[bytes.len() - DIGEST_LEN..]))
    }
}

fn hex_digest(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the checkpoint atomically and returns its digest.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<String, TrainError> {
    let path = path.as_ref();
    let bytes = ckpt.encode()?;
    write_atomic(path, &bytes).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
    Ok(hex_digest(&bytes[bytes.len() - DIGEST_LEN..]))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::decode(&bytes).map_err(|source| TrainError::Checkpoint { path: path.to_path_buf(), source })
}
