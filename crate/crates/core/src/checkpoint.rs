//! Versioned binary checkpoint container: magic, version, kind, a TOML
//! config echo, parameter blobs in declared order, sha-256 checksum.
//!
//! Parameters are stored as little-endian f32 regardless of the compute
//! precision, so a checkpoint digest is stable across precisions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::student::{RayEncoder, ResidualMlp, StudentShape};
use crate::teacher::{NerfConfig, NerfMlp};

const MAGIC: &[u8; 4] = b"RDCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Teacher,
    Student,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Teacher => 1,
            CheckpointKind::Student => 2,
        }
    }
}

/// Config echo stored in student checkpoints so they are self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudentEcho {
    pub shape: StudentShape,
    pub encoder: RayEncoder,
    pub input_dim: usize,
}

fn encode_container(kind: CheckpointKind, config_toml: &str, blobs: &[&[f32]]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.tag());
    let cfg = config_toml.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for blob in blobs {
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        for v in blob.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Decoded {
    kind: u8,
    config_toml: String,
    blobs: Vec<Vec<f32>>,
    digest: [u8; 32],
}

fn decode_container(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < 45 || &bytes[0..4] != MAGIC {
        return Err(Error::Corrupt("not a checkpoint container".into()));
    }
    let body = &bytes[..bytes.len() - 32];
    let stored: [u8; 32] = bytes[bytes.len() - 32..].try_into().unwrap();
    let computed: [u8; 32] = Sha256::digest(body).into();
    if stored != computed {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }
    let mut pos = 4;
    let version = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
    pos += 4;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let kind = body[pos];
    pos += 1;
    let cfg_len = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let config_toml = String::from_utf8(body[pos..pos + cfg_len].to_vec())
        .map_err(|_| Error::Corrupt("config echo not utf-8".into()))?;
    pos += cfg_len;
    let n_blobs = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let n = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        let mut blob = Vec::with_capacity(n);
        for _ in 0..n {
            blob.push(f32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        blobs.push(blob);
    }
    Ok(Decoded {
        kind,
        config_toml,
        blobs,
        digest: stored,
    })
}

fn blobs_f32<S: Scalar>(blobs: Vec<&[S]>) -> Vec<Vec<f32>> {
    blobs
        .into_iter()
        .map(|b| b.iter().map(|&v| Scalar::to_f64(v) as f32).collect())
        .collect()
}

pub fn teacher_bytes<S: Scalar>(model: &NerfMlp<S>) -> Vec<u8> {
    let cfg = toml::to_string(&model.config).expect("config serializes");
    let owned = blobs_f32(model.param_blobs());
    let refs: Vec<&[f32]> = owned.iter().map(|b| b.as_slice()).collect();
    encode_container(CheckpointKind::Teacher, &cfg, &refs)
}

/// The container checksum doubles as the model digest recorded in
/// pseudo-dataset headers.
pub fn teacher_digest<S: Scalar>(model: &NerfMlp<S>) -> [u8; 32] {
    let bytes = teacher_bytes(model);
    bytes[bytes.len() - 32..].try_into().unwrap()
}

pub fn save_teacher<S: Scalar>(model: &NerfMlp<S>, path: &Path) -> Result<[u8; 32]> {
    let bytes = teacher_bytes(model);
    std::fs::write(path, &bytes)?;
    Ok(bytes[bytes.len() - 32..].try_into().unwrap())
}

pub fn load_teacher<S: Scalar>(path: &Path) -> Result<(NerfMlp<S>, [u8; 32])> {
    let bytes = std::fs::read(path)?;
    let dec = decode_container(&bytes)?;
    if dec.kind != CheckpointKind::Teacher.tag() {
        return Err(Error::Mismatch("checkpoint is not a teacher".into()));
    }
    let config: NerfConfig =
        toml::from_str(&dec.config_toml).map_err(|e| Error::Corrupt(format!("config echo: {e}")))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = NerfMlp::<S>::new(config, &mut rng);
    fill_params(&mut model.params_mut(), &dec.blobs)?;
    Ok((model, dec.digest))
}

pub fn save_student<S: Scalar>(
    model: &ResidualMlp<S>,
    encoder: &RayEncoder,
    path: &Path,
) -> Result<[u8; 32]> {
    let echo = StudentEcho {
        shape: model.shape,
        encoder: *encoder,
        input_dim: model.input_dim,
    };
    let cfg = toml::to_string(&echo).expect("config serializes");
    let owned = blobs_f32(model.param_blobs());
    let refs: Vec<&[f32]> = owned.iter().map(|b| b.as_slice()).collect();
    let bytes = encode_container(CheckpointKind::Student, &cfg, &refs);
    std::fs::write(path, &bytes)?;
    Ok(bytes[bytes.len() - 32..].try_into().unwrap())
}

pub fn load_student<S: Scalar>(path: &Path) -> Result<(ResidualMlp<S>, RayEncoder)> {
    let bytes = std::fs::read(path)?;
    let dec = decode_container(&bytes)?;
    if dec.kind != CheckpointKind::Student.tag() {
        return Err(Error::Mismatch("checkpoint is not a student".into()));
    }
    let echo: StudentEcho =
        toml::from_str(&dec.config_toml).map_err(|e| Error::Corrupt(format!("config echo: {e}")))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = ResidualMlp::<S>::new(echo.shape, echo.input_dim, &mut rng);
    fill_params(&mut model.params_mut(), &dec.blobs)?;
    Ok((model, echo.encoder))
}

fn fill_params<S: Scalar>(params: &mut [&mut [S]], blobs: &[Vec<f32>]) -> Result<()> {
    if params.len() != blobs.len() {
        return Err(Error::Corrupt(format!(
            "checkpoint has {} parameter blobs, model expects {}",
            blobs.len(),
            params.len()
        )));
    }
    for (p, b) in params.iter_mut().zip(blobs) {
        if p.len() != b.len() {
            return Err(Error::Corrupt("parameter blob shape mismatch".into()));
        }
        for (x, v) in p.iter_mut().zip(b) {
            *x = S::from_f64(*v as f64);
        }
    }
    Ok(())
}

use rand::SeedableRng;
