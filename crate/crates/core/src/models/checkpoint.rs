//! Checkpoint container: magic, u64 LE header length, JSON header, then raw
//! f32 LE parameter arrays followed by optimizer arrays, in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::iqcore::StandardizationStats;
use crate::tensor::Tensor;

use super::arch::{is_decoder_param, ArchDescriptor, PROBE_BIAS, PROBE_WEIGHT};
use super::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFCKPT1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder and decoder from pretraining.
    Autoencoder,
    /// Encoder and probe from fine-tuning or baseline training.
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub epoch: usize,
    pub seed: u64,
    /// Free-form details (shuffle stream, data ids, ...).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub arch: ArchDescriptor,
    /// Frame length a classifier's probe was sized for.
    pub frame_len: Option<usize>,
    /// Statistics the training inputs were standardized with.
    pub stats: Option<StandardizationStats>,
    pub params: ParamStore<f32>,
    /// Optimizer hyperparameters and step counters.
    pub optimizer_meta: serde_json::Value,
    pub optimizer: ParamStore<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the body.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerManifest {
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    arch: ArchDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<StandardizationStats>,
    params: Vec<ArrayEntry>,
    optimizer: OptimizerManifest,
    provenance: Provenance,
}

impl Checkpoint {
    /// Checks parameters against the descriptor for this kind of checkpoint.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shapes = self.arch.param_shapes();
        match self.kind {
            CheckpointKind::Autoencoder => self.params.check_manifest(&shapes)?,
            CheckpointKind::Classifier => {
                let enc: Vec<_> = shapes.into_iter().filter(|p| !is_decoder_param(&p.name)).collect();
                self.params.check_manifest(&enc)?;
                let len = self
                    .frame_len
                    .ok_or_else(|| Error::InvalidArchitecture("classifier checkpoint lacks frame_len".into()))?;
                let n_cls = self.params.get(PROBE_BIAS)?.len();
                self.params.check_manifest(&self.arch.probe_shapes(len, n_cls)?)?;
            }
        }
        if let Some(stats) = &self.stats {
            stats.validate()?;
        }
        if !self.params.is_finite() {
            return Err(Error::Numerical("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn n_cls(&self) -> Option<usize> {
        self.params.get(PROBE_BIAS).ok().map(Tensor::len)
    }

    pub fn has_probe(&self) -> bool {
        self.params.contains(PROBE_WEIGHT)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut manifest = |store: &ParamStore<f32>| -> Vec<ArrayEntry> {
            store
                .iter()
                .map(|(name, t)| {
                    let e = ArrayEntry {
                        name: name.to_string(),
                        shape: t.shape().to_vec(),
                        offset,
                    };
                    offset += 4 * t.len();
                    e
                })
                .collect()
        };
        let params = manifest(&self.params);
        let arrays = manifest(&self.optimizer);
        let header = Header {
            kind: self.kind,
            arch: self.arch.clone(),
            frame_len: self.frame_len,
            stats: self.stats,
            params,
            optimizer: OptimizerManifest {
                meta: self.optimizer_meta.clone(),
                arrays,
            },
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter().chain(self.optimizer.iter()) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { expected: "RFCKPT1\\n" }.into());
        }
        let rest = &bytes[CHECKPOINT_MAGIC.len()..];
        let len_bytes: [u8; 8] = rest.get(..8).ok_or(FormatError::TruncatedHeader)?.try_into().unwrap();
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| FormatError::TruncatedHeader)?;
        let rest = &rest[8..];
        let json = rest.get(..header_len).ok_or(FormatError::TruncatedHeader)?;
        let header: Header = serde_json::from_slice(json).map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        let body = &rest[header_len..];

        let mut cursor = 0;
        let mut read = |entries: &[ArrayEntry]| -> Result<ParamStore<f32>> {
            let mut store = ParamStore::new();
            for e in entries {
                if e.offset != cursor {
                    return Err(FormatError::InvalidHeader(format!("{} is not at offset {cursor}", e.name)).into());
                }
                if store.contains(&e.name) {
                    return Err(FormatError::InvalidHeader(format!("duplicate array {}", e.name)).into());
                }
                let n: usize = e.shape.iter().product();
                let end = cursor + 4 * n;
                let raw = body.get(cursor..end).ok_or(FormatError::TruncatedBody {
                    expected: end,
                    found: body.len(),
                })?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                store.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)?);
                cursor = end;
            }
            Ok(store)
        };
        let params = read(&header.params)?;
        let optimizer = read(&header.optimizer.arrays)?;
        if body.len() > cursor {
            return Err(FormatError::TrailingBytes(body.len() - cursor).into());
        }
        let ckpt = Checkpoint {
            kind: header.kind,
            arch: header.arch,
            frame_len: header.frame_len,
            stats: header.stats,
            params,
            optimizer_meta: header.optimizer.meta,
            optimizer,
            provenance: header.provenance,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

/// Hex SHA-256 of a checkpoint's encoded bytes.
pub fn checkpoint_id(ckpt: &Checkpoint) -> Result<String> {
    Ok(hex_digest(&ckpt.encode()?))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
