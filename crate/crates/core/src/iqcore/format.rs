//! Canonical dataset container.
//!
//! ```text
//! "RFMSM1\n" | u64 LE header length | UTF-8 JSON header
//! f32 LE samples, [frame][I then Q][sample]
//! optional labels: (i16 class_id, i16 snr_db) LE per frame
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetMeta, FrameLabel, IQFrame, SignalDataset};
use crate::error::{Error, FormatError, Result};

pub const DATASET_MAGIC: &[u8; 7] = b"RFMSM1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_frames: u64,
    pub frame_len: u64,
    pub n_cls: u64,
    pub t_res_us: f64,
    pub snr_grid: Vec<i16>,
    pub class_names: Vec<String>,
    pub has_labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Config hash and seed of the run that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn encode_dataset(dataset: &SignalDataset, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let meta = dataset.meta();
    let header = DatasetHeader {
        num_frames: dataset.len() as u64,
        frame_len: meta.frame_len as u64,
        n_cls: meta.n_cls as u64,
        t_res_us: meta.t_res_us,
        snr_grid: meta.snr_grid.clone(),
        class_names: meta.class_names.clone(),
        has_labels: !dataset.labels().is_empty(),
        name: Some(meta.name.clone()),
        provenance,
    };
    let json = serde_json::to_vec(&header)?;
    let body_len = dataset.len() * meta.frame_len * 8 + dataset.labels().len() * 4;
    let mut out = Vec::with_capacity(DATASET_MAGIC.len() + 8 + json.len() + body_len);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for frame in dataset.frames() {
        for &v in frame.i().iter().chain(frame.q()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for label in dataset.labels() {
        out.extend_from_slice(&(label.class_id as i16).to_le_bytes());
        out.extend_from_slice(&label.snr_db.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(SignalDataset, DatasetHeader)> {
    if bytes.len() < DATASET_MAGIC.len() || &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
        return Err(FormatError::BadMagic { expected: "RFMSM1\\n" }.into());
    }
    let rest = &bytes[DATASET_MAGIC.len()..];
    if rest.len() < 8 {
        return Err(FormatError::TruncatedHeader.into());
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(FormatError::TruncatedHeader.into());
    }
    let header: DatasetHeader = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    let body = &rest[header_len..];

    let n = header.num_frames as usize;
    let len = header.frame_len as usize;
    if len == 0 {
        return Err(FormatError::InvalidHeader("frame_len must be positive".into()).into());
    }
    let frame_bytes = n
        .checked_mul(len)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| FormatError::InvalidHeader("frame count overflows".into()))?;
    let label_bytes = if header.has_labels { n * 4 } else { 0 };
    if body.len() < frame_bytes {
        return Err(FormatError::TruncatedBody {
            expected: frame_bytes + label_bytes,
            found: body.len(),
        }
        .into());
    }
    let tail = body.len() - frame_bytes;
    if header.has_labels && tail != label_bytes {
        if tail % 4 == 0 {
            return Err(FormatError::LabelCountMismatch {
                frames: n,
                labels: tail / 4,
            }
            .into());
        }
        return Err(FormatError::TruncatedBody {
            expected: frame_bytes + label_bytes,
            found: body.len(),
        }
        .into());
    }
    if !header.has_labels && tail != 0 {
        return Err(FormatError::TrailingBytes(tail).into());
    }

    let read_f32 = |chunk: &[u8]| f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    let mut frames = Vec::with_capacity(n);
    for raw in body[..frame_bytes].chunks_exact(len * 8) {
        let (i, q) = raw.split_at(len * 4);
        frames.push(IQFrame::new(
            i.chunks_exact(4).map(read_f32).collect(),
            q.chunks_exact(4).map(read_f32).collect(),
        )?);
    }
    let labels = body[frame_bytes..]
        .chunks_exact(4)
        .map(|c| {
            let class = i16::from_le_bytes([c[0], c[1]]);
            let snr_db = i16::from_le_bytes([c[2], c[3]]);
            u16::try_from(class)
                .map(|class_id| FrameLabel { class_id, snr_db })
                .map_err(|_| Error::LabelOutOfRange {
                    label: 0,
                    n_cls: header.n_cls as usize,
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = DatasetMeta {
        name: header.name.clone().unwrap_or_else(|| "unnamed".into()),
        n_cls: header.n_cls as usize,
        t_res_us: header.t_res_us,
        frame_len: len,
        snr_grid: header.snr_grid.clone(),
        class_names: header.class_names.clone(),
    };
    Ok((SignalDataset::new(frames, labels, meta)?, header))
}

pub fn write_canonical(
    path: impl AsRef<Path>,
    dataset: &SignalDataset,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    fs::write(path, encode_dataset(dataset, provenance)?)?;
    Ok(())
}

pub fn read_canonical(path: impl AsRef<Path>) -> Result<(SignalDataset, DatasetHeader)> {
    decode_dataset(&fs::read(path)?)
}
