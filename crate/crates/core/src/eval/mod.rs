//! Classification metrics, per-SNR breakdowns, masking sweeps and
//! embedding export.

mod pca;
mod sweep;

pub use pca::{export_embeddings, read_embeddings, write_embeddings, EmbeddingFile, Pca};
pub use sweep::{argmax_cell, sweep, write_heatmap_csv, CellResult, SweepGrid, SweepResult, SweepSetup};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqcore::{encode_dataset, standardize_dataset, FrameLabel, IQFrame, SignalDataset, StandardizationStats};
use crate::models::{batch_tensor, checkpoint_id, hex_digest, probe_forward, Checkpoint, CheckpointKind};
use crate::train::{predictions, EVAL_BATCH};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n_cls: usize) -> Self {
        Self {
            n: n_cls,
            counts: vec![0; n_cls * n_cls],
        }
    }

    pub fn from_pairs(n_cls: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!("{} labels, {} predictions", truth.len(), pred.len())));
        }
        let mut c = Self::new(n_cls);
        for (&t, &p) in truth.iter().zip(pred) {
            c.add(t, p)?;
        }
        Ok(c)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.n {
                return Err(Error::LabelOutOfRange { label, n_cls: self.n });
            }
        }
        self.counts[truth * self.n + pred] += 1;
        Ok(())
    }

    pub fn n_cls(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|k| self.get(k, k)).sum()
    }

    /// Support of class `k`.
    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|j| self.get(k, j)).sum()
    }

    /// Times class `k` was predicted.
    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, k)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// trace / total; 0 for an empty matrix.
pub fn accuracy(c: &Confusion) -> f64 {
    match c.total() {
        0 => 0.0,
        total => c.trace() as f64 / total as f64,
    }
}

/// F1 per class. A class that is neither present nor predicted, or never
/// correctly predicted, scores 0.
pub fn per_class_f1(c: &Confusion) -> Vec<f64> {
    (0..c.n_cls())
        .map(|k| {
            // 2PR/(P+R) simplifies to 2tp / (support + predicted)
            let tp = c.get(k, k) as f64;
            let denom = (c.row_sum(k) + c.col_sum(k)) as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Unweighted mean of [`per_class_f1`].
pub fn macro_f1(c: &Confusion) -> f64 {
    let f1 = per_class_f1(c);
    if f1.is_empty() {
        0.0
    } else {
        f1.iter().sum::<f64>() / f1.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub config_hash: String,
    pub checkpoint_id: String,
    pub dataset_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub per_snr_accuracy: BTreeMap<i16, f64>,
    pub per_snr_support: BTreeMap<i16, u64>,
    pub confusion: Vec<Vec<u64>>,
    pub n_frames: usize,
    pub provenance: ReportProvenance,
}

impl MetricsReport {
    pub fn from_predictions(
        labels: &[FrameLabel],
        pred: &[usize],
        n_cls: usize,
        provenance: ReportProvenance,
    ) -> Result<Self> {
        let truth: Vec<usize> = labels.iter().map(|l| usize::from(l.class_id)).collect();
        let c = Confusion::from_pairs(n_cls, &truth, pred)?;
        let mut by_snr: BTreeMap<i16, (u64, u64)> = BTreeMap::new();
        for ((l, &t), &p) in labels.iter().zip(&truth).zip(pred) {
            let e = by_snr.entry(l.snr_db).or_default();
            e.0 += u64::from(t == p);
            e.1 += 1;
        }
        Ok(Self {
            accuracy: accuracy(&c),
            macro_f1: macro_f1(&c),
            per_class_f1: per_class_f1(&c),
            per_snr_accuracy: by_snr.iter().map(|(&s, &(hit, n))| (s, hit as f64 / n as f64)).collect(),
            per_snr_support: by_snr.iter().map(|(&s, &(_, n))| (s, n)).collect(),
            confusion: c.rows(),
            n_frames: labels.len(),
            provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Hex SHA-256 of a dataset's canonical encoding.
pub fn dataset_id(ds: &SignalDataset) -> Result<String> {
    Ok(hex_digest(&encode_dataset(ds, None)?))
}

fn check_classifier(ckpt: &Checkpoint, ds: &SignalDataset) -> Result<StandardizationStats> {
    if ckpt.kind != CheckpointKind::Classifier {
        return Err(Error::InvalidArchitecture("evaluation needs a classifier checkpoint".into()));
    }
    let n_cls = ckpt.n_cls().ok_or_else(|| Error::MissingParameter("probe.bias".into()))?;
    if n_cls != ds.meta().n_cls {
        return Err(Error::ClassCountMismatch {
            expected: n_cls,
            found: ds.meta().n_cls,
        });
    }
    if let Some(len) = ckpt.frame_len {
        if len != ds.frame_len() {
            return Err(Error::ShapeMismatch(format!(
                "classifier was trained on {len}-sample frames, dataset has {}",
                ds.frame_len()
            )));
        }
    }
    Ok(ckpt.stats.unwrap_or_else(StandardizationStats::identity))
}

/// Arg-max class per frame, evaluated `batch` frames at a time.
pub fn predict_batched(ckpt: &Checkpoint, ds: &SignalDataset, batch: usize) -> Result<Vec<usize>> {
    let stats = check_classifier(ckpt, ds)?;
    let data = standardize_dataset(ds, &stats);
    let mut out = Vec::with_capacity(ds.len());
    for chunk in data.frames().chunks(batch.max(1)) {
        let refs: Vec<&IQFrame> = chunk.iter().collect();
        let z = crate::models::encode(&ckpt.arch, &ckpt.params, &batch_tensor(&refs)?)?;
        out.extend(predictions(&probe_forward(&ckpt.arch, &ckpt.params, &z)?)?);
    }
    Ok(out)
}

pub fn predict(ckpt: &Checkpoint, ds: &SignalDataset) -> Result<Vec<usize>> {
    predict_batched(ckpt, ds, EVAL_BATCH)
}

pub fn evaluate(ckpt: &Checkpoint, test: &SignalDataset, config_hash: &str) -> Result<MetricsReport> {
    if !test.is_labeled() {
        return Err(Error::Unlabeled);
    }
    let pred = predict(ckpt, test)?;
    let provenance = ReportProvenance {
        config_hash: config_hash.to_string(),
        checkpoint_id: checkpoint_id(ckpt)?,
        dataset_id: dataset_id(test)?,
        seed: Some(ckpt.provenance.seed),
    };
    MetricsReport::from_predictions(test.labels(), &pred, test.meta().n_cls, provenance)
}
