//! n-shot set construction, canonical ingestion and source/target handoff.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqcore::{read_canonical, DatasetMeta, SignalDataset};
use crate::models::{init_probe, is_encoder_param, ArchDescriptor, Checkpoint, ParamStore};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotSpec {
    pub n: usize,
    pub seed: u64,
}

impl ShotSpec {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n-shot count must be at least 1".into()));
        }
        Ok(Self { n, seed })
    }
}

/// Exactly `spec.n` frames from every (class, snr) cell of the dataset's
/// grid, drawn without replacement. Each cell is shuffled by its own
/// stream over frame ids, so the draw does not depend on file order.
/// The result lists cells class-major, then by SNR.
pub fn sample_nshot(dataset: &SignalDataset, spec: &ShotSpec) -> Result<SignalDataset> {
    ShotSpec::new(spec.n, spec.seed)?;
    if !dataset.is_labeled() {
        return Err(Error::Unlabeled);
    }
    let meta = dataset.meta();
    let mut cells: BTreeMap<(u16, i16), Vec<usize>> = BTreeMap::new();
    for (k, label) in dataset.labels().iter().enumerate() {
        cells.entry((label.class_id, label.snr_db)).or_default().push(k);
    }
    let mut picked = Vec::with_capacity(spec.n * meta.n_cls * meta.snr_grid.len());
    for class_id in 0..meta.n_cls as u16 {
        for &snr_db in &meta.snr_grid {
            let mut members = cells.remove(&(class_id, snr_db)).unwrap_or_default();
            if members.len() < spec.n {
                return Err(Error::InsufficientCell {
                    class_id,
                    snr_db,
                    available: members.len(),
                    requested: spec.n,
                });
            }
            members.sort_by_key(|&k| dataset.ids()[k]);
            let key = [stream::SHOTS, u64::from(class_id), u64::from(snr_db as u16)];
            members.shuffle(&mut rng_for(spec.seed, &key));
            picked.extend_from_slice(&members[..spec.n]);
        }
    }
    let name = format!("{}-{}shot-s{}", meta.name, spec.n, spec.seed);
    Ok(dataset.subset(&picked).rename(name))
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<SignalDataset> {
    Ok(read_canonical(path)?.0)
}

/// What the probe needs to know about a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub frame_len: usize,
    pub t_res_us: f64,
    pub n_cls: usize,
}

impl From<&DatasetMeta> for DatasetDescriptor {
    fn from(m: &DatasetMeta) -> Self {
        Self {
            name: m.name.clone(),
            frame_len: m.frame_len,
            t_res_us: m.t_res_us,
            n_cls: m.n_cls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPair {
    /// Pretraining domain.
    pub source: DatasetDescriptor,
    /// Fine-tuning domain.
    pub target: DatasetDescriptor,
}

/// Encoder weights plus a fresh probe sized for the target domain.
#[derive(Debug, Clone)]
pub struct FinetuneBundle {
    pub arch: ArchDescriptor,
    pub encoder: ParamStore<f32>,
    pub probe: ParamStore<f32>,
    pub flatten_dim: usize,
    pub n_cls: usize,
    pub frame_len: usize,
    /// Source and target names and sample spacings, for reports.
    pub provenance: serde_json::Value,
}

/// Checks that the target length suits the encoder and sizes a new probe
/// for the target classes. Lengths and class counts may differ between
/// domains; frames are never resampled.
pub fn prepare_domain_pair(pair: &DomainPair, checkpoint: &Checkpoint, probe_seed: u64) -> Result<FinetuneBundle> {
    let arch = &checkpoint.arch;
    let flatten_dim = arch.flatten_dim(pair.target.frame_len)?;
    let encoder = checkpoint.params.filtered(is_encoder_param);
    let shapes: Vec<_> = arch
        .param_shapes()
        .into_iter()
        .filter(|p| is_encoder_param(&p.name))
        .collect();
    encoder.check_manifest(&shapes)?;
    let probe = init_probe(arch, pair.target.frame_len, pair.target.n_cls, probe_seed)?;
    Ok(FinetuneBundle {
        arch: arch.clone(),
        encoder,
        probe,
        flatten_dim,
        n_cls: pair.target.n_cls,
        frame_len: pair.target.frame_len,
        provenance: serde_json::json!({
            "source": {"name": pair.source.name, "t_res_us": pair.source.t_res_us, "frame_len": pair.source.frame_len},
            "target": {"name": pair.target.name, "t_res_us": pair.target.t_res_us, "frame_len": pair.target.frame_len},
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqcore::testutil::meta;
    use crate::iqcore::{FrameLabel, IQFrame};
    use crate::models::{init_params, CheckpointKind, Provenance, PROBE_BIAS, PROBE_WEIGHT};

    /// `per_cell` frames per cell; frame values encode their position.
    fn grid_dataset(n_cls: usize, snrs: &[i16], per_cell: usize) -> SignalDataset {
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_cls {
            for &s in snrs {
                for _ in 0..per_cell {
                    frames.push(IQFrame::new(vec![frames.len() as f64; 4], vec![0.0; 4]).unwrap());
                    labels.push(FrameLabel {
                        class_id: c as u16,
                        snr_db: s,
                    });
                }
            }
        }
        SignalDataset::new(frames, labels, meta(4, n_cls, snrs.to_vec())).unwrap()
    }

    fn histogram(ds: &SignalDataset) -> BTreeMap<FrameLabel, usize> {
        let mut h = BTreeMap::new();
        for l in ds.labels() {
            *h.entry(*l).or_default() += 1;
        }
        h
    }

    #[test]
    fn shot_counts() {
        let snrs: Vec<i16> = (-20..=20).collect();
        let ds = grid_dataset(5, &snrs, 12);
        for (n, expected) in [(1, 205), (5, 1025), (10, 2050)] {
            let shots = sample_nshot(&ds, &ShotSpec::new(n, 3).unwrap()).unwrap();
            assert_eq!(shots.len(), expected);
            let h = histogram(&shots);
            assert_eq!(h.len(), 205);
            assert!(h.values().all(|&c| c == n));
        }
    }

    #[test]
    fn short_cell_is_named() {
        let ds = grid_dataset(2, &[0, 5], 3);
        let keep: Vec<usize> = (0..ds.len()).filter(|&k| k != 4).collect();
        let ds = ds.subset(&keep);
        match sample_nshot(&ds, &ShotSpec::new(3, 0).unwrap()) {
            Err(Error::InsufficientCell {
                class_id: 0,
                snr_db: 5,
                available: 2,
                requested: 3,
            }) => {}
            other => panic!("{other:?}"),
        }
        assert!(ShotSpec::new(0, 1).is_err());
        assert!(matches!(sample_nshot(&ds.unlabeled(), &ShotSpec { n: 1, seed: 0 }), Err(Error::Unlabeled)));
    }

    #[test]
    fn draw_is_stable_under_reordering() {
        let ds = grid_dataset(3, &[-2, 0, 2], 6);
        let spec = ShotSpec::new(2, 77).unwrap();
        let a = sample_nshot(&ds, &spec).unwrap();
        let reversed: Vec<usize> = (0..ds.len()).rev().collect();
        let b = sample_nshot(&ds.subset(&reversed), &spec).unwrap();
        let mut ids_a = a.ids().to_vec();
        let mut ids_b = b.ids().to_vec();
        ids_a.sort_unstable();
        ids_b.sort_unstable();
        assert_eq!(ids_a, ids_b);
        let c = sample_nshot(&ds, &ShotSpec::new(2, 78).unwrap()).unwrap();
        assert_ne!(a.ids(), c.ids());
    }

    fn autoencoder(arch: ArchDescriptor) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Autoencoder,
            params: init_params(&arch, 0).unwrap(),
            arch,
            frame_len: Some(1024),
            stats: None,
            optimizer_meta: serde_json::Value::Null,
            optimizer: ParamStore::new(),
            provenance: Provenance {
                config_hash: String::new(),
                epoch: 1,
                seed: 0,
                extra: serde_json::Value::Null,
            },
        }
    }

    fn descriptor(name: &str, frame_len: usize, n_cls: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            name: name.into(),
            frame_len,
            t_res_us: 0.1,
            n_cls,
        }
    }

    #[test]
    fn cross_domain_probe_sizing() {
        let ckpt = autoencoder(ArchDescriptor::resnet_desk());
        let pair = DomainPair {
            source: descriptor("radioml", 1024, 24),
            target: descriptor("radchar", 512, 5),
        };
        let b = prepare_domain_pair(&pair, &ckpt, 1).unwrap();
        assert_eq!(b.flatten_dim, 64 * 128);
        assert_eq!(b.probe.get(PROBE_WEIGHT).unwrap().shape(), &[64 * 128, 5]);
        assert_eq!(b.probe.get(PROBE_BIAS).unwrap().len(), 5);
        assert!(b.encoder.iter().all(|(n, _)| is_encoder_param(n)));
        assert_eq!(b.provenance["source"]["name"], "radioml");
        let bad = DomainPair {
            target: descriptor("odd", 130, 5),
            ..pair
        };
        assert!(matches!(
            prepare_domain_pair(&bad, &ckpt, 1),
            Err(Error::IndivisibleLength { len: 130, divisor: 8 })
        ));
    }
}
