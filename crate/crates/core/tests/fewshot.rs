use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rfmsm_core::fewshot::{load_canonical, sample_nshot, ShotSpec};
use rfmsm_core::iqcore::{write_canonical, DatasetMeta, FrameLabel, IQFrame, SignalDataset};
use rfmsm_core::{Error, FormatError};

fn meta(n_cls: usize, snr_grid: Vec<i16>) -> DatasetMeta {
    DatasetMeta {
        name: "cells".into(),
        n_cls,
        t_res_us: 0.5,
        frame_len: 3,
        snr_grid,
        class_names: (0..n_cls).map(|c| format!("k{c}")).collect(),
    }
}

/// Cells with uneven populations `base + (cell index % 3)`, interleaved.
fn uneven(n_cls: usize, n_snr: usize, base: usize) -> SignalDataset {
    let grid: Vec<i16> = (0..n_snr as i16).map(|s| 2 * s - 4).collect();
    let mut labels = Vec::new();
    for round in 0..base + 2 {
        for c in 0..n_cls {
            for (si, &s) in grid.iter().enumerate() {
                if round < base + (c * n_snr + si) % 3 {
                    labels.push(FrameLabel {
                        class_id: c as u16,
                        snr_db: s,
                    });
                }
            }
        }
    }
    let frames = (0..labels.len())
        .map(|k| IQFrame::new(vec![k as f64, 1.0, 2.0], vec![0.5, -(k as f64), 0.0]).unwrap())
        .collect();
    SignalDataset::new(frames, labels, meta(n_cls, grid)).unwrap()
}

proptest! {
    #[test]
    fn histogram_is_exactly_uniform(n_cls in 1usize..6, n_snr in 1usize..8, base in 1usize..5, seed in any::<u64>()) {
        let ds = uneven(n_cls, n_snr, base);
        for n in 1..=base {
            let shots = sample_nshot(&ds, &ShotSpec::new(n, seed).unwrap()).unwrap();
            prop_assert_eq!(shots.len(), n * n_cls * n_snr);
            let mut h: BTreeMap<FrameLabel, usize> = BTreeMap::new();
            for l in shots.labels() {
                *h.entry(*l).or_default() += 1;
            }
            prop_assert_eq!(h.len(), n_cls * n_snr);
            prop_assert!(h.values().all(|&c| c == n));
            let unique: BTreeSet<u64> = shots.ids().iter().copied().collect();
            prop_assert_eq!(unique.len(), shots.len());
            // labels travel with their frames
            for (f, l) in shots.frames().iter().zip(shots.labels()) {
                let k = f.i()[0] as usize;
                prop_assert_eq!(ds.labels()[k], *l);
            }
        }
        let too_many = sample_nshot(&ds, &ShotSpec::new(base + 3, seed).unwrap());
        let is_insufficient = matches!(too_many, Err(Error::InsufficientCell { .. }));
        prop_assert!(is_insufficient);
    }

    #[test]
    fn sampling_repeats_per_seed(seed in any::<u64>()) {
        let ds = uneven(3, 4, 3);
        let spec = ShotSpec::new(2, seed).unwrap();
        prop_assert_eq!(sample_nshot(&ds, &spec).unwrap(), sample_nshot(&ds, &spec).unwrap());
    }
}

#[test]
fn canonical_round_trip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ten.rfmsm");
    let ds = uneven(2, 2, 2).subset(&(0..10).collect::<Vec<_>>());
    assert_eq!(ds.len(), 10);
    write_canonical(&path, &ds, None).unwrap();
    let back = load_canonical(&path).unwrap();
    assert_eq!(back.meta(), ds.meta());
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.frames(), ds.frames());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_canonical(&path), Err(Error::Format(FormatError::TruncatedBody { .. }))));
}
