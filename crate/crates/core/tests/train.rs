use rfmsm_core::iqcore::{FrameLabel, IQFrame, SignalDataset};
use rfmsm_core::masking::{apply_mask, MaskSpec, MaskStrategy, NoiseModel};
use rfmsm_core::models::{decode, encode, is_encoder_param, ArchDescriptor, ResNetSpec, UpsampleMode};
use rfmsm_core::models::{batch_tensor, CheckpointKind};
use rfmsm_core::siggen::{generate_corpus, GeneratorConfig};
use rfmsm_core::train::{
    finetune, pretrain, train_baseline, FinetuneConfig, LossKind, PretrainConfig, ReconBatch,
};
use rfmsm_core::Error;

fn short_generator(frame_len: usize) -> GeneratorConfig {
    GeneratorConfig {
        frame_len,
        n_pulses: (1, 1),
        pulse_width_us: (4.0, 6.0),
        name: "short".into(),
        ..Default::default()
    }
}

fn small_arch_spec() -> ResNetSpec {
    ResNetSpec {
        stem_channels: 8,
        stem_kernel: 5,
        stage_channels: vec![8, 8],
        blocks_per_stage: 1,
        kernel: 3,
        upsample: UpsampleMode::NearestConv,
    }
}

fn small_arch() -> ArchDescriptor {
    ArchDescriptor::Resnet1d(small_arch_spec())
}

fn unlabeled(n_per_cell: usize, frame_len: usize, seed: u64) -> SignalDataset {
    generate_corpus(n_per_cell, &[10, 20], seed, &short_generator(frame_len))
        .unwrap()
        .unlabeled()
}

fn quiet() -> impl FnMut(&rfmsm_core::train::LogRecord) {
    |_| {}
}

fn pretrain_cfg(arch: ArchDescriptor, epochs: usize) -> PretrainConfig {
    PretrainConfig {
        arch,
        batch_size: 8,
        max_epochs: epochs,
        patience: epochs,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn identity_reconstruction_has_zero_loss_under_any_mask() {
    let ds = unlabeled(2, 64, 1);
    let noise = NoiseModel::from_frames(ds.frames()).unwrap();
    let clean: Vec<&IQFrame> = ds.frames().iter().collect();
    let exact = batch_tensor::<f32>(&clean).unwrap();
    for strategy in [MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::D] {
        let masked: Vec<_> = ds
            .frames()
            .iter()
            .enumerate()
            .map(|(k, f)| apply_mask(f, &MaskSpec::new(strategy, 0.6, k as u64).unwrap(), &noise).unwrap())
            .collect();
        let batch = ReconBatch::new(&clean, &masked).unwrap();
        for kind in [LossKind::L1, LossKind::L2] {
            for masked_only in [false, true] {
                assert_eq!(batch.loss(&exact, kind, masked_only).unwrap(), 0.0);
            }
            // echoing the masked input is penalised
            assert!(batch.loss(&batch.input, kind, false).unwrap() > 0.0);
        }
    }
}

#[test]
fn masked_only_loss_ignores_visible_positions() {
    let ds = unlabeled(1, 32, 2);
    let noise = NoiseModel::from_frames(ds.frames()).unwrap();
    let clean: Vec<&IQFrame> = ds.frames().iter().collect();
    let masked: Vec<_> = ds
        .frames()
        .iter()
        .map(|f| apply_mask(f, &MaskSpec::new(MaskStrategy::B, 0.5, 9).unwrap(), &noise).unwrap())
        .collect();
    let batch = ReconBatch::new(&clean, &masked).unwrap();
    // corrupt only the visible positions
    let mut pred = batch.target.clone();
    for (v, &m) in pred.data_mut().iter_mut().zip(batch.mask.data()) {
        if m == 0.0 {
            *v += 5.0;
        }
    }
    assert_eq!(batch.loss(&pred, LossKind::L1, true).unwrap(), 0.0);
    assert!(batch.loss(&pred, LossKind::L1, false).unwrap() > 1.0);
}

/// Full-corpus reconstruction loss with fixed masks, outside the training loop.
fn corpus_loss(ckpt: &rfmsm_core::models::Checkpoint, ds: &SignalDataset, params: &rfmsm_core::models::ParamStore<f32>) -> f64 {
    let stats = ckpt.stats.unwrap();
    let std = rfmsm_core::iqcore::standardize_dataset(ds, &stats);
    let noise = NoiseModel::from_frames(std.frames()).unwrap();
    let clean: Vec<&IQFrame> = std.frames().iter().collect();
    let masked: Vec<_> = std
        .frames()
        .iter()
        .enumerate()
        .map(|(k, f)| apply_mask(f, &MaskSpec::new(MaskStrategy::A, 0.7, 1000 + k as u64).unwrap(), &noise).unwrap())
        .collect();
    let batch = ReconBatch::new(&clean, &masked).unwrap();
    let z = encode(&ckpt.arch, params, &batch.input).unwrap();
    let y = decode(&ckpt.arch, params, &z).unwrap();
    batch.loss(&y, LossKind::L1, false).unwrap()
}

#[test]
fn pretraining_reduces_reconstruction_loss() {
    // two long pulses fill most of each 128-sample frame
    let gen = GeneratorConfig {
        frame_len: 128,
        n_pulses: (2, 2),
        pulse_width_us: (10.0, 16.0),
        pri_us: (17.0, 20.0),
        ..Default::default()
    };
    let ds = generate_corpus(16, &[10, 20], 4, &gen)
        .unwrap()
        .unlabeled()
        .subset(&(0..64).collect::<Vec<_>>());
    let arch = ArchDescriptor::Resnet1d(ResNetSpec {
        stem_channels: 16,
        stem_kernel: 7,
        stage_channels: vec![16, 16],
        ..small_arch_spec()
    });
    let cfg = PretrainConfig {
        lr: 3e-3,
        ..pretrain_cfg(arch, 20)
    };
    let out = pretrain(&ds, &cfg, "h", &mut quiet()).unwrap();
    let initial = rfmsm_core::models::init_params(&cfg.arch, cfg.seed).unwrap();
    let before = corpus_loss(&out.checkpoint, &ds, &initial);
    let after = corpus_loss(&out.checkpoint, &ds, &out.checkpoint.params);
    assert!(after < 0.7 * before, "loss {before} -> {after}");
    assert_eq!(out.checkpoint.kind, CheckpointKind::Autoencoder);
    let best = out.history.iter().map(|h| h.val).fold(f64::INFINITY, f64::min);
    assert_eq!(out.history[out.best_epoch - 1].val, best);
    assert!(out.test_loss.is_finite());
}

#[test]
fn early_stopping_bounds_epochs_and_logs_each_split() {
    let ds = unlabeled(4, 32, 5);
    let cfg = PretrainConfig {
        lr: 1e-9,
        max_epochs: 50,
        patience: 2,
        ..pretrain_cfg(ArchDescriptor::resnet_tiny(), 50)
    };
    let mut records = Vec::new();
    let out = pretrain(&ds, &cfg, "h", &mut |r| records.push(r.clone())).unwrap();
    assert!(out.history.len() < 50);
    assert_eq!(out.history.len(), out.best_epoch + 2);
    let splits: Vec<_> = records.iter().map(|r| r.split.as_str()).collect();
    assert_eq!(splits.iter().filter(|s| **s == "train").count(), out.history.len());
    assert_eq!(splits.last(), Some(&"test"));
}

#[test]
fn pretraining_is_deterministic() {
    let ds = unlabeled(4, 32, 6);
    let cfg = pretrain_cfg(ArchDescriptor::resnet_tiny(), 2);
    let a = pretrain(&ds, &cfg, "h", &mut quiet()).unwrap();
    let b = pretrain(&ds, &cfg, "h", &mut quiet()).unwrap();
    assert_eq!(a.checkpoint.encode().unwrap(), b.checkpoint.encode().unwrap());
    let c = pretrain(&ds, &PretrainConfig { seed: 4, ..cfg }, "h", &mut quiet()).unwrap();
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
}

#[test]
fn pretraining_rejects_bad_inputs() {
    let ds = unlabeled(1, 32, 7);
    let cfg = PretrainConfig {
        batch_size: 128,
        ..pretrain_cfg(ArchDescriptor::resnet_tiny(), 1)
    };
    assert!(matches!(pretrain(&ds, &cfg, "h", &mut quiet()), Err(Error::TooFewFrames { needed: 128, got: 10 })));
    let odd = unlabeled(2, 30, 7);
    assert!(matches!(
        pretrain(&odd, &pretrain_cfg(ArchDescriptor::resnet_tiny(), 1), "h", &mut quiet()),
        Err(Error::IndivisibleLength { .. })
    ));
}

#[test]
fn diverging_optimisation_is_an_error() {
    let ds = unlabeled(4, 32, 8);
    let cfg = PretrainConfig {
        lr: 1e30,
        ..pretrain_cfg(ArchDescriptor::resnet_tiny(), 5)
    };
    assert!(matches!(pretrain(&ds, &cfg, "h", &mut quiet()), Err(Error::NonFiniteLoss { .. })));
}

fn labeled_shots(frame_len: usize) -> SignalDataset {
    // one frame per (class, snr) cell over 41 SNRs: 205 frames
    let grid: Vec<i16> = (-20..=20).collect();
    generate_corpus(1, &grid, 11, &short_generator(frame_len)).unwrap()
}

#[test]
fn partial_batches_are_kept() {
    let shots = labeled_shots(32);
    assert_eq!(shots.len(), 205);
    let cfg = FinetuneConfig {
        epochs: 2,
        freeze_encoder_epochs: 1,
        ..Default::default()
    };
    let out = train_baseline(&shots, &cfg, &ArchDescriptor::resnet_tiny(), "h", &mut quiet()).unwrap();
    assert!(out.history.iter().all(|h| h.steps == 26));
}

#[test]
fn frozen_encoder_is_untouched_then_released() {
    let ds = unlabeled(4, 32, 9);
    let pre = pretrain(&ds, &pretrain_cfg(ArchDescriptor::resnet_tiny(), 1), "h", &mut quiet()).unwrap();
    let shots = labeled_shots(32);
    let frozen = FinetuneConfig {
        epochs: 3,
        freeze_encoder_epochs: 3,
        ..Default::default()
    };
    let out = finetune(&pre.checkpoint, &shots, &frozen, "h", &mut quiet()).unwrap();
    assert!(out.history.iter().all(|h| h.encoder_frozen));
    for (name, t) in out.checkpoint.params.iter().filter(|(n, _)| is_encoder_param(n)) {
        let orig = pre.checkpoint.params.get(name).unwrap();
        assert_eq!(
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            orig.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{name} moved while frozen"
        );
    }
    let released = FinetuneConfig {
        epochs: 2,
        freeze_encoder_epochs: 1,
        ..Default::default()
    };
    let out = finetune(&pre.checkpoint, &shots, &released, "h", &mut quiet()).unwrap();
    assert!(!out.history[1].encoder_frozen);
    let moved = out
        .checkpoint
        .params
        .iter()
        .filter(|(n, _)| is_encoder_param(n))
        .any(|(n, t)| t != pre.checkpoint.params.get(n).unwrap());
    assert!(moved);
    assert_eq!(out.checkpoint.kind, CheckpointKind::Classifier);
    out.checkpoint.validate().unwrap();
}

#[test]
fn frozen_and_unfrozen_paths_agree() {
    // With lr so small that nothing moves, the cached-embedding path and
    // the full forward path must report identical losses.
    let shots = labeled_shots(32);
    let arch = ArchDescriptor::resnet_tiny();
    let cfg = |freeze| FinetuneConfig {
        lr: 1e-30,
        epochs: 1,
        freeze_encoder_epochs: freeze,
        ..Default::default()
    };
    let a = train_baseline(&shots, &cfg(0), &arch, "h", &mut quiet()).unwrap();
    let ds = unlabeled(4, 32, 9);
    let pre = pretrain(&ds, &pretrain_cfg(arch.clone(), 1), "h", &mut quiet()).unwrap();
    let f0 = finetune(&pre.checkpoint, &shots, &cfg(0), "h", &mut quiet()).unwrap();
    let f1 = finetune(&pre.checkpoint, &shots, &cfg(1), "h", &mut quiet()).unwrap();
    assert_eq!(f0.history[0].loss, f1.history[0].loss);
    assert_eq!(f0.history[0].accuracy, f1.history[0].accuracy);
    assert!(a.history[0].loss.is_finite());
}

fn tone(freq: f64, len: usize, phase: f64) -> IQFrame {
    let t = (0..len).map(|k| freq * k as f64 + phase);
    IQFrame::new(t.clone().map(f64::cos).collect(), t.map(f64::sin).collect()).unwrap()
}

#[test]
fn separable_toy_is_learned_perfectly() {
    let len = 32;
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for k in 0..24 {
        let class = k % 2;
        frames.push(tone(if class == 0 { 0.2 } else { -0.9 }, len, k as f64 * 0.7));
        labels.push(FrameLabel {
            class_id: class as u16,
            snr_db: 0,
        });
    }
    let meta = rfmsm_core::iqcore::DatasetMeta {
        name: "toy".into(),
        n_cls: 2,
        t_res_us: 1.0,
        frame_len: len,
        snr_grid: vec![0],
        class_names: vec!["up".into(), "down".into()],
    };
    let ds = SignalDataset::new(frames, labels, meta).unwrap();
    let cfg = FinetuneConfig {
        lr: 3e-3,
        epochs: 40,
        freeze_encoder_epochs: 0,
        ..Default::default()
    };
    let out = train_baseline(&ds, &cfg, &small_arch(), "h", &mut quiet()).unwrap();
    assert_eq!(out.history.last().unwrap().accuracy, 1.0);
}

#[test]
fn fine_tuning_is_deterministic_and_needs_labels() {
    let shots = labeled_shots(32);
    let arch = ArchDescriptor::resnet_tiny();
    let cfg = FinetuneConfig {
        epochs: 2,
        freeze_encoder_epochs: 1,
        ..Default::default()
    };
    let a = train_baseline(&shots, &cfg, &arch, "h", &mut quiet()).unwrap();
    let b = train_baseline(&shots, &cfg, &arch, "h", &mut quiet()).unwrap();
    assert_eq!(a.checkpoint.encode().unwrap(), b.checkpoint.encode().unwrap());
    assert!(matches!(
        train_baseline(&shots.clone().unlabeled(), &cfg, &arch, "h", &mut quiet()),
        Err(Error::Unlabeled)
    ));
}
