//! Two-step training: masked-reconstruction pretraining of an autoencoder,
//! then n-shot fine-tuning of its encoder with a fresh linear probe.

mod adam;

pub use adam::{adam_step, AdamHyper, AdamSlot, AdamState};

use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::iqcore::{compute_stats, split_70_20_10, standardize_dataset, IQFrame, SignalDataset, StandardizationStats};
use crate::masking::{apply_mask, MaskSpec, MaskStrategy, MaskedFrame, NoiseModel};
use crate::models::{
    batch_tensor, checkpoint_id, decode_graph, encode, encode_graph, init_params, init_probe, is_encoder_param,
    probe_graph, ArchDescriptor, Bound, Checkpoint, CheckpointKind, ParamStore, Provenance,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::Tensor;

/// Batch size for forward-only passes (validation, embedding caches).
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub arch: ArchDescriptor,
    pub mask_strategy: MaskStrategy,
    pub mask_ratio: f64,
    pub loss: LossKind,
    /// Restrict the reconstruction loss to masked positions.
    pub masked_only_loss: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Set by the caller per run rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchDescriptor::resnet_desk(),
            mask_strategy: MaskStrategy::A,
            mask_ratio: 0.7,
            loss: LossKind::L1,
            masked_only_loss: false,
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 100,
            patience: 3,
            seed: 0,
        }
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    Ok(())
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        check_lr(self.lr)?;
        check_batch(self.batch_size)?;
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        MaskSpec::new(self.mask_strategy, self.mask_ratio, 0)?;
        Ok(())
    }

    fn mask(&self, seed: u64) -> MaskSpec {
        MaskSpec {
            strategy: self.mask_strategy,
            ratio: self.mask_ratio,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub freeze_encoder_epochs: usize,
    /// Set by the caller per run rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 100,
            freeze_encoder_epochs: 10,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        check_batch(self.batch_size)?;
        if self.freeze_encoder_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "freeze_encoder_epochs {} exceeds epochs {}",
                self.freeze_encoder_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub lr: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl LogRecord {
    fn new(epoch: usize, split: &str, loss: f64, accuracy: Option<f64>, lr: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            loss,
            accuracy,
            lr,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        }
    }
}

/// Patience-based stopping on a validation loss; any strictly lower loss
/// counts as an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records `loss` for `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        match self.best {
            Some((_, best)) if loss >= best => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, loss));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

/// Order in which training frames are visited in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, epoch as u64]));
    order
}

/// Masked inputs, clean reconstruction targets and mask weights for a batch.
pub struct ReconBatch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    /// 1 at masked positions (both channels), 0 elsewhere.
    pub mask: Tensor<f32>,
}

impl ReconBatch {
    pub fn new(clean: &[&IQFrame], masked: &[MaskedFrame]) -> Result<Self> {
        let input = batch_tensor(&masked.iter().map(|m| &m.signal).collect::<Vec<_>>())?;
        let target = batch_tensor(clean)?;
        if input.shape() != target.shape() {
            return Err(Error::ShapeMismatch("masked and clean batches differ".into()));
        }
        let mut mask = Vec::with_capacity(input.len());
        for m in masked {
            let row = m.mask.iter().map(|&b| if b { 1.0 } else { 0.0 });
            mask.extend(row.clone().chain(row));
        }
        Ok(Self {
            mask: Tensor::from_vec(input.shape(), mask)?,
            input,
            target,
        })
    }

    /// Reconstruction loss of `pred` against the clean target.
    pub fn loss(&self, pred: &Tensor<f32>, kind: LossKind, masked_only: bool) -> Result<f64> {
        let mut g = Graph::new();
        let p = g.constant(pred.clone());
        let l = self.loss_node(&mut g, p, kind, masked_only)?;
        Ok(f64::from(g.scalar(l)))
    }

    fn loss_node(
        &self,
        g: &mut Graph<f32>,
        pred: crate::autograd::NodeId,
        kind: LossKind,
        masked_only: bool,
    ) -> Result<crate::autograd::NodeId> {
        let t = g.constant(self.target.clone());
        let w = masked_only.then(|| g.constant(self.mask.clone()));
        match kind {
            LossKind::L1 => g.l1_loss(pred, t, w),
            LossKind::L2 => g.l2_loss(pred, t, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochLosses>,
    /// Reconstruction loss of the returned model on the held-out 10%.
    pub test_loss: f64,
    pub stats: StandardizationStats,
}

struct Held {
    clean: Vec<IQFrame>,
    masked: Vec<MaskedFrame>,
}

impl Held {
    /// Fixed masks, so losses are comparable across epochs.
    fn new(ds: &SignalDataset, cfg: &PretrainConfig, tag: u64, noise: &NoiseModel) -> Result<Self> {
        let masked = ds
            .frames()
            .iter()
            .zip(ds.ids())
            .map(|(f, &id)| apply_mask(f, &cfg.mask(derive_seed(cfg.seed, &[stream::VAL_MASK, tag, id])), noise))
            .collect::<Result<_>>()?;
        Ok(Self {
            clean: ds.frames().to_vec(),
            masked,
        })
    }

    fn loss(&self, cfg: &PretrainConfig, params: &ParamStore<f32>) -> Result<f64> {
        let (mut total, mut n) = (0.0, 0);
        for (clean, masked) in self.clean.chunks(EVAL_BATCH).zip(self.masked.chunks(EVAL_BATCH)) {
            let batch = ReconBatch::new(&clean.iter().collect::<Vec<_>>(), masked)?;
            let mut g = Graph::new();
            let p = Bound::new(&mut g, params, |_| false);
            let x = g.constant(batch.input.clone());
            let z = encode_graph(&mut g, &cfg.arch, &p, x)?;
            let y = decode_graph(&mut g, &cfg.arch, &p, z)?;
            let l = batch.loss_node(&mut g, y, cfg.loss, cfg.masked_only_loss)?;
            total += f64::from(g.scalar(l)) * clean.len() as f64;
            n += clean.len();
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }
}

fn collect_grads(g: &Graph<f32>, bound: &Bound, loss: crate::autograd::NodeId) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut grads = g.backward(loss)?;
    Ok(bound
        .trainable()
        .iter()
        .filter_map(|(name, id)| grads.take(*id).map(|t| (name.clone(), t)))
        .collect())
}

fn non_finite(epoch: usize, batch: usize, value: f64) -> Error {
    log::error!("non-finite loss {value} at epoch {epoch}, batch {batch}");
    Error::NonFiniteLoss { epoch, batch, value }
}

/// Masked-reconstruction pretraining with a 70/20/10 split, fresh masks per
/// frame and epoch, and early stopping on the validation loss. Returns the
/// best-validation checkpoint.
pub fn pretrain(
    corpus: &SignalDataset,
    cfg: &PretrainConfig,
    config_hash: &str,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if corpus.len() < cfg.batch_size {
        return Err(Error::TooFewFrames {
            needed: cfg.batch_size,
            got: corpus.len(),
        });
    }
    cfg.arch.check_length(corpus.frame_len(), cfg.arch.encoder_downsample())?;
    let split = split_70_20_10(corpus, cfg.seed)?;
    let stats = compute_stats(&split.train)?;
    let train = standardize_dataset(&split.train, &stats);
    let noise = NoiseModel::from_frames(train.frames())?;
    let val = Held::new(&standardize_dataset(&split.val, &stats), cfg, 0, &noise)?;
    let test = Held::new(&standardize_dataset(&split.test, &stats), cfg, 1, &noise)?;

    let mut params = init_params(&cfg.arch, cfg.seed)?;
    let mut adam = AdamState::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (params.clone(), adam.clone());
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let clean: Vec<&IQFrame> = chunk.iter().map(|&i| &train.frames()[i]).collect();
            let masked = chunk
                .iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &[stream::MASK, epoch as u64, train.ids()[i]]);
                    apply_mask(&train.frames()[i], &cfg.mask(seed), &noise)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = ReconBatch::new(&clean, &masked)?;
            let mut g = Graph::new();
            let p = Bound::new(&mut g, &params, |_| true);
            let x = g.constant(batch.input.clone());
            let z = encode_graph(&mut g, &cfg.arch, &p, x)?;
            let y = decode_graph(&mut g, &cfg.arch, &p, z)?;
            let l = batch.loss_node(&mut g, y, cfg.loss, cfg.masked_only_loss)?;
            let value = f64::from(g.scalar(l));
            if !value.is_finite() {
                return Err(non_finite(epoch, b, value));
            }
            let grads = collect_grads(&g, &p, l)?;
            adam.step(&mut params, &grads, cfg.lr)?;
            total += value * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = val.loss(cfg, &params)?;
        if !val_loss.is_finite() {
            return Err(non_finite(epoch, 0, val_loss));
        }
        log(&LogRecord::new(epoch, "train", train_loss, None, cfg.lr));
        log(&LogRecord::new(epoch, "val", val_loss, None, cfg.lr));
        log::info!("pretrain epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochLosses {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        if stopper.observe(epoch, val_loss) {
            best = (params.clone(), adam.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }

    let best_epoch = stopper.best_epoch().expect("at least one epoch ran");
    let (params, adam) = best;
    let test_loss = test.loss(cfg, &params)?;
    log(&LogRecord::new(best_epoch, "test", test_loss, None, cfg.lr));
    let (optimizer_meta, optimizer) = adam.to_parts();
    let checkpoint = Checkpoint {
        kind: CheckpointKind::Autoencoder,
        arch: cfg.arch.clone(),
        frame_len: Some(corpus.frame_len()),
        stats: Some(stats),
        params,
        optimizer_meta,
        optimizer,
        provenance: Provenance {
            config_hash: config_hash.to_string(),
            epoch: best_epoch,
            seed: cfg.seed,
            extra: serde_json::json!({
                "corpus": corpus.meta().name,
                "t_res_us": corpus.meta().t_res_us,
                "epochs_run": history.len(),
                "val_loss": stopper.best_loss(),
                "test_loss": test_loss,
                "shuffle_stream": [stream::SHUFFLE, "epoch"],
                "mask_stream": [stream::MASK, "epoch", "frame_id"],
                "mask": {"strategy": cfg.mask_strategy, "ratio": cfg.mask_ratio},
                "loss": cfg.loss,
                "masked_only_loss": cfg.masked_only_loss,
            }),
        },
    };
    Ok(PretrainOutcome {
        checkpoint,
        best_epoch,
        history,
        test_loss,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub steps: usize,
    pub encoder_frozen: bool,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<ClassifierEpoch>,
}

/// Labels as probe indices, checked against the class count.
pub fn class_indices(ds: &SignalDataset) -> Result<Vec<usize>> {
    if !ds.is_labeled() {
        return Err(Error::Unlabeled);
    }
    let n_cls = ds.meta().n_cls;
    ds.labels()
        .iter()
        .map(|l| {
            let label = usize::from(l.class_id);
            if label >= n_cls {
                Err(Error::LabelOutOfRange { label, n_cls })
            } else {
                Ok(label)
            }
        })
        .collect()
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Row-wise argmax of a `[batch][n_cls]` logit tensor; ties go to the lower index.
pub fn predictions(logits: &Tensor<f32>) -> Result<Vec<usize>> {
    let (_, n) = logits.dims2()?;
    Ok(logits.data().chunks_exact(n).map(argmax).collect())
}

fn gather(t: &Tensor<f32>, rows: &[usize]) -> Result<Tensor<f32>> {
    Tensor::concat_outer(&rows.iter().map(|&r| t.slice_outer(r, r + 1)).collect::<Vec<_>>())
}

enum EncoderInit {
    Pretrained(String),
    Random,
}

#[allow(clippy::too_many_arguments)]
fn train_classifier(
    arch: &ArchDescriptor,
    encoder: ParamStore<f32>,
    init: EncoderInit,
    shots: &SignalDataset,
    cfg: &FinetuneConfig,
    freeze_epochs: usize,
    config_hash: &str,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let labels = class_indices(shots)?;
    if shots.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let len = shots.frame_len();
    arch.flatten_dim(len)?;
    let stats = compute_stats(shots)?;
    let data = standardize_dataset(shots, &stats);
    let frames: Vec<&IQFrame> = data.frames().iter().collect();
    let probe = init_probe(arch, len, shots.meta().n_cls, cfg.seed)?;
    let mut params = encoder;
    for (name, t) in probe.iter() {
        params.insert(name, t.clone());
    }

    let mut adam = AdamState::default();
    let mut cache: Option<Tensor<f32>> = None;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let frozen = epoch <= freeze_epochs;
        if frozen && cache.is_none() {
            // inputs are fixed and the encoder is constant: embed once
            let parts = frames
                .chunks(EVAL_BATCH)
                .map(|c| encode(arch, &params, &batch_tensor(c)?))
                .collect::<Result<Vec<_>>>()?;
            cache = Some(Tensor::concat_outer(&parts)?);
        }
        let order = epoch_order(frames.len(), cfg.seed, epoch);
        let (mut total, mut correct, mut steps) = (0.0, 0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let (p, logits) = if let (true, Some(cache)) = (frozen, &cache) {
                let p = Bound::new(&mut g, &params, |n| !is_encoder_param(n));
                let z = g.constant(gather(cache, chunk)?);
                let logits = probe_graph(&mut g, arch, &p, z)?;
                (p, logits)
            } else {
                let p = Bound::new(&mut g, &params, |_| true);
                let batch: Vec<&IQFrame> = chunk.iter().map(|&i| frames[i]).collect();
                let x = g.constant(batch_tensor(&batch)?);
                let z = encode_graph(&mut g, arch, &p, x)?;
                let logits = probe_graph(&mut g, arch, &p, z)?;
                (p, logits)
            };
            let l = g.cross_entropy(logits, &y)?;
            let value = f64::from(g.scalar(l));
            if !value.is_finite() {
                return Err(non_finite(epoch, b, value));
            }
            correct += predictions(g.value(logits))?.iter().zip(&y).filter(|(a, b)| a == b).count();
            let grads = collect_grads(&g, &p, l)?;
            adam.step(&mut params, &grads, cfg.lr)?;
            total += value * chunk.len() as f64;
            steps += 1;
        }
        let loss = total / frames.len() as f64;
        let accuracy = correct as f64 / frames.len() as f64;
        log(&LogRecord::new(epoch, "train", loss, Some(accuracy), cfg.lr));
        log::debug!("finetune epoch {epoch}: loss {loss:.5} acc {accuracy:.4}");
        history.push(ClassifierEpoch {
            epoch,
            loss,
            accuracy,
            steps,
            encoder_frozen: frozen,
        });
    }

    let (optimizer_meta, optimizer) = adam.to_parts();
    let init = match init {
        EncoderInit::Pretrained(id) => serde_json::json!({"pretrained": id}),
        EncoderInit::Random => serde_json::json!("random"),
    };
    Ok(FinetuneOutcome {
        checkpoint: Checkpoint {
            kind: CheckpointKind::Classifier,
            arch: arch.clone(),
            frame_len: Some(len),
            stats: Some(stats),
            params,
            optimizer_meta,
            optimizer,
            provenance: Provenance {
                config_hash: config_hash.to_string(),
                epoch: cfg.epochs,
                seed: cfg.seed,
                extra: serde_json::json!({
                    "shots": shots.meta().name,
                    "n_shots": shots.len(),
                    "encoder_init": init,
                    "frozen_epochs": freeze_epochs,
                    "shuffle_stream": [stream::SHUFFLE, "epoch"],
                }),
            },
        },
        history,
    })
}

/// Fine-tunes the encoder of `pretrained` with a fresh probe on labeled
/// shots; the encoder is frozen for the first `freeze_encoder_epochs`.
pub fn finetune(
    pretrained: &Checkpoint,
    shots: &SignalDataset,
    cfg: &FinetuneConfig,
    config_hash: &str,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<FinetuneOutcome> {
    let encoder = pretrained.params.filtered(is_encoder_param);
    let shapes: Vec<_> = pretrained
        .arch
        .param_shapes()
        .into_iter()
        .filter(|p| is_encoder_param(&p.name))
        .collect();
    encoder.check_manifest(&shapes)?;
    let id = checkpoint_id(pretrained)?;
    train_classifier(
        &pretrained.arch,
        encoder,
        EncoderInit::Pretrained(id),
        shots,
        cfg,
        cfg.freeze_encoder_epochs,
        config_hash,
        log,
    )
}

/// Same procedure as [`finetune`] from a randomly initialised encoder that
/// is never frozen.
pub fn train_baseline(
    shots: &SignalDataset,
    cfg: &FinetuneConfig,
    arch: &ArchDescriptor,
    config_hash: &str,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<FinetuneOutcome> {
    let encoder = init_params(arch, cfg.seed)?.filtered(is_encoder_param);
    train_classifier(arch, encoder, EncoderInit::Random, shots, cfg, 0, config_hash, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_example() {
        let mut s = EarlyStopping::new(3);
        let mut stopped_at = None;
        for (i, loss) in [1.0, 0.9, 0.91, 0.92, 0.93].into_iter().enumerate() {
            s.observe(i + 1, loss);
            if s.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_epoch(), Some(2));
        assert_eq!(s.best_loss(), Some(0.9));
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1, 0.5));
        assert!(!s.observe(2, 0.5));
        assert!(s.should_stop());
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        assert!(PretrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(FinetuneConfig { freeze_encoder_epochs: 101, ..Default::default() }.validate().is_err());
        assert!(FinetuneConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let json = serde_json::json!({"lr": 0.01, "bogus": 1});
        assert!(serde_json::from_value::<FinetuneConfig>(json).is_err());
        let json = serde_json::json!({"seed": 3});
        assert!(serde_json::from_value::<PretrainConfig>(json).is_err());
    }

    #[test]
    fn shuffles_differ_per_epoch_and_reproduce() {
        assert_eq!(epoch_order(50, 1, 1), epoch_order(50, 1, 1));
        assert_ne!(epoch_order(50, 1, 1), epoch_order(50, 1, 2));
    }

    #[test]
    fn log_record_json() {
        let r = LogRecord::new(3, "val", 0.25, None, 1e-3);
        let v = serde_json::to_value(&r).unwrap();
        assert!(v.get("accuracy").is_none());
        assert_eq!(v["split"], "val");
        let r = LogRecord::new(3, "train", 0.25, Some(0.5), 1e-4);
        assert_eq!(serde_json::to_value(&r).unwrap()["accuracy"], 0.5);
    }
}
