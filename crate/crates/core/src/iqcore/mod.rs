//! Core I/Q domain types, per-channel standardization and dataset splitting.

mod format;

pub use format::{decode_dataset, encode_dataset, read_canonical, write_canonical, DatasetHeader, DATASET_MAGIC};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// One complex baseband frame held as two real channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame {
    i: Vec<f64>,
    q: Vec<f64>,
}

impl IQFrame {
    pub fn new(i: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::InvalidFrame(format!(
                "I has {} samples, Q has {}",
                i.len(),
                q.len()
            )));
        }
        if i.is_empty() {
            return Err(Error::InvalidFrame("frame must hold at least one sample".into()));
        }
        if let Some(pos) = i.iter().chain(&q).position(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!("non-finite sample at flat index {pos}")));
        }
        Ok(Self { i, q })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "frame length must be positive");
        Self {
            i: vec![0.0; len],
            q: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn i(&self) -> &[f64] {
        &self.i
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Mutable access to both channels. Callers must keep every sample finite.
    pub fn channels_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.i, &mut self.q)
    }

    pub fn into_channels(self) -> (Vec<f64>, Vec<f64>) {
        (self.i, self.q)
    }

    /// |s|^2 for every sample.
    pub fn power(&self) -> impl Iterator<Item = f64> + '_ {
        self.i.iter().zip(&self.q).map(|(a, b)| a * a + b * b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameLabel {
    pub class_id: u16,
    pub snr_db: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n_cls: usize,
    pub t_res_us: f64,
    pub frame_len: usize,
    pub snr_grid: Vec<i16>,
    pub class_names: Vec<String>,
}

impl DatasetMeta {
    fn validate(&self) -> Result<()> {
        if self.frame_len == 0 {
            return Err(Error::InvalidDataset("frame_len must be positive".into()));
        }
        if !(self.t_res_us.is_finite() && self.t_res_us > 0.0) {
            return Err(Error::InvalidDataset("t_res_us must be positive".into()));
        }
        if self.n_cls == 0 {
            return Err(Error::InvalidDataset("n_cls must be positive".into()));
        }
        if self.class_names.len() != self.n_cls {
            return Err(Error::InvalidDataset(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_cls
            )));
        }
        if self.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDataset("snr_grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Frames plus optional labels. `ids` are the stable frame keys assigned at
/// ingestion (file order) and carried through every subset operation.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    frames: Vec<IQFrame>,
    labels: Vec<FrameLabel>,
    ids: Vec<u64>,
    meta: DatasetMeta,
}

impl SignalDataset {
    pub fn new(frames: Vec<IQFrame>, labels: Vec<FrameLabel>, meta: DatasetMeta) -> Result<Self> {
        let ids = (0..frames.len() as u64).collect();
        Self::with_ids(frames, labels, ids, meta)
    }

    pub fn with_ids(
        frames: Vec<IQFrame>,
        labels: Vec<FrameLabel>,
        ids: Vec<u64>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        meta.validate()?;
        if let Some(bad) = frames.iter().position(|f| f.len() != meta.frame_len) {
            return Err(Error::InvalidDataset(format!(
                "frame {bad} has length {}, expected {}",
                frames[bad].len(),
                meta.frame_len
            )));
        }
        if !labels.is_empty() && labels.len() != frames.len() {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} frames",
                labels.len(),
                frames.len()
            )));
        }
        if ids.len() != frames.len() {
            return Err(Error::InvalidDataset("one id per frame required".into()));
        }
        for label in &labels {
            if usize::from(label.class_id) >= meta.n_cls {
                return Err(Error::LabelOutOfRange {
                    label: label.class_id.into(),
                    n_cls: meta.n_cls,
                });
            }
            if meta.snr_grid.binary_search(&label.snr_db).is_err() {
                return Err(Error::InvalidDataset(format!(
                    "snr {} dB is not on the declared grid",
                    label.snr_db
                )));
            }
        }
        Ok(Self {
            frames,
            labels,
            ids,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty() || self.frames.is_empty()
    }

    pub fn frames(&self) -> &[IQFrame] {
        &self.frames
    }

    pub fn labels(&self) -> &[FrameLabel] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn frame_len(&self) -> usize {
        self.meta.frame_len
    }

    pub fn rename(mut self, name: impl Into<String>) -> Self {
        self.meta.name = name.into();
        self
    }

    /// Drops the labels, e.g. to build an annotation-free pre-training corpus.
    pub fn unlabeled(mut self) -> Self {
        self.labels.clear();
        self
    }

    /// New dataset holding the frames at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            frames: indices.iter().map(|&k| self.frames[k].clone()).collect(),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&k| self.labels[k]).collect()
            },
            ids: indices.iter().map(|&k| self.ids[k]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Applies `f` to every frame, keeping labels, ids and metadata.
    pub fn map_frames(&self, f: impl Fn(&IQFrame) -> IQFrame) -> Self {
        Self {
            frames: self.frames.iter().map(f).collect(),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// Per-channel population statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean_i: f64,
    pub mean_q: f64,
    pub var_i: f64,
    pub var_q: f64,
}

impl StandardizationStats {
    pub fn new(mean_i: f64, mean_q: f64, var_i: f64, var_q: f64) -> Result<Self> {
        let stats = Self {
            mean_i,
            mean_q,
            var_i,
            var_q,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn identity() -> Self {
        Self {
            mean_i: 0.0,
            mean_q: 0.0,
            var_i: 1.0,
            var_q: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var_i > 0.0 && self.var_i.is_finite()) {
            return Err(Error::DegenerateVariance { channel: "I" });
        }
        if !(self.var_q > 0.0 && self.var_q.is_finite()) {
            return Err(Error::DegenerateVariance { channel: "Q" });
        }
        Ok(())
    }
}

/// Running (count, mean, M2) for one channel; merged with Chan's update.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        Self { n, mean, m2 }
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }
}

/// Population mean and variance of I and Q over every sample of every frame.
pub fn compute_stats(dataset: &SignalDataset) -> Result<StandardizationStats> {
    stats_of_frames(dataset.frames())
}

pub fn stats_of_frames(frames: &[IQFrame]) -> Result<StandardizationStats> {
    if frames.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mi, mq) = frames.iter().fold(
        (Moments::default(), Moments::default()),
        |(mi, mq), f| (mi.merge(Moments::of(f.i())), mq.merge(Moments::of(f.q()))),
    );
    StandardizationStats::new(mi.mean, mq.mean, mi.m2 / mi.n, mq.m2 / mq.n)
}

pub fn standardize(frame: &IQFrame, stats: &StandardizationStats) -> IQFrame {
    let (si, sq) = (stats.var_i.sqrt(), stats.var_q.sqrt());
    IQFrame {
        i: frame.i.iter().map(|x| (x - stats.mean_i) / si).collect(),
        q: frame.q.iter().map(|x| (x - stats.mean_q) / sq).collect(),
    }
}

pub fn destandardize(frame: &IQFrame, stats: &StandardizationStats) -> IQFrame {
    let (si, sq) = (stats.var_i.sqrt(), stats.var_q.sqrt());
    IQFrame {
        i: frame.i.iter().map(|x| x * si + stats.mean_i).collect(),
        q: frame.q.iter().map(|x| x * sq + stats.mean_q).collect(),
    }
}

pub fn standardize_dataset(dataset: &SignalDataset, stats: &StandardizationStats) -> SignalDataset {
    dataset.map_frames(|f| standardize(f, stats))
}

/// Train/validation/test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SignalDataset,
    pub val: SignalDataset,
    pub test: SignalDataset,
}

/// Seeded Fisher-Yates shuffle, then floor(0.7N) / floor(0.2N) / remainder.
pub fn split_70_20_10(dataset: &SignalDataset, seed: u64) -> Result<Split> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::TooFewFrames { needed: 10, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, &[stream::SPLIT]));
    let n_train = n * 7 / 10;
    let n_val = n * 2 / 10;
    Ok(Split {
        train: dataset.subset(&order[..n_train]),
        val: dataset.subset(&order[n_train..n_train + n_val]),
        test: dataset.subset(&order[n_train + n_val..]),
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn meta(frame_len: usize, n_cls: usize, snr_grid: Vec<i16>) -> DatasetMeta {
        DatasetMeta {
            name: "test".into(),
            n_cls,
            t_res_us: 0.3,
            frame_len,
            snr_grid,
            class_names: (0..n_cls).map(|c| format!("c{c}")).collect(),
        }
    }

    pub fn unlabeled(frames: Vec<IQFrame>) -> SignalDataset {
        let len = frames[0].len();
        SignalDataset::new(frames, Vec::new(), meta(len, 1, vec![0])).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn frame(i: &[f64], q: &[f64]) -> IQFrame {
        IQFrame::new(i.to_vec(), q.to_vec()).unwrap()
    }

    fn gaussian_frames(n: usize, len: usize, seed: u64) -> Vec<IQFrame> {
        let mut rng = rng::rng_for(seed, &[]);
        (0..n)
            .map(|_| {
                let i = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                let q = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                IQFrame::new(i, q).unwrap()
            })
            .collect()
    }

    /// Independent two-pass reference.
    fn two_pass(frames: &[IQFrame]) -> (f64, f64, f64, f64) {
        let all_i: Vec<f64> = frames.iter().flat_map(|f| f.i().to_vec()).collect();
        let all_q: Vec<f64> = frames.iter().flat_map(|f| f.q().to_vec()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        let (mi, mq) = (mean(&all_i), mean(&all_q));
        (mi, mq, var(&all_i, mi), var(&all_q, mq))
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn frame_invariants() {
        assert!(IQFrame::new(vec![1.0], vec![]).is_err());
        assert!(IQFrame::new(vec![], vec![]).is_err());
        assert!(IQFrame::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(IQFrame::new(vec![1.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        let ds = SignalDataset::new(Vec::new(), Vec::new(), meta(4, 1, vec![0])).unwrap();
        assert!(matches!(compute_stats(&ds), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn all_zero_frames_have_degenerate_variance() {
        let ds = unlabeled(vec![IQFrame::zeros(8), IQFrame::zeros(8)]);
        assert!(matches!(
            compute_stats(&ds),
            Err(Error::DegenerateVariance { channel: "I" })
        ));
    }

    #[test]
    fn hand_arithmetic_stats() {
        let ds = unlabeled(vec![frame(&[1.0, 3.0], &[0.0, 0.0])]);
        assert!(matches!(
            compute_stats(&ds),
            Err(Error::DegenerateVariance { channel: "Q" })
        ));
        let ds = unlabeled(vec![frame(&[1.0, 3.0], &[0.0, 2.0])]);
        let s = compute_stats(&ds).unwrap();
        assert_eq!((s.mean_i, s.var_i, s.mean_q, s.var_q), (2.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn unit_gaussian_stats() {
        let frames = gaussian_frames(1000, 64, 3);
        let s = stats_of_frames(&frames).unwrap();
        let (mi, mq, vi, vq) = two_pass(&frames);
        assert!(s.mean_i.abs() < 0.01 && s.mean_q.abs() < 0.01);
        assert!((s.var_i - 1.0).abs() < 0.05 && (s.var_q - 1.0).abs() < 0.05);
        assert!(rel(s.var_i, vi) < 1e-12 && rel(s.var_q, vq) < 1e-12);
        assert!((s.mean_i - mi).abs() < 1e-12 && (s.mean_q - mq).abs() < 1e-12);
    }

    #[test]
    fn standardize_identity_and_mean() {
        let f = frame(&[0.5, -2.0, 3.25], &[1.0, 0.0, -1.5]);
        assert_eq!(standardize(&f, &StandardizationStats::identity()), f);
        let stats = StandardizationStats::new(4.0, -1.0, 2.0, 9.0).unwrap();
        let at_mean = frame(&[4.0; 3], &[-1.0; 3]);
        let z = standardize(&at_mean, &stats);
        assert!(z.i().iter().chain(z.q()).all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_corpus_round_trips_to_unit_stats() {
        let frames: Vec<IQFrame> = gaussian_frames(50, 128, 9)
            .into_iter()
            .map(|f| {
                let (i, q) = f.into_channels();
                IQFrame::new(
                    i.iter().map(|x| 3.0 * x + 7.0).collect(),
                    q.iter().map(|x| 0.5 * x - 2.0).collect(),
                )
                .unwrap()
            })
            .collect();
        let ds = unlabeled(frames);
        let stats = compute_stats(&ds).unwrap();
        let z = compute_stats(&standardize_dataset(&ds, &stats)).unwrap();
        assert!(z.mean_i.abs() < 1e-9 && z.mean_q.abs() < 1e-9);
        assert!((z.var_i - 1.0).abs() < 1e-9 && (z.var_q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn split_sizes() {
        for (n, expect) in [(100, (70, 20, 10)), (10, (7, 2, 1)), (15, (10, 3, 2))] {
            let ds = unlabeled(gaussian_frames(n, 4, 1));
            let s = split_70_20_10(&ds, 5).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), expect);
        }
        let ds = unlabeled(gaussian_frames(9, 4, 1));
        assert!(matches!(
            split_70_20_10(&ds, 0),
            Err(Error::TooFewFrames { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = unlabeled(gaussian_frames(40, 4, 1));
        let a = split_70_20_10(&ds, 11).unwrap();
        let b = split_70_20_10(&ds, 11).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        let c = split_70_20_10(&ds, 12).unwrap();
        assert_ne!(a.train.ids(), c.train.ids());
    }

    #[test]
    fn dataset_validation() {
        let f = vec![frame(&[1.0, 2.0], &[0.0, 1.0])];
        let lab = vec![FrameLabel { class_id: 3, snr_db: 0 }];
        assert!(matches!(
            SignalDataset::new(f.clone(), lab, meta(2, 2, vec![0])),
            Err(Error::LabelOutOfRange { .. })
        ));
        let lab = vec![FrameLabel { class_id: 0, snr_db: 5 }];
        assert!(SignalDataset::new(f.clone(), lab, meta(2, 2, vec![0])).is_err());
        assert!(SignalDataset::new(f.clone(), Vec::new(), meta(2, 1, vec![1, 0])).is_err());
        assert!(SignalDataset::new(f, Vec::new(), meta(3, 1, vec![0])).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 10usize..300, seed in any::<u64>()) {
            let frames = (0..n).map(|k| frame(&[k as f64], &[1.0])).collect();
            let ds = unlabeled(frames);
            let s = split_70_20_10(&ds, seed).unwrap();
            let mut ids: Vec<u64> = s.train.ids().iter().chain(s.val.ids()).chain(s.test.ids()).copied().collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort_unstable();
            prop_assert!(ids.iter().enumerate().all(|(k, &id)| id == k as u64));
        }

        #[test]
        fn standardize_inverts(
            i in prop::collection::vec(-1e3f64..1e3, 1..32),
            mean_i in -10f64..10.0, mean_q in -10f64..10.0,
            var_i in 1e-3f64..1e3, var_q in 1e-3f64..1e3,
        ) {
            let q: Vec<f64> = i.iter().map(|x| x * 0.3 - 1.0).collect();
            let f = IQFrame::new(i, q).unwrap();
            let stats = StandardizationStats::new(mean_i, mean_q, var_i, var_q).unwrap();
            let back = destandardize(&standardize(&f, &stats), &stats);
            for (a, b) in f.i().iter().chain(f.q()).zip(back.i().iter().chain(back.q())) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn stats_match_two_pass(n in 1usize..20, len in 1usize..40, seed in any::<u64>()) {
            let frames = gaussian_frames(n, len, seed);
            if let Ok(s) = stats_of_frames(&frames) {
                let (mi, mq, vi, vq) = two_pass(&frames);
                prop_assert!((s.mean_i - mi).abs() <= 1e-12 * mi.abs().max(1.0));
                prop_assert!((s.mean_q - mq).abs() <= 1e-12 * mq.abs().max(1.0));
                prop_assert!(rel(s.var_i, vi) < 1e-12);
                prop_assert!(rel(s.var_q, vq) < 1e-12);
            }
        }
    }
}
