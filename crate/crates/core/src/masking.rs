//! Masking strategies for the signal-reconstruction proxy task.
//!
//! Random strategies mask each sample independently when a uniform draw
//! falls below the ratio; block strategies mask one contiguous run of
//! `round(ratio * L)` samples. Zero-masking multiplies masked samples by
//! zero, noise-masking adds a Gaussian draw from the training noise model.
//! A masked position covers both the I and the Q sample.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqcore::IQFrame;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaskStrategy {
    /// Random zero-masking.
    A,
    /// Block zero-masking.
    B,
    /// Random noise-masking.
    C,
    /// Block noise-masking.
    D,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [MaskStrategy::A, MaskStrategy::B, MaskStrategy::C, MaskStrategy::D];

    pub fn is_block(self) -> bool {
        matches!(self, MaskStrategy::B | MaskStrategy::D)
    }

    pub fn is_noise(self) -> bool {
        matches!(self, MaskStrategy::C | MaskStrategy::D)
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::A => "A",
            MaskStrategy::B => "B",
            MaskStrategy::C => "C",
            MaskStrategy::D => "D",
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(MaskStrategy::A),
            "B" => Ok(MaskStrategy::B),
            "C" => Ok(MaskStrategy::C),
            "D" => Ok(MaskStrategy::D),
            other => Err(Error::InvalidMask(format!("unknown strategy {other:?}, expected A|B|C|D"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(strategy: MaskStrategy, ratio: f64, seed: u64) -> Result<Self> {
        let spec = Self { strategy, ratio, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidMask(format!("ratio {} outside [0, 1]", self.ratio)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Gaussian noise source for noise-masking, N(mean, variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mean: f64,
    pub variance: f64,
}

impl NoiseModel {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !mean.is_finite() || !variance.is_finite() {
            return Err(Error::InvalidMask(format!(
                "noise model needs finite mean and variance >= 0, got ({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Pooled mean and variance of every I and Q sample of `frames`.
    pub fn from_frames(frames: &[IQFrame]) -> Result<Self> {
        let (mut n, mut sum) = (0.0, 0.0);
        for f in frames {
            n += 2.0 * f.len() as f64;
            sum += f.i().iter().chain(f.q()).sum::<f64>();
        }
        if n == 0.0 {
            return Err(Error::EmptyCorpus);
        }
        let mean = sum / n;
        let ss: f64 = frames
            .iter()
            .flat_map(|f| f.i().iter().chain(f.q()))
            .map(|x| (x - mean) * (x - mean))
            .sum();
        Self::new(mean, ss / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFrame {
    pub signal: IQFrame,
    pub mask: Vec<bool>,
}

/// Number of positions covered by a block mask: round-half-away-from-zero.
pub fn block_len(ratio: f64, len: usize) -> usize {
    ((ratio * len as f64).round() as usize).min(len)
}

/// Mask positions for one frame, without touching the samples.
pub fn draw_mask(len: usize, spec: &MaskSpec, rng: &mut impl Rng) -> Vec<bool> {
    if spec.strategy.is_block() {
        let run = block_len(spec.ratio, len);
        let start = rng.random_range(0..=len - run);
        let mut mask = vec![false; len];
        mask[start..start + run].iter_mut().for_each(|m| *m = true);
        mask
    } else {
        (0..len).map(|_| rng.random::<f64>() < spec.ratio).collect()
    }
}

pub fn apply_mask(frame: &IQFrame, spec: &MaskSpec, noise: &NoiseModel) -> Result<MaskedFrame> {
    spec.validate()?;
    if spec.strategy.is_noise() && !(noise.variance > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let mut rng = rng::rng_for(spec.seed, &[]);
    let mask = draw_mask(frame.len(), spec, &mut rng);
    let mut signal = frame.clone();
    let (i, q) = signal.channels_mut();
    if spec.strategy.is_noise() {
        let normal = Normal::new(noise.mean, noise.variance.sqrt()).map_err(|_| Error::DegenerateNoise)?;
        for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            i[k] += normal.sample(&mut rng);
            q[k] += normal.sample(&mut rng);
        }
    } else {
        for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            i[k] = 0.0;
            q[k] = 0.0;
        }
    }
    Ok(MaskedFrame { signal, mask })
}

pub fn masked_fraction(masked: &MaskedFrame) -> f64 {
    if masked.mask.is_empty() {
        return 0.0;
    }
    masked.mask.iter().filter(|&&m| m).count() as f64 / masked.mask.len() as f64
}
