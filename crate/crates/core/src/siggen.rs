//! Synthetic pulsed-radar I/Q frames in the style of RadChar.
//!
//! Five waveform families share a rectangular pulse train with unit peak
//! amplitude; they differ only in intra-pulse phase coding. Noise is complex
//! AWGN calibrated against the mean power of the pulse-active samples.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqcore::{DatasetMeta, FrameLabel, IQFrame, SignalDataset};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformClass {
    CoherentPulse,
    Barker,
    PolyphaseBarker,
    Frank,
    Lfm,
}

impl WaveformClass {
    pub const ALL: [WaveformClass; 5] = [
        WaveformClass::CoherentPulse,
        WaveformClass::Barker,
        WaveformClass::PolyphaseBarker,
        WaveformClass::Frank,
        WaveformClass::Lfm,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<Self> {
        Self::ALL.get(usize::from(id)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveformClass::CoherentPulse => "coherent_pulses",
            WaveformClass::Barker => "barker",
            WaveformClass::PolyphaseBarker => "polyphase_barker",
            WaveformClass::Frank => "frank",
            WaveformClass::Lfm => "lfm",
        }
    }
}

/// Binary Barker codes as chip signs.
pub fn barker_code(length: usize) -> Option<&'static [i8]> {
    Some(match length {
        2 => &[1, -1],
        3 => &[1, 1, -1],
        4 => &[1, 1, -1, 1],
        5 => &[1, 1, 1, -1, 1],
        7 => &[1, 1, 1, -1, -1, 1, -1],
        11 => &[1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
        13 => &[1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1],
        _ => return None,
    })
}

/// Polyphase Barker sequences: chip phases in units of 2*pi/alphabet. Every
/// entry has aperiodic autocorrelation sidelobes of magnitude at most one.
pub fn polyphase_barker_code(length: usize) -> Option<(usize, &'static [u8])> {
    POLYPHASE_BARKER
        .iter()
        .find(|(n, _, _)| *n == length)
        .map(|&(_, m, phases)| (m, phases))
}

const POLYPHASE_BARKER: &[(usize, usize, &[u8])] = &[
    (5, 8, &[0, 6, 4, 6, 1]),
    (7, 12, &[0, 3, 8, 6, 10, 7, 6]),
    (8, 12, &[0, 10, 10, 6, 1, 6, 8, 10]),
    (9, 12, &[0, 2, 2, 5, 0, 3, 0, 10, 6]),
    (10, 16, &[0, 8, 13, 1, 7, 4, 11, 8, 8, 6]),
    (11, 16, &[0, 10, 4, 14, 1, 9, 12, 3, 4, 4, 5]),
];

pub fn polyphase_barker_lengths() -> Vec<usize> {
    POLYPHASE_BARKER.iter().map(|(n, _, _)| *n).collect()
}

/// Frank code phase (radians) of chip `chip` for order `order` (code length order^2).
pub fn frank_phase(order: usize, chip: usize) -> f64 {
    let (row, col) = (chip / order, chip % order);
    2.0 * PI * ((row * col) % order) as f64 / order as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub class: WaveformClass,
    pub n_pulses: usize,
    pub pulse_width_us: f64,
    pub pri_us: f64,
    pub t0_us: f64,
    /// Chips per pulse for the coded classes; ignored otherwise.
    pub code_length: usize,
    /// Swept bandwidth for LFM; ignored otherwise.
    pub chirp_bw_hz: f64,
    /// Carrier phase common to every pulse of the frame.
    #[serde(default)]
    pub phase0_rad: f64,
}

impl WaveformSpec {
    /// End of the last pulse, measured from the frame start.
    pub fn extent_us(&self) -> f64 {
        self.t0_us + (self.n_pulses.saturating_sub(1)) as f64 * self.pri_us + self.pulse_width_us
    }

    pub fn validate(&self, frame_len: usize, t_res_us: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWaveform(msg));
        if self.n_pulses == 0 {
            return bad("n_pulses must be at least 1".into());
        }
        if !(self.pulse_width_us > 0.0 && self.pulse_width_us.is_finite()) {
            return bad("pulse width must be positive".into());
        }
        if self.n_pulses > 1 && !(self.pri_us > self.pulse_width_us) {
            return bad(format!(
                "PRI {} us must exceed pulse width {} us",
                self.pri_us, self.pulse_width_us
            ));
        }
        if !(self.t0_us >= 0.0) {
            return bad("t0 must be non-negative".into());
        }
        match self.class {
            WaveformClass::Barker if barker_code(self.code_length).is_none() => {
                return bad(format!("no binary Barker code of length {}", self.code_length));
            }
            WaveformClass::PolyphaseBarker if polyphase_barker_code(self.code_length).is_none() => {
                return bad(format!("no polyphase Barker code of length {}", self.code_length));
            }
            WaveformClass::Frank => {
                let order = frank_order(self.code_length);
                if order.is_none() {
                    return bad(format!("Frank code length {} is not a square >= 4", self.code_length));
                }
            }
            WaveformClass::Lfm if !(self.chirp_bw_hz > 0.0 && self.chirp_bw_hz.is_finite()) => {
                return bad("LFM bandwidth must be positive".into());
            }
            _ => {}
        }
        let frame_us = frame_len as f64 * t_res_us;
        if self.extent_us() > frame_us {
            return Err(Error::PulseTrainExceedsFrame {
                needed_us: self.extent_us(),
                frame_us,
            });
        }
        Ok(())
    }

    /// Phase offset (radians) at `tau_us` after the start of a pulse.
    fn intra_pulse_phase(&self, tau_us: f64) -> f64 {
        let chip = |n: usize| ((tau_us / (self.pulse_width_us / n as f64)) as usize).min(n - 1);
        match self.class {
            WaveformClass::CoherentPulse => 0.0,
            WaveformClass::Barker => {
                let code = barker_code(self.code_length).expect("validated");
                if code[chip(code.len())] < 0 {
                    PI
                } else {
                    0.0
                }
            }
            WaveformClass::PolyphaseBarker => {
                let (alphabet, phases) = polyphase_barker_code(self.code_length).expect("validated");
                2.0 * PI * f64::from(phases[chip(phases.len())]) / alphabet as f64
            }
            WaveformClass::Frank => {
                let order = frank_order(self.code_length).expect("validated");
                frank_phase(order, chip(self.code_length))
            }
            WaveformClass::Lfm => {
                // instantaneous frequency sweeps -B/2 .. +B/2 across the pulse
                let bw_mhz = self.chirp_bw_hz * 1e-6;
                2.0 * PI * (-0.5 * bw_mhz * tau_us + 0.5 * bw_mhz / self.pulse_width_us * tau_us * tau_us)
            }
        }
    }
}

fn frank_order(code_length: usize) -> Option<usize> {
    let order = (code_length as f64).sqrt().round() as usize;
    (order >= 2 && order * order == code_length).then_some(order)
}

/// Noise-free pulse train; samples outside pulses are exactly zero.
pub fn generate_clean(spec: &WaveformSpec, frame_len: usize, t_res_us: f64) -> Result<IQFrame> {
    spec.validate(frame_len, t_res_us)?;
    let mut i = vec![0.0; frame_len];
    let mut q = vec![0.0; frame_len];
    for n in 0..frame_len {
        let t = n as f64 * t_res_us;
        if t < spec.t0_us {
            continue;
        }
        // pulses never overlap, so the latest pulse start at or before t is the only candidate
        let k = (((t - spec.t0_us) / spec.pri_us) as usize).min(spec.n_pulses - 1);
        let tau = t - spec.t0_us - k as f64 * spec.pri_us;
        if tau < spec.pulse_width_us {
            let phase = spec.phase0_rad + spec.intra_pulse_phase(tau);
            i[n] = phase.cos();
            q[n] = phase.sin();
        }
    }
    IQFrame::new(i, q)
}

/// Adds complex AWGN so that active-region signal power over noise power
/// equals `snr_db`. I and Q each receive half of the noise power.
pub fn add_awgn(frame: &IQFrame, snr_db: i16, seed: u64) -> Result<IQFrame> {
    let (sum, active) = frame
        .power()
        .filter(|&p| p > 0.0)
        .fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
    if active == 0 {
        return Err(Error::UndefinedSnr);
    }
    let signal_power = sum / active as f64;
    let noise_power = signal_power / 10f64.powf(f64::from(snr_db) / 10.0);
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = rng::rng_for(seed, &[stream::NOISE]);
    let mut out = frame.clone();
    let (i, q) = out.channels_mut();
    for (a, b) in i.iter_mut().zip(q.iter_mut()) {
        let ni: f64 = rng.sample(StandardNormal);
        let nq: f64 = rng.sample(StandardNormal);
        *a += sigma * ni;
        *b += sigma * nq;
    }
    Ok(out)
}

/// Parameter ranges for corpus generation. Intervals are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub frame_len: usize,
    pub t_res_us: f64,
    pub n_pulses: (usize, usize),
    pub pulse_width_us: (f64, f64),
    pub pri_us: (f64, f64),
    pub barker_lengths: Vec<usize>,
    pub polyphase_barker_lengths: Vec<usize>,
    pub frank_orders: Vec<usize>,
    pub lfm_bandwidth_hz: (f64, f64),
    pub name: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            t_res_us: 0.3,
            n_pulses: (2, 6),
            pulse_width_us: (10.0, 16.0),
            pri_us: (17.0, 23.0),
            barker_lengths: vec![2, 3, 4, 5, 7, 11, 13],
            polyphase_barker_lengths: polyphase_barker_lengths(),
            frank_orders: vec![4, 6, 8],
            lfm_bandwidth_hz: (0.5e6, 1.5e6),
            name: "radchar-synth".into(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("generator: {m}")));
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.frame_len == 0 || !(self.t_res_us > 0.0) {
            return bad("frame_len and t_res_us must be positive");
        }
        if self.n_pulses.0 == 0 || self.n_pulses.0 > self.n_pulses.1 {
            return bad("n_pulses range must satisfy 1 <= lo <= hi");
        }
        if !ordered(self.pulse_width_us) || !(self.pulse_width_us.0 > 0.0) {
            return bad("pulse_width_us range invalid");
        }
        if !ordered(self.pri_us) || !ordered(self.lfm_bandwidth_hz) || !(self.lfm_bandwidth_hz.0 > 0.0) {
            return bad("pri_us / lfm_bandwidth_hz range invalid");
        }
        if self.n_pulses.1 > 1 && !(self.pri_us.0 > self.pulse_width_us.1) {
            return bad("minimum PRI must exceed maximum pulse width");
        }
        if self.barker_lengths.iter().any(|&n| barker_code(n).is_none()) || self.barker_lengths.is_empty() {
            return bad("barker_lengths must be nonempty binary Barker lengths");
        }
        if self.polyphase_barker_lengths.is_empty()
            || self.polyphase_barker_lengths.iter().any(|&n| polyphase_barker_code(n).is_none())
        {
            return bad("polyphase_barker_lengths must be nonempty tabulated lengths");
        }
        if self.frank_orders.is_empty() || self.frank_orders.iter().any(|&m| m < 2) {
            return bad("frank_orders must be nonempty, each >= 2");
        }
        let worst = (self.n_pulses.1 - 1) as f64 * self.pri_us.1 + self.pulse_width_us.1;
        let frame_us = self.frame_len as f64 * self.t_res_us;
        if worst > frame_us {
            return Err(Error::PulseTrainExceedsFrame {
                needed_us: worst,
                frame_us,
            });
        }
        Ok(())
    }

    fn meta(&self, snr_grid: &[i16]) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            n_cls: WaveformClass::ALL.len(),
            t_res_us: self.t_res_us,
            frame_len: self.frame_len,
            snr_grid: snr_grid.to_vec(),
            class_names: WaveformClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws one waveform of `class` with parameters uniform over the configured ranges.
pub fn sample_spec(class: WaveformClass, cfg: &GeneratorConfig, rng: &mut impl Rng) -> WaveformSpec {
    let n_pulses = rng.random_range(cfg.n_pulses.0..=cfg.n_pulses.1);
    let pulse_width_us = uniform(rng, cfg.pulse_width_us);
    let pri_us = uniform(rng, cfg.pri_us);
    let pick = |rng: &mut dyn rand::RngCore, xs: &[usize]| xs[rng.random_range(0..xs.len())];
    let (code_length, chirp_bw_hz) = match class {
        WaveformClass::CoherentPulse => (1, 0.0),
        WaveformClass::Barker => (pick(rng, &cfg.barker_lengths), 0.0),
        WaveformClass::PolyphaseBarker => (pick(rng, &cfg.polyphase_barker_lengths), 0.0),
        WaveformClass::Frank => {
            let m = pick(rng, &cfg.frank_orders);
            (m * m, 0.0)
        }
        WaveformClass::Lfm => (1, uniform(rng, cfg.lfm_bandwidth_hz)),
    };
    let mut spec = WaveformSpec {
        class,
        n_pulses,
        pulse_width_us,
        pri_us,
        t0_us: 0.0,
        code_length,
        chirp_bw_hz,
        phase0_rad: rng.random_range(0.0..2.0 * PI),
    };
    let slack = cfg.frame_len as f64 * cfg.t_res_us - spec.extent_us();
    spec.t0_us = uniform(rng, (0.0, slack.max(0.0)));
    spec
}

/// Balanced labeled corpus: `n_per_cell` frames for every (class, snr) cell,
/// ordered class-major then snr then draw. Frame k is generated from its own
/// sub-seed derived from (`seed`, k).
pub fn generate_corpus(
    n_per_cell: usize,
    snr_grid: &[i16],
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<SignalDataset> {
    if n_per_cell == 0 {
        return Err(Error::InvalidConfig("n_frames_per_cell must be at least 1".into()));
    }
    if snr_grid.is_empty() {
        return Err(Error::InvalidConfig("snr_grid must be nonempty".into()));
    }
    cfg.validate()?;
    let meta = cfg.meta(snr_grid);
    let mut frames = Vec::with_capacity(WaveformClass::ALL.len() * snr_grid.len() * n_per_cell);
    let mut labels = Vec::with_capacity(frames.capacity());
    for class in WaveformClass::ALL {
        for &snr_db in snr_grid {
            for _ in 0..n_per_cell {
                let index = frames.len() as u64;
                frames.push(generate_frame(class, snr_db, seed, index, cfg)?);
                labels.push(FrameLabel {
                    class_id: class.id(),
                    snr_db,
                });
            }
        }
    }
    SignalDataset::new(frames, labels, meta)
}

/// The `index`-th frame of a corpus seeded with `seed`.
pub fn generate_frame(
    class: WaveformClass,
    snr_db: i16,
    seed: u64,
    index: u64,
    cfg: &GeneratorConfig,
) -> Result<IQFrame> {
    let mut rng = rng::rng_for(seed, &[stream::FRAME, index]);
    let spec = sample_spec(class, cfg, &mut rng);
    let clean = generate_clean(&spec, cfg.frame_len, cfg.t_res_us)?;
    add_awgn(&clean, snr_db, rng::derive_seed(seed, &[stream::NOISE, index]))
}

/// -20..=20 dB in 1 dB steps.
pub fn default_snr_grid() -> Vec<i16> {
    (-20..=20).collect()
}
