//! Architecture descriptors and their parameter manifests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Nearest-neighbour x2 followed by a length-preserving convolution.
    #[default]
    NearestConv,
    /// Transposed convolution, kernel 4, stride 2, padding 1.
    Transposed,
}

/// Residual encoder with one stride-2 stage per entry of `stage_channels`,
/// and a mirrored decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetSpec {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub kernel: usize,
    #[serde(default)]
    pub upsample: UpsampleMode,
}

/// Stack of gated residual blocks with causal dilated convolutions and no
/// downsampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilatedSpec {
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub decoder_hidden: usize,
    /// Average-pooling window applied before the probe's flatten.
    pub probe_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchDescriptor {
    Resnet1d(ResNetSpec),
    Dilated(DilatedSpec),
}

/// Shape and initialisation fan-in of one named parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` for biases, which start at zero.
    pub fan_in: Option<usize>,
}

impl ParamShape {
    fn conv(name: String, c_out: usize, c_in: usize, kernel: usize) -> [Self; 2] {
        [
            Self {
                name: format!("{name}.w"),
                shape: vec![c_out, c_in, kernel],
                fan_in: Some(c_in * kernel),
            },
            Self::bias(format!("{name}.b"), c_out),
        ]
    }

    fn conv_transpose(name: String, c_in: usize, c_out: usize, kernel: usize) -> [Self; 2] {
        [
            Self {
                name: format!("{name}.w"),
                shape: vec![c_in, c_out, kernel],
                fan_in: Some(c_out * kernel),
            },
            Self::bias(format!("{name}.b"), c_out),
        ]
    }

    fn bias(name: String, n: usize) -> Self {
        Self {
            name,
            shape: vec![n],
            fan_in: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub const PROBE_WEIGHT: &str = "probe.weight";
pub const PROBE_BIAS: &str = "probe.bias";

impl ResNetSpec {
    /// Channels entering stage `s` (the stem width for stage 0).
    pub(crate) fn stage_input(&self, s: usize) -> usize {
        if s == 0 {
            self.stem_channels
        } else {
            self.stage_channels[s - 1]
        }
    }

    /// Whether block `b` of stage `s` needs a 1x1 projection shortcut.
    pub(crate) fn needs_projection(&self, s: usize, b: usize) -> bool {
        b == 0 && (self.stage_input(s) != self.stage_channels[s] || self.stage_stride(b) != 1)
    }

    pub(crate) fn stage_stride(&self, b: usize) -> usize {
        if b == 0 {
            2
        } else {
            1
        }
    }

    fn residual_block(&self, out: &mut Vec<ParamShape>, prefix: &str, c_in: usize, c_out: usize, project: bool) {
        out.extend(ParamShape::conv(format!("{prefix}.conv1"), c_out, c_in, self.kernel));
        out.extend(ParamShape::conv(format!("{prefix}.conv2"), c_out, c_out, self.kernel));
        if project {
            out.extend(ParamShape::conv(format!("{prefix}.proj"), c_out, c_in, 1));
        }
    }
}

impl ArchDescriptor {
    /// Desk-scale residual autoencoder: stem 2->32 (kernel 7), stages
    /// 32/64/128 with two kernel-3 blocks each.
    pub fn resnet_desk() -> Self {
        Self::Resnet1d(ResNetSpec {
            stem_channels: 32,
            stem_kernel: 7,
            stage_channels: vec![32, 64, 128],
            blocks_per_stage: 2,
            kernel: 3,
            upsample: UpsampleMode::NearestConv,
        })
    }

    /// Desk-scale dilated autoencoder: 32 channels, dilations 1..128.
    pub fn dilated_desk() -> Self {
        Self::Dilated(DilatedSpec {
            channels: 32,
            kernel: 2,
            dilations: (0..8).map(|p| 1 << p).collect(),
            decoder_hidden: 32,
            probe_pool: 8,
        })
    }

    /// Smallest residual configuration with every layer type, used for
    /// gradient checks.
    pub fn resnet_tiny() -> Self {
        Self::Resnet1d(ResNetSpec {
            stem_channels: 3,
            stem_kernel: 3,
            stage_channels: vec![3, 4],
            blocks_per_stage: 2,
            kernel: 3,
            upsample: UpsampleMode::NearestConv,
        })
    }

    pub fn dilated_tiny() -> Self {
        Self::Dilated(DilatedSpec {
            channels: 3,
            kernel: 2,
            dilations: vec![1, 2],
            decoder_hidden: 3,
            probe_pool: 4,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Resnet1d(_) => "resnet1d",
            Self::Dilated(_) => "dilated",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArchitecture(m.to_string()));
        match self {
            Self::Resnet1d(r) => {
                if r.stem_channels == 0 || r.stage_channels.iter().any(|&c| c == 0) {
                    return bad("channel widths must be positive");
                }
                if r.stage_channels.is_empty() {
                    return bad("at least one stage is required");
                }
                if r.blocks_per_stage == 0 {
                    return bad("blocks_per_stage must be at least 1");
                }
                if r.kernel % 2 == 0 || r.stem_kernel % 2 == 0 {
                    return bad("kernels must be odd so convolutions preserve length");
                }
                if r.stage_channels.len() > 16 {
                    return bad("too many stages");
                }
            }
            Self::Dilated(d) => {
                if d.channels == 0 || d.decoder_hidden == 0 {
                    return bad("channel widths must be positive");
                }
                if d.kernel < 2 {
                    return bad("dilated kernel must be at least 2");
                }
                if d.dilations.is_empty() || d.dilations.iter().any(|&v| v == 0) {
                    return bad("dilations must be positive and non-empty");
                }
                if d.probe_pool == 0 {
                    return bad("probe_pool must be at least 1");
                }
            }
        }
        Ok(())
    }

    /// Factor by which the encoder shortens the sequence.
    pub fn encoder_downsample(&self) -> usize {
        match self {
            Self::Resnet1d(r) => 1 << r.stage_channels.len(),
            Self::Dilated(_) => 1,
        }
    }

    fn probe_pool(&self) -> usize {
        match self {
            Self::Resnet1d(_) => 1,
            Self::Dilated(d) => d.probe_pool,
        }
    }

    /// Frame lengths must be multiples of this for the full
    /// encoder + probe path.
    pub fn required_divisor(&self) -> usize {
        self.encoder_downsample() * self.probe_pool()
    }

    pub fn embed_channels(&self) -> usize {
        match self {
            Self::Resnet1d(r) => *r.stage_channels.last().expect("validated"),
            Self::Dilated(d) => d.channels,
        }
    }

    /// Probe input width for frames of length `len`.
    pub fn flatten_dim(&self, len: usize) -> Result<usize> {
        self.check_length(len, self.required_divisor())?;
        Ok(self.embed_channels() * len / self.required_divisor())
    }

    pub(crate) fn check_length(&self, len: usize, divisor: usize) -> Result<()> {
        if len == 0 || len % divisor != 0 {
            return Err(Error::IndivisibleLength { len, divisor });
        }
        Ok(())
    }

    /// Post-pool averaging window of the probe.
    pub(crate) fn probe_pooling(&self) -> usize {
        self.probe_pool()
    }

    /// Encoder parameters (`enc.*`) followed by decoder parameters (`dec.*`),
    /// in canonical order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        match self {
            Self::Resnet1d(r) => {
                out.extend(ParamShape::conv("enc.stem".into(), r.stem_channels, 2, r.stem_kernel));
                for (s, &c_out) in r.stage_channels.iter().enumerate() {
                    for b in 0..r.blocks_per_stage {
                        let c_in = if b == 0 { r.stage_input(s) } else { c_out };
                        r.residual_block(&mut out, &format!("enc.s{s}.b{b}"), c_in, c_out, r.needs_projection(s, b));
                    }
                }
                for s in (0..r.stage_channels.len()).rev() {
                    let (c_in, c_out) = (r.stage_channels[s], r.stage_input(s));
                    let name = format!("dec.s{s}.up");
                    match r.upsample {
                        UpsampleMode::NearestConv => out.extend(ParamShape::conv(name, c_out, c_in, r.kernel)),
                        UpsampleMode::Transposed => out.extend(ParamShape::conv_transpose(name, c_in, c_out, 4)),
                    }
                    for b in 1..r.blocks_per_stage {
                        r.residual_block(&mut out, &format!("dec.s{s}.b{b}"), c_out, c_out, false);
                    }
                }
                out.extend(ParamShape::conv("dec.head".into(), 2, r.stem_channels, r.stem_kernel));
            }
            Self::Dilated(d) => {
                let c = d.channels;
                out.extend(ParamShape::conv("enc.in".into(), c, 2, 1));
                for b in 0..d.dilations.len() {
                    out.extend(ParamShape::conv(format!("enc.b{b}.filter"), c, c, d.kernel));
                    out.extend(ParamShape::conv(format!("enc.b{b}.gate"), c, c, d.kernel));
                    out.extend(ParamShape::conv(format!("enc.b{b}.res"), c, c, 1));
                }
                out.extend(ParamShape::conv("dec.hidden".into(), d.decoder_hidden, c, 1));
                out.extend(ParamShape::conv("dec.head".into(), 2, d.decoder_hidden, 1));
            }
        }
        out
    }

    pub fn probe_shapes(&self, len: usize, n_cls: usize) -> Result<[ParamShape; 2]> {
        let dim = self.flatten_dim(len)?;
        Ok([
            ParamShape {
                name: PROBE_WEIGHT.into(),
                shape: vec![dim, n_cls],
                fan_in: Some(dim),
            },
            ParamShape::bias(PROBE_BIAS.into(), n_cls),
        ])
    }

    /// Autoencoder parameter count (encoder + decoder).
    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(ParamShape::numel).sum()
    }
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.")
}

pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with("dec.")
}
