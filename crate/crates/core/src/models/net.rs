//! Forward graphs for the encoders, decoders and probe.

use std::collections::HashMap;

use crate::autograd::{ConvGeom, Graph, NodeId};
use crate::error::{Error, Result};
use crate::iqcore::IQFrame;
use crate::tensor::{Real, Tensor};

use super::arch::{ArchDescriptor, DilatedSpec, ResNetSpec, UpsampleMode, PROBE_BIAS, PROBE_WEIGHT};
use super::ParamStore;

/// Parameters placed on a graph, by name.
pub struct Bound {
    ids: HashMap<String, NodeId>,
    trainable: Vec<(String, NodeId)>,
}

impl Bound {
    /// Adds every tensor of `store` to `g`; names for which `trainable`
    /// returns false become constants and never receive gradients.
    pub fn new<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let mut bound = Self {
            ids: HashMap::new(),
            trainable: Vec::new(),
        };
        bound.add(g, store, trainable);
        bound
    }

    /// Binds nodes that are already on a graph; all count as trainable.
    pub fn from_nodes(nodes: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        let trainable: Vec<_> = nodes.into_iter().collect();
        Self {
            ids: trainable.iter().cloned().collect(),
            trainable,
        }
    }

    pub fn add<T: Real>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, trainable: impl Fn(&str) -> bool) {
        for (name, t) in store.iter() {
            let id = if trainable(name) {
                let id = g.param(t.clone());
                self.trainable.push((name.to_string(), id));
                id
            } else {
                g.constant(t.clone())
            };
            self.ids.insert(name.to_string(), id);
        }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Trainable parameters in binding order.
    pub fn trainable(&self) -> &[(String, NodeId)] {
        &self.trainable
    }
}

fn conv<T: Real>(g: &mut Graph<T>, p: &Bound, name: &str, x: NodeId, geom: ConvGeom) -> Result<NodeId> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    g.conv1d(x, w, Some(b), geom)
}

fn residual_block<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    r: &ResNetSpec,
    prefix: &str,
    x: NodeId,
    stride: usize,
    project: bool,
) -> Result<NodeId> {
    let h = conv(g, p, &format!("{prefix}.conv1"), x, ConvGeom::strided(r.kernel, stride))?;
    let h = g.relu(h);
    let h = conv(g, p, &format!("{prefix}.conv2"), h, ConvGeom::same(r.kernel))?;
    let shortcut = if project {
        conv(g, p, &format!("{prefix}.proj"), x, ConvGeom::strided(1, stride))?
    } else {
        x
    };
    let sum = g.add(h, shortcut)?;
    Ok(g.relu(sum))
}

fn check_input<T: Real>(g: &Graph<T>, x: NodeId, channels: usize) -> Result<()> {
    let (_, c, _) = g.value(x).dims3()?;
    if c != channels {
        return Err(Error::ShapeMismatch(format!("expected {channels} input channels, got {c}")));
    }
    Ok(())
}

fn resnet_encode<T: Real>(g: &mut Graph<T>, r: &ResNetSpec, p: &Bound, x: NodeId) -> Result<NodeId> {
    let h = conv(g, p, "enc.stem", x, ConvGeom::same(r.stem_kernel))?;
    let mut h = g.relu(h);
    for s in 0..r.stage_channels.len() {
        for b in 0..r.blocks_per_stage {
            h = residual_block(g, p, r, &format!("enc.s{s}.b{b}"), h, r.stage_stride(b), r.needs_projection(s, b))?;
        }
    }
    Ok(h)
}

fn resnet_decode<T: Real>(g: &mut Graph<T>, r: &ResNetSpec, p: &Bound, z: NodeId) -> Result<NodeId> {
    let mut h = z;
    for s in (0..r.stage_channels.len()).rev() {
        let name = format!("dec.s{s}.up");
        h = match r.upsample {
            UpsampleMode::NearestConv => {
                let up = g.upsample(h, 2)?;
                conv(g, p, &name, up, ConvGeom::same(r.kernel))?
            }
            UpsampleMode::Transposed => {
                let geom = ConvGeom {
                    stride: 2,
                    dilation: 1,
                    pad_left: 1,
                    pad_right: 1,
                };
                let (w, b) = (p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?);
                g.conv_transpose1d(h, w, Some(b), geom)?
            }
        };
        h = g.relu(h);
        for b in 1..r.blocks_per_stage {
            h = residual_block(g, p, r, &format!("dec.s{s}.b{b}"), h, 1, false)?;
        }
    }
    conv(g, p, "dec.head", h, ConvGeom::same(r.stem_kernel))
}

fn dilated_encode<T: Real>(g: &mut Graph<T>, d: &DilatedSpec, p: &Bound, x: NodeId) -> Result<NodeId> {
    let mut h = conv(g, p, "enc.in", x, ConvGeom::pointwise())?;
    for (b, &dilation) in d.dilations.iter().enumerate() {
        let geom = ConvGeom::causal(d.kernel, dilation);
        let f = conv(g, p, &format!("enc.b{b}.filter"), h, geom)?;
        let gate = conv(g, p, &format!("enc.b{b}.gate"), h, geom)?;
        let f = g.tanh(f);
        let gate = g.sigmoid(gate);
        let z = g.mul(f, gate)?;
        let res = conv(g, p, &format!("enc.b{b}.res"), z, ConvGeom::pointwise())?;
        h = g.add(h, res)?;
    }
    Ok(h)
}

fn dilated_decode<T: Real>(g: &mut Graph<T>, p: &Bound, z: NodeId) -> Result<NodeId> {
    let h = conv(g, p, "dec.hidden", z, ConvGeom::pointwise())?;
    let h = g.relu(h);
    conv(g, p, "dec.head", h, ConvGeom::pointwise())
}

/// Encoder graph: `[batch][2][L]` to `[batch][C_e][L / downsample]`.
pub fn encode_graph<T: Real>(g: &mut Graph<T>, arch: &ArchDescriptor, p: &Bound, x: NodeId) -> Result<NodeId> {
    check_input(g, x, 2)?;
    let (_, _, len) = g.value(x).dims3()?;
    arch.check_length(len, arch.encoder_downsample())?;
    match arch {
        ArchDescriptor::Resnet1d(r) => resnet_encode(g, r, p, x),
        ArchDescriptor::Dilated(d) => dilated_encode(g, d, p, x),
    }
}

/// Decoder graph: embedding back to `[batch][2][L]`.
pub fn decode_graph<T: Real>(g: &mut Graph<T>, arch: &ArchDescriptor, p: &Bound, z: NodeId) -> Result<NodeId> {
    check_input(g, z, arch.embed_channels())?;
    match arch {
        ArchDescriptor::Resnet1d(r) => resnet_decode(g, r, p, z),
        ArchDescriptor::Dilated(_) => dilated_decode(g, p, z),
    }
}

/// Probe graph: optional average pooling, flatten, affine.
pub fn probe_graph<T: Real>(g: &mut Graph<T>, arch: &ArchDescriptor, p: &Bound, z: NodeId) -> Result<NodeId> {
    check_input(g, z, arch.embed_channels())?;
    let pool = arch.probe_pooling();
    let pooled = if pool > 1 { g.avg_pool(z, pool)? } else { z };
    let flat = g.flatten(pooled)?;
    let (w, b) = (p.get(PROBE_WEIGHT)?, p.get(PROBE_BIAS)?);
    let (_, dim) = g.value(flat).dims2()?;
    let (w_dim, _) = g.value(w).dims2()?;
    if dim != w_dim {
        return Err(Error::ShapeMismatch(format!(
            "probe expects flatten_dim {w_dim}, embedding flattens to {dim}"
        )));
    }
    g.linear(flat, w, b)
}

fn run<T: Real>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl FnOnce(&mut Graph<T>, &Bound, NodeId) -> Result<NodeId>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, store, |_| false);
    let xn = g.constant(x.clone());
    let out = f(&mut g, &p, xn)?;
    Ok(g.value(out).clone())
}

pub fn encode<T: Real>(arch: &ArchDescriptor, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    run(store, x, |g, p, x| encode_graph(g, arch, p, x))
}

pub fn decode<T: Real>(arch: &ArchDescriptor, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    run(store, z, |g, p, z| decode_graph(g, arch, p, z))
}

/// Logits from an embedding; `store` must hold the probe tensors.
pub fn probe_forward<T: Real>(arch: &ArchDescriptor, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    run(store, z, |g, p, z| probe_graph(g, arch, p, z))
}

fn scalar_loss<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl FnOnce(&mut Graph<T>, NodeId, NodeId) -> Result<NodeId>,
) -> Result<T> {
    let mut g = Graph::new();
    let (an, bn) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = f(&mut g, an, bn)?;
    Ok(g.scalar(l))
}

/// Mean absolute difference over all samples and channels.
pub fn l1_loss<T: Real>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    scalar_loss(recon, target, |g, a, b| g.l1_loss(a, b, None))
}

/// Mean squared difference over all samples and channels.
pub fn l2_loss<T: Real>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    scalar_loss(recon, target, |g, a, b| g.l2_loss(a, b, None))
}

pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = g.cross_entropy(z, labels)?;
    Ok(g.scalar(l))
}

/// Packs frames into a `[batch][2][L]` tensor (I row then Q row per frame).
pub fn batch_tensor<T: Real>(frames: &[&IQFrame]) -> Result<Tensor<T>> {
    let len = frames.first().map_or(0, |f| f.len());
    if frames.iter().any(|f| f.len() != len) {
        return Err(Error::ShapeMismatch("frames in a batch must share a length".into()));
    }
    let mut data = Vec::with_capacity(frames.len() * 2 * len);
    for f in frames {
        data.extend(f.i().iter().chain(f.q()).map(|&v| T::from_f64_lossy(v)));
    }
    Tensor::from_vec(&[frames.len(), 2, len], data)
}
