//! Convolutional autoencoders, the linear probe, and their parameters.
//!
//! A model is an [`ArchDescriptor`] plus a [`ParamStore`] of named tensors.
//! Encoder tensors are named `enc.*`, decoder tensors `dec.*`, and the probe
//! uses `probe.weight` (`[flatten_dim][n_cls]`) and `probe.bias`.

mod arch;
mod checkpoint;
mod net;

pub use arch::{
    is_decoder_param, is_encoder_param, ArchDescriptor, DilatedSpec, ParamShape, ResNetSpec, UpsampleMode,
    PROBE_BIAS, PROBE_WEIGHT,
};
pub use checkpoint::{
    checkpoint_id, read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind, Provenance, CHECKPOINT_MAGIC,
};
pub(crate) use checkpoint::hex_digest;
pub use net::{
    batch_tensor, cross_entropy, decode, decode_graph, encode, encode_graph, l1_loss, l2_loss, probe_forward,
    probe_graph, Bound,
};

use rand::distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::{Real, Tensor};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Inserts or replaces `name`, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Entries whose name satisfies `keep`, in order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|(n, _)| keep(n)).cloned().collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Checks that every manifest entry is present with the right shape.
    pub fn check_manifest(&self, shapes: &[ParamShape]) -> Result<()> {
        for p in shapes {
            let t = self.get(&p.name)?;
            if t.shape() != p.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{} has shape {:?}, descriptor needs {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        Ok(())
    }
}

fn draw(shapes: &[ParamShape], rng: &mut impl rand::Rng) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for p in shapes {
        let n = p.numel();
        let data = match p.fan_in {
            None => vec![0.0; n],
            Some(fan_in) => {
                let bound = (1.0 / fan_in as f64).sqrt() as f32;
                let dist = Uniform::new(-bound, bound).map_err(|e| Error::InvalidArchitecture(e.to_string()))?;
                dist.sample_iter(&mut *rng).take(n).collect()
            }
        };
        store.insert(p.name.clone(), Tensor::from_vec(&p.shape, data)?);
    }
    Ok(store)
}

/// Fresh autoencoder parameters: weights uniform in `±1/sqrt(fan_in)`,
/// biases zero, deterministic per seed.
pub fn init_params(arch: &ArchDescriptor, seed: u64) -> Result<ParamStore<f32>> {
    arch.validate()?;
    draw(&arch.param_shapes(), &mut rng_for(seed, &[stream::PARAMS]))
}

/// Fresh probe for frames of length `len` and `n_cls` classes.
pub fn init_probe(arch: &ArchDescriptor, len: usize, n_cls: usize, seed: u64) -> Result<ParamStore<f32>> {
    arch.validate()?;
    if n_cls == 0 {
        return Err(Error::InvalidArchitecture("probe needs at least one class".into()));
    }
    draw(&arch.probe_shapes(len, n_cls)?, &mut rng_for(seed, &[stream::PROBE]))
}

/// Number of classes a probe in `store` predicts.
pub fn probe_classes<T: Real>(store: &ParamStore<T>) -> Result<usize> {
    Ok(store.get(PROBE_BIAS)?.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bounds_and_zero_biases() {
        let arch = ArchDescriptor::resnet_desk();
        let p = init_params(&arch, 3).unwrap();
        p.check_manifest(&arch.param_shapes()).unwrap();
        for shape in arch.param_shapes() {
            let t = p.get(&shape.name).unwrap();
            match shape.fan_in {
                None => assert!(t.data().iter().all(|&v| v == 0.0)),
                Some(f) => {
                    let b = 1.0 / (f as f32).sqrt();
                    assert!(t.data().iter().all(|&v| (-b..=b).contains(&v)), "{}", shape.name);
                }
            }
        }
        // fan_in = 32 input channels x kernel 3
        let w = p.get("enc.s0.b0.conv1.w").unwrap();
        assert_eq!(w.shape(), &[32, 32, 3]);
        let b = 1.0 / 96f32.sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = ArchDescriptor::dilated_desk();
        assert_eq!(init_params(&arch, 9).unwrap(), init_params(&arch, 9).unwrap());
        assert_ne!(init_params(&arch, 9).unwrap(), init_params(&arch, 10).unwrap());
        let probe = init_probe(&arch, 512, 5, 1).unwrap();
        assert_eq!(probe.get(PROBE_WEIGHT).unwrap().shape(), &[2048, 5]);
        assert_eq!(probe_classes(&probe).unwrap(), 5);
    }

    #[test]
    fn store_lookup_and_manifest_errors() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2]));
        s.insert("b", Tensor::zeros(&[3]));
        s.insert("a", Tensor::zeros(&[4]));
        assert_eq!(s.iter().map(|(n, _)| n).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(s.get("a").unwrap().shape(), &[4]);
        assert!(matches!(s.get("c"), Err(Error::MissingParameter(_))));
        let manifest = [ParamShape {
            name: "a".into(),
            shape: vec![2],
            fan_in: None,
        }];
        assert!(s.check_manifest(&manifest).is_err());
    }
}
