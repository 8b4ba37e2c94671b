//! Bias-corrected Adam with per-parameter step counters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub name: String,
    /// Updates applied to this parameter so far.
    pub step: u64,
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// Moment estimates, created lazily the first time a parameter is updated.
/// Parameters that receive no gradient (frozen) keep their step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub hyper: AdamHyper,
    slots: Vec<AdamSlot>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: Vec<(String, u64)>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            slots: Vec::new(),
        }
    }

    pub fn slot(&self, name: &str) -> Option<&AdamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slots(&self) -> &[AdamSlot] {
        &self.slots
    }

    fn slot_mut(&mut self, name: &str, shape: &[usize]) -> &mut AdamSlot {
        let idx = match self.slots.iter().position(|s| s.name == name) {
            Some(i) => i,
            None => {
                self.slots.push(AdamSlot {
                    name: name.to_string(),
                    step: 0,
                    m: Tensor::zeros(shape),
                    v: Tensor::zeros(shape),
                });
                self.slots.len() - 1
            }
        };
        &mut self.slots[idx]
    }

    /// One update of every parameter named in `grads`.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[(String, Tensor<f32>)], lr: f64) -> Result<()> {
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let slot = self.slot_mut(name, p.shape());
            slot.step += 1;
            let t = slot.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let step_size = (lr / bc1) as f32;
            let bc2_sqrt = bc2.sqrt() as f32;
            let (b1, b2, eps) = (beta1 as f32, beta2 as f32, eps as f32);
            let (c1, c2) = ((1.0 - beta1) as f32, (1.0 - beta2) as f32);
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + c1 * gk;
                v[k] = b2 * v[k] + c2 * gk * gk;
                let denom = v[k].sqrt() / bc2_sqrt + eps;
                *x -= step_size * m[k] / denom;
            }
        }
        Ok(())
    }

    /// Hyperparameters and step counters as JSON, moments as named arrays
    /// `adam.m.<param>` / `adam.v.<param>`.
    pub fn to_parts(&self) -> (serde_json::Value, ParamStore<f32>) {
        let meta = Meta {
            beta1: self.hyper.beta1,
            beta2: self.hyper.beta2,
            eps: self.hyper.eps,
            steps: self.slots.iter().map(|s| (s.name.clone(), s.step)).collect(),
        };
        let mut arrays = ParamStore::new();
        for s in &self.slots {
            arrays.insert(format!("adam.m.{}", s.name), s.m.clone());
            arrays.insert(format!("adam.v.{}", s.name), s.v.clone());
        }
        (serde_json::to_value(meta).expect("plain data"), arrays)
    }

    pub fn from_parts(meta: &serde_json::Value, arrays: &ParamStore<f32>) -> Result<Self> {
        let meta: Meta = serde_json::from_value(meta.clone())?;
        let slots = meta
            .steps
            .into_iter()
            .map(|(name, step)| {
                Ok(AdamSlot {
                    m: arrays.get(&format!("adam.m.{name}"))?.clone(),
                    v: arrays.get(&format!("adam.v.{name}"))?.clone(),
                    name,
                    step,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            hyper: AdamHyper {
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
            },
            slots,
        })
    }
}

/// Applies one Adam update in place.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &[(String, Tensor<f32>)],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}
