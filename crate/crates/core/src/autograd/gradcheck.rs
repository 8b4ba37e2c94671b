//! Central finite-difference verification of [`Graph::backward`].

use crate::error::Result;
use crate::tensor::Tensor;

use super::{Graph, NodeId};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// (parameter index, element index) of the largest error.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub elements: usize,
}

/// Compares reverse-mode gradients of the scalar built by `loss` against
/// `(f(x + h) - f(x - h)) / 2h` for every element of every parameter.
///
/// `loss` receives the graph and one node per entry of `params`.
pub fn check_gradients(
    params: &[Tensor<f64>],
    step: f64,
    loss: impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
) -> Result<GradCheckReport> {
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let l = loss(&mut g, &ids)?;
        Ok(g.scalar(l))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let l = loss(&mut g, &ids)?;
    let grads = g.backward(l)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        elements: 0,
    };
    let mut probe = params.to_vec();
    for (p, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; params[p].len()]);
        for k in 0..params[p].len() {
            let x = params[p].data()[k];
            probe[p].data_mut()[k] = x + step;
            let up = eval(&probe)?;
            probe[p].data_mut()[k] = x - step;
            let down = eval(&probe)?;
            probe[p].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if err > report.max_rel_err || report.elements == 0 {
                report.max_rel_err = err;
                report.worst = (p, k);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.elements += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ConvGeom;

    fn rand_tensor(shape: &[usize], salt: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + salt) * 12.9898).sin() * 0.8).collect()).unwrap()
    }

    fn assert_ok(r: GradCheckReport) {
        assert!(r.max_rel_err < 1e-3, "{r:?}");
        assert!(r.elements > 0);
    }

    #[test]
    fn conv_and_activations() {
        let x = rand_tensor(&[2, 3, 9], 0.1);
        let w = rand_tensor(&[4, 3, 3], 0.2);
        let b = rand_tensor(&[4], 0.3);
        let target = rand_tensor(&[2, 4, 4], 0.4);
        for act in 0..3 {
            let r = check_gradients(&[x.clone(), w.clone(), b.clone()], 1e-5, |g, p| {
                let y = g.conv1d(p[0], p[1], Some(p[2]), ConvGeom { stride: 2, dilation: 2, pad_left: 2, pad_right: 1 })?;
                let y = match act {
                    0 => g.relu(y),
                    1 => g.tanh(y),
                    _ => g.sigmoid(y),
                };
                let t = g.constant(target.clone());
                g.l2_loss(y, t, None)
            })
            .unwrap();
            assert_ok(r);
        }
    }

    #[test]
    fn transposed_conv() {
        let geom = ConvGeom { stride: 2, dilation: 1, pad_left: 1, pad_right: 1 };
        let target = rand_tensor(&[2, 3, 10], 0.9);
        let r = check_gradients(&[rand_tensor(&[2, 2, 5], 0.5), rand_tensor(&[2, 3, 4], 0.6), rand_tensor(&[3], 0.7)], 1e-5, |g, p| {
            let y = g.conv_transpose1d(p[0], p[1], Some(p[2]), geom)?;
            let t = g.constant(target.clone());
            g.l1_loss(y, t, None)
        })
        .unwrap();
        assert_ok(r);
    }

    #[test]
    fn residual_pooling_flatten_affine_cross_entropy() {
        let r = check_gradients(
            &[rand_tensor(&[2, 2, 8], 1.0), rand_tensor(&[2, 2, 8], 2.0), rand_tensor(&[8, 3], 3.0), rand_tensor(&[3], 4.0)],
            1e-5,
            |g, p| {
                let s = g.add(p[0], p[1])?;
                let m = g.mul(s, p[0])?;
                let up = g.upsample(m, 2)?;
                let pooled = g.avg_pool(up, 4)?;
                let flat = g.flatten(pooled)?;
                let logits = g.linear(flat, p[2], p[3])?;
                g.cross_entropy(logits, &[2, 0])
            },
        )
        .unwrap();
        assert_ok(r);
    }

    #[test]
    fn weighted_losses() {
        let weight = Tensor::from_vec(&[1, 2, 3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let target = rand_tensor(&[1, 2, 3], 5.0);
        for squared in [false, true] {
            let r = check_gradients(&[rand_tensor(&[1, 2, 3], 6.0)], 1e-5, |g, p| {
                let t = g.constant(target.clone());
                let w = g.constant(weight.clone());
                if squared {
                    g.l2_loss(p[0], t, Some(w))
                } else {
                    g.l1_loss(p[0], t, Some(w))
                }
            })
            .unwrap();
            assert_ok(r);
        }
    }

    #[test]
    fn coarse_step_is_flagged() {
        // with h = 1 the difference quotient of tanh^2 is far off the derivative
        let r = check_gradients(&[rand_tensor(&[4], 0.0)], 1.0, |g, p| {
            let y = g.tanh(p[0]);
            let t = g.constant(Tensor::zeros(&[4]));
            g.l2_loss(y, t, None)
        })
        .unwrap();
        assert!(r.max_rel_err > 1e-3);
    }
}
