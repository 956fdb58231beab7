use super::model::{Gradients, NetworkParams};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const LR_START: f64 = 0.01;
pub const LR_END: f64 = 1e-5;
pub const CLIP_THRESHOLD: f64 = 1e-3;

/// Mean squared error over all elements and its gradient
/// `2 (pred - label) / count`.
pub fn mse_loss(pred: &Tensor4, label: &Tensor4) -> Result<(f64, Tensor4)> {
    masked_mse_loss(pred, label, &[])
}

/// As [`mse_loss`], but channels listed in `excluded` neither contribute to
/// the loss nor receive gradient. The mean runs over included elements.
pub fn masked_mse_loss(pred: &Tensor4, label: &Tensor4, excluded: &[usize]) -> Result<(f64, Tensor4)> {
    pred.same_shape(label)?;
    let [nb, ch, h, w] = pred.shape();
    if let Some(&c) = excluded.iter().find(|&&c| c >= ch) {
        return Err(Error::Dimension(format!("excluded channel {c} of {ch}")));
    }
    let kept = (0..ch).filter(|c| !excluded.contains(c)).count();
    let count = nb * kept * h * w;
    let mut grad = Tensor4::zeros(nb, ch, h, w);
    if count == 0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    for n in 0..nb {
        for c in (0..ch).filter(|c| !excluded.contains(c)) {
            let g = grad.plane_mut(n, c);
            for ((gv, &p), &l) in g.iter_mut().zip(pred.plane(n, c)).zip(label.plane(n, c)) {
                let d = p - l;
                sum += d * d;
                *gv = 2.0 * d / count as f64;
            }
        }
    }
    Ok((sum / count as f64, grad))
}

/// Element-wise clamp of every gradient to `[-threshold, threshold]`.
pub fn clip_gradients(grads: &mut Gradients, threshold: f64) -> Result<()> {
    if !(threshold > 0.0) {
        return Err(Error::Parameter(format!("clip threshold must be positive, got {threshold}")));
    }
    for a in grads.arrays_mut() {
        for g in a.iter_mut() {
            *g = g.clamp(-threshold, threshold);
        }
    }
    Ok(())
}

/// Geometric interpolation from `lr_start` at `iter = 0` to `lr_end` at
/// `iter = total`.
pub fn lr_schedule(iter: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let t = iter.min(total) as f64 / total as f64;
    lr_start * (lr_end / lr_start).powf(t)
}

/// `p <- p - lr * g`.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
    let ps = params.learnable_mut();
    let gs = grads.arrays();
    if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Dimension("gradients do not match parameters".into()));
    }
    for (p, g) in ps.into_iter().zip(gs) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Heavy-ball SGD; with `momentum = 0` it reduces to [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            momentum,
            velocity: None,
        })
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, lr);
        }
        let v = self.velocity.get_or_insert_with(|| Gradients::zeros_like(params));
        for (va, ga) in v.arrays_mut().into_iter().zip(grads.arrays()) {
            for (vv, &gv) in va.iter_mut().zip(ga) {
                *vv = self.momentum * *vv + gv;
            }
        }
        sgd_step(params, v, lr)
    }
}
