//! Adaptive-moment optimizer, gradient clipping and the learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::autodiff::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { lr, beta1, beta2, eps, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

/// One bias-corrected update of every parameter that has a gradient.
/// Non-finite gradients abort before anything is modified.
pub fn optimizer_step<T: Scalar>(store: &mut ParamStore<T>, grads: &GradMap<T>, st: &mut AdamState<T>) -> Result<()> {
    for (name, g) in grads {
        let p = store.get(name)?;
        if p.shape() != g.shape() {
            return Err(shape_err!("gradient of `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient { name: name.clone() });
        }
    }
    st.step += 1;
    let t = st.step as i32;
    let (b1, b2) = (T::c(st.beta1), T::c(st.beta2));
    let (one_b1, one_b2) = (T::c(1.0 - st.beta1), T::c(1.0 - st.beta2));
    let bc1 = T::c(1.0 - st.beta1.powi(t));
    let bc2 = T::c(1.0 - st.beta2.powi(t));
    let (lr, eps) = (T::c(st.lr), T::c(st.eps));
    for (name, g) in grads {
        let p = store.get_mut(name)?;
        let m = st.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = st.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pi, mi), vi), &gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn global_norm<T: Scalar>(grads: &GradMap<T>) -> f64 {
    grads.values().map(|g| g.sum_sq().to_f64_lossy()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut GradMap<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = T::c(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Cosine decay from `lr` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(lr: f64, lr_min: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (PI * frac).cos())
}
