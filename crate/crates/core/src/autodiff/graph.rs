use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::kernels::{conv, dynconv, norm, shuffle};
use crate::mri::{self, CoilSensitivities, SamplingMask};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Adjoint rule: `(grad_out, inputs, output, needs_grad) -> grad per input`.
type Adjoint<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    adjoint: Option<Adjoint<T>>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, usize)>,
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a recorded value, if reachable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients; every parameter of the store is present, with
    /// zeros where the loss does not depend on it.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

fn one_grad<T>(g: Option<Tensor<T>>) -> Result<Vec<Option<Tensor<T>>>> {
    Ok(vec![g])
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<usize>, adjoint: Adjoint<T>) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let adjoint = if requires_grad { Some(adjoint) } else { None };
        self.nodes.push(Node { value, inputs, adjoint, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value the loss is not differentiated against.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), adjoint: None, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients flow to, readable through [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), adjoint: None, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records parameter `name` from `store`; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&(_, id)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(Var(id));
        }
        let v = self.leaf(store.get(name)?.clone());
        self.params.push((name.to_string(), v.0));
        Ok(v)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Box::new(|g, xs, _, need| {
                Ok(vec![
                    if need[0] { Some(g.sum_to_shape(xs[0].shape())?) } else { None },
                    if need[1] { Some(g.sum_to_shape(xs[1].shape())?) } else { None },
                ])
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Box::new(|g, xs, _, need| {
                Ok(vec![
                    if need[0] { Some(g.sum_to_shape(xs[0].shape())?) } else { None },
                    if need[1] { Some(g.sum_to_shape(xs[1].shape())?.scale(-T::one())) } else { None },
                ])
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Box::new(|g, xs, _, need| {
                Ok(vec![
                    if need[0] { Some(g.mul(xs[1])?.sum_to_shape(xs[0].shape())?) } else { None },
                    if need[1] { Some(g.mul(xs[0])?.sum_to_shape(xs[1].shape())?) } else { None },
                ])
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, vec![a.0], Box::new(move |g, _, _, _| one_grad(Some(g.scale(s)))))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.abs());
        self.push(
            out,
            vec![a.0],
            Box::new(|g, xs, _, _| {
                let sign = xs[0].map(|v| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() });
                one_grad(Some(g.mul(&sign)?))
            }),
        )
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, vec![a.0], Box::new(|g, xs, _, _| one_grad(Some(Tensor::full(xs[0].shape(), g.item())))))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::c(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    // ---- structural --------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, vec![a.0], Box::new(|g, xs, _, _| one_grad(Some(g.reshape(xs[0].shape())?)))))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.push(out, vec![a.0], Box::new(move |g, _, _, _| one_grad(Some(g.permute(&inverse)?)))))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).narrow(axis, start, end)?;
        Ok(self.push(
            out,
            vec![a.0],
            Box::new(move |g, xs, _, _| {
                let full = xs[0].shape();
                let mut parts = Vec::new();
                let mut lo_shape = full.to_vec();
                lo_shape[axis] = start;
                let mut hi_shape = full.to_vec();
                hi_shape[axis] = full[axis] - end;
                let lo = Tensor::zeros(&lo_shape);
                let hi = Tensor::zeros(&hi_shape);
                if start > 0 {
                    parts.push(&lo);
                }
                parts.push(g);
                if end < full[axis] {
                    parts.push(&hi);
                }
                one_grad(Some(Tensor::concat(&parts, axis)?))
            }),
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat(&vals, axis)?;
        Ok(self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Box::new(move |g, xs, _, need| {
                let mut at = 0;
                let mut grads = Vec::with_capacity(xs.len());
                for (x, &nd) in xs.iter().zip(need) {
                    let len = x.shape()[axis];
                    grads.push(if nd { Some(g.narrow(axis, at, at + len)?) } else { None });
                    at += len;
                }
                Ok(grads)
            }),
        ))
    }

    /// Splits `[N,2C,H,W]` into its two channel halves.
    pub fn split_channels(&mut self, x: Var) -> Result<(Var, Var)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || !shape[1].is_multiple_of(2) {
            return Err(shape_err!("split_channels needs [N,2C,H,W], got {shape:?}"));
        }
        let c = shape[1] / 2;
        Ok((self.narrow(x, 1, 0, c)?, self.narrow(x, 1, c, 2 * c)?))
    }

    pub fn space_to_depth(&mut self, x: Var) -> Result<Var> {
        let out = shuffle::space_to_depth(self.value(x))?;
        Ok(self.push(out, vec![x.0], Box::new(|g, _, _, _| one_grad(Some(shuffle::depth_to_space(g)?)))))
    }

    pub fn depth_to_space(&mut self, x: Var) -> Result<Var> {
        let out = shuffle::depth_to_space(self.value(x))?;
        Ok(self.push(out, vec![x.0], Box::new(|g, _, _, _| one_grad(Some(shuffle::space_to_depth(g)?)))))
    }

    // ---- network layers ----------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, groups: usize) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), bias.map(|b| self.value(b)), groups)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(bias.map(|b| b.0));
        Ok(self.push(
            out,
            inputs,
            Box::new(move |g, xs, _, need| {
                let need_b = need.get(2).copied().unwrap_or(false);
                let r = conv::conv2d_backward(xs[0], xs[1], g, groups, [need[0], need[1], need_b])?;
                let mut v = vec![r.input, r.weight];
                if xs.len() == 3 {
                    v.push(r.bias);
                }
                Ok(v)
            }),
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let out = norm::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Box::new(move |g, xs, _, _| {
                let (gx, gg, gb) = norm::layer_norm_backward(xs[0], xs[1], g, eps)?;
                Ok(vec![Some(gx), Some(gg), Some(gb)])
            }),
        ))
    }

    /// Spatial mean, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = norm::global_avg_pool(self.value(x))?;
        Ok(self.push(
            out,
            vec![x.0],
            Box::new(|g, xs, _, _| {
                let s = xs[0].shape();
                let inv = T::one() / T::c((s[2] * s[3]) as f64);
                let full = Tensor::<T>::ones(s).mul(g)?;
                one_grad(Some(full.scale(inv)))
            }),
        ))
    }

    /// Per-location grouped aggregation with dynamic `k x k` kernels.
    pub fn dynamic_aggregate(&mut self, x: Var, w: Var, groups: usize, k: usize) -> Result<Var> {
        let out = dynconv::aggregate(self.value(x), self.value(w), groups, k)?;
        Ok(self.push(
            out,
            vec![x.0, w.0],
            Box::new(move |g, xs, _, _| {
                let (gx, gw) = dynconv::aggregate_backward(xs[0], xs[1], g, groups, k)?;
                Ok(vec![Some(gx), Some(gw)])
            }),
        ))
    }

    pub fn tap_softmax(&mut self, w: Var, taps: usize) -> Result<Var> {
        let out = dynconv::tap_softmax(self.value(w), taps)?;
        Ok(self.push(out, vec![w.0], Box::new(move |g, _, s, _| one_grad(Some(dynconv::tap_softmax_backward(s, g, taps)?)))))
    }

    // ---- complex / MRI ------------------------------------------------

    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        let out = mri::fft2c(self.value(x))?;
        Ok(self.push(out, vec![x.0], Box::new(|g, _, _, _| one_grad(Some(mri::ifft2c(g)?)))))
    }

    pub fn ifft2c(&mut self, k: Var) -> Result<Var> {
        let out = mri::ifft2c(self.value(k))?;
        Ok(self.push(out, vec![k.0], Box::new(|g, _, _, _| one_grad(Some(mri::fft2c(g)?)))))
    }

    pub fn apply_mask(&mut self, k: Var, m: &SamplingMask) -> Result<Var> {
        let out = mri::apply_mask(self.value(k), m)?;
        let m = m.clone();
        Ok(self.push(out, vec![k.0], Box::new(move |g, _, _, _| one_grad(Some(mri::apply_mask(g, &m)?)))))
    }

    pub fn expand(&mut self, x: Var, s: &CoilSensitivities<T>) -> Result<Var> {
        let out = mri::expand(self.value(x), s)?;
        let s = s.clone();
        Ok(self.push(out, vec![x.0], Box::new(move |g, _, _, _| one_grad(Some(mri::reduce(g, &s)?)))))
    }

    pub fn reduce(&mut self, y: Var, s: &CoilSensitivities<T>) -> Result<Var> {
        let out = mri::reduce(self.value(y), s)?;
        let s = s.clone();
        Ok(self.push(out, vec![y.0], Box::new(move |g, _, _, _| one_grad(Some(mri::expand(g, &s)?)))))
    }

    /// Modulus of a complex tensor; the subgradient at zero is zero.
    pub fn complex_abs(&mut self, z: Var) -> Result<Var> {
        let out = mri::magnitude(self.value(z))?;
        Ok(self.push(
            out,
            vec![z.0],
            Box::new(|g, xs, out, _| {
                let mut d = Vec::with_capacity(xs[0].len());
                for ((p, &m), &gv) in xs[0].data().chunks_exact(2).zip(out.data()).zip(g.data()) {
                    if m > T::zero() {
                        d.push(gv * p[0] / m);
                        d.push(gv * p[1] / m);
                    } else {
                        d.push(T::zero());
                        d.push(T::zero());
                    }
                }
                one_grad(Some(Tensor::new(xs[0].shape(), d)?))
            }),
        ))
    }

    // ---- reverse pass -------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every recorded leaf.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(adjoint) = node.adjoint.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let need: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let contributions = adjoint(&g, &inputs, &node.value, &need)?;
            grads[i] = Some(g);
            for ((&j, contrib), &nd) in node.inputs.iter().zip(contributions).zip(&need) {
                let Some(c) = contrib else { continue };
                if !nd {
                    continue;
                }
                match grads[j].as_mut() {
                    Some(acc) => acc.add_assign(&c)?,
                    None => grads[j] = Some(c),
                }
            }
        }
        let mut params = BTreeMap::new();
        for (name, value) in store.iter() {
            let g = self
                .params
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|&(_, id)| grads[id].clone())
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            params.insert(name.clone(), g);
        }
        Ok(Gradients { by_node: grads, params })
    }
}
