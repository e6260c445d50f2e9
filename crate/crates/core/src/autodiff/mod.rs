//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass together with the
//! intermediates its reverse rule needs. [`Tape::backward`] consumes the
//! tape, so each recording supports exactly one reverse sweep. Parameter
//! gradients are accumulated additively into the owning [`ParamStore`].

pub mod kernels;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use kernels::{ConvGeometry, BN_EPS, BN_MOMENTUM};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named, uniquely keyed trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros_like(&value);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Batch statistics source for a normalization node.
pub enum NormMode<'a, T> {
    /// Normalize by the batch's own statistics, optionally folding them into
    /// running estimates.
    Train(Option<&'a mut RunningStats<T>>),
    /// Use running estimates as a fixed per-channel affine map.
    Infer(&'a RunningStats<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }

    pub fn cast<U: Real>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
        }
    }

    /// Per-channel `(scale, shift)` of the inference-mode map
    /// `γ·(x − μ)/√(σ² + ε) + β`.
    pub fn folded(&self, gamma: &[T], beta: &[T]) -> (Vec<T>, Vec<T>) {
        let eps = T::lit(BN_EPS);
        let mut scale = Vec::with_capacity(gamma.len());
        let mut shift = Vec::with_capacity(gamma.len());
        for c in 0..gamma.len() {
            let inv = T::one() / (self.var.data()[c] + eps).sqrt();
            scale.push(gamma[c] * inv);
            shift.push(beta[c] - gamma[c] * self.mean.data()[c] * inv);
        }
        (scale, shift)
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv {
        input: Var,
        weight: Var,
        geom: ConvGeometry,
    },
    Relu {
        input: Var,
    },
    /// Elementwise map whose reverse rule multiplies by a fixed tensor.
    Scaled {
        input: Var,
        multiplier: Tensor<T>,
    },
    Norm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AvgPool {
        input: Var,
    },
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Dot {
        input: Var,
        coeffs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of one forward pass.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn conv3d(&mut self, input: Var, weight: Var, geom: ConvGeometry) -> Result<Var> {
        let y = kernels::conv3d_forward(self.value(input), self.value(weight), &geom)?;
        Ok(self.push(y, Op::Conv { input, weight, geom }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = self.value(input).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu { input })
    }

    /// Forward value `value`, reverse rule `grad_in = multiplier ⊙ grad_out`.
    pub fn scaled(&mut self, input: Var, value: Tensor<T>, multiplier: Tensor<T>) -> Result<Var> {
        self.value(input).expect_same_shape(&value)?;
        value.expect_same_shape(&multiplier)?;
        Ok(self.push(value, Op::Scaled { input, multiplier }))
    }

    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: NormMode<'_, T>) -> Result<Var> {
        let x = self.value(input);
        let c = kernels::dims5(x, "batch-norm input")?[1];
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        if g.len() != c || b.len() != c {
            return Err(Error::Shape(format!(
                "input has {c} channels, norm parameters have {}/{}",
                g.len(),
                b.len()
            )));
        }
        match mode {
            NormMode::Train(running) => {
                let (mean, var) = kernels::channel_stats(x)?;
                let inv_std: Vec<T> = var.iter().map(|v| T::lit(1.0 / (v + BN_EPS).sqrt())).collect();
                let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
                let scale: Vec<T> = (0..c).map(|i| g[i] * inv_std[i]).collect();
                let shift: Vec<T> = (0..c).map(|i| b[i] - g[i] * inv_std[i] * mean_t[i]).collect();
                let y = kernels::channel_affine(x, &scale, &shift)?;
                if let Some(rs) = running {
                    if rs.channels() != c {
                        return Err(Error::Shape(format!(
                            "running stats for {} channels, input has {c}",
                            rs.channels()
                        )));
                    }
                    let s = x.shape();
                    let count = (s[0] * s[2] * s[3] * s[4]) as f64;
                    let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                    let mom = T::lit(BN_MOMENTUM);
                    for i in 0..c {
                        let rm = &mut rs.mean.data_mut()[i];
                        *rm = (T::one() - mom) * *rm + mom * T::lit(mean[i]);
                        let rv = &mut rs.var.data_mut()[i];
                        *rv = (T::one() - mom) * *rv + mom * T::lit(var[i] * unbias);
                    }
                }
                Ok(self.push(
                    y,
                    Op::Norm {
                        input,
                        gamma,
                        beta,
                        mean: mean_t,
                        inv_std,
                        batch_stats: true,
                    },
                ))
            }
            NormMode::Infer(rs) => {
                if rs.channels() != c {
                    return Err(Error::Shape(format!(
                        "running stats for {} channels, input has {c}",
                        rs.channels()
                    )));
                }
                let (scale, shift) = rs.folded(&g, &b);
                let y = kernels::channel_affine(x, &scale, &shift)?;
                let inv_std = rs
                    .var
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt())
                    .collect();
                Ok(self.push(
                    y,
                    Op::Norm {
                        input,
                        gamma,
                        beta,
                        mean: rs.mean.data().to_vec(),
                        inv_std,
                        batch_stats: false,
                    },
                ))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let y = kernels::global_avg_pool(self.value(input))?;
        Ok(self.push(y, Op::AvgPool { input }))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = kernels::affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Scalar `Σ coeffs ⊙ input`.
    pub fn dot(&mut self, input: Var, coeffs: Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        x.expect_same_shape(&coeffs)?;
        let s = x.data().iter().zip(coeffs.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { input, coeffs }))
    }

    /// Reverse sweep from a scalar output seeded with 1.
    pub fn backward(self, output: Var, params: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let seed_shape = self.nodes.get(output.0).ok_or(Error::EmptyTape)?.value.shape().to_vec();
        if seed_shape.iter().product::<usize>() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {seed_shape:?}"
            )));
        }
        self.backward_with_seed(output, Tensor::full(&seed_shape, T::one()), params)
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient.
    pub fn backward_with_seed(
        mut self,
        output: Var,
        seed: Tensor<T>,
        params: &mut ParamStore<T>,
    ) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::EmptyTape);
        }
        self.nodes[output.0].value.expect_same_shape(&seed)?;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut inputs = Vec::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Input => inputs.push((i, g)),
                Op::Param(id) => params.get_mut(*id).grad.add_assign(&g)?,
                Op::Conv { input, weight, geom } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let gx = kernels::conv3d_backward_input(&g, x.shape(), w, geom)?;
                    let gw = kernels::conv3d_backward_weight(&g, x, w.shape(), geom)?;
                    send(*input, gx)?;
                    send(*weight, gw)?;
                }
                Op::Relu { input } => {
                    let x = &self.nodes[input.0].value;
                    let gx = g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                    send(*input, gx)?;
                }
                Op::Scaled { input, multiplier } => {
                    send(*input, g.zip_map(multiplier, |a, b| a * b)?)?;
                }
                Op::Norm {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let x = &self.nodes[input.0].value;
                    let gam = self.nodes[gamma.0].value.data();
                    let s = x.shape();
                    let c = s[1];
                    let plane = s[2] * s[3] * s[4];
                    let m = T::lit((s[0] * plane) as f64);
                    // Σg and Σg·x̂ per channel
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gxh = vec![T::zero(); c];
                    for (k, (gp, xp)) in g.data().chunks(plane).zip(x.data().chunks(plane)).enumerate() {
                        let ch = k % c;
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        for (&gv, &xv) in gp.iter().zip(xp) {
                            sum_g[ch] += gv;
                            sum_gxh[ch] += gv * (xv - mu) * is;
                        }
                    }
                    let mut gx = Tensor::zeros(s);
                    for (k, ((op, gp), xp)) in gx
                        .data_mut()
                        .chunks_mut(plane)
                        .zip(g.data().chunks(plane))
                        .zip(x.data().chunks(plane))
                        .enumerate()
                    {
                        let ch = k % c;
                        let (mu, is) = (mean[ch], inv_std[ch]);
                        let scale = gam[ch] * is;
                        if *batch_stats {
                            let mg = sum_g[ch] / m;
                            let mgx = sum_gxh[ch] / m;
                            for ((o, &gv), &xv) in op.iter_mut().zip(gp).zip(xp) {
                                *o = scale * (gv - mg - (xv - mu) * is * mgx);
                            }
                        } else {
                            for (o, &gv) in op.iter_mut().zip(gp) {
                                *o = scale * gv;
                            }
                        }
                    }
                    send(*input, gx)?;
                    send(*gamma, Tensor::from_vec(vec![c], sum_gxh)?)?;
                    send(*beta, Tensor::from_vec(vec![c], sum_g)?)?;
                }
                Op::Add { a, b } => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::AvgPool { input } => {
                    let shape = self.nodes[input.0].value.shape();
                    send(*input, kernels::global_avg_pool_backward(&g, shape)?)?;
                }
                Op::Affine { x, w, b } => {
                    let (gx, gw, gb) = kernels::affine_backward(&g, &self.nodes[x.0].value, &self.nodes[w.0].value);
                    send(*x, gx)?;
                    send(*w, gw)?;
                    send(*b, gb)?;
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let k = probs.shape()[1];
                    let scale = g.data()[0] / T::lit(labels.len() as f64);
                    let mut gl = probs.clone();
                    for (row, &l) in gl.data_mut().chunks_mut(k).zip(labels) {
                        row[l] -= T::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    send(*logits, gl)?;
                }
                Op::Dot { input, coeffs } => {
                    let s = g.data()[0];
                    send(*input, coeffs.map(|c| c * s))?;
                }
            }
            // every consumer of node i has run, so its value is dead
            self.nodes[i].value = Tensor::scalar(T::zero());
        }
        Ok(Gradients { inputs })
    }
}

/// Gradients of the tape's non-parameter inputs.
pub struct Gradients<T> {
    inputs: Vec<(usize, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for an input variable, or `None` if it did not influence the
    /// output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.iter().find(|(i, _)| *i == v.0).map(|(_, t)| t)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let pos = self.inputs.iter().position(|(i, _)| *i == v.0)?;
        Some(self.inputs.swap_remove(pos).1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_gradient_is_coefficients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let c = Tensor::from_vec(vec![3], vec![4.0, 5.0, -6.0]).unwrap();
        let y = tape.dot(x, c.clone()).unwrap();
        let grads = tape.backward(y, &mut ParamStore::new()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &c);
    }

    #[test]
    fn unused_parameter_gets_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", Tensor::full(&[2], 1.0)).unwrap();
        let unused = store.add("unused", Tensor::full(&[2], 1.0)).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, used);
        let _q = tape.param(&store, unused);
        let y = tape.dot(p, Tensor::full(&[2], 3.0)).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(used).grad.data(), &[3.0, 3.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn reused_value_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::full(&[1], 2.0)).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.add(p, p).unwrap();
        let y = tape.dot(s, Tensor::full(&[1], 1.0)).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[2.0]);
        // a second sweep adds onto the existing gradient
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let y = tape.dot(p, Tensor::full(&[1], 1.0)).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[3.0]);
    }

    #[test]
    fn empty_tape_rejected() {
        let tape = Tape::<f32>::new();
        assert!(matches!(
            tape.backward(Var(0), &mut ParamStore::new()),
            Err(Error::EmptyTape)
        ));
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(store.add("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.dot(y, Tensor::full(&[3], 1.0)).unwrap();
        let g = tape.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }
}
