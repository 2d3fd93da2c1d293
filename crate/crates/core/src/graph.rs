//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! op is pushed, and [`Graph::backward`] walks the tape in reverse. Nodes that
//! do not depend on a gradient-carrying leaf are skipped during the backward
//! pass, so frozen parameters bound with [`Graph::constant`] cost nothing.

use crate::kernels::{self, AttnGeom, ConvGeom};
use crate::tensor::{inverse_perm, permute_data, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// x `[n, c, ...]` plus bias `[c]` broadcast over every other axis.
    AddChannel(Var, Var),
    /// x `[.., in]` times w `[in, out]` plus optional b `[out]`.
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Sigmoid(Var),
    Silu(Var),
    Gelu(Var),
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Upsample2x(Var),
    AvgPool { x: Var, factor: usize },
    Attention { q: Var, k: Var, v: Var, geom: AttnGeom, probs: Vec<f64> },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; absent for nodes that carried no gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).lincomb(1.0, self.value(b), 1.0).expect("add: shape mismatch");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).lincomb(1.0, self.value(b), -1.0).expect("sub: shape mismatch");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y).expect("mul: shape mismatch");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let c = xv.dim(1);
        assert_eq!(self.value(bias).len(), c, "add_channel: bias width");
        let inner: usize = xv.shape()[2..].iter().product();
        let bv = self.value(bias).data();
        let mut out = xv.clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let b = bv[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(out, Op::AddChannel(x, bias), rg)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (fan_in, fan_out) = (wv.dim(0), wv.dim(1));
        assert_eq!(*xv.shape().last().unwrap(), fan_in, "linear: input width");
        let m = xv.len() / fan_in;
        let mut data = kernels::matmul(xv.data(), wv.data(), m, fan_in, fan_out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), fan_out, "linear: bias width");
            for row in data.chunks_mut(fan_out) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(shape, data).unwrap(), Op::Linear { x, w, b }, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4().expect("conv2d input");
        let (o, ci, k, k2) = self.value(w).dims4().expect("conv2d weight");
        assert_eq!(ci, c, "conv2d: channel mismatch");
        assert_eq!(k, k2, "conv2d: square kernels only");
        let geom = ConvGeom {
            batch: n,
            in_ch: c,
            in_h: h,
            in_w: wd,
            out_ch: o,
            kernel: k,
            stride,
            pad,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![n, o, geom.out_h(), geom.out_w()], data).unwrap();
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(value, Op::Conv2d { x, w, b, geom }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::silu);
        let rg = self.rg(x);
        self.push(value, Op::Silu(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let value = self.value(x).permute(perm);
        let rg = self.rg(x);
        self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape).expect("reshape: element count");
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&values, axis).expect("concat: shape mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self.value(x).narrow(axis, start, len).expect("narrow: bounds");
        let rg = self.rg(x);
        self.push(value, Op::Narrow { x, axis, start }, rg)
    }

    /// Nearest-neighbour 2x upsampling of `[n, c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("upsample input");
        let src = self.value(x).data();
        let mut data = vec![0.0; n * c * 4 * h * w];
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    data[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![n, c, 2 * h, 2 * w], data).unwrap(),
            Op::Upsample2x(x),
            rg,
        )
    }

    /// Non-overlapping `factor x factor` average pooling of `[n, c, h, w]`.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Var {
        if factor == 1 {
            return x;
        }
        let (n, c, h, w) = self.value(x).dims4().expect("avg_pool input");
        assert!(h % factor == 0 && w % factor == 0, "avg_pool: indivisible extent");
        let (oh, ow) = (h / factor, w / factor);
        let src = self.value(x).data();
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    data[(p * oh + y / factor) * ow + xx / factor] += src[(p * h + y) * w + xx] * norm;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![n, c, oh, ow], data).unwrap(),
            Op::AvgPool { x, factor },
            rg,
        )
    }

    /// Multi-head scaled dot-product attention; see [`AttnGeom`] for shapes.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        assert!(qs.len() == 3 && ks.len() == 3 && vs.len() == 3, "attention: rank-3 inputs");
        let geom = AttnGeom {
            batch: qs[0],
            kv_batch: ks[0],
            lq: qs[1],
            lk: ks[1],
            dim: qs[2],
            vdim: vs[2],
            heads,
        };
        assert_eq!(ks[2], qs[2], "attention: key width");
        assert_eq!(vs[0], ks[0], "attention: value batch");
        assert_eq!(vs[1], ks[1], "attention: value length");
        assert!(ks[0] == qs[0] || ks[0] == 1, "attention: kv batch");
        assert!(geom.dim % heads == 0 && geom.vdim % heads == 0, "attention: heads");
        let (out, probs) = kernels::attention_forward(
            &geom,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let value = Tensor::new(vec![geom.batch, geom.lq, geom.vdim], out).unwrap();
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                geom,
                probs,
            },
            rg,
        )
    }

    /// Attention probabilities cached by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean squared difference, as a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        av.ensure_same_shape(bv).expect("mse: shape mismatch");
        let n = av.len() as f64;
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(s), Op::Mse(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse pass from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if self.rg(to) {
            accumulate(&mut grads[to.0], g);
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y).unwrap();
                    self.send(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y).unwrap();
                    self.send(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.send(grads, *a, g.scale(*s)),
            Op::AddChannel(x, bias) => {
                self.send(grads, *x, g.clone());
                if self.rg(*bias) {
                    let c = g.dim(1);
                    let inner: usize = g.shape()[2..].iter().product();
                    let mut gb = vec![0.0; c];
                    for (j, chunk) in g.data().chunks(inner).enumerate() {
                        gb[j % c] += chunk.iter().sum::<f64>();
                    }
                    let shape = self.shape(*bias).to_vec();
                    self.send(grads, *bias, Tensor::new(shape, gb).unwrap());
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (fan_in, fan_out) = (wv.dim(0), wv.dim(1));
                let m = xv.len() / fan_in;
                if self.rg(*x) {
                    let gx = kernels::matmul_bt(g.data(), wv.data(), m, fan_out, fan_in);
                    self.send(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
                }
                if self.rg(*w) {
                    let gw = kernels::matmul_at(xv.data(), g.data(), m, fan_in, fan_out);
                    self.send(grads, *w, Tensor::new(wv.shape().to_vec(), gw).unwrap());
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = vec![0.0; fan_out];
                        for row in g.data().chunks(fan_out) {
                            gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                        }
                        let shape = self.shape(*b).to_vec();
                        self.send(grads, *b, Tensor::new(shape, gb).unwrap());
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let want_dx = self.rg(*x);
                let want_dw = self.rg(*w);
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    want_dx,
                    want_dw,
                );
                if want_dx {
                    self.send(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx).unwrap());
                }
                if want_dw {
                    self.send(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw).unwrap());
                }
                if let Some(b) = b {
                    let shape = self.shape(*b).to_vec();
                    self.send(grads, *b, Tensor::new(shape, db).unwrap());
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = g.zip_map(y, |gv, s| gv * s * (1.0 - s)).unwrap();
                self.send(grads, *x, gx);
            }
            Op::Silu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv * kernels::silu_grad(xv)).unwrap();
                self.send(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| gv * kernels::gelu_grad(xv)).unwrap();
                self.send(grads, *x, gx);
            }
            Op::Permute { x, perm } => {
                let inv = inverse_perm(perm);
                let data = permute_data(g.data(), g.shape(), &inv);
                self.send(grads, *x, Tensor::new(self.shape(*x).to_vec(), data).unwrap());
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x)).unwrap();
                self.send(grads, *x, gx);
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.rg(p) {
                        self.send(grads, p, g.narrow(*axis, start, len).unwrap());
                    }
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.rg(*x) {
                    let xs = self.shape(*x);
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[*axis + 1..].iter().product();
                    let len = g.shape()[*axis];
                    let mut gx = vec![0.0; xs.iter().product()];
                    for o in 0..outer {
                        let dst = o * xs[*axis] * inner + start * inner;
                        let src = o * len * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    self.send(grads, *x, Tensor::new(xs.to_vec(), gx).unwrap());
                }
            }
            Op::Upsample2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let mut gx = vec![0.0; n * c * h * w];
                let gd = g.data();
                for p in 0..n * c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.send(grads, *x, Tensor::new(vec![n, c, h, w], gx).unwrap());
            }
            Op::AvgPool { x, factor } => {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let (oh, ow) = (h / factor, w / factor);
                let norm = 1.0 / (factor * factor) as f64;
                let gd = g.data();
                let mut gx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(p * h + y) * w + xx] = gd[(p * oh + y / factor) * ow + xx / factor] * norm;
                        }
                    }
                }
                self.send(grads, *x, Tensor::new(vec![n, c, h, w], gx).unwrap());
            }
            Op::Attention {
                q,
                k,
                v,
                geom,
                probs,
            } => {
                let (dq, dk, dv) = kernels::attention_backward(
                    geom,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g.data(),
                );
                self.send(grads, *q, Tensor::new(self.shape(*q).to_vec(), dq).unwrap());
                self.send(grads, *k, Tensor::new(self.shape(*k).to_vec(), dk).unwrap());
                self.send(grads, *v, Tensor::new(self.shape(*v).to_vec(), dv).unwrap());
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let s = 2.0 * g.data()[0] / av.len() as f64;
                if self.rg(*a) {
                    self.send(grads, *a, av.zip_map(bv, |x, y| s * (x - y)).unwrap());
                }
                if self.rg(*b) {
                    self.send(grads, *b, av.zip_map(bv, |x, y| -s * (x - y)).unwrap());
                }
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.shape(*x), g.data()[0]);
                self.send(grads, *x, gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of `build` w.r.t. every entry of `inputs`.
    fn check<F>(inputs: Vec<Tensor>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.param(t)).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);
        let h = 1e-6;
        for (idx, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
            for j in 0..input.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut t = t.clone();
                            if i == idx {
                                t.data_mut()[j] += delta;
                            }
                            g.param(t)
                        })
                        .collect();
                    let l = build(&mut g, &vars);
                    g.value(l).data()[0]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[j];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + fd.abs().max(a.abs())),
                    "input {idx} entry {j}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, &mut rng)
    }

    #[test]
    fn conv_and_activation_gradients() {
        check(
            vec![rand(&[2, 3, 6, 6], 1), rand(&[4, 3, 3, 3], 2), rand(&[4], 3)],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1);
                let y = g.silu(y);
                let y = g.upsample2x(y);
                let s = g.sigmoid(y);
                let z = g.gelu(s);
                let p = g.avg_pool(z, 2);
                let t = g.constant(Tensor::full(g.shape(p), 0.3));
                g.mse(p, t)
            },
        );
    }

    #[test]
    fn attention_gradients_with_shared_kv() {
        check(
            vec![rand(&[3, 4, 4], 4), rand(&[1, 5, 4], 5), rand(&[1, 5, 6], 6)],
            |g, v| {
                let o = g.attention(v[0], v[1], v[2], 2);
                let t = g.constant(rand(&[3, 4, 6], 7));
                g.mse(o, t)
            },
        );
    }

    #[test]
    fn linear_permute_concat_narrow_gradients() {
        check(
            vec![rand(&[2, 3, 4], 8), rand(&[4, 5], 9), rand(&[5], 10), rand(&[2, 3, 2], 11)],
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]));
                let y = g.permute(y, &[1, 0, 2]);
                let y = g.reshape(y, &[3, 2, 5]);
                let y = g.narrow(y, 2, 1, 2);
                let w = g.permute(v[3], &[1, 0, 2]);
                let c = g.concat(&[y, w], 2);
                let m = g.mul(c, c);
                let bias = g.narrow(v[2], 0, 0, 3);
                let m4 = g.reshape(m, &[3, 2, 4, 1]);
                let m4 = g.permute(m4, &[1, 0, 2, 3]);
                let m4 = g.add_channel(m4, bias);
                let s = g.scale(m4, 0.5);
                g.sum(s)
            },
        );
    }
}
