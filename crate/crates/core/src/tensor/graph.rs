use serde::{Deserialize, Serialize};

use super::attention::{attention_backward, attention_forward};
use super::conv::{conv3d_backward, conv3d_forward, deconv2_backward, deconv2_forward, ConvGeom};
use super::deform::{deform_conv3d_backward, deform_conv3d_forward};
use super::norm::{instance_norm, instance_norm_backward, layer_norm, layer_norm_backward};
use super::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    /// tanh approximation
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(slope)
                }
            }
            Activation::Gelu => {
                let t = (T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x)).tanh();
                T::of(0.5) * x * (T::one() + t)
            }
        }
    }

    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Gelu => {
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
                let t = u.tanh();
                let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
                T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
            }
        }
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Deconv2 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    DeformConv {
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
    },
    InstanceNorm {
        x: Var,
        inv: Vec<T>,
    },
    LayerNorm {
        x: Var,
        inv: Vec<T>,
    },
    Act {
        x: Var,
        act: Activation,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so replaying the
/// vector backwards visits every node after all of its consumers.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    fn rg_opt(&self, v: Option<Var>) -> bool {
        v.is_some_and(|v| self.rg(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let value = conv3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x) || self.rg(w) || self.rg_opt(b);
        self.push(value, Op::Conv { x, w, b, geom }, rg)
    }

    pub fn deconv2(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = deconv2_forward(self.value(x), self.value(w), b.map(|b| self.value(b)));
        let rg = self.rg(x) || self.rg(w) || self.rg_opt(b);
        self.push(value, Op::Deconv2 { x, w, b }, rg)
    }

    pub fn deform_conv(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>) -> Var {
        let value = deform_conv3d_forward(
            self.value(x),
            self.value(offsets),
            self.value(w),
            b.map(|b| self.value(b)),
        );
        let rg = self.rg(x) || self.rg(offsets) || self.rg(w) || self.rg_opt(b);
        self.push(value, Op::DeformConv { x, offsets, w, b }, rg)
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (y, inv) = instance_norm(xv.data(), xv.channels(), T::of(eps));
        let value = Tensor::from_vec(xv.shape(), y).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::InstanceNorm { x, inv }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (y, inv) = layer_norm(xv.data(), xv.channels(), T::of(eps));
        let value = Tensor::from_vec(xv.shape(), y).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::LayerNorm { x, inv }, rg)
    }

    pub fn act(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|v| act.apply(v));
        let rg = self.rg(x);
        self.push(value, Op::Act { x, act }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(av.shape(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    /// Channel concatenation of two maps on the same grid.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.spatial(), bv.spatial(), "concat: grid mismatch");
        let mut shape = av.shape().to_vec();
        shape[0] += bv.channels();
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let value = Tensor::from_vec(&shape, data).expect("concat shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Concat { a, b }, rg)
    }

    /// Queries from `q`, keys from `k`, values from `v`; all `[D, Z, Y, X]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qv.shape(), kv.shape(), "attention: q/k shape mismatch");
        assert_eq!(kv.shape(), vv.shape(), "attention: k/v shape mismatch");
        let dim = qv.channels();
        let res = attention_forward(qv.data(), kv.data(), vv.data(), dim, heads);
        let value = Tensor::from_vec(qv.shape(), res.out).expect("attention shape");
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs: res.probs,
            },
            rg,
        )
    }

    /// Attention weights `[heads, N, N]` recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Back-propagates `seed` (the gradient of some scalar w.r.t. `root`).
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        self.backward_many(vec![(root, seed)])
    }

    /// Back-propagates several seeds at once (the gradient of a scalar that
    /// depends on every seeded node).
    pub fn backward_many(&self, seeds: Vec<(Var, Tensor<T>)>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (root, seed) in seeds {
            assert_eq!(seed.shape(), self.value(root).shape(), "seed shape");
            last = last.max(root.0);
            self.accumulate(&mut grads, root, seed);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Vec<T>) {
        if self.rg(v) {
            let t = Tensor::from_vec(self.value(v).shape(), g).expect("grad shape");
            self.accumulate(grads, v, t);
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv { x, w, b, geom } => {
                let r = conv3d_backward(self.value(x), self.value(w), g, geom, self.rg(x));
                if let Some(gx) = r.x {
                    self.accumulate(grads, x, gx);
                }
                self.accumulate(grads, w, r.w);
                if let Some(b) = b {
                    self.accumulate_vec(grads, b, r.b);
                }
            }
            &Op::Deconv2 { x, w, b } => {
                let r = deconv2_backward(self.value(x), self.value(w), g, self.rg(x));
                if let Some(gx) = r.x {
                    self.accumulate(grads, x, gx);
                }
                self.accumulate(grads, w, r.w);
                if let Some(b) = b {
                    self.accumulate_vec(grads, b, r.b);
                }
            }
            &Op::DeformConv { x, offsets, w, b } => {
                let r = deform_conv3d_backward(
                    self.value(x),
                    self.value(offsets),
                    self.value(w),
                    g,
                    self.rg(x),
                    self.rg(offsets),
                );
                if let Some(gx) = r.x {
                    self.accumulate(grads, x, gx);
                }
                if let Some(go) = r.offsets {
                    self.accumulate(grads, offsets, go);
                }
                self.accumulate(grads, w, r.w);
                if let Some(b) = b {
                    self.accumulate_vec(grads, b, r.b);
                }
            }
            Op::InstanceNorm { x, inv } => {
                let gx = instance_norm_backward(node.value.data(), inv, g.data());
                self.accumulate_vec(grads, *x, gx);
            }
            Op::LayerNorm { x, inv } => {
                let gx = layer_norm_backward(node.value.data(), inv, g.data());
                self.accumulate_vec(grads, *x, gx);
            }
            &Op::Act { x, act } => {
                let xv = self.value(x);
                let gx = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * act.derivative(v))
                    .collect();
                self.accumulate_vec(grads, x, gx);
            }
            &Op::Add { a, b } => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Concat { a, b } => {
                let na = self.value(a).len();
                self.accumulate_vec(grads, a, g.data()[..na].to_vec());
                self.accumulate_vec(grads, b, g.data()[na..].to_vec());
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let r = attention_backward(qv.data(), kv.data(), vv.data(), probs, g.data(), qv.channels(), *heads);
                self.accumulate_vec(grads, *q, r.q);
                self.accumulate_vec(grads, *k, r.k);
                self.accumulate_vec(grads, *v, r.v);
            }
        }
    }
}

/// Result of [`Graph::backward`]; gradients are retained for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize], a: f64, b: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * a + b).sin()).collect()).unwrap()
    }

    /// Scalar `Σ r ⊙ f(leaf)` and its gradient w.r.t. every entry of `leaf`,
    /// compared against central differences.
    fn check(build: impl Fn(&mut Graph<f64>, Var) -> Var, leaf: Tensor<f64>) {
        let mut g = Graph::new();
        let x = g.param(leaf.clone());
        let y = build(&mut g, x);
        let r = seq(g.value(y).shape(), 0.71, 0.3);
        let grads = g.backward(y, r.clone());
        let analytic = grads.get(x).unwrap().clone();
        let eval = |t: Tensor<f64>| {
            let mut g = Graph::new();
            let x = g.param(t);
            let y = build(&mut g, x);
            g.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..leaf.len() {
            let mut p = leaf.clone();
            p.data_mut()[i] += h;
            let mut m = leaf.clone();
            m.data_mut()[i] -= h;
            let fd = (eval(p) - eval(m)) / (2.0 * h);
            let an = analytic.data()[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err < 1e-5, "entry {i}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn conv_gradients() {
        let w = seq(&[2, 3, 3, 3, 3], 0.37, 0.1).map(|v| 0.3 * v);
        check(
            |g, x| {
                let w = g.param(w.clone());
                g.conv(x, w, None, ConvGeom::SAME3)
            },
            seq(&[3, 3, 4, 2], 0.13, 0.2),
        );
        let x = seq(&[3, 3, 4, 2], 0.13, 0.2);
        check(
            |g, w| {
                let x = g.input(x.clone());
                g.conv(x, w, None, ConvGeom::SAME3)
            },
            w,
        );
    }

    #[test]
    fn strided_and_transposed_conv_gradients() {
        let w = seq(&[2, 3, 2, 2, 2], 0.37, 0.1);
        check(
            |g, x| {
                let w = g.param(w.clone());
                g.conv(x, w, None, ConvGeom::DOWN2)
            },
            seq(&[3, 4, 2, 4], 0.13, 0.2),
        );
        let wt = seq(&[3, 2, 2, 2, 2], 0.29, 0.4);
        check(
            |g, x| {
                let w = g.param(wt.clone());
                g.deconv2(x, w, None)
            },
            seq(&[3, 2, 1, 2], 0.13, 0.2),
        );
        let x = seq(&[3, 2, 1, 2], 0.13, 0.2);
        check(
            |g, w| {
                let x = g.input(x.clone());
                g.deconv2(x, w, None)
            },
            wt,
        );
    }

    #[test]
    fn norm_and_activation_gradients() {
        let x = seq(&[3, 2, 2, 3], 0.53, 0.9);
        check(|g, x| g.instance_norm(x, 1e-5), x.clone());
        check(|g, x| g.layer_norm(x, 1e-5), x.clone());
        check(|g, x| g.act(x, Activation::Gelu), x.clone());
        check(|g, x| g.act(x, Activation::LeakyRelu { slope: 0.1 }), x.clone());
        check(
            |g, x| {
                let y = g.act(x, Activation::Gelu);
                let c = g.concat(x, y);
                let d = g.concat(y, x);
                g.add(c, d)
            },
            x,
        );
    }

    #[test]
    fn deform_conv_gradients() {
        let x = seq(&[2, 3, 3, 3], 0.31, 0.5);
        let w = seq(&[2, 2, 3, 3, 3], 0.77, 0.2).map(|v| 0.2 * v);
        // generic offsets keep sample points away from the grid kinks
        let off = seq(&[81, 3, 3, 3], 0.173, 0.05).map(|v| 0.8 * v + 0.013);
        {
            let (w, off) = (w.clone(), off.clone());
            check(
                move |g, x| {
                    let (o, w) = (g.input(off.clone()), g.param(w.clone()));
                    g.deform_conv(x, o, w, None)
                },
                x.clone(),
            );
        }
        {
            let (x, w) = (x.clone(), w.clone());
            check(
                move |g, o| {
                    let (x, w) = (g.input(x.clone()), g.param(w.clone()));
                    g.deform_conv(x, o, w, None)
                },
                off.clone(),
            );
        }
        check(
            move |g, w| {
                let (x, o) = (g.input(x.clone()), g.input(off.clone()));
                g.deform_conv(x, o, w, None)
            },
            w,
        );
    }

    #[test]
    fn attention_gradients() {
        let kv = seq(&[4, 2, 2, 2], 0.41, 0.7);
        let q = seq(&[4, 2, 2, 2], 0.23, 0.1);
        {
            let kv = kv.clone();
            check(
                move |g, q| {
                    let k = g.param(kv.clone());
                    let v = g.act(k, Activation::Gelu);
                    g.attention(q, k, v, 2)
                },
                q.clone(),
            );
        }
        check(
            move |g, k| {
                let q = g.param(q.clone());
                let v = g.act(k, Activation::Gelu);
                g.attention(q, k, v, 2)
            },
            kv,
        );
    }
}
