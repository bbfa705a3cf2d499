//! Tape-based reverse-mode automatic differentiation.
//!
//! Every backward rule is itself expressed with graph operations, so a
//! gradient computed with `create_graph = true` is an ordinary node that can be
//! differentiated again. The gradient penalty relies on this: it differentiates
//! the norm of an input gradient with respect to critic parameters.
//!
//! Nodes are appended in evaluation order, which makes the node index a valid
//! topological order for the reverse sweep.

use std::rc::Rc;

use crate::tensor::{self, ConvGeom, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaskMul(Var, Rc<Tensor>),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Tanh(Var),
    Reshape(Var),
    Conv(Var, Var, ConvGeom),
    ConvT(Var, Var, ConvGeom),
    ConvW(Var, Var, ConvGeom),
    ChannelBroadcast(Var),
    ChannelSum(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    Upsample2(Var),
    SumPool2(Var),
    Resize(Var),
    ResizeAdjoint(Var),
    SliceChannels(Var, usize),
    PadChannels(Var, usize),
    SpatialBroadcast(Var),
    SpatialSum(Var),
    SumRest(Var),
    BroadcastRest(Var),
    SumAll(Var),
    BroadcastAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that never records operations; every node is a constant.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// Elementwise product with a tensor treated as constant.
    pub fn mask_mul(&mut self, a: Var, mask: Rc<Tensor>) -> Var {
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::MaskMul(a, mask), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    /// `1/x`, with `1/0` defined as 0.
    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(v, Op::Recip(a), &[a])
    }

    /// Square root whose derivative at 0 is taken to be 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Powf(a, p), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mask_mul(a, Rc::new(mask))
    }

    /// `max(x, lo)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let mask = self.value(a).map(|x| if x > lo { 1.0 } else { 0.0 });
        let floor = mask.map(|m| (1.0 - m) * lo);
        let kept = self.mask_mul(a, Rc::new(mask));
        let floor = self.constant(floor);
        self.add(kept, floor)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape);
        self.push(v, Op::Reshape(a), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [O,C,k,k]");
        assert_eq!(ws[1], self.shape(x)[1], "conv input channels");
        let geom = ConvGeom::new(self.shape(x), ws[0], ws[2], stride, pad)
            .expect("convolution geometry");
        self.conv_with(x, w, geom)
    }

    fn conv_with(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let v = tensor::conv2d(self.value(x), self.value(w), &geom);
        self.push(v, Op::Conv(x, w, geom), &[x, w])
    }

    fn conv_t(&mut self, gy: Var, w: Var, geom: ConvGeom) -> Var {
        let v = tensor::conv2d_transpose(self.value(gy), self.value(w), &geom);
        self.push(v, Op::ConvT(gy, w, geom), &[gy, w])
    }

    fn conv_w(&mut self, x: Var, gy: Var, geom: ConvGeom) -> Var {
        let v = tensor::conv2d_weight_grad(self.value(x), self.value(gy), &geom);
        self.push(v, Op::ConvW(x, gy, geom), &[x, gy])
    }

    /// Broadcasts a `[C]` vector over axis 1 of `shape`.
    pub fn channel_broadcast(&mut self, v: Var, shape: &[usize]) -> Var {
        let c = shape[1];
        assert_eq!(self.shape(v), &[c]);
        let inner: usize = shape[2..].iter().product();
        let src = self.value(v).data();
        let mut out = Vec::with_capacity(shape.iter().product());
        for _ in 0..shape[0] {
            for &x in src {
                out.extend(std::iter::repeat_n(x, inner));
            }
        }
        let t = Tensor::new(shape.to_vec(), out);
        self.push(t, Op::ChannelBroadcast(v), &[v])
    }

    /// Sums every axis except axis 1, giving `[C]`.
    pub fn channel_sum(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let c = s[1];
        let inner: usize = s[2..].iter().product();
        let mut out = vec![0.0; c];
        for (i, chunk) in self.value(x).data().chunks(inner).enumerate() {
            out[i % c] += chunk.iter().sum::<f64>();
        }
        self.push(Tensor::new(vec![c], out), Op::ChannelSum(x), &[x])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let b = self.channel_broadcast(bias, &shape);
        self.add(x, b)
    }

    /// `[N,K] · [K,M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul {sa:?} {sb:?}");
        let mut out = vec![0.0; sa[0] * sb[1]];
        tensor::gemm(
            sa[0],
            sa[1],
            sb[1],
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        self.push(Tensor::new(vec![sa[0], sb[1]], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 2);
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new(vec![c, r], out), Op::Transpose(a), &[a])
    }

    fn gather(&mut self, x: Var, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let src = self.value(x).data();
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape.to_vec(), out);
        self.push(t, Op::Gather(x, idx), &[x])
    }

    fn scatter_add(&mut self, x: Var, idx: Rc<Vec<usize>>, shape: &[usize]) -> Var {
        let mut out = Tensor::zeros(shape);
        {
            let dst = out.data_mut();
            for (&i, &v) in idx.iter().zip(self.value(x).data()) {
                dst[i] += v;
            }
        }
        self.push(out, Op::ScatterAdd(x, idx), &[x])
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (pooled, idx) = tensor::max_pool2(self.value(x));
        let shape = pooled.shape().to_vec();
        self.gather(x, Rc::new(idx), &shape)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = tensor::upsample2(self.value(x));
        self.push(v, Op::Upsample2(x), &[x])
    }

    fn sum_pool2(&mut self, x: Var) -> Var {
        let v = tensor::sum_pool2(self.value(x));
        self.push(v, Op::SumPool2(x), &[x])
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = tensor::resize_bilinear(self.value(x), h, w);
        self.push(v, Op::Resize(x), &[x])
    }

    fn resize_adjoint(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = tensor::resize_bilinear_adjoint(self.value(x), h, w);
        self.push(v, Op::ResizeAdjoint(x), &[x])
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(start + len <= s[1]);
        let inner: usize = s[2..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * len * inner);
        for n in 0..s[0] {
            let base = (n * s[1] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[1] = len;
        self.push(Tensor::new(shape, out), Op::SliceChannels(x, start), &[x])
    }

    fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Var {
        let s = self.shape(x).to_vec();
        let inner: usize = s[2..].iter().product();
        let mut shape = s.clone();
        shape[1] = total;
        let mut out = Tensor::zeros(&shape);
        {
            let src = self.nodes[x.0].value.data();
            let dst = out.data_mut();
            for n in 0..s[0] {
                let d = (n * total + start) * inner;
                let o = n * s[1] * inner;
                dst[d..d + s[1] * inner].copy_from_slice(&src[o..o + s[1] * inner]);
            }
        }
        self.push(out, Op::PadChannels(x, start), &[x])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut start = 0;
        let mut acc: Option<Var> = None;
        for &p in parts {
            let c = self.shape(p)[1];
            let padded = self.pad_channels(p, start, total);
            start += c;
            acc = Some(match acc {
                Some(a) => self.add(a, padded),
                None => padded,
            });
        }
        acc.expect("concat of zero tensors")
    }

    /// `[N,C]` → `[N,C,h,w]` by replication.
    pub fn spatial_broadcast(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2);
        let mut out = Vec::with_capacity(s[0] * s[1] * h * w);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat_n(v, h * w));
        }
        let t = Tensor::new(vec![s[0], s[1], h, w], out);
        self.push(t, Op::SpatialBroadcast(x), &[x])
    }

    fn spatial_sum(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let inner = s[2] * s[3];
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|c| c.iter().sum())
            .collect();
        self.push(Tensor::new(vec![s[0], s[1]], out), Op::SpatialSum(x), &[x])
    }

    /// Sums all axes but the first: `[N,...]` → `[N]`.
    pub fn sum_rest(&mut self, x: Var) -> Var {
        let n = self.shape(x)[0];
        let inner = self.value(x).len() / n.max(1);
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().sum())
            .collect();
        self.push(Tensor::new(vec![n], out), Op::SumRest(x), &[x])
    }

    /// `[N]` → `shape` by replicating each entry over the trailing axes.
    pub fn broadcast_rest(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(self.shape(x), &shape[..1]);
        let inner: usize = shape[1..].iter().product();
        let mut out = Vec::with_capacity(shape[0] * inner);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat_n(v, inner));
        }
        let t = Tensor::new(shape.to_vec(), out);
        self.push(t, Op::BroadcastRest(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    fn broadcast_all(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = Tensor::full(shape, self.value(x).item());
        self.push(v, Op::BroadcastAll(x), &[x])
    }

    /// Row-wise log-softmax of `[N,M]` logits.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let m = s[1];
        let shift: Vec<f64> = self
            .value(x)
            .data()
            .chunks(m)
            .flat_map(|row| {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                std::iter::repeat_n(mx, m)
            })
            .collect();
        let shift = self.constant(Tensor::new(s.clone(), shift));
        let z = self.sub(x, shift);
        let e = self.exp(z);
        let se = self.sum_rest(e);
        let lse = self.log(se);
        let lse = self.broadcast_rest(lse, &s);
        self.sub(z, lse)
    }

    /// Gradients of `output` (summed over its elements) with respect to
    /// `wrt`. `None` means `output` does not depend on that node.
    ///
    /// With `create_graph`, the returned gradients are differentiable nodes.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Vec<Option<Var>> {
        let saved = self.recording;
        self.recording = create_graph && saved;
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            let seed = Tensor::ones(self.shape(output));
            grads[output.0] = Some(self.constant(seed));
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, pg) in self.backward(Var(i), op, g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                grads[parent.0] = Some(match grads[parent.0] {
                    Some(acc) => self.add(acc, pg),
                    None => pg,
                });
            }
        }
        self.recording = saved;
        wrt.iter()
            .map(|v| grads.get(v.0).copied().flatten())
            .collect()
    }

    /// Convenience wrapper returning gradient values, zero-filled where the
    /// output does not depend on a node.
    pub fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Vec<Tensor> {
        let grads = self.grad(output, wrt, false);
        grads
            .into_iter()
            .zip(wrt)
            .map(|(g, &w)| match g {
                Some(g) => self.value(g).clone(),
                None => Tensor::zeros(self.shape(w)),
            })
            .collect()
    }

    fn backward(&mut self, out: Var, op: Op, g: Var) -> Vec<(Var, Var)> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.neg(g);
                vec![(a, g), (b, nb)]
            }
            Op::Mul(a, b) => {
                let ga = if self.requires_grad(a) { Some(self.mul(g, b)) } else { None };
                let gb = if self.requires_grad(b) { Some(self.mul(g, a)) } else { None };
                let mut v = Vec::new();
                if let Some(ga) = ga {
                    v.push((a, ga));
                }
                if let Some(gb) = gb {
                    v.push((b, gb));
                }
                v
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::MaskMul(a, m) => vec![(a, self.mask_mul(g, m))],
            Op::Exp(a) => vec![(a, self.mul(g, out))],
            Op::Log(a) => {
                let r = self.recip(a);
                vec![(a, self.mul(g, r))]
            }
            Op::Recip(a) => {
                let sq = self.mul(out, out);
                let t = self.mul(g, sq);
                vec![(a, self.neg(t))]
            }
            Op::Sqrt(a) => {
                let r = self.recip(out);
                let t = self.mul(g, r);
                vec![(a, self.scale(t, 0.5))]
            }
            Op::Powf(a, p) => {
                let d = self.powf(a, p - 1.0);
                let d = self.scale(d, p);
                vec![(a, self.mul(g, d))]
            }
            Op::Tanh(a) => {
                let sq = self.mul(out, out);
                let d = self.scale(sq, -1.0);
                let d = self.add_scalar(d, 1.0);
                vec![(a, self.mul(g, d))]
            }
            Op::Reshape(a) => {
                let s = self.shape(a).to_vec();
                vec![(a, self.reshape(g, &s))]
            }
            Op::Conv(x, w, geom) => {
                let mut v = Vec::new();
                if self.requires_grad(x) {
                    v.push((x, self.conv_t(g, w, geom)));
                }
                if self.requires_grad(w) {
                    v.push((w, self.conv_w(x, g, geom)));
                }
                v
            }
            Op::ConvT(gy, w, geom) => {
                let mut v = Vec::new();
                if self.requires_grad(gy) {
                    v.push((gy, self.conv_with(g, w, geom)));
                }
                if self.requires_grad(w) {
                    v.push((w, self.conv_w(g, gy, geom)));
                }
                v
            }
            Op::ConvW(x, gy, geom) => {
                let mut v = Vec::new();
                if self.requires_grad(x) {
                    v.push((x, self.conv_t(gy, g, geom)));
                }
                if self.requires_grad(gy) {
                    v.push((gy, self.conv_with(x, g, geom)));
                }
                v
            }
            Op::ChannelBroadcast(v) => vec![(v, self.channel_sum(g))],
            Op::ChannelSum(x) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.channel_broadcast(g, &s))]
            }
            Op::MatMul(a, b) => {
                let mut v = Vec::new();
                if self.requires_grad(a) {
                    let bt = self.transpose(b);
                    v.push((a, self.matmul(g, bt)));
                }
                if self.requires_grad(b) {
                    let at = self.transpose(a);
                    v.push((b, self.matmul(at, g)));
                }
                v
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::Gather(x, idx) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.scatter_add(g, idx, &s))]
            }
            Op::ScatterAdd(x, idx) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.gather(g, idx, &s))]
            }
            Op::Upsample2(x) => vec![(x, self.sum_pool2(g))],
            Op::SumPool2(x) => vec![(x, self.upsample2(g))],
            Op::Resize(x) => {
                let s = self.shape(x).to_vec();
                let r = s.len();
                vec![(x, self.resize_adjoint(g, s[r - 2], s[r - 1]))]
            }
            Op::ResizeAdjoint(x) => {
                let s = self.shape(x).to_vec();
                let r = s.len();
                vec![(x, self.resize_bilinear(g, s[r - 2], s[r - 1]))]
            }
            Op::SliceChannels(x, start) => {
                let total = self.shape(x)[1];
                vec![(x, self.pad_channels(g, start, total))]
            }
            Op::PadChannels(x, start) => {
                let len = self.shape(x)[1];
                vec![(x, self.slice_channels(g, start, len))]
            }
            Op::SpatialBroadcast(x) => vec![(x, self.spatial_sum(g))],
            Op::SpatialSum(x) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.spatial_broadcast(g, s[2], s[3]))]
            }
            Op::SumRest(x) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.broadcast_rest(g, &s))]
            }
            Op::BroadcastRest(x) => vec![(x, self.sum_rest(g))],
            Op::SumAll(x) => {
                let s = self.shape(x).to_vec();
                vec![(x, self.broadcast_all(g, &s))]
            }
            Op::BroadcastAll(x) => vec![(x, self.sum_all(g))],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(f).collect())
    }

    /// Central-difference check of d(build)/d(input) against the tape.
    fn check_grad(input: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.param(input.clone());
        let y = build(&mut g, x);
        let y = g.sum_all(y);
        let analytic = g.grad_values(y, &[x]).remove(0);
        let h = 1e-6;
        for i in 0..input.len() {
            let eval = |delta: f64| {
                let mut p = input.clone();
                p.data_mut()[i] += delta;
                let mut g = Graph::new();
                let x = g.param(p);
                let y = build(&mut g, x);
                g.value(y).sum()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                "element {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn elementwise_rules() {
        let x = t(&[2, 3], |i| 0.3 + i as f64 * 0.2);
        check_grad(x.clone(), |g, x| g.exp(x));
        check_grad(x.clone(), |g, x| g.log(x));
        check_grad(x.clone(), |g, x| g.recip(x));
        check_grad(x.clone(), |g, x| g.sqrt(x));
        check_grad(x.clone(), |g, x| g.powf(x, -0.5));
        check_grad(x.clone(), |g, x| g.tanh(x));
        check_grad(x.clone(), |g, x| {
            let s = g.square(x);
            g.mul(s, x)
        });
        check_grad(x, |g, x| g.log_softmax(x));
    }

    #[test]
    fn structural_rules() {
        let img = t(&[2, 3, 4, 4], |i| ((i * 7 % 11) as f64 - 5.0) * 0.1);
        check_grad(img.clone(), |g, x| {
            let w = g.constant(t(&[2, 3, 3, 3], |i| (i as f64 * 0.13).cos()));
            let y = g.conv2d(x, w, 2, 1);
            g.square(y)
        });
        check_grad(img.clone(), |g, x| {
            let p = g.max_pool2(x);
            let u = g.upsample2(p);
            g.square(u)
        });
        check_grad(img.clone(), |g, x| {
            let r = g.resize_bilinear(x, 7, 9);
            g.square(r)
        });
        check_grad(img.clone(), |g, x| {
            let a = g.slice_channels(x, 1, 2);
            let b = g.slice_channels(x, 0, 1);
            let c = g.concat_channels(&[a, b, a]);
            g.square(c)
        });
        check_grad(img, |g, x| {
            let s = g.channel_sum(x);
            let sh = g.shape(x).to_vec();
            let b = g.channel_broadcast(s, &sh);
            g.mul(b, x)
        });
        let m = t(&[3, 4], |i| (i as f64).sin());
        check_grad(m.clone(), |g, x| {
            let w = g.constant(t(&[4, 2], |i| i as f64 * 0.3 - 1.0));
            let y = g.matmul(x, w);
            g.square(y)
        });
        check_grad(m, |g, x| {
            let r = g.sum_rest(x);
            let sh = g.shape(x).to_vec();
            let b = g.broadcast_rest(r, &sh);
            let sp = g.spatial_broadcast(x, 2, 3);
            let s1 = g.sum_all(sp);
            let s1 = g.broadcast_all(s1, &sh);
            let p = g.mul(b, x);
            g.add(p, s1)
        });
    }

    #[test]
    fn second_order_through_conv() {
        // f(w) = || d/dx sum(conv(x, w)^2) ||^2; compare its w-gradient
        // against finite differences.
        let x0 = t(&[1, 2, 5, 5], |i| ((i * 3 % 7) as f64 - 3.0) * 0.2);
        let w0 = t(&[2, 2, 3, 3], |i| ((i * 5 % 9) as f64 - 4.0) * 0.1);
        let build = |w0: &Tensor| {
            let mut g = Graph::new();
            let w = g.param(w0.clone());
            let x = g.param(x0.clone());
            let y = g.conv2d(x, w, 1, 1);
            let y2 = g.square(y);
            let s = g.sum_all(y2);
            let gx = g.grad(s, &[x], true)[0].unwrap();
            let n = g.square(gx);
            let f = g.sum_all(n);
            (g, f, w)
        };
        let (mut g, f, w) = build(&w0);
        let analytic = g.grad_values(f, &[w]).remove(0);
        let h = 1e-5;
        for i in 0..w0.len() {
            let mut p = w0.clone();
            p.data_mut()[i] += h;
            let (g1, f1, _) = build(&p);
            p.data_mut()[i] -= 2.0 * h;
            let (g2, f2, _) = build(&p);
            let fd = (g1.value(f1).item() - g2.value(f2).item()) / (2.0 * h);
            assert!((fd - analytic.data()[i]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn unrelated_nodes_have_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(2.0));
        let b = g.param(Tensor::scalar(3.0));
        let y = g.square(a);
        let grads = g.grad(y, &[a, b], false);
        assert!(grads[1].is_none());
        assert_eq!(g.value(grads[0].unwrap()).item(), 4.0);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let a = g.param(Tensor::scalar(2.0));
        let y = g.square(a);
        assert!(!g.requires_grad(y));
        assert!(g.grad(y, &[a], false)[0].is_none());
    }
}
