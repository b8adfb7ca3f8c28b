use std::cell::RefCell;
use std::sync::Arc;

use crate::kernels::{self, ConvGeom};
use crate::Tensor;

const LN_EPS: f64 = 1e-5;
const BCE_CLAMP: f64 = 1e-7;

/// How a loss is reduced over pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddN(Vec<usize>),
    Relu(usize),
    Sigmoid(usize),
    PadReplicate(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        dilation: usize,
    },
    Depthwise {
        x: usize,
        w: usize,
        dilation: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(usize),
    MulSpatial(usize, usize),
    AddSpatial(usize, usize),
    MulChannel(usize, usize),
    Concat(Vec<usize>),
    ResizeBilinear(usize),
    LayerNorm {
        x: usize,
        inv_std: f64,
    },
    SoftmaxRows(usize),
    LinComb {
        xs: Vec<usize>,
        coeffs: usize,
        row: usize,
    },
    BceWithLogits {
        logits: usize,
        target: Arc<Tensor>,
        reduction: Reduction,
    },
    Sum(usize),
    DotConst(usize, Arc<Tensor>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn take(&mut self, id: usize) -> Option<Tensor> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_arc(Arc::new(value), Op::Leaf, false)
    }

    pub fn constant_arc(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_arc(Arc::new(value), Op::Leaf, true)
    }

    pub fn leaf_arc(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(value, Op::Leaf, true)
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].needs_grad)
        };
        self.push_arc(Arc::new(value), op, needs)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse pass from a scalar output. Gradients are retained only for leaves.
    pub fn backward(&self, output: Var<'_>) -> Grads {
        assert!(std::ptr::eq(output.tape, self), "variable from another tape");
        let nodes = self.nodes.borrow();
        let n = output.id + 1;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[output.id].needs_grad {
            return Grads { grads };
        }
        grads[output.id] = Some(Tensor::ones(nodes[output.id].value.shape()));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
        }
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn needs(nodes: &[Node], id: usize) -> bool {
    nodes[id].needs_grad
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if needs(nodes, *a) {
                accumulate(grads, nodes, *a, g.zip_map(&nodes[*b].value, |x, y| x * y));
            }
            if needs(nodes, *b) {
                accumulate(grads, nodes, *b, g.zip_map(&nodes[*a].value, |x, y| x * y));
            }
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.map(|v| v * s)),
        Op::AddN(xs) => {
            for &x in xs {
                accumulate(grads, nodes, x, g.clone());
            }
        }
        Op::Relu(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_map(out, |gv, y| if y > 0.0 { gv } else { 0.0 }),
        ),
        Op::Sigmoid(a) => accumulate(grads, nodes, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
        Op::PadReplicate(a, pad) => {
            let dims = nodes[*a].value.dims3();
            accumulate(grads, nodes, *a, kernels::pad_replicate_backward(g, *pad, dims));
        }
        Op::Conv2d { x, w, b, dilation } => conv_backward(nodes, grads, g, *x, *w, *b, *dilation),
        Op::Depthwise { x, w, dilation } => {
            let (dx, dw) = kernels::depthwise_conv_backward(
                &nodes[*x].value,
                &nodes[*w].value,
                g,
                *dilation,
                needs(nodes, *x),
                needs(nodes, *w),
            );
            if let Some(dx) = dx {
                accumulate(grads, nodes, *x, dx);
            }
            if let Some(dw) = dw {
                accumulate(grads, nodes, *w, dw);
            }
        }
        Op::MaxPool { x, argmax } => {
            let mut dx = Tensor::zeros(nodes[*x].value.shape());
            let d = dx.data_mut();
            for (&i, gv) in argmax.iter().zip(g.data()) {
                d[i as usize] += gv;
            }
            accumulate(grads, nodes, *x, dx);
        }
        Op::GlobalAvgPool(x) => {
            let (c, h, w) = nodes[*x].value.dims3();
            let inv = 1.0 / (h * w) as f64;
            let dx = Tensor::from_fn(&[c, h, w], |i| g.data()[i / (h * w)] * inv);
            accumulate(grads, nodes, *x, dx);
        }
        Op::MulSpatial(x, m) => {
            let xv = &nodes[*x].value;
            let mv = &nodes[*m].value;
            let (c, h, w) = xv.dims3();
            let hw = h * w;
            if needs(nodes, *x) {
                let dx = Tensor::from_fn(&[c, h, w], |i| g.data()[i] * mv.data()[i % hw]);
                accumulate(grads, nodes, *x, dx);
            }
            if needs(nodes, *m) {
                let mut dm = vec![0.0; hw];
                for ch in 0..c {
                    for (i, d) in dm.iter_mut().enumerate() {
                        *d += g.data()[ch * hw + i] * xv.data()[ch * hw + i];
                    }
                }
                accumulate(grads, nodes, *m, Tensor::new(mv.shape(), dm));
            }
        }
        Op::AddSpatial(x, m) => {
            accumulate(grads, nodes, *x, g.clone());
            if needs(nodes, *m) {
                let mv = &nodes[*m].value;
                let (c, h, w) = g.dims3();
                let hw = h * w;
                let mut dm = vec![0.0; hw];
                for ch in 0..c {
                    for (i, d) in dm.iter_mut().enumerate() {
                        *d += g.data()[ch * hw + i];
                    }
                }
                accumulate(grads, nodes, *m, Tensor::new(mv.shape(), dm));
            }
        }
        Op::MulChannel(x, s) => {
            let xv = &nodes[*x].value;
            let sv = &nodes[*s].value;
            let (c, h, w) = xv.dims3();
            let hw = h * w;
            if needs(nodes, *x) {
                let dx = Tensor::from_fn(&[c, h, w], |i| g.data()[i] * sv.data()[i / hw]);
                accumulate(grads, nodes, *x, dx);
            }
            if needs(nodes, *s) {
                let ds: Vec<f64> = (0..c)
                    .map(|ch| {
                        g.data()[ch * hw..(ch + 1) * hw]
                            .iter()
                            .zip(&xv.data()[ch * hw..(ch + 1) * hw])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                accumulate(grads, nodes, *s, Tensor::new(sv.shape(), ds));
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let shape = nodes[p].value.shape().to_vec();
                let len = nodes[p].value.len();
                if needs(nodes, p) {
                    let slice = g.data()[offset..offset + len].to_vec();
                    accumulate(grads, nodes, p, Tensor::new(&shape, slice));
                }
                offset += len;
            }
        }
        Op::ResizeBilinear(x) => {
            let dims = nodes[*x].value.dims3();
            accumulate(grads, nodes, *x, kernels::resize_bilinear_backward(g, dims));
        }
        Op::LayerNorm { x, inv_std } => {
            let n = out.len() as f64;
            let mean_g = g.sum() / n;
            let mean_gy = g.dot(out) / n;
            let dx = g.zip_map(out, |gv, y| inv_std * (gv - mean_g - y * mean_gy));
            accumulate(grads, nodes, *x, dx);
        }
        Op::SoftmaxRows(x) => {
            let k = *out.shape().last().unwrap();
            let mut dx = vec![0.0; out.len()];
            for (r, chunk) in dx.chunks_mut(k).enumerate() {
                let y = &out.data()[r * k..(r + 1) * k];
                let gr = &g.data()[r * k..(r + 1) * k];
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..k {
                    chunk[i] = y[i] * (gr[i] - dot);
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(out.shape(), dx));
        }
        Op::LinComb { xs, coeffs, row } => {
            let cv = &nodes[*coeffs].value;
            let k = cv.shape()[1];
            let crow = &cv.data()[row * k..(row + 1) * k];
            for (&x, &c) in xs.iter().zip(crow) {
                if needs(nodes, x) {
                    accumulate(grads, nodes, x, g.map(|v| v * c));
                }
            }
            if needs(nodes, *coeffs) {
                let mut dc = Tensor::zeros(cv.shape());
                for (o, &x) in xs.iter().enumerate() {
                    dc.data_mut()[row * k + o] = g.dot(&nodes[x].value);
                }
                accumulate(grads, nodes, *coeffs, dc);
            }
        }
        Op::BceWithLogits {
            logits,
            target,
            reduction,
        } => {
            let z = &nodes[*logits].value;
            let scale = g.data()[0]
                * match reduction {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / z.len() as f64,
                };
            let dz = z.zip_map(target, |zv, t| (sigmoid(zv) - t) * scale);
            accumulate(grads, nodes, *logits, dz);
        }
        Op::Sum(x) => {
            let gv = g.data()[0];
            accumulate(grads, nodes, *x, Tensor::full(nodes[*x].value.shape(), gv));
        }
        Op::DotConst(x, w) => {
            let gv = g.data()[0];
            accumulate(grads, nodes, *x, w.map(|v| v * gv));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    nodes: &[Node],
    grads: &mut [Option<Tensor>],
    g: &Tensor,
    x: usize,
    w: usize,
    b: Option<usize>,
    dilation: usize,
) {
    let xv = &nodes[x].value;
    let wv = &nodes[w].value;
    let (cin, hp, wp) = xv.dims3();
    let cout = wv.shape()[0];
    let k = wv.shape()[2];
    let geom = ConvGeom::new(cin, hp, wp, k, dilation);
    let (rows, p) = (geom.rows(), geom.cols());
    let direct = k == 1;
    let cols_owned;
    let cols: &[f64] = if direct {
        xv.data()
    } else if needs(nodes, w) {
        cols_owned = kernels::im2col(xv.data(), &geom);
        &cols_owned
    } else {
        &[]
    };
    if needs(nodes, w) {
        let mut dw = vec![0.0; cout * rows];
        // dW = dY [cout, p] * cols^T [p, rows]
        kernels::gemm(cout, p, rows, g.data(), (p, 1), cols, (1, p), 0.0, &mut dw);
        accumulate(grads, nodes, w, Tensor::new(wv.shape(), dw));
    }
    if let Some(b) = b {
        if needs(nodes, b) {
            let db: Vec<f64> = (0..cout).map(|o| g.data()[o * p..(o + 1) * p].iter().sum()).collect();
            accumulate(grads, nodes, b, Tensor::new(&[cout], db));
        }
    }
    if needs(nodes, x) {
        // dcols = W^T [rows, cout] * dY [cout, p]
        let mut dcols = vec![0.0; rows * p];
        kernels::gemm(rows, cout, p, wv.data(), (1, rows), g.data(), (p, 1), 0.0, &mut dcols);
        let dx = if direct {
            Tensor::new(&[cin, hp, wp], dcols)
        } else {
            let mut dx = vec![0.0; cin * hp * wp];
            kernels::col2im(&dcols, &geom, &mut dx);
            Tensor::new(&[cin, hp, wp], dx)
        };
        accumulate(grads, nodes, x, dx);
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.push(v, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.push(v, Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.tape.push(v, Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let v = self.value().map(|a| a * s);
        self.tape.push(v, Op::Scale(self.id, s), &[self.id])
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|a| a.max(0.0));
        self.tape.push(v, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.tape.push(v, Op::Sigmoid(self.id), &[self.id])
    }

    /// Pad a `[C, H, W]` map by repeating its border values.
    pub fn pad_replicate(&self, pad: usize) -> Var<'t> {
        if pad == 0 {
            return *self;
        }
        let v = kernels::pad_replicate(&self.value(), pad);
        self.tape.push(v, Op::PadReplicate(self.id, pad), &[self.id])
    }

    /// Valid (unpadded) stride-1 convolution with `[cout, cin, k, k]` weights.
    pub fn conv2d(&self, weight: &Var<'t>, bias: Option<&Var<'t>>, dilation: usize) -> Var<'t> {
        self.same_tape(weight);
        let x = self.value();
        let w = weight.value();
        let (cin, hp, wp) = x.dims3();
        let ws = w.shape();
        assert_eq!(ws.len(), 4, "conv weight must be 4-D");
        assert_eq!(ws[1], cin, "conv expects {} input channels, got {cin}", ws[1]);
        assert_eq!(ws[2], ws[3], "square kernels only");
        let cout = ws[0];
        let geom = ConvGeom::new(cin, hp, wp, ws[2], dilation);
        let (rows, p) = (geom.rows(), geom.cols());
        let mut out = vec![0.0; cout * p];
        if let Some(b) = bias {
            let bv = b.value();
            assert_eq!(bv.len(), cout, "bias length");
            for (o, chunk) in out.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bv.data()[o]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if ws[2] == 1 {
            kernels::gemm(cout, rows, p, w.data(), (rows, 1), x.data(), (p, 1), beta, &mut out);
        } else {
            let cols = kernels::im2col(x.data(), &geom);
            kernels::gemm(cout, rows, p, w.data(), (rows, 1), &cols, (p, 1), beta, &mut out);
        }
        let value = Tensor::new(&[cout, geom.ho, geom.wo], out);
        let mut parents = vec![self.id, weight.id];
        parents.extend(bias.map(|b| b.id));
        self.tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                dilation,
            },
            &parents,
        )
    }

    /// Valid depthwise convolution with `[c, 1, k, k]` weights.
    pub fn depthwise_conv2d(&self, weight: &Var<'t>, dilation: usize) -> Var<'t> {
        self.same_tape(weight);
        let x = self.value();
        let w = weight.value();
        assert_eq!(w.shape()[0], x.dims3().0, "depthwise channel mismatch");
        let v = kernels::depthwise_conv(&x, &w, dilation);
        self.tape.push(
            v,
            Op::Depthwise {
                x: self.id,
                w: weight.id,
                dilation,
            },
            &[self.id, weight.id],
        )
    }

    pub fn max_pool2d(&self, k: usize, stride: usize) -> Var<'t> {
        let (v, argmax) = kernels::max_pool(&self.value(), k, stride);
        self.tape.push(v, Op::MaxPool { x: self.id, argmax }, &[self.id])
    }

    /// `[C, H, W] -> [C, 1, 1]` spatial mean.
    pub fn global_avg_pool(&self) -> Var<'t> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        let v = Tensor::from_fn(&[c, 1, 1], |ch| x.channel(ch).iter().sum::<f64>() / (h * w) as f64);
        self.tape.push(v, Op::GlobalAvgPool(self.id), &[self.id])
    }

    /// Multiply every channel of `[C, H, W]` by a `[1, H, W]` map.
    pub fn mul_spatial(&self, map: &Var<'t>) -> Var<'t> {
        self.same_tape(map);
        let x = self.value();
        let m = map.value();
        let (c, h, w) = x.dims3();
        assert_eq!(m.shape(), &[1, h, w], "spatial map shape");
        let hw = h * w;
        let v = Tensor::from_fn(&[c, h, w], |i| x.data()[i] * m.data()[i % hw]);
        self.tape.push(v, Op::MulSpatial(self.id, map.id), &[self.id, map.id])
    }

    /// Add a `[1, H, W]` map to every channel of `[C, H, W]`.
    pub fn add_spatial(&self, map: &Var<'t>) -> Var<'t> {
        self.same_tape(map);
        let x = self.value();
        let m = map.value();
        let (c, h, w) = x.dims3();
        assert_eq!(m.shape(), &[1, h, w], "spatial map shape");
        let hw = h * w;
        let v = Tensor::from_fn(&[c, h, w], |i| x.data()[i] + m.data()[i % hw]);
        self.tape.push(v, Op::AddSpatial(self.id, map.id), &[self.id, map.id])
    }

    /// Multiply channel `c` of `[C, H, W]` by `gate[c]` (`gate` is `[C, 1, 1]`).
    pub fn mul_channel(&self, gate: &Var<'t>) -> Var<'t> {
        self.same_tape(gate);
        let x = self.value();
        let s = gate.value();
        let (c, h, w) = x.dims3();
        assert_eq!(s.len(), c, "channel gate length");
        let hw = h * w;
        let v = Tensor::from_fn(&[c, h, w], |i| x.data()[i] * s.data()[i / hw]);
        self.tape.push(v, Op::MulChannel(self.id, gate.id), &[self.id, gate.id])
    }

    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Var<'t> {
        let x = self.value();
        let (_, h, w) = x.dims3();
        if (h, w) == (oh, ow) {
            return *self;
        }
        let v = kernels::resize_bilinear(&x, oh, ow);
        self.tape.push(v, Op::ResizeBilinear(self.id), &[self.id])
    }

    /// Normalize over all elements to zero mean and unit variance (no affine).
    pub fn layer_norm(&self) -> Var<'t> {
        let x = self.value();
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        let v = x.map(|a| (a - mean) * inv_std);
        self.tape.push(v, Op::LayerNorm { x: self.id, inv_std }, &[self.id])
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&self) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape().len(), 2, "softmax_rows expects a 2-D tensor");
        let k = x.shape()[1];
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / s));
        }
        self.tape.push(Tensor::new(x.shape(), out), Op::SoftmaxRows(self.id), &[self.id])
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.push(v, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// `sum(self * weights)` against a constant tensor.
    pub fn dot_const(&self, weights: &Tensor) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.dot(weights));
        self.tape
            .push(v, Op::DotConst(self.id, Arc::new(weights.clone())), &[self.id])
    }

    /// Binary cross-entropy of `sigmoid(self)` against `target`.
    ///
    /// The loss value clamps probabilities to `[1e-7, 1 - 1e-7]`; the gradient
    /// with respect to the logits is `sigmoid(z) - target` (scaled by the reduction).
    pub fn bce_with_logits(&self, target: &Tensor, reduction: Reduction) -> Var<'t> {
        let z = self.value();
        assert_eq!(z.shape(), target.shape(), "bce shape mismatch");
        let total: f64 = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&zv, &t)| {
                let p = sigmoid(zv).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let loss = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / z.len() as f64,
        };
        self.tape.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits: self.id,
                target: Arc::new(target.clone()),
                reduction,
            },
            &[self.id],
        )
    }
}

/// Elementwise sum of same-shaped variables.
pub fn add_n<'t>(xs: &[Var<'t>]) -> Var<'t> {
    assert!(!xs.is_empty(), "add_n of nothing");
    if xs.len() == 1 {
        return xs[0];
    }
    let mut acc = (*xs[0].value()).clone();
    for x in &xs[1..] {
        xs[0].same_tape(x);
        acc.axpy(1.0, &x.value());
    }
    let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
    xs[0].tape.push(acc, Op::AddN(ids.clone()), &ids)
}

/// Concatenate `[C_i, H, W]` maps along the channel axis.
pub fn concat_channels<'t>(xs: &[Var<'t>]) -> Var<'t> {
    assert!(!xs.is_empty(), "concat of nothing");
    let first = xs[0].value();
    let (_, h, w) = first.dims3();
    let mut data = Vec::new();
    let mut channels = 0;
    for x in xs {
        xs[0].same_tape(x);
        let v = x.value();
        let (c, hh, ww) = v.dims3();
        assert_eq!((hh, ww), (h, w), "concat spatial mismatch");
        channels += c;
        data.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
    xs[0]
        .tape
        .push(Tensor::new(&[channels, h, w], data), Op::Concat(ids.clone()), &ids)
}

/// `sum_o coeffs[row, o] * xs[o]` for a `[R, K]` coefficient table and `K` inputs.
pub fn lin_comb<'t>(xs: &[Var<'t>], coeffs: &Var<'t>, row: usize) -> Var<'t> {
    let cv = coeffs.value();
    assert_eq!(cv.shape().len(), 2, "coefficients must be 2-D");
    let k = cv.shape()[1];
    assert_eq!(xs.len(), k, "lin_comb expects {k} inputs");
    let crow = &cv.data()[row * k..(row + 1) * k];
    let mut acc = Tensor::zeros(&xs[0].shape());
    for (x, &c) in xs.iter().zip(crow) {
        coeffs.same_tape(x);
        acc.axpy(c, &x.value());
    }
    let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
    let mut parents = ids.clone();
    parents.push(coeffs.id);
    coeffs.tape.push(
        acc,
        Op::LinComb {
            xs: ids,
            coeffs: coeffs.id,
            row,
        },
        &parents,
    )
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

pub(crate) fn var_handle(tape: &Tape, id: usize) -> Var<'_> {
    Var { tape, id }
}
