//! First-order optimizers with coupled (L2) weight decay.

use crate::store::{GradBuffer, ParamStore};
use crate::Tensor;

/// Momentum SGD: `g += wd*p; buf = mu*buf + g; p -= lr*buf`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        for (id, buf) in store.ids().zip(self.buffers.iter_mut()) {
            let g = grads.get(id);
            let p = store.get_mut(id);
            for ((pv, bv), gv) in p.data_mut().iter_mut().zip(buf.data_mut()).zip(g.data()) {
                let d = gv + self.weight_decay * *pv;
                *bv = self.momentum * *bv + d;
                *pv -= self.lr * *bv;
            }
        }
    }

    pub fn state(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn load_state(&mut self, buffers: Vec<Tensor>) {
        assert_eq!(buffers.len(), self.buffers.len(), "momentum buffer count");
        self.buffers = buffers;
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            betas,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((id, m), v) in store.ids().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let g = grads.get(id);
            let p = store.get_mut(id);
            for (((pv, mv), vv), gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let d = gv + self.weight_decay * *pv;
                *mv = b1 * *mv + (1.0 - b1) * d;
                *vv = b2 * *vv + (1.0 - b2) * d * d;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, in parameter order.
    pub fn state(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn load_state(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        assert_eq!(m.len(), self.m.len(), "moment buffer count");
        assert_eq!(v.len(), self.v.len(), "moment buffer count");
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut GradBuffer, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        grads.tensors_mut().iter_mut().for_each(|t| t.scale_in_place(s));
    }
    norm
}
