//! Parameterized layers shared by the backbones, cells and decoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sod_autograd::{Bound, ParamId, ParamStore, Tensor, Var};

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Square convolution with replicate "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub k: usize,
    pub dilation: usize,
}

impl Conv {
    /// He-normal weights (scaled by `gain`), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        bias: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let std = gain * (2.0 / (cin * k * k) as f64).sqrt();
        let w = store.add(format!("{name}.w"), normal_tensor(&[cout, cin, k, k], std, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[cout])));
        Self { w, b, k, dilation }
    }

    pub fn forward<'t>(&self, x: Var<'t>, bound: &Bound<'t>) -> Var<'t> {
        let pad = (self.k / 2) * self.dilation;
        let w = bound.var(self.w);
        let b = self.b.map(|b| bound.var(b));
        x.pad_replicate(pad).conv2d(&w, b.as_ref(), self.dilation)
    }

    pub fn in_channels(&self, store: &ParamStore) -> usize {
        store.get(self.w).shape()[1]
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.w).shape()[0]
    }
}
