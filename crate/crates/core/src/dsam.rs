//! Depth-sensitive attention: re-weights RGB features by depth region masks.
//!
//! For masks `p_0..p_T` aligned to the feature resolution, the output is
//! `F + sum_t conv1x1_t(combine(p_t, F))`, where `combine` is an elementwise
//! product by default.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{add_n, concat_channels, Bound, ParamStore, Tape, Tensor, Var};

use crate::depth::RegionMask;
use crate::error::{shape, Result};
use crate::nn::Conv;

/// How a mask is combined with the feature map before its transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsamFusion {
    #[default]
    Mul,
    Sum,
    /// `[F, p]` through a `(C + 1) -> C` transition.
    Concat,
}

/// One DSAM block: a 1x1 transition per region.
#[derive(Clone, Debug)]
pub struct DsamParams {
    pub fusion: DsamFusion,
    pub channels: usize,
    transitions: Vec<Conv>,
}

const TRANSITION_GAIN: f64 = 0.1;

impl DsamParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        regions: usize,
        fusion: DsamFusion,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let cin = if fusion == DsamFusion::Concat { channels + 1 } else { channels };
        let transitions = (0..regions)
            .map(|t| {
                Conv::new(store, &format!("{name}.t{t}"), cin, channels, 1, 1, true, TRANSITION_GAIN, rng)
            })
            .collect();
        Self {
            fusion,
            channels,
            transitions,
        }
    }

    pub fn regions(&self) -> usize {
        self.transitions.len()
    }

    /// Set every transition weight and bias to zero, which makes the block an identity.
    pub fn zero(&self, store: &mut ParamStore) {
        for t in &self.transitions {
            store.get_mut(t.w).data_mut().fill(0.0);
            if let Some(b) = t.b {
                store.get_mut(b).data_mut().fill(0.0);
            }
        }
    }

    /// `masks` are `[1, H, W]` maps at the feature resolution.
    pub fn forward<'t>(&self, x: Var<'t>, masks: &[Var<'t>], bound: &Bound<'t>) -> Result<Var<'t>> {
        if masks.len() != self.regions() {
            return Err(shape(format!("DSAM expects {} masks, got {}", self.regions(), masks.len())));
        }
        let xs = x.shape();
        if xs.len() != 3 || xs[0] != self.channels {
            return Err(shape(format!("DSAM expects {} channels, got shape {xs:?}", self.channels)));
        }
        let mut terms = vec![x];
        for (t, m) in self.transitions.iter().zip(masks) {
            if m.shape() != [1, xs[1], xs[2]] {
                return Err(shape(format!("mask shape {:?} vs feature {xs:?}", m.shape())));
            }
            let combined = match self.fusion {
                DsamFusion::Mul => x.mul_spatial(m),
                DsamFusion::Sum => x.add_spatial(m),
                DsamFusion::Concat => concat_channels(&[x, *m]),
            };
            terms.push(t.forward(combined, bound));
        }
        Ok(add_n(&terms))
    }
}

/// Downsample a full-resolution mask to `(h, w)` by non-overlapping max pooling.
pub fn align_mask(mask: &RegionMask, h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 || mask.height % h != 0 || mask.width % w != 0 {
        return Err(shape(format!(
            "mask {}x{} is not an integer multiple of {h}x{w}",
            mask.height, mask.width
        )));
    }
    let (fy, fx) = (mask.height / h, mask.width / w);
    Ok(Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        let mut m = f64::NEG_INFINITY;
        for dy in 0..fy {
            let row = (y * fy + dy) * mask.width + x * fx;
            for v in &mask.weights[row..row + fx] {
                m = m.max(*v);
            }
        }
        m
    }))
}

/// A standalone DSAM block in its own parameter store.
pub fn init_dsam(channels: usize, regions: usize, seed: u64) -> (ParamStore, DsamParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DsamParams::init(&mut store, "dsam", channels, regions, DsamFusion::Mul, &mut rng);
    (store, params)
}

/// Apply a DSAM block to a `[C, H, W]` feature map outside of any training pass.
pub fn dsam_forward(feature: &Tensor, masks: &[RegionMask], store: &ParamStore, params: &DsamParams) -> Result<Tensor> {
    let (_, h, w) = feature.dims3();
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let x = tape.constant(feature.clone());
    let aligned = masks
        .iter()
        .map(|m| align_mask(m, h, w).map(|t| tape.constant(t)))
        .collect::<Result<Vec<_>>>()?;
    let out = params.forward(x, &aligned, &bound)?;
    Ok((*out.value()).clone())
}
