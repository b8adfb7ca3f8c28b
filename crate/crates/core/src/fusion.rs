//! Cell wiring between the two backbones and the saliency decoder.

use rand::Rng;
use sod_autograd::{Bound, ParamStore, Var};

use crate::backbone::{FeaturePyramid, STAGES};
use crate::cells::{CellArch, CellMode, CellParams, CellSpec, CellType};
use crate::error::{shape, Result};
use crate::genotype::Genotype;
use crate::nn::Conv;

/// Parameter layout of the fusion network.
#[derive(Clone, Copy, Debug)]
pub enum FusionMode<'a> {
    Supernet,
    Discrete(&'a Genotype),
    Concat,
}

/// Architecture used by one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum FusionArch<'a, 't> {
    /// Softmax weight tables in [`CellType::ALL`] order.
    Mixed(&'a [Var<'t>; 4]),
    Discrete(&'a Genotype),
    Concat,
}

impl<'a, 't> FusionArch<'a, 't> {
    fn cell(self, t: CellType) -> CellArch<'a, 't> {
        match self {
            FusionArch::Mixed(w) => CellArch::Mixed(&w[t.index()]),
            FusionArch::Discrete(g) => CellArch::Discrete(g.cell(t)),
            FusionArch::Concat => CellArch::Concat,
        }
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    first: Vec<Conv>,
    second: Vec<Conv>,
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    mm: Vec<CellParams>,
    ms: Vec<CellParams>,
    ga: CellParams,
    sr: Vec<CellParams>,
    decoder: Decoder,
}

/// Intermediate maps of one fusion pass.
#[derive(Clone, Debug)]
pub struct FusionOutput<'t> {
    pub global: Var<'t>,
    pub refined: [Var<'t>; 2],
    /// `[1, H, W]` saliency logits at input resolution.
    pub logits: Var<'t>,
}

impl FusionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rgb: &[usize; STAGES],
        depth: &[usize; STAGES],
        width: usize,
        specs: &[CellSpec; 4],
        mode: FusionMode<'_>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c = width;
        let cell = |store: &mut ParamStore, t: CellType, name: String, ins: &[usize], rng: &mut _| {
            let m = match mode {
                FusionMode::Supernet => CellMode::Supernet,
                FusionMode::Discrete(g) => CellMode::Discrete(g.cell(t)),
                FusionMode::Concat => CellMode::Concat,
            };
            CellParams::new(store, &name, specs[t.index()], ins, width, m, rng)
        };
        let mm = (0..3)
            .map(|n| cell(store, CellType::MM, format!("mm{n}"), &[rgb[n + 1], rgb[n + 2], depth[n + 1], depth[n + 2]], rng))
            .collect::<Result<Vec<_>>>()?;
        let ms = vec![
            cell(store, CellType::MS, "ms0".into(), &[rgb[3], c, depth[3]], rng)?,
            cell(store, CellType::MS, "ms1".into(), &[rgb[4], c, depth[4]], rng)?,
            cell(store, CellType::MS, "ms2".into(), &[rgb[2], c, depth[2]], rng)?,
            cell(store, CellType::MS, "ms3".into(), &[c, c, c], rng)?,
        ];
        let ga = cell(store, CellType::GA, "ga".into(), &[c, c, c, c], rng)?;
        let sr = vec![
            cell(store, CellType::SR, "sr0".into(), &[c, depth[1], rgb[1]], rng)?,
            cell(store, CellType::SR, "sr1".into(), &[c, depth[0], rgb[0]], rng)?,
        ];
        let conv = |store: &mut ParamStore, name: String, cout, rng: &mut _| Conv::new(store, &name, c, cout, 3, 1, true, 1.0, rng);
        let decoder = Decoder {
            first: (0..3).map(|i| conv(store, format!("dec.a{i}"), c, rng)).collect(),
            second: (0..3)
                .map(|i| conv(store, format!("dec.b{i}"), if i == 2 { 1 } else { c }, rng))
                .collect(),
        };
        Ok(Self { mm, ms, ga, sr, decoder })
    }

    pub fn forward<'t>(
        &self,
        r: &FeaturePyramid<'t>,
        d: &FeaturePyramid<'t>,
        arch: FusionArch<'_, 't>,
        bound: &Bound<'t>,
    ) -> Result<FusionOutput<'t>> {
        if r.levels.len() != STAGES || d.levels.len() != STAGES {
            return Err(shape("fusion needs five pyramid levels per stream"));
        }
        let (r, d) = (&r.levels, &d.levels);
        let mm = |n: usize| self.mm[n].forward(&[r[n + 1], r[n + 2], d[n + 1], d[n + 2]], arch.cell(CellType::MM), bound);
        let c: Vec<Var<'t>> = (0..3).map(mm).collect::<Result<_>>()?;
        let ms = arch.cell(CellType::MS);
        let d1 = self.ms[0].forward(&[r[3], c[0], d[3]], ms, bound)?;
        let d2 = self.ms[1].forward(&[r[4], c[1], d[4]], ms, bound)?;
        let d3 = self.ms[2].forward(&[r[2], c[2], d[2]], ms, bound)?;
        let d4 = self.ms[3].forward(&[c[0], c[1], c[2]], ms, bound)?;
        let global = self.ga.forward(&[d1, d2, d3, d4], arch.cell(CellType::GA), bound)?;
        let sr = arch.cell(CellType::SR);
        let l1 = self.sr[0].forward(&[up2(global), d[1], r[1]], sr, bound)?;
        let l2 = self.sr[1].forward(&[up2(l1), d[0], r[0]], sr, bound)?;
        let mut x = up2(l2);
        for conv in &self.decoder.first {
            x = conv.forward(x, bound).relu();
        }
        x = up2(x);
        let last = self.decoder.second.len() - 1;
        for (i, conv) in self.decoder.second.iter().enumerate() {
            x = conv.forward(x, bound);
            if i < last {
                x = x.relu();
            }
        }
        Ok(FusionOutput {
            global,
            refined: [l1, l2],
            logits: x,
        })
    }
}

fn up2(x: Var<'_>) -> Var<'_> {
    let s = x.shape();
    x.resize_bilinear(2 * s[1], 2 * s[2])
}
