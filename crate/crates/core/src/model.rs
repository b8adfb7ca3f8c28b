//! The complete saliency network: backbones, DSAM, fusion cells and decoder.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{Bound, ParamId, ParamStore, Reduction, Tape, Tensor, Var};

use crate::backbone::{build_backbones, BackboneConfig, DepthBackbone, DsamSpec, RgbBackbone, STAGES};
use crate::cells::{CellSpec, CellType};
use crate::data::Sample;
use crate::depth::{decompose_depth, DecompositionConfig, MaskMode};
use crate::dsam::{align_mask, DsamFusion};
use crate::error::{invalid, shape, Result};
use crate::fusion::{FusionArch, FusionMode, FusionParams};
use crate::genotype::{ArchParams, Genotype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsamConfig {
    pub enabled: bool,
    /// Number of depth regions, `T + 1`.
    pub regions: usize,
    pub bins: usize,
    pub smooth_width: usize,
    pub mask_mode: MaskMode,
    pub fusion: DsamFusion,
}

impl Default for DsamConfig {
    fn default() -> Self {
        let d = DecompositionConfig::default();
        Self {
            enabled: true,
            regions: d.regions,
            bins: d.bins,
            smooth_width: d.smooth_width,
            mask_mode: d.mask_mode,
            fusion: DsamFusion::Mul,
        }
    }
}

impl DsamConfig {
    pub fn decomposition(&self) -> DecompositionConfig {
        DecompositionConfig {
            regions: self.regions,
            bins: self.bins,
            smooth_width: self.smooth_width,
            mask_mode: self.mask_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellsConfig {
    pub width: usize,
    /// Total node count (inputs included) of the MM, MS, GA and SR cells.
    pub nodes: [usize; 4],
    /// Keep only the two strongest incoming edges per node when discretizing.
    pub prune_top2: bool,
}

impl Default for CellsConfig {
    fn default() -> Self {
        Self {
            width: 16,
            nodes: [8, 8, 8, 4],
            prune_top2: false,
        }
    }
}

impl CellsConfig {
    pub fn specs(&self) -> Result<[CellSpec; 4]> {
        Ok([
            CellSpec::new(CellType::MM, self.nodes[0])?,
            CellSpec::new(CellType::MS, self.nodes[1])?,
            CellSpec::new(CellType::GA, self.nodes[2])?,
            CellSpec::new(CellType::SR, self.nodes[3])?,
        ])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub dsam: DsamConfig,
    pub cells: CellsConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.cells.specs()?;
        if self.cells.width == 0 {
            return Err(invalid("cell width must be positive"));
        }
        if self.dsam.regions == 0 || self.dsam.bins < 2 || self.dsam.smooth_width % 2 == 0 {
            return Err(invalid("DSAM needs regions >= 1, bins >= 2 and an odd smoothing width"));
        }
        Ok(())
    }
}

/// Which parameter sets receive gradients in [`SaliencyNet::loss_and_grads`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Track {
    pub weights: bool,
    pub alpha: bool,
}

impl Track {
    pub const WEIGHTS: Track = Track { weights: true, alpha: false };
    pub const ALPHA: Track = Track { weights: false, alpha: true };
    pub const BOTH: Track = Track { weights: true, alpha: true };
}

/// Loss of one sample and the gradients of the tracked parameters.
#[derive(Clone, Debug)]
pub struct SampleGrads {
    pub loss: f64,
    pub weights: Vec<(ParamId, Tensor)>,
    pub alpha: Vec<(ParamId, Tensor)>,
}

/// Fusion layout of a network.
#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    /// All candidate operations; needs architecture weights to run.
    Supernet,
    Genotype(Genotype),
    /// Concatenation baseline without searched cells.
    Concat,
}

/// One sample converted to network inputs.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    pub rgb: Arc<Tensor>,
    pub depth: Arc<Tensor>,
    /// Region masks per backbone stage, aligned to that stage.
    pub masks: Vec<Vec<Arc<Tensor>>>,
    pub gt: Arc<Tensor>,
}

#[derive(Clone, Debug)]
pub struct SaliencyNet {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore,
    rgb: RgbBackbone,
    depth: DepthBackbone,
    fusion: FusionParams,
}

impl SaliencyNet {
    pub fn new(config: ModelConfig, arch: Architecture, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.cells.specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let dsam = config.dsam.enabled.then_some(DsamSpec {
            regions: config.dsam.regions,
            fusion: config.dsam.fusion,
        });
        let (rgb, depth) = build_backbones(&config.backbone, dsam, &mut params, &mut rng)?;
        let mode = match &arch {
            Architecture::Supernet => FusionMode::Supernet,
            Architecture::Genotype(g) => FusionMode::Discrete(g),
            Architecture::Concat => FusionMode::Concat,
        };
        let fusion = FusionParams::new(
            &mut params,
            &config.backbone.rgb_channels,
            &config.backbone.depth_channels,
            config.cells.width,
            &specs,
            mode,
            &mut rng,
        )?;
        Ok(Self {
            config,
            arch,
            params,
            rgb,
            depth,
            fusion,
        })
    }

    pub fn specs(&self) -> [CellSpec; 4] {
        self.config.cells.specs().expect("validated")
    }

    /// Fresh architecture weights matching this network's cells.
    pub fn init_alpha(&self, seed: u64) -> ArchParams {
        ArchParams::init(self.specs(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn prepare(&self, sample: &Sample) -> Result<PreparedInput> {
        let (h, w) = self.config.backbone.input_size;
        if (sample.height(), sample.width()) != (h, w) {
            return Err(shape(format!(
                "sample `{}` is {}x{}, network expects {h}x{w}",
                sample.id,
                sample.height(),
                sample.width()
            )));
        }
        let depth = Tensor::new(&[1, h, w], sample.depth.normalized());
        let masks = if self.config.dsam.enabled {
            let full = decompose_depth(&sample.depth, &self.config.dsam.decomposition())?;
            (0..STAGES)
                .map(|s| {
                    let (sh, sw) = self.config.backbone.stage_size(s);
                    full.iter().map(|m| align_mask(m, sh, sw).map(Arc::new)).collect()
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(PreparedInput {
            rgb: Arc::new(sample.rgb.clone()),
            depth: Arc::new(depth),
            masks,
            gt: Arc::new(sample.gt.clone()),
        })
    }

    /// `[1, H, W]` saliency logits.
    pub fn forward<'t>(&self, input: &PreparedInput, bound: &Bound<'t>, arch: FusionArch<'_, 't>) -> Result<Var<'t>> {
        let tape = bound.tape();
        let masks: Vec<Vec<Var<'t>>> = input
            .masks
            .iter()
            .map(|stage| stage.iter().map(|m| tape.constant_arc(m.clone())).collect())
            .collect();
        let r = self.rgb.forward(tape.constant_arc(input.rgb.clone()), &masks, bound)?;
        let d = self.depth.forward(tape.constant_arc(input.depth.clone()), bound)?;
        Ok(self.fusion.forward(&r, &d, arch, bound)?.logits)
    }

    /// The architecture this network was built for. Supernets need weights instead.
    pub fn own_arch(&self) -> Result<FusionArch<'_, 'static>> {
        match &self.arch {
            Architecture::Genotype(g) => Ok(FusionArch::Discrete(g)),
            Architecture::Concat => Ok(FusionArch::Concat),
            Architecture::Supernet => Err(invalid("a supernet needs architecture weights")),
        }
    }

    /// Saliency probabilities in `[0, 1]`, shaped `[1, H, W]`.
    pub fn predict(&self, input: &PreparedInput) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let logits = self.forward(input, &bound, self.own_arch()?)?;
        Ok(logits.value().map(|z| 1.0 / (1.0 + (-z).exp())))
    }

    /// Probabilities from a supernet evaluated with fixed architecture weights.
    pub fn predict_mixed(&self, input: &PreparedInput, alpha: &ArchParams) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let abound = alpha.store.bind(&tape, false);
        let weights = alpha.weights(&abound);
        let logits = self.forward(input, &bound, FusionArch::Mixed(&weights))?;
        Ok(logits.value().map(|z| 1.0 / (1.0 + (-z).exp())))
    }

    /// Cross-entropy of one sample against its ground truth, with gradients.
    ///
    /// With `alpha` the fusion cells run as mixtures weighted by its softmax;
    /// without it the network's own architecture is used.
    pub fn loss_and_grads(
        &self,
        input: &PreparedInput,
        alpha: Option<&ArchParams>,
        track: Track,
        reduction: Reduction,
    ) -> Result<SampleGrads> {
        let tape = Tape::new();
        let wb = self.params.bind(&tape, track.weights);
        let (logits, ab) = match alpha {
            Some(a) => {
                let ab = a.store.bind(&tape, track.alpha);
                let weights = a.weights(&ab);
                (self.forward(input, &wb, FusionArch::Mixed(&weights))?, Some(ab))
            }
            None => (self.forward(input, &wb, self.own_arch()?)?, None),
        };
        let loss = logits.bce_with_logits(&input.gt, reduction);
        let value = loss.value().data()[0];
        let mut g = tape.backward(loss);
        Ok(SampleGrads {
            loss: value,
            weights: wb.collect(&mut g),
            alpha: ab.map(|b| b.collect(&mut g)).unwrap_or_default(),
        })
    }

    /// Loss value only, without building gradients.
    pub fn loss(&self, input: &PreparedInput, alpha: Option<&ArchParams>, reduction: Reduction) -> Result<f64> {
        let tape = Tape::new();
        let wb = self.params.bind(&tape, false);
        let logits = match alpha {
            Some(a) => {
                let ab = a.store.bind(&tape, false);
                let weights = a.weights(&ab);
                self.forward(input, &wb, FusionArch::Mixed(&weights))?
            }
            None => self.forward(input, &wb, self.own_arch()?)?,
        };
        let loss = logits.bce_with_logits(&input.gt, reduction);
        let value = loss.value().data()[0];
        Ok(value)
    }

    /// Zero every DSAM transition so the RGB stream runs unmodified.
    pub fn zero_dsam(&mut self) {
        if let Some(blocks) = &self.rgb.dsam {
            for b in blocks {
                b.zero(&mut self.params);
            }
        }
    }
}
