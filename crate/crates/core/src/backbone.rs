//! Five-stage RGB and depth feature extractors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{Bound, ParamStore, Var};

use crate::dsam::{DsamFusion, DsamParams};
use crate::error::{invalid, shape, Result};
use crate::nn::Conv;

pub const STAGES: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    /// Two convolutions per stage.
    #[default]
    Tiny,
    /// VGG-19 layout: 2, 2, 4, 4, 4 convolutions per stage.
    Vgg19,
}

impl BackboneVariant {
    fn convs_per_stage(self) -> [usize; STAGES] {
        match self {
            BackboneVariant::Tiny => [2; STAGES],
            BackboneVariant::Vgg19 => [2, 2, 4, 4, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub rgb_channels: [usize; STAGES],
    pub depth_channels: [usize; STAGES],
    /// `(height, width)`; both must be divisible by 16.
    pub input_size: (usize, usize),
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::tiny((64, 64))
    }
}

impl BackboneConfig {
    pub fn tiny(input_size: (usize, usize)) -> Self {
        Self {
            variant: BackboneVariant::Tiny,
            rgb_channels: [32, 64, 128, 128, 128],
            depth_channels: [16, 32, 64, 64, 64],
            input_size,
        }
    }

    pub fn vgg19(input_size: (usize, usize)) -> Self {
        Self {
            variant: BackboneVariant::Vgg19,
            rgb_channels: [64, 128, 256, 512, 512],
            depth_channels: [16, 32, 64, 64, 64],
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(invalid(format!("input size {h}x{w} must be a non-zero multiple of 16")));
        }
        if self.rgb_channels.iter().chain(&self.depth_channels).any(|&c| c == 0) {
            return Err(invalid("channel counts must be positive"));
        }
        Ok(())
    }

    /// Spatial size of stage `k` (0-based).
    pub fn stage_size(&self, k: usize) -> (usize, usize) {
        (self.input_size.0 >> k, self.input_size.1 >> k)
    }
}

/// Stage outputs, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<'t> {
    pub levels: Vec<Var<'t>>,
}

#[derive(Clone, Debug)]
struct Stage {
    convs: Vec<Conv>,
}

impl Stage {
    fn forward<'t>(&self, mut x: Var<'t>, pool: bool, bound: &Bound<'t>) -> Var<'t> {
        if pool {
            x = x.max_pool2d(2, 2);
        }
        for c in &self.convs {
            x = c.forward(x, bound).relu();
        }
        x
    }
}

fn build_stages(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    channels: &[usize; STAGES],
    per_stage: [usize; STAGES],
    rng: &mut impl Rng,
) -> Vec<Stage> {
    let mut prev = cin;
    (0..STAGES)
        .map(|s| {
            let convs = (0..per_stage[s])
                .map(|i| {
                    let c = Conv::new(store, &format!("{name}.s{s}.c{i}"), prev, channels[s], 3, 1, true, 1.0, rng);
                    prev = channels[s];
                    c
                })
                .collect();
            Stage { convs }
        })
        .collect()
}

/// RGB stream with an optional DSAM block after every stage.
#[derive(Clone, Debug)]
pub struct RgbBackbone {
    stages: Vec<Stage>,
    pub dsam: Option<Vec<DsamParams>>,
}

#[derive(Clone, Debug)]
pub struct DepthBackbone {
    stages: Vec<Stage>,
}

/// DSAM settings for [`build_backbones`]; `None` builds a plain RGB stream.
#[derive(Clone, Copy, Debug)]
pub struct DsamSpec {
    pub regions: usize,
    pub fusion: DsamFusion,
}

pub fn build_backbones(
    config: &BackboneConfig,
    dsam: Option<DsamSpec>,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<(RgbBackbone, DepthBackbone)> {
    config.validate()?;
    let per_stage = config.variant.convs_per_stage();
    let rgb_stages = build_stages(store, "rgb", 3, &config.rgb_channels, per_stage, rng);
    let dsam = dsam.map(|spec| {
        (0..STAGES)
            .map(|s| DsamParams::init(store, &format!("rgb.s{s}.dsam"), config.rgb_channels[s], spec.regions, spec.fusion, rng))
            .collect()
    });
    let depth_stages = build_stages(store, "depth", 1, &config.depth_channels, [2; STAGES], rng);
    Ok((
        RgbBackbone {
            stages: rgb_stages,
            dsam,
        },
        DepthBackbone { stages: depth_stages },
    ))
}

impl RgbBackbone {
    /// `image` is `[3, H, W]`; `masks[s]` holds the region masks aligned to stage `s`.
    pub fn forward<'t>(&self, image: Var<'t>, masks: &[Vec<Var<'t>>], bound: &Bound<'t>) -> Result<FeaturePyramid<'t>> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(shape(format!("RGB input must be [3, H, W], got {s:?}")));
        }
        if self.dsam.is_some() && masks.len() != STAGES {
            return Err(shape(format!("expected masks for {STAGES} stages, got {}", masks.len())));
        }
        let mut x = image;
        let mut levels = Vec::with_capacity(STAGES);
        for (k, stage) in self.stages.iter().enumerate() {
            x = stage.forward(x, k > 0, bound);
            if let Some(dsam) = &self.dsam {
                x = dsam[k].forward(x, &masks[k], bound)?;
            }
            levels.push(x);
        }
        Ok(FeaturePyramid { levels })
    }
}

impl DepthBackbone {
    /// `depth` is the `[1, H, W]` normalized depth map.
    pub fn forward<'t>(&self, depth: Var<'t>, bound: &Bound<'t>) -> Result<FeaturePyramid<'t>> {
        let s = depth.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(shape(format!("depth input must be [1, H, W], got {s:?}")));
        }
        let mut x = depth;
        let levels = self
            .stages
            .iter()
            .enumerate()
            .map(|(k, stage)| {
                x = stage.forward(x, k > 0, bound);
                x
            })
            .collect();
        Ok(FeaturePyramid { levels })
    }
}
