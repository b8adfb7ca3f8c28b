//! Run the RGB (with DSAM) and depth backbones and print the pyramid shapes.
//!
//! cargo run --example backbones

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbd_sod::autograd::{ParamStore, Tape, Tensor};
use rgbd_sod::backbone::{build_backbones, BackboneConfig, DsamSpec, STAGES};
use rgbd_sod::data::{synth_sample, SynthConfig};
use rgbd_sod::depth::{decompose_depth, DecompositionConfig};
use rgbd_sod::dsam::{align_mask, DsamFusion};

fn main() -> rgbd_sod::Result<()> {
    let config = BackboneConfig::tiny((64, 64));
    let mut store = ParamStore::new();
    let dsam = DsamSpec { regions: 3, fusion: DsamFusion::Mul };
    let (rgb, depth) = build_backbones(&config, Some(dsam), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", store.num_scalars());

    let sample = synth_sample(&SynthConfig::default(), 0)?;
    let masks = decompose_depth(&sample.depth, &DecompositionConfig::default())?;

    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let stage_masks = (0..STAGES)
        .map(|s| {
            let (h, w) = config.stage_size(s);
            masks.iter().map(|m| align_mask(m, h, w).map(|t| tape.constant(t))).collect()
        })
        .collect::<rgbd_sod::Result<Vec<Vec<_>>>>()?;
    let d = Tensor::new(&[1, 64, 64], sample.depth.normalized());
    let r = rgb.forward(tape.constant(sample.rgb.clone()), &stage_masks, &bound)?;
    let d = depth.forward(tape.constant(d), &bound)?;
    for (s, (a, b)) in r.levels.iter().zip(&d.levels).enumerate() {
        println!("stage {s}: rgb {:?}  depth {:?}", a.shape(), b.shape());
    }
    Ok(())
}
